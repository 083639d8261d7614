#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vgat {

enum class ErrorKind {
    dimension,
    config,
    io,
    load,
    selection,
    binning,
    metric,
    divergence,
    checkpoint,
    encoding,
    loss,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::dimension: return "dimension";
        case ErrorKind::config: return "config";
        case ErrorKind::io: return "io";
        case ErrorKind::load: return "load";
        case ErrorKind::selection: return "selection";
        case ErrorKind::binning: return "binning";
        case ErrorKind::metric: return "metric";
        case ErrorKind::divergence: return "divergence";
        case ErrorKind::checkpoint: return "checkpoint";
        case ErrorKind::encoding: return "encoding";
        case ErrorKind::loss: return "loss";
    }
    return "unknown";
}

// Process exit code for each error category; 0 is success, 1 is reserved for
// unexpected failures.
inline int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return 2;
        case ErrorKind::io: return 3;
        case ErrorKind::load: return 4;
        case ErrorKind::dimension: return 5;
        case ErrorKind::selection: return 6;
        case ErrorKind::binning: return 7;
        case ErrorKind::metric: return 8;
        case ErrorKind::divergence: return 9;
        case ErrorKind::checkpoint: return 10;
        case ErrorKind::encoding: return 11;
        case ErrorKind::loss: return 12;
    }
    return 1;
}

class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

}  // namespace vgat

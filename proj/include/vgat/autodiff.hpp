#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vgat/matrix.hpp"

namespace vgat {

// A trainable tensor with an accumulated gradient of the same shape.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string param_name, Matrix initial)
        : name(std::move(param_name)), value(std::move(initial)), grad(value.rows(), value.cols()) {}

    void zero_grad() { grad.fill(0.0); }
};

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
   public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    const Matrix& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    double scalar() const { return value()[0]; }

   private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Reverse-mode gradient tape. Each recorded node keeps its forward value and a
// closure that pushes the node's output gradient into its inputs. Nodes that do
// not depend on any Parameter are never visited during the backward sweep.
class Tape {
   public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value) {
        nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
        return {this, nodes_.size() - 1};
    }

    Var parameter(Parameter& p) {
        nodes_.push_back(Node{p.value, {}, {}, &p, true});
        return {this, nodes_.size() - 1};
    }

    // Records an op node. `backward` runs only when some input requires grad.
    Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
        bool needs = false;
        for (const Var& v : inputs) needs = needs || nodes_[v.id()].requires_grad;
        nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs});
        return {this, nodes_.size() - 1};
    }

    Var record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
        bool needs = false;
        for (const Var& v : inputs) needs = needs || nodes_[v.id()].requires_grad;
        nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs});
        return {this, nodes_.size() - 1};
    }

    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    // Gradient buffer of a node, allocated as zeros on first touch.
    Matrix& grad(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
        return n.grad;
    }

    bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

    // Seeds d(loss)/d(loss) = 1 and accumulates into every reachable Parameter::grad.
    void backward(Var loss) {
        if (loss.value().size() != 1) {
            throw Error(ErrorKind::dimension, "backward requires a scalar loss, got " + shape_string(loss.value()));
        }
        grad(loss.id())[0] += 1.0;
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty()) continue;
            if (n.param != nullptr) {
                double* dst = n.param->grad.data();
                const double* src = n.grad.data();
                for (std::size_t k = 0; k < n.grad.size(); ++k) dst[k] += src[k];
            } else if (n.backward) {
                n.backward(*this, i);
            }
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }

   private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
        Parameter* param;
        bool requires_grad;
    };
    std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

}  // namespace vgat

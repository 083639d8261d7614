#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vgat/init.hpp"
#include "vgat/ops.hpp"

namespace vgat {

// Pre-norm single-head self-attention layer.
struct AttentionLayer {
    Parameter ln_gain, ln_bias;
    Parameter w_q, w_k, w_v, w_o;

    static AttentionLayer create(const std::string& prefix, std::size_t d, Rng& rng) {
        return {init::constant(prefix + ".ln_gain", 1, d, 1.0),
                init::constant(prefix + ".ln_bias", 1, d, 0.0),
                init::fan_in_uniform(prefix + ".w_q", d, d, d, rng),
                init::fan_in_uniform(prefix + ".w_k", d, d, d, rng),
                init::fan_in_uniform(prefix + ".w_v", d, d, d, rng),
                init::fan_in_uniform(prefix + ".w_o", d, d, d, rng)};
    }

    std::vector<Parameter*> parameters() { return {&ln_gain, &ln_bias, &w_q, &w_k, &w_v, &w_o}; }
};

struct BlockOutput {
    Var tokens;
    Var attention;  // (N+1) x (N+1), row 0 is the CLS query
};

// E + SelfAtt(LN(E))
inline BlockOutput self_attention_block(Var tokens, AttentionLayer& layer) {
    Tape& t = tokens.tape();
    const std::size_t d = layer.w_q.value.rows();
    if (tokens.cols() != d) {
        throw Error(ErrorKind::dimension, "self_attention_block: tokens " + shape_string(tokens.value()) +
                                              " do not match d = " + std::to_string(d));
    }
    const Var x = layer_norm(tokens, t.parameter(layer.ln_gain), t.parameter(layer.ln_bias));
    const Var q = matmul(x, t.parameter(layer.w_q));
    const Var k = matmul(x, t.parameter(layer.w_k));
    const Var v = matmul(x, t.parameter(layer.w_v));
    const Var attention = softmax_rows(scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d))));
    const Var out = matmul(matmul(attention, v), t.parameter(layer.w_o));
    return {add(tokens, out), attention};
}

inline constexpr std::size_t kPpegKernelSizes[3] = {7, 5, 3};

// Depthwise kernels of the pyramid position encoding, channels x (k*k) each.
struct PpegKernels {
    Parameter k7, k5, k3;

    static PpegKernels create(const std::string& prefix, std::size_t d, Rng& rng) {
        return {init::fan_in_uniform(prefix + ".k7", d, 49, 49, rng),
                init::fan_in_uniform(prefix + ".k5", d, 25, 25, rng),
                init::fan_in_uniform(prefix + ".k3", d, 9, 9, rng)};
    }

    std::vector<Parameter*> parameters() { return {&k7, &k5, &k3}; }
};

// Smallest side with side^2 >= n.
inline std::size_t grid_side(std::size_t n) {
    auto side = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
    while (side * side < n) ++side;
    while (side > 0 && (side - 1) * (side - 1) >= n) --side;
    return side;
}

// CLS is split off; the N patch tokens are padded to a square grid by
// repeating the leading tokens, passed through x + conv7(x) + conv5(x) + conv3(x),
// and the padded rows are dropped before CLS is re-attached.
inline Var ppeg(Var tokens, PpegKernels& kernels) {
    Tape& t = tokens.tape();
    if (tokens.rows() < 2) throw Error(ErrorKind::encoding, "ppeg: needs CLS plus at least one patch token");
    const std::size_t n = tokens.rows() - 1;
    const std::size_t side = grid_side(n);
    std::vector<std::size_t> layout(side * side);
    for (std::size_t i = 0; i < layout.size(); ++i) layout[i] = 1 + i % n;
    const Var grid = gather_rows(tokens, std::move(layout));
    Var sum = grid;
    sum = add(sum, depthwise_conv_grid(grid, t.parameter(kernels.k7), side));
    sum = add(sum, depthwise_conv_grid(grid, t.parameter(kernels.k5), side));
    sum = add(sum, depthwise_conv_grid(grid, t.parameter(kernels.k3), side));
    return concat_rows({slice_rows(tokens, 0, 1), slice_rows(sum, 0, n)});
}

struct EncoderOutput {
    Var cls;              // 1 x d
    Var final_attention;  // attention of the last layer
};

struct PathologyEncoder {
    Parameter cls;
    AttentionLayer layer1;
    PpegKernels pos;
    AttentionLayer layer2;

    static PathologyEncoder create(std::size_t d, Rng& rng) {
        return {init::constant("path.cls", 1, d, 0.0), AttentionLayer::create("path.layer1", d, rng),
                PpegKernels::create("path.ppeg", d, rng), AttentionLayer::create("path.layer2", d, rng)};
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out{&cls};
        for (auto* p : layer1.parameters()) out.push_back(p);
        for (auto* p : pos.parameters()) out.push_back(p);
        for (auto* p : layer2.parameters()) out.push_back(p);
        return out;
    }
};

struct GenomicEncoder {
    Parameter cls;
    AttentionLayer layer1;
    AttentionLayer layer2;

    static GenomicEncoder create(std::size_t d, Rng& rng) {
        return {init::constant("gen.cls", 1, d, 0.0), AttentionLayer::create("gen.layer1", d, rng),
                AttentionLayer::create("gen.layer2", d, rng)};
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out{&cls};
        for (auto* p : layer1.parameters()) out.push_back(p);
        for (auto* p : layer2.parameters()) out.push_back(p);
        return out;
    }
};

inline EncoderOutput encode_pathology(Var patches, PathologyEncoder& enc) {
    if (patches.rows() == 0) throw Error(ErrorKind::encoding, "encode_pathology: empty bag");
    Tape& t = patches.tape();
    const Var e0 = concat_rows({t.parameter(enc.cls), patches});
    const BlockOutput b1 = self_attention_block(e0, enc.layer1);
    const Var e2 = ppeg(b1.tokens, enc.pos);
    const BlockOutput b3 = self_attention_block(e2, enc.layer2);
    return {slice_rows(b3.tokens, 0, 1), b3.attention};
}

inline EncoderOutput encode_genomic(Var tokens, GenomicEncoder& enc) {
    if (tokens.rows() == 0) throw Error(ErrorKind::encoding, "encode_genomic: no tokens");
    Tape& t = tokens.tape();
    const Var e0 = concat_rows({t.parameter(enc.cls), tokens});
    const BlockOutput b1 = self_attention_block(e0, enc.layer1);
    const BlockOutput b2 = self_attention_block(b1.tokens, enc.layer2);
    return {slice_rows(b2.tokens, 0, 1), b2.attention};
}

}  // namespace vgat

#ifndef DTP_TRANSFORMER_HPP
#define DTP_TRANSFORMER_HPP

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dtp/error.hpp"
#include "dtp/rng.hpp"
#include "dtp/tensor.hpp"

namespace dtp {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// Every trainable module exposes visit(fn, prefix), calling fn for each
/// parameter tensor with a stable hierarchical name. Collection, optimizer
/// registration and deep copies all derive from it.
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

template <typename Module>
NamedParams named_params(Module& m, const std::string& prefix = "") {
    NamedParams out;
    m.visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); }, prefix);
    return out;
}

template <typename Module>
std::vector<Tensor> parameters(Module& m) {
    std::vector<Tensor> out;
    m.visit([&](const std::string&, Tensor& t) { out.push_back(t); }, "");
    return out;
}

/// Deep copy: duplicate the module, then replace every parameter with an
/// independent clone of its storage.
template <typename Module>
Module deep_copy(const Module& m) {
    Module c = m;
    c.visit([](const std::string&, Tensor& t) { t = t.clone(); }, "");
    return c;
}

struct Linear {
    Tensor weight;  // [in x out]
    Tensor bias;    // [1 x out]

    static Linear init(std::size_t in, std::size_t out, RandomSource& rng) {
        Linear l;
        const double a = std::sqrt(6.0 / static_cast<double>(in + out));
        std::vector<double> w(in * out);
        for (double& x : w) x = rng.uniform(-a, a);
        l.weight = Tensor::from_data({in, out}, std::move(w), true);
        l.bias = Tensor::zeros({1, out}, true);
        return l;
    }

    Tensor forward(const Tensor& x) const {
        return add(matmul(x, weight), broadcast_row(bias, x.rows()));
    }

    void visit(const ParamVisitor& fn, const std::string& prefix) {
        fn(prefix + ".weight", weight);
        fn(prefix + ".bias", bias);
    }
};

struct LayerNorm {
    Tensor gamma;  // [1 x d]
    Tensor beta;   // [1 x d]
    double eps = 1e-5;

    static LayerNorm init(std::size_t d) {
        LayerNorm ln;
        ln.gamma = Tensor::full({1, d}, 1.0, true);
        ln.beta = Tensor::zeros({1, d}, true);
        return ln;
    }

    Tensor forward(const Tensor& x) const {
        const std::size_t n = x.cols();
        const double inv_n = 1.0 / static_cast<double>(n);
        Tensor m = mul_scalar(row_sums(x), inv_n);                // [r x 1]
        Tensor centered = sub(x, broadcast_col(m, n));            // [r x n]
        Tensor var = mul_scalar(row_sums(mul(centered, centered)), inv_n);
        Tensor inv_std = pow_scalar(add_scalar(var, eps), -0.5);  // [r x 1]
        Tensor normed = mul(centered, broadcast_col(inv_std, n));
        return add(mul(normed, broadcast_row(gamma, x.rows())),
                   broadcast_row(beta, x.rows()));
    }

    void visit(const ParamVisitor& fn, const std::string& prefix) {
        fn(prefix + ".gamma", gamma);
        fn(prefix + ".beta", beta);
    }
};

/// Multi-head scaled dot-product attention. Self-attention passes the same
/// tensor for queries and memory; cross-attention reads keys/values from a
/// separate memory sequence.
struct MultiHeadAttention {
    Linear proj_q, proj_k, proj_v, proj_out;
    std::size_t heads = 4;

    static MultiHeadAttention init(std::size_t d, std::size_t heads, RandomSource& rng) {
        if (heads == 0 || d % heads != 0)
            throw ConfigError("attention width " + std::to_string(d) +
                              " not divisible by head count " + std::to_string(heads));
        MultiHeadAttention a;
        a.heads = heads;
        a.proj_q = Linear::init(d, d, rng);
        a.proj_k = Linear::init(d, d, rng);
        a.proj_v = Linear::init(d, d, rng);
        a.proj_out = Linear::init(d, d, rng);
        return a;
    }

    Tensor forward(const Tensor& queries, const Tensor& memory) const {
        if (queries.cols() != memory.cols())
            throw ShapeError("attention width mismatch: " + shape_str(queries.shape()) + " vs " +
                             shape_str(memory.shape()));
        const std::size_t d = queries.cols();
        const std::size_t dh = d / heads;
        Tensor q = proj_q.forward(queries);
        Tensor k = proj_k.forward(memory);
        Tensor v = proj_v.forward(memory);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<Tensor> head_outputs;
        head_outputs.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor qh = slice_cols(q, h * dh, dh);
            Tensor kh = slice_cols(k, h * dh, dh);
            Tensor vh = slice_cols(v, h * dh, dh);
            Tensor scores = mul_scalar(matmul(qh, transpose(kh)), scale);
            head_outputs.push_back(matmul(row_softmax(scores), vh));
        }
        return proj_out.forward(concat_cols(head_outputs));
    }

    void visit(const ParamVisitor& fn, const std::string& prefix) {
        proj_q.visit(fn, prefix + ".q");
        proj_k.visit(fn, prefix + ".k");
        proj_v.visit(fn, prefix + ".v");
        proj_out.visit(fn, prefix + ".out");
    }
};

struct FeedForward {
    Linear fc1, fc2;

    static FeedForward init(std::size_t d, std::size_t expansion, RandomSource& rng) {
        FeedForward f;
        f.fc1 = Linear::init(d, d * expansion, rng);
        f.fc2 = Linear::init(d * expansion, d, rng);
        return f;
    }

    Tensor forward(const Tensor& x) const { return fc2.forward(relu(fc1.forward(x))); }

    void visit(const ParamVisitor& fn, const std::string& prefix) {
        fc1.visit(fn, prefix + ".fc1");
        fc2.visit(fn, prefix + ".fc2");
    }
};

/// Pre-norm encoder layer: x += attn(ln1(x)); x += ff(ln2(x)).
struct EncoderLayer {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ff;

    static EncoderLayer init(std::size_t d, std::size_t heads, std::size_t expansion,
                             RandomSource& rng) {
        EncoderLayer l;
        l.ln1 = LayerNorm::init(d);
        l.ln2 = LayerNorm::init(d);
        l.attn = MultiHeadAttention::init(d, heads, rng);
        l.ff = FeedForward::init(d, expansion, rng);
        return l;
    }

    Tensor forward(const Tensor& x) const {
        Tensor n1 = ln1.forward(x);
        Tensor y = add(x, attn.forward(n1, n1));
        return add(y, ff.forward(ln2.forward(y)));
    }

    void visit(const ParamVisitor& fn, const std::string& prefix) {
        ln1.visit(fn, prefix + ".ln1");
        ln2.visit(fn, prefix + ".ln2");
        attn.visit(fn, prefix + ".attn");
        ff.visit(fn, prefix + ".ff");
    }
};

/// Pre-norm decoder layer: self-attention over the queries, cross-attention
/// into the memory, feed-forward.
struct DecoderLayer {
    LayerNorm ln1, ln2, ln3;
    MultiHeadAttention self_attn, cross_attn;
    FeedForward ff;

    static DecoderLayer init(std::size_t d, std::size_t heads, std::size_t expansion,
                             RandomSource& rng) {
        DecoderLayer l;
        l.ln1 = LayerNorm::init(d);
        l.ln2 = LayerNorm::init(d);
        l.ln3 = LayerNorm::init(d);
        l.self_attn = MultiHeadAttention::init(d, heads, rng);
        l.cross_attn = MultiHeadAttention::init(d, heads, rng);
        l.ff = FeedForward::init(d, expansion, rng);
        return l;
    }

    Tensor forward(const Tensor& x, const Tensor& memory) const {
        Tensor n1 = ln1.forward(x);
        Tensor y = add(x, self_attn.forward(n1, n1));
        Tensor z = add(y, cross_attn.forward(ln2.forward(y), memory));
        return add(z, ff.forward(ln3.forward(z)));
    }

    void visit(const ParamVisitor& fn, const std::string& prefix) {
        ln1.visit(fn, prefix + ".ln1");
        ln2.visit(fn, prefix + ".ln2");
        ln3.visit(fn, prefix + ".ln3");
        self_attn.visit(fn, prefix + ".self_attn");
        cross_attn.visit(fn, prefix + ".cross_attn");
        ff.visit(fn, prefix + ".ff");
    }
};

/// Set every parameter of a module to a constant (test harness for
/// degenerate-attention reductions).
template <typename Module>
void fill_params(Module& m, double value) {
    m.visit([&](const std::string&, Tensor& t) {
        for (double& x : t.raw_values()) x = value;
    }, "");
}

}  // namespace dtp

#endif  // DTP_TRANSFORMER_HPP

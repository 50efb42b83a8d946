#ifndef DTP_FUSION_HPP
#define DTP_FUSION_HPP

#include <string>
#include <vector>

#include "dtp/error.hpp"
#include "dtp/tensor.hpp"
#include "dtp/transformer.hpp"

namespace dtp {

/// How the invariant prompt and the person-knowledge prompt are combined
/// into the dynamic prompt.
enum class FusionMode { Dynamic, Addition, Concat };

inline FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "dynamic") return FusionMode::Dynamic;
    if (s == "addition") return FusionMode::Addition;
    if (s == "concat") return FusionMode::Concat;
    throw ConfigError("unknown fusion mode: '" + s + "' (expected dynamic|addition|concat)");
}

inline std::string to_string(FusionMode m) {
    switch (m) {
        case FusionMode::Dynamic: return "dynamic";
        case FusionMode::Addition: return "addition";
        case FusionMode::Concat: return "concat";
    }
    return "?";
}

/// Encoder over the invariant prompt plus a decoder whose cross-attention
/// pulls the encoded caption content into the person-knowledge query slots.
struct FusionBlock {
    std::vector<EncoderLayer> encoder;  // caption-side feature extractor
    std::vector<DecoderLayer> decoder;  // query slots attend into encoded caption
    std::size_t width = 0;

    static FusionBlock init(std::size_t d, std::size_t heads, std::size_t encoder_layers,
                            std::size_t decoder_layers, std::size_t expansion,
                            RandomSource& rng) {
        FusionBlock b;
        b.width = d;
        for (std::size_t i = 0; i < encoder_layers; ++i)
            b.encoder.push_back(EncoderLayer::init(d, heads, expansion, rng));
        for (std::size_t i = 0; i < decoder_layers; ++i)
            b.decoder.push_back(DecoderLayer::init(d, heads, expansion, rng));
        return b;
    }

    Tensor encode(const Tensor& p_ip) const {
        Tensor x = p_ip;
        for (const auto& layer : encoder) x = layer.forward(x);
        return x;
    }

    void visit(const ParamVisitor& fn, const std::string& prefix) {
        for (std::size_t i = 0; i < encoder.size(); ++i)
            encoder[i].visit(fn, prefix + ".enc" + std::to_string(i));
        for (std::size_t i = 0; i < decoder.size(); ++i)
            decoder[i].visit(fn, prefix + ".dec" + std::to_string(i));
    }
};

/// Dynamic fusion: the person-knowledge prompt rows are the decoder queries,
/// the encoded invariant prompt is the key/value memory. Output keeps the
/// query length regardless of caption length.
inline Tensor fuse(const Tensor& p_ip, const Tensor& p_pkp, const FusionBlock& block) {
    if (p_ip.rank() != 2 || p_pkp.rank() != 2 || p_ip.cols() != p_pkp.cols())
        throw ShapeError("fuse: prompt widths disagree: " + shape_str(p_ip.shape()) + " vs " +
                         shape_str(p_pkp.shape()));
    if (p_ip.rows() == 0 || p_pkp.rows() == 0) throw ShapeError("fuse: empty prompt");
    if (p_ip.cols() != block.width)
        throw ShapeError("fuse: prompt width " + std::to_string(p_ip.cols()) +
                         " does not match block width " + std::to_string(block.width));
    Tensor memory = block.encode(p_ip);
    Tensor x = p_pkp;
    for (const auto& layer : block.decoder) x = layer.forward(x, memory);
    return x;
}

/// Element-wise addition baseline: the invariant prompt is truncated or
/// zero-padded to the query length before adding.
inline Tensor fuse_addition(const Tensor& p_ip, const Tensor& p_pkp) {
    if (p_ip.rank() != 2 || p_pkp.rank() != 2 || p_ip.cols() != p_pkp.cols())
        throw ShapeError("fuse_addition: prompt widths disagree");
    if (p_ip.rows() == 0 || p_pkp.rows() == 0) throw ShapeError("fuse_addition: empty prompt");
    const std::size_t slots = p_pkp.rows();
    Tensor ip_fit;
    if (p_ip.rows() >= slots) {
        ip_fit = slice_rows(p_ip, 0, slots);
    } else {
        std::vector<Tensor> rows{p_ip, Tensor::zeros({slots - p_ip.rows(), p_ip.cols()})};
        ip_fit = concat_rows(rows);
    }
    return add(ip_fit, p_pkp);
}

/// Concatenation baseline: both prompts stacked along the sequence, then
/// mean-pooled chunk-wise down to the configured slot count.
inline Tensor fuse_concat(const Tensor& p_ip, const Tensor& p_pkp, std::size_t slots) {
    if (p_ip.rank() != 2 || p_pkp.rank() != 2 || p_ip.cols() != p_pkp.cols())
        throw ShapeError("fuse_concat: prompt widths disagree");
    if (p_ip.rows() == 0 || p_pkp.rows() == 0) throw ShapeError("fuse_concat: empty prompt");
    Tensor stacked = concat_rows({p_ip, p_pkp});
    const std::size_t total = stacked.rows();
    if (slots == 0 || total < slots)
        throw ShapeError("fuse_concat: " + std::to_string(total) + " rows cannot fill " +
                         std::to_string(slots) + " slots");
    std::vector<Tensor> pooled;
    pooled.reserve(slots);
    for (std::size_t k = 0; k < slots; ++k) {
        const std::size_t begin = k * total / slots;
        const std::size_t end = (k + 1) * total / slots;
        pooled.push_back(mean_rows(slice_rows(stacked, begin, end - begin)));
    }
    return concat_rows(pooled);
}

/// Mode dispatcher used by the training harness; every mode yields
/// [slots x width].
inline Tensor fuse_with_mode(FusionMode mode, const Tensor& p_ip, const Tensor& p_pkp,
                             const FusionBlock& block) {
    switch (mode) {
        case FusionMode::Dynamic: return fuse(p_ip, p_pkp, block);
        case FusionMode::Addition: return fuse_addition(p_ip, p_pkp);
        case FusionMode::Concat: return fuse_concat(p_ip, p_pkp, p_pkp.rows());
    }
    throw ConfigError("unhandled fusion mode");
}

}  // namespace dtp

#endif  // DTP_FUSION_HPP

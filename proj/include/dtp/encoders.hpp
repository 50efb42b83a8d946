#ifndef DTP_ENCODERS_HPP
#define DTP_ENCODERS_HPP

#include <string>
#include <vector>

#include "dtp/error.hpp"
#include "dtp/synthgen.hpp"
#include "dtp/tensor.hpp"
#include "dtp/textpipe.hpp"
#include "dtp/transformer.hpp"

namespace dtp {

// ---------------------------------------------------------------------------
// Image encoder over the four region tokens.
// ---------------------------------------------------------------------------

struct ImageEncoderOutput {
    Tensor global;      // [1 x d] cls output of the final layer
    Tensor hidden;      // [4 x d] region states before the final layer
    Tensor hidden_cls;  // [1 x d] cls state before the final layer
};

/// Transformer over [cls, head, upper, lower, foot]. The final layer carries
/// a duplicated twin (layer_part) used only for local features; it starts as
/// a bit-identical copy and trains independently.
struct ImageEncoder {
    Linear region_proj;                // region_dim -> d
    Tensor cls;                        // [1 x d]
    Tensor positional;                 // [1 + 4 regions x d]
    std::vector<EncoderLayer> layers;  // depth N; back() is the final layer
    EncoderLayer layer_part;           // duplicate of the final layer

    static ImageEncoder init(std::size_t region_dim, std::size_t d, std::size_t depth,
                             std::size_t heads, std::size_t expansion, RandomSource& rng,
                             double embed_scale = 0.02) {
        if (depth < 1) throw ConfigError("image encoder needs at least 1 layer");
        ImageEncoder e;
        e.region_proj = Linear::init(region_dim, d, rng);
        e.cls = Tensor::randn({1, d}, rng, embed_scale, true);
        e.positional = Tensor::randn({1 + kNumBodyParts, d}, rng, embed_scale, true);
        for (std::size_t i = 0; i < depth; ++i)
            e.layers.push_back(EncoderLayer::init(d, heads, expansion, rng));
        e.layer_part = deep_copy(e.layers.back());
        return e;
    }

    std::size_t width() const { return cls.cols(); }

    /// regions: [4 x region_dim].
    ImageEncoderOutput forward(const Tensor& regions) const {
        if (regions.rank() != 2 || regions.rows() != kNumBodyParts)
            throw ShapeError("image encoder expects 4 region vectors, got " +
                             shape_str(regions.shape()));
        Tensor tokens = region_proj.forward(regions);            // [4 x d]
        Tensor seq = concat_rows({cls, tokens});                 // [5 x d]
        seq = add(seq, slice_rows(positional, 0, seq.rows()));
        for (std::size_t i = 0; i + 1 < layers.size(); ++i) seq = layers[i].forward(seq);
        ImageEncoderOutput out;
        out.hidden_cls = slice_rows(seq, 0, 1);
        out.hidden = slice_rows(seq, 1, kNumBodyParts);
        Tensor final_seq = layers.back().forward(seq);
        out.global = slice_rows(final_seq, 0, 1);
        return out;
    }

    void visit(const ParamVisitor& fn, const std::string& prefix) {
        region_proj.visit(fn, prefix + ".region_proj");
        fn(prefix + ".cls", cls);
        fn(prefix + ".positional", positional);
        for (std::size_t i = 0; i < layers.size(); ++i)
            layers[i].visit(fn, prefix + ".layer" + std::to_string(i));
        layer_part.visit(fn, prefix + ".layer_part");
    }
};

inline ImageEncoderOutput encode_image(const SyntheticImage& image, const ImageEncoder& enc) {
    return enc.forward(image.as_tensor());
}

/// Split the pre-final hidden sequence into four contiguous equal segments
/// (head, upper, lower, foot order). Concatenating them restores the input.
inline std::vector<Tensor> split_image_parts(const Tensor& hidden) {
    if (hidden.rank() != 2) throw ShapeError("split_image_parts requires rank-2 input");
    if (hidden.rows() % kNumBodyParts != 0)
        throw ConfigError("hidden sequence length " + std::to_string(hidden.rows()) +
                          " is not divisible by " + std::to_string(kNumBodyParts));
    const std::size_t seg = hidden.rows() / kNumBodyParts;
    std::vector<Tensor> parts;
    parts.reserve(kNumBodyParts);
    for (int p = 0; p < kNumBodyParts; ++p)
        parts.push_back(slice_rows(hidden, static_cast<std::size_t>(p) * seg, seg));
    return parts;
}

/// Local feature per Eq.-style duplicated-layer scheme: prepend the pre-final
/// cls state to the segment, run the duplicated layer, return the cls output.
inline Tensor encode_local(const Tensor& segment, const Tensor& cls_state,
                           const EncoderLayer& layer_part) {
    if (segment.rank() != 2 || segment.rows() == 0)
        throw ShapeError("encode_local: empty segment");
    Tensor seq = concat_rows({cls_state, segment});
    Tensor out = layer_part.forward(seq);
    return slice_rows(out, 0, 1);
}

// ---------------------------------------------------------------------------
// Text encoder over assembled prompt rows.
// ---------------------------------------------------------------------------

struct TextEncoderOutput {
    Tensor global;        // [1 x d] cls output
    Tensor token_states;  // [1 + L x d] final states; row 0 is cls
};

/// Transformer over [cls, prompt rows...]. Callers assemble the prompt
/// sequence (fused dynamic prompt followed by embedded caption tokens) and
/// keep track of where the caption region starts.
struct TextEncoder {
    Tensor cls;         // [1 x d]
    Tensor positional;  // [max_positions x d]
    std::vector<EncoderLayer> layers;

    static TextEncoder init(std::size_t d, std::size_t depth, std::size_t heads,
                            std::size_t expansion, std::size_t max_positions, RandomSource& rng,
                            double embed_scale = 0.02) {
        if (depth < 1) throw ConfigError("text encoder needs at least 1 layer");
        TextEncoder e;
        e.cls = Tensor::randn({1, d}, rng, embed_scale, true);
        e.positional = Tensor::randn({max_positions, d}, rng, embed_scale, true);
        for (std::size_t i = 0; i < depth; ++i)
            e.layers.push_back(EncoderLayer::init(d, heads, expansion, rng));
        return e;
    }

    std::size_t width() const { return cls.cols(); }

    TextEncoderOutput forward(const Tensor& prompt_rows) const {
        if (prompt_rows.rank() != 2 || prompt_rows.rows() == 0)
            throw ShapeError("text encoder expects a non-empty [L x d] prompt");
        if (prompt_rows.cols() != width())
            throw ShapeError("text encoder width mismatch: got " +
                             shape_str(prompt_rows.shape()));
        Tensor seq = concat_rows({cls, prompt_rows});
        if (seq.rows() > positional.rows())
            throw ShapeError("prompt length " + std::to_string(seq.rows()) +
                             " exceeds positional capacity " + std::to_string(positional.rows()));
        seq = add(seq, slice_rows(positional, 0, seq.rows()));
        for (const auto& layer : layers) seq = layer.forward(seq);
        TextEncoderOutput out;
        out.global = slice_rows(seq, 0, 1);
        out.token_states = seq;
        return out;
    }

    void visit(const ParamVisitor& fn, const std::string& prefix) {
        fn(prefix + ".cls", cls);
        fn(prefix + ".positional", positional);
        for (std::size_t i = 0; i < layers.size(); ++i)
            layers[i].visit(fn, prefix + ".layer" + std::to_string(i));
    }
};

/// Comma-wise split of caption token states into four local text features.
/// Each part is the mean of the cls state and the part's token states;
/// commas separate the groups and belong to none of them.
inline std::vector<Tensor> split_text_parts(const Tensor& cls_state, const Tensor& caption_states,
                                            const std::vector<std::size_t>& comma_positions) {
    if (comma_positions.size() != 3)
        throw DataError("caption structure: expected 3 comma markers, got " +
                        std::to_string(comma_positions.size()));
    const std::size_t len = caption_states.rows();
    std::vector<Tensor> parts;
    std::size_t begin = 0;
    for (int p = 0; p < kNumBodyParts; ++p) {
        const std::size_t end = p < 3 ? comma_positions[static_cast<std::size_t>(p)] : len;
        if (end < begin || end > len)
            throw DataError("caption structure: comma marker out of order");
        if (end == begin)
            throw DataError("caption structure: empty body-part segment");
        Tensor group = slice_rows(caption_states, begin, end - begin);
        parts.push_back(mean_rows(concat_rows({cls_state, group})));
        begin = end + 1;  // skip the comma token itself
    }
    return parts;
}

// ---------------------------------------------------------------------------
// Classifier head.
// ---------------------------------------------------------------------------

struct ClassifierHead {
    Linear fc;
    int domain_id = -1;
    int num_identities = 0;

    static ClassifierHead init(std::size_t d, int num_identities, int domain_id,
                               RandomSource& rng) {
        ClassifierHead h;
        h.fc = Linear::init(d, static_cast<std::size_t>(num_identities), rng);
        h.domain_id = domain_id;
        h.num_identities = num_identities;
        return h;
    }

    void visit(const ParamVisitor& fn, const std::string& prefix) {
        fc.visit(fn, prefix + ".fc");
    }
};

/// Identity logits for global image features. The head must belong to the
/// domain being classified.
inline Tensor classify(const Tensor& features, const ClassifierHead& head,
                       int expected_domain_id) {
    if (head.domain_id != expected_domain_id)
        throw ContractError("stale classifier head: head is for domain " +
                            std::to_string(head.domain_id) + ", batch is from domain " +
                            std::to_string(expected_domain_id));
    if (features.rank() != 2 || features.cols() != head.fc.weight.rows())
        throw ShapeError("classify: feature width " + shape_str(features.shape()) +
                         " does not match head input " + shape_str(head.fc.weight.shape()));
    return head.fc.forward(features);
}

}  // namespace dtp

#endif  // DTP_ENCODERS_HPP

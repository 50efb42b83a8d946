#ifndef DTP_SYNTHGEN_HPP
#define DTP_SYNTHGEN_HPP

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dtp/error.hpp"
#include "dtp/rng.hpp"
#include "dtp/tensor.hpp"
#include "dtp/textpipe.hpp"

namespace dtp {

inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Independent child stream, a pure function of (seed, tag): generation order
/// never shifts streams against each other.
inline RandomSource derive_rng(std::uint64_t seed, std::uint64_t tag) {
    return RandomSource(mix64(seed ^ mix64(tag)));
}

// ---------------------------------------------------------------------------
// Domain data model.
// ---------------------------------------------------------------------------

struct IdentityRecord {
    int identity_id = -1;
    int domain_id = -1;
    std::array<Attribute, kNumBodyParts> attributes{};
};

/// Ground-truth caption: a fixed template over the four body-part phrases in
/// head -> upper -> lower -> foot order, comma separated.
inline std::string caption(const IdentityRecord& rec, bool neutral_template = false) {
    std::string out = neutral_template ? "The person has " : "The man has ";
    for (int p = 0; p < kNumBodyParts; ++p) {
        if (p) out += ", ";
        out += rec.attributes[static_cast<std::size_t>(p)].phrase(static_cast<BodyPart>(p));
    }
    out += ".";
    return out;
}

/// A pedestrian "image": four region feature vectors (head, upper body,
/// lower body, foot), already carrying the domain and camera transforms.
struct SyntheticImage {
    int identity_id = -1;
    int camera_id = -1;
    std::uint64_t noise_seed = 0;
    std::size_t region_dim = 0;
    std::vector<double> regions;  // 4 * region_dim, row-major by part

    Tensor as_tensor() const {
        return Tensor::from_data({static_cast<std::size_t>(kNumBodyParts), region_dim}, regions);
    }
};

struct Split {
    std::vector<SyntheticImage> images;
};

struct Domain {
    int domain_id = -1;
    bool seen = true;
    std::vector<IdentityRecord> train_identities;
    std::vector<IdentityRecord> eval_identities;
    std::map<int, std::string> captions;  // identity -> caption text
    Split train;
    Split query;
    Split gallery;

    std::vector<int> train_identity_ids() const {
        std::vector<int> ids;
        for (const auto& r : train_identities) ids.push_back(r.identity_id);
        return ids;
    }
};

struct GeneratorConfig {
    int num_seen_domains = 3;
    int num_unseen_domains = 1;
    int ids_per_domain = 16;
    int images_per_identity = 4;
    int eval_ids_per_domain = 8;
    int queries_per_identity = 1;
    int gallery_per_identity = 2;
    int num_cameras = 3;
    std::size_t region_dim = 16;
    double noise_sigma = 0.1;
    double id_offset_sigma = 0.3;
    double domain_shift = 2.0;
    double domain_rotation = 0.7;
    double camera_rotation = 0.15;
    // 0: camera rotations span all region dims. k > 0: rotations act inside
    // the first k canonical dims only, so cross-camera matching rests on the
    // remaining stable directions (which each domain transform relocates).
    std::size_t camera_subspace = 0;
    double attribute_bias = 1.0;
    bool neutral_template = false;
    double caption_noise_prob = 0.0;

    int total_domains() const { return num_seen_domains + num_unseen_domains; }

    void validate() const {
        if (num_seen_domains + num_unseen_domains < 2)
            throw ConfigError("need at least 2 domains");
        if (num_seen_domains < 1) throw ConfigError("need at least 1 seen domain");
        if (ids_per_domain < 8) throw ConfigError("need at least 8 identities per domain");
        if (images_per_identity < 2) throw ConfigError("need at least 2 images per identity");
        if (region_dim < 4) throw ConfigError("region dimension must be at least 4");
        if (num_cameras < 2) throw ConfigError("need at least 2 cameras for the retrieval protocol");
        if (eval_ids_per_domain < 2) throw ConfigError("need at least 2 eval identities");
        if (queries_per_identity < 1 || gallery_per_identity < 1)
            throw ConfigError("eval splits need at least one image per identity");
        const long combos = 6L * 3 * 6 * 3 * 6 * 3 * 6 * 3;  // colors x garments per part
        if (static_cast<long>(ids_per_domain) + eval_ids_per_domain > combos)
            throw ConfigError("identities per domain exceed attribute combination count");
        if (total_domains() > static_cast<int>(2 * region_dim))
            throw ConfigError("more domains than available shift directions");
        if (caption_noise_prob < 0.0 || caption_noise_prob > 1.0)
            throw ConfigError("caption_noise_prob must lie in [0, 1]");
        if (camera_subspace > region_dim)
            throw ConfigError("camera_subspace cannot exceed region_dim");
        if (camera_subspace == 1) throw ConfigError("camera_subspace needs >= 2 dims to rotate");
    }
};

// ---------------------------------------------------------------------------
// Linear transforms: products of Givens plane rotations (exactly orthogonal)
// plus a translation.
// ---------------------------------------------------------------------------

struct PlaneRotation {
    std::size_t i = 0, j = 1;
    double c = 1.0, s = 0.0;
};

struct AffineTransform {
    std::vector<PlaneRotation> rotations;
    std::vector<double> shift;  // empty means zero

    void apply(std::vector<double>& v) const {
        for (const auto& r : rotations) {
            const double a = v[r.i], b = v[r.j];
            v[r.i] = r.c * a - r.s * b;
            v[r.j] = r.s * a + r.c * b;
        }
        if (!shift.empty())
            for (std::size_t k = 0; k < v.size(); ++k) v[k] += shift[k];
    }
};

inline AffineTransform random_rotation(std::size_t dim, std::size_t planes, double angle,
                                       RandomSource& rng) {
    AffineTransform t;
    for (std::size_t k = 0; k < planes; ++k) {
        PlaneRotation r;
        r.i = static_cast<std::size_t>(rng.below(dim));
        r.j = static_cast<std::size_t>(rng.below(dim - 1));
        if (r.j >= r.i) ++r.j;
        const double a = angle * rng.uniform(0.75, 1.25);
        r.c = std::cos(a);
        r.s = std::sin(a);
        t.rotations.push_back(r);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Stream generation.
// ---------------------------------------------------------------------------

/// Ordered stream of domains with an access guard enforcing the
/// rehearsal-free protocol: while domain t is being trained, only domain t's
/// train split is readable. Evaluation splits stay readable throughout.
class DomainStream {
  public:
    GeneratorConfig config;
    std::uint64_t seed = 0;
    std::vector<Domain> domains;

    const Domain& domain(int domain_id) const {
        for (const auto& d : domains)
            if (d.domain_id == domain_id) return d;
        throw ConfigError("no such domain: " + std::to_string(domain_id));
    }

    std::vector<int> seen_domain_ids() const {
        std::vector<int> ids;
        for (const auto& d : domains)
            if (d.seen) ids.push_back(d.domain_id);
        return ids;
    }

    std::vector<int> unseen_domain_ids() const {
        std::vector<int> ids;
        for (const auto& d : domains)
            if (!d.seen) ids.push_back(d.domain_id);
        return ids;
    }

    /// Marks domain_id as the one currently being trained.
    void begin_training(int domain_id) {
        const Domain& d = domain(domain_id);
        if (!d.seen) throw ContractError("cannot train on unseen domain " + std::to_string(domain_id));
        current_training_ = domain_id;
    }

    void end_training() { current_training_ = -1; }

    /// Guarded access to training data.
    const Split& train_split(int domain_id) const {
        if (current_training_ >= 0 && domain_id != current_training_)
            throw ContractError("rehearsal-free violation: training access to domain " +
                                std::to_string(domain_id) + " while training domain " +
                                std::to_string(current_training_));
        return domain(domain_id).train;
    }

    const Split& query_split(int domain_id) const { return domain(domain_id).query; }
    const Split& gallery_split(int domain_id) const { return domain(domain_id).gallery; }

  private:
    int current_training_ = -1;
};

namespace detail {

struct AttributeSampler {
    const GeneratorConfig& cfg;
    int domain_index;
    std::set<std::array<int, 8>> used;

    std::array<Attribute, kNumBodyParts> sample_unique(RandomSource& rng) {
        for (int attempt = 0; attempt < 4096; ++attempt) {
            std::array<Attribute, kNumBodyParts> attrs;
            std::array<int, 8> key{};
            for (int p = 0; p < kNumBodyParts; ++p) {
                attrs[p].color = sample_color(rng);
                attrs[p].garment = static_cast<int>(rng.below(3));
                key[p * 2] = attrs[p].color;
                key[p * 2 + 1] = attrs[p].garment;
            }
            if (used.insert(key).second) return attrs;
        }
        throw ConfigError("could not sample a fresh attribute combination");
    }

    /// Domains prefer different colors, shifting the per-domain attribute
    /// distribution without leaving the shared vocabulary.
    int sample_color(RandomSource& rng) {
        const int n = static_cast<int>(attribute_colors().size());
        const int preferred = domain_index % n;
        std::vector<double> w(n, 1.0);
        w[preferred] += cfg.attribute_bias;
        double total = 0.0;
        for (double x : w) total += x;
        double u = rng.uniform() * total;
        for (int c = 0; c < n; ++c) {
            u -= w[c];
            if (u < 0.0) return c;
        }
        return n - 1;
    }
};

}  // namespace detail

inline DomainStream generate_stream(const GeneratorConfig& config, std::uint64_t seed) {
    config.validate();
    DomainStream stream;
    stream.config = config;
    stream.seed = seed;

    const std::size_t dim = config.region_dim;

    // Shared semantic prototypes: one region vector per (part, color, garment),
    // centered so domain means are dominated by the configured shifts.
    RandomSource proto_rng = derive_rng(seed, 0xA0);
    std::array<std::array<std::array<std::vector<double>, 3>, 6>, kNumBodyParts> proto;
    std::vector<double> grand_mean(dim, 0.0);
    for (int p = 0; p < kNumBodyParts; ++p)
        for (int c = 0; c < 6; ++c)
            for (int g = 0; g < 3; ++g) {
                auto& v = proto[p][c][g];
                v.resize(dim);
                for (double& x : v) x = proto_rng.normal();
                for (std::size_t k = 0; k < dim; ++k) grand_mean[k] += v[k];
            }
    const double n_proto = kNumBodyParts * 6.0 * 3.0;
    for (std::size_t k = 0; k < dim; ++k) grand_mean[k] /= n_proto;
    for (int p = 0; p < kNumBodyParts; ++p)
        for (int c = 0; c < 6; ++c)
            for (int g = 0; g < 3; ++g)
                for (std::size_t k = 0; k < dim; ++k) proto[p][c][g][k] -= grand_mean[k];

    int next_identity = 0;
    for (int t = 0; t < config.total_domains(); ++t) {
        Domain dom;
        dom.domain_id = t;
        dom.seen = t < config.num_seen_domains;

        // Domain style: rotation + axis-aligned shift, distinct per domain.
        RandomSource rot_rng = derive_rng(seed, 0xB000 + static_cast<std::uint64_t>(t));
        AffineTransform domain_tf = random_rotation(dim, dim, config.domain_rotation, rot_rng);
        domain_tf.shift.assign(dim, 0.0);
        const std::size_t axis = static_cast<std::size_t>(t) % dim;
        const double sign = static_cast<std::size_t>(t) < dim ? 1.0 : -1.0;
        domain_tf.shift[axis] = sign * config.domain_shift;

        const std::size_t cam_dims = config.camera_subspace ? config.camera_subspace : dim;
        std::vector<AffineTransform> cameras;
        for (int c = 0; c < config.num_cameras; ++c) {
            RandomSource cam_rng =
                derive_rng(seed, 0xC000 + static_cast<std::uint64_t>(t) * 97 + c);
            cameras.push_back(
                random_rotation(cam_dims, std::max<std::size_t>(cam_dims / 2, 1),
                                config.camera_rotation, cam_rng));
        }

        RandomSource attr_rng = derive_rng(seed, 0xD000 + static_cast<std::uint64_t>(t));
        RandomSource offset_rng = derive_rng(seed, 0xE000 + static_cast<std::uint64_t>(t));
        RandomSource image_rng = derive_rng(seed, 0xF000 + static_cast<std::uint64_t>(t));
        RandomSource caption_rng = derive_rng(seed, 0xAB00 + static_cast<std::uint64_t>(t));
        detail::AttributeSampler sampler{config, t, {}};

        auto make_identity = [&](std::array<Attribute, kNumBodyParts> attrs) {
            IdentityRecord rec;
            rec.identity_id = next_identity++;
            rec.domain_id = t;
            rec.attributes = attrs;
            return rec;
        };

        auto make_caption = [&](const IdentityRecord& rec) {
            std::string text = caption(rec, config.neutral_template);
            if (config.caption_noise_prob > 0.0 &&
                caption_rng.uniform() < config.caption_noise_prob) {
                // Corrupt one part's color, mimicking captioner mistakes.
                IdentityRecord noisy = rec;
                const int part = static_cast<int>(caption_rng.below(kNumBodyParts));
                int wrong = static_cast<int>(caption_rng.below(5));
                if (wrong >= noisy.attributes[part].color) ++wrong;
                noisy.attributes[part].color = wrong;
                text = caption(noisy, config.neutral_template);
            }
            return text;
        };

        auto build_image = [&](const IdentityRecord& rec,
                               const std::array<std::vector<double>, kNumBodyParts>& offsets,
                               int camera) {
            SyntheticImage img;
            img.identity_id = rec.identity_id;
            img.camera_id = camera;
            img.region_dim = dim;
            img.noise_seed = image_rng.raw();
            RandomSource noise_rng(img.noise_seed);
            img.regions.reserve(kNumBodyParts * dim);
            for (int p = 0; p < kNumBodyParts; ++p) {
                const Attribute& a = rec.attributes[p];
                std::vector<double> v = proto[p][a.color][a.garment];
                for (std::size_t k = 0; k < dim; ++k) v[k] += offsets[p][k];
                cameras[static_cast<std::size_t>(camera)].apply(v);
                domain_tf.apply(v);
                for (std::size_t k = 0; k < dim; ++k) v[k] += noise_rng.normal(0.0, config.noise_sigma);
                img.regions.insert(img.regions.end(), v.begin(), v.end());
            }
            return img;
        };

        auto sample_offsets = [&] {
            std::array<std::vector<double>, kNumBodyParts> offsets;
            for (int p = 0; p < kNumBodyParts; ++p) {
                offsets[p].resize(dim);
                for (double& x : offsets[p]) x = offset_rng.normal(0.0, config.id_offset_sigma);
            }
            return offsets;
        };

        if (dom.seen) {
            for (int i = 0; i < config.ids_per_domain; ++i) {
                IdentityRecord rec = make_identity(sampler.sample_unique(attr_rng));
                auto offsets = sample_offsets();
                dom.captions[rec.identity_id] = make_caption(rec);
                for (int k = 0; k < config.images_per_identity; ++k)
                    dom.train.images.push_back(
                        build_image(rec, offsets, k % config.num_cameras));
                dom.train_identities.push_back(rec);
            }
        }

        for (int i = 0; i < config.eval_ids_per_domain; ++i) {
            IdentityRecord rec = make_identity(sampler.sample_unique(attr_rng));
            auto offsets = sample_offsets();
            dom.captions[rec.identity_id] = make_caption(rec);
            for (int k = 0; k < config.queries_per_identity; ++k)
                dom.query.images.push_back(build_image(rec, offsets, 0));
            for (int k = 0; k < config.gallery_per_identity; ++k)
                dom.gallery.images.push_back(
                    build_image(rec, offsets, 1 + k % (config.num_cameras - 1)));
            dom.eval_identities.push_back(rec);
        }

        stream.domains.push_back(std::move(dom));
    }
    return stream;
}

}  // namespace dtp

#endif  // DTP_SYNTHGEN_HPP

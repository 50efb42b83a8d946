#ifndef DTP_STREAM_IO_HPP
#define DTP_STREAM_IO_HPP

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtp/error.hpp"
#include "dtp/synthgen.hpp"

namespace dtp {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Flat binary arrays: magic, version, rows, cols, then row-major doubles
// (little-endian). Round-trips bit-exactly.
// ---------------------------------------------------------------------------

namespace detail {
constexpr char kArrayMagic[4] = {'D', 'T', 'P', 'B'};
constexpr std::uint32_t kArrayVersion = 1;
}  // namespace detail

inline void write_array(const std::string& path, std::size_t rows, std::size_t cols,
                        const std::vector<double>& data) {
    if (data.size() != rows * cols) throw IoError("array size does not match header");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(detail::kArrayMagic, 4);
    const std::uint32_t ver = detail::kArrayVersion;
    const std::uint64_t r = rows, c = cols;
    out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    out.write(reinterpret_cast<const char*>(&r), sizeof(r));
    out.write(reinterpret_cast<const char*>(&c), sizeof(c));
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!out) throw IoError("write failed: " + path);
}

inline std::vector<double> read_array(const std::string& path, std::size_t& rows,
                                      std::size_t& cols) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    char magic[4];
    std::uint32_t ver = 0;
    std::uint64_t r = 0, c = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    in.read(reinterpret_cast<char*>(&r), sizeof(r));
    in.read(reinterpret_cast<char*>(&c), sizeof(c));
    if (!in || std::memcmp(magic, detail::kArrayMagic, 4) != 0)
        throw IoError("bad array header: " + path);
    if (ver != detail::kArrayVersion)
        throw IoError("unsupported array version in " + path);
    std::vector<double> data(r * c);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw IoError("truncated array file: " + path);
    rows = r;
    cols = c;
    return data;
}

// ---------------------------------------------------------------------------
// Generator config <-> JSON.
// ---------------------------------------------------------------------------

inline json generator_config_to_json(const GeneratorConfig& c) {
    return json{{"num_seen_domains", c.num_seen_domains},
                {"num_unseen_domains", c.num_unseen_domains},
                {"ids_per_domain", c.ids_per_domain},
                {"images_per_identity", c.images_per_identity},
                {"eval_ids_per_domain", c.eval_ids_per_domain},
                {"queries_per_identity", c.queries_per_identity},
                {"gallery_per_identity", c.gallery_per_identity},
                {"num_cameras", c.num_cameras},
                {"region_dim", c.region_dim},
                {"noise_sigma", c.noise_sigma},
                {"id_offset_sigma", c.id_offset_sigma},
                {"domain_shift", c.domain_shift},
                {"domain_rotation", c.domain_rotation},
                {"camera_rotation", c.camera_rotation},
                {"camera_subspace", c.camera_subspace},
                {"attribute_bias", c.attribute_bias},
                {"neutral_template", c.neutral_template},
                {"caption_noise_prob", c.caption_noise_prob}};
}

/// Strict parse: every key must be known, every value takes its default when
/// absent.
inline GeneratorConfig generator_config_from_json(const json& j) {
    GeneratorConfig c;
    static const std::vector<std::string> known{
        "num_seen_domains",   "num_unseen_domains", "ids_per_domain",
        "images_per_identity", "eval_ids_per_domain", "queries_per_identity",
        "gallery_per_identity", "num_cameras",       "region_dim",
        "noise_sigma",        "id_offset_sigma",    "domain_shift",
        "domain_rotation",    "camera_rotation",    "camera_subspace",
        "attribute_bias",     "neutral_template",   "caption_noise_prob"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("unknown generator config key: '" + it.key() + "'");
    }
    auto get = [&](const char* k, auto& field) {
        if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
    };
    get("num_seen_domains", c.num_seen_domains);
    get("num_unseen_domains", c.num_unseen_domains);
    get("ids_per_domain", c.ids_per_domain);
    get("images_per_identity", c.images_per_identity);
    get("eval_ids_per_domain", c.eval_ids_per_domain);
    get("queries_per_identity", c.queries_per_identity);
    get("gallery_per_identity", c.gallery_per_identity);
    get("num_cameras", c.num_cameras);
    get("region_dim", c.region_dim);
    get("noise_sigma", c.noise_sigma);
    get("id_offset_sigma", c.id_offset_sigma);
    get("domain_shift", c.domain_shift);
    get("domain_rotation", c.domain_rotation);
    get("camera_rotation", c.camera_rotation);
    get("camera_subspace", c.camera_subspace);
    get("attribute_bias", c.attribute_bias);
    get("neutral_template", c.neutral_template);
    get("caption_noise_prob", c.caption_noise_prob);
    return c;
}

// ---------------------------------------------------------------------------
// Stream directory: manifest.json + one binary array per split.
// ---------------------------------------------------------------------------

namespace detail {

inline json identity_to_json(const IdentityRecord& rec, const std::string& cap) {
    json attrs = json::array();
    for (const auto& a : rec.attributes) attrs.push_back(json::array({a.color, a.garment}));
    return json{{"id", rec.identity_id}, {"attributes", attrs}, {"caption", cap}};
}

inline IdentityRecord identity_from_json(const json& j, int domain_id, std::string& cap) {
    IdentityRecord rec;
    rec.identity_id = j.at("id").get<int>();
    rec.domain_id = domain_id;
    const auto& attrs = j.at("attributes");
    for (int p = 0; p < kNumBodyParts; ++p) {
        rec.attributes[p].color = attrs.at(p).at(0).get<int>();
        rec.attributes[p].garment = attrs.at(p).at(1).get<int>();
    }
    cap = j.at("caption").get<std::string>();
    return rec;
}

inline json split_to_json(const Split& split, const std::string& file) {
    json entries = json::array();
    for (const auto& img : split.images)
        entries.push_back(json{{"identity", img.identity_id},
                               {"camera", img.camera_id},
                               {"noise_seed", img.noise_seed}});
    return json{{"file", file}, {"entries", entries}};
}

inline void write_split_array(const std::string& dir, const std::string& file,
                              const Split& split, std::size_t region_dim) {
    std::vector<double> data;
    data.reserve(split.images.size() * kNumBodyParts * region_dim);
    for (const auto& img : split.images)
        data.insert(data.end(), img.regions.begin(), img.regions.end());
    write_array(dir + "/" + file, split.images.size(), kNumBodyParts * region_dim, data);
}

inline Split read_split(const std::string& dir, const json& j, std::size_t region_dim) {
    Split split;
    std::size_t rows = 0, cols = 0;
    std::vector<double> data = read_array(dir + "/" + j.at("file").get<std::string>(), rows, cols);
    const auto& entries = j.at("entries");
    if (rows != entries.size() || cols != kNumBodyParts * region_dim)
        throw IoError("split array shape does not match manifest");
    for (std::size_t i = 0; i < rows; ++i) {
        SyntheticImage img;
        img.identity_id = entries.at(i).at("identity").get<int>();
        img.camera_id = entries.at(i).at("camera").get<int>();
        img.noise_seed = entries.at(i).at("noise_seed").get<std::uint64_t>();
        img.region_dim = region_dim;
        img.regions.assign(data.begin() + static_cast<std::ptrdiff_t>(i * cols),
                           data.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols));
        split.images.push_back(std::move(img));
    }
    return split;
}

}  // namespace detail

inline void export_stream(const DomainStream& stream, const std::string& dir) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format_version"] = 1;
    manifest["seed"] = stream.seed;
    manifest["config"] = generator_config_to_json(stream.config);
    json domains = json::array();
    for (const auto& dom : stream.domains) {
        const std::string prefix = "d" + std::to_string(dom.domain_id);
        json jd;
        jd["domain_id"] = dom.domain_id;
        jd["seen"] = dom.seen;
        json train_ids = json::array();
        for (const auto& rec : dom.train_identities)
            train_ids.push_back(detail::identity_to_json(rec, dom.captions.at(rec.identity_id)));
        json eval_ids = json::array();
        for (const auto& rec : dom.eval_identities)
            eval_ids.push_back(detail::identity_to_json(rec, dom.captions.at(rec.identity_id)));
        jd["identities"] = train_ids;
        jd["eval_identities"] = eval_ids;
        jd["splits"] = json{{"train", detail::split_to_json(dom.train, prefix + "_train.bin")},
                            {"query", detail::split_to_json(dom.query, prefix + "_query.bin")},
                            {"gallery", detail::split_to_json(dom.gallery, prefix + "_gallery.bin")}};
        detail::write_split_array(dir, prefix + "_train.bin", dom.train, stream.config.region_dim);
        detail::write_split_array(dir, prefix + "_query.bin", dom.query, stream.config.region_dim);
        detail::write_split_array(dir, prefix + "_gallery.bin", dom.gallery,
                                  stream.config.region_dim);
        domains.push_back(jd);
    }
    manifest["domains"] = domains;
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

inline DomainStream import_stream(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw IoError("cannot read manifest in " + dir);
    json manifest;
    in >> manifest;
    if (manifest.at("format_version").get<int>() != 1)
        throw IoError("unsupported stream format version");
    DomainStream stream;
    stream.seed = manifest.at("seed").get<std::uint64_t>();
    stream.config = generator_config_from_json(manifest.at("config"));
    for (const auto& jd : manifest.at("domains")) {
        Domain dom;
        dom.domain_id = jd.at("domain_id").get<int>();
        dom.seen = jd.at("seen").get<bool>();
        for (const auto& ji : jd.at("identities")) {
            std::string cap;
            IdentityRecord rec = detail::identity_from_json(ji, dom.domain_id, cap);
            dom.captions[rec.identity_id] = cap;
            dom.train_identities.push_back(rec);
        }
        for (const auto& ji : jd.at("eval_identities")) {
            std::string cap;
            IdentityRecord rec = detail::identity_from_json(ji, dom.domain_id, cap);
            dom.captions[rec.identity_id] = cap;
            dom.eval_identities.push_back(rec);
        }
        const auto& splits = jd.at("splits");
        dom.train = detail::read_split(dir, splits.at("train"), stream.config.region_dim);
        dom.query = detail::read_split(dir, splits.at("query"), stream.config.region_dim);
        dom.gallery = detail::read_split(dir, splits.at("gallery"), stream.config.region_dim);
        stream.domains.push_back(std::move(dom));
    }
    return stream;
}

}  // namespace dtp

#endif  // DTP_STREAM_IO_HPP

#ifndef DTP_CHECKPOINT_HPP
#define DTP_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtp/error.hpp"

namespace dtp {

/// Versioned checkpoint container: a JSON manifest (array names, shapes,
/// offsets, plus free-form metadata) followed by raw 64-bit arrays. Doubles
/// are stored verbatim, so save -> load is bit-exact.
struct CheckpointData {
    std::map<std::string, std::vector<double>> arrays;
    std::map<std::string, std::vector<std::size_t>> shapes;
    nlohmann::json metadata;
};

namespace detail {
constexpr char kCheckpointMagic[4] = {'D', 'T', 'P', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace detail

inline void save_checkpoint_file(const std::string& path, const CheckpointData& data) {
    nlohmann::json manifest;
    manifest["format_version"] = detail::kCheckpointVersion;
    manifest["metadata"] = data.metadata;
    nlohmann::json arrays = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, values] : data.arrays) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["offset"] = offset;
        entry["length"] = values.size();
        auto it = data.shapes.find(name);
        entry["shape"] = it != data.shapes.end() ? nlohmann::json(it->second)
                                                 : nlohmann::json::array({values.size()});
        arrays.push_back(entry);
        offset += values.size();
    }
    manifest["arrays"] = arrays;

    const std::string header = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(detail::kCheckpointMagic, 4);
    const std::uint32_t ver = detail::kCheckpointVersion;
    const std::uint64_t hlen = header.size();
    out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, values] : data.arrays)
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!out) throw IoError("checkpoint write failed: " + path);
}

inline CheckpointData load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint: " + path);
    char magic[4];
    std::uint32_t ver = 0;
    std::uint64_t hlen = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
        throw IoError("bad checkpoint header: " + path);
    if (ver != detail::kCheckpointVersion)
        throw IoError("unsupported checkpoint version in " + path);
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json manifest = nlohmann::json::parse(header);

    CheckpointData data;
    data.metadata = manifest.at("metadata");
    for (const auto& entry : manifest.at("arrays")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::size_t length = entry.at("length").get<std::size_t>();
        std::vector<double> values(length);
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(length * sizeof(double)));
        if (!in) throw IoError("truncated checkpoint: " + path);
        data.arrays[name] = std::move(values);
        data.shapes[name] = entry.at("shape").get<std::vector<std::size_t>>();
    }
    return data;
}

}  // namespace dtp

#endif  // DTP_CHECKPOINT_HPP

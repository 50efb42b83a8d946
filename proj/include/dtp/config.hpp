#ifndef DTP_CONFIG_HPP
#define DTP_CONFIG_HPP

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtp/error.hpp"
#include "dtp/stream_io.hpp"
#include "dtp/trainer.hpp"

namespace dtp {

/// One experiment, fully declared: generator, training order, training
/// hyper-parameters, module toggles, output location, seed.
struct RunConfig {
    std::string name = "run";
    std::string out_dir;  // optional; resolved against DTP_OUTPUT_ROOT when empty
    std::uint64_t seed = 0;
    std::vector<int> order;  // empty: stream order of seen domains
    GeneratorConfig generator;
    TrainConfig train;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                                const std::string& scope) {
    if (!j.is_object()) throw ConfigError("config section '" + scope + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("unknown config key '" + it.key() + "' in " + scope);
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    reject_unknown_keys(j,
                        {"width", "heads", "image_layers", "text_layers",
                         "fusion_encoder_layers", "fusion_decoder_layers", "ffn_expansion",
                         "pkp_tokens", "max_positions", "init_scale"},
                        "train.model");
    ModelConfig m;
    maybe(j, "width", m.width);
    maybe(j, "heads", m.heads);
    maybe(j, "image_layers", m.image_layers);
    maybe(j, "text_layers", m.text_layers);
    maybe(j, "fusion_encoder_layers", m.fusion_encoder_layers);
    maybe(j, "fusion_decoder_layers", m.fusion_decoder_layers);
    maybe(j, "ffn_expansion", m.ffn_expansion);
    maybe(j, "pkp_tokens", m.pkp_tokens);
    maybe(j, "max_positions", m.max_positions);
    maybe(j, "init_scale", m.init_scale);
    return m;
}

inline nlohmann::json model_config_to_json(const ModelConfig& m) {
    return nlohmann::json{{"width", m.width},
                          {"heads", m.heads},
                          {"image_layers", m.image_layers},
                          {"text_layers", m.text_layers},
                          {"fusion_encoder_layers", m.fusion_encoder_layers},
                          {"fusion_decoder_layers", m.fusion_decoder_layers},
                          {"ffn_expansion", m.ffn_expansion},
                          {"pkp_tokens", m.pkp_tokens},
                          {"max_positions", m.max_positions},
                          {"init_scale", m.init_scale}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    reject_unknown_keys(
        j,
        {"stage1_epochs", "stage2_epochs", "batch_p", "batch_k", "learning_rate",
         "weight_decay", "warmup_start_factor", "warmup_fraction", "kd_temperature",
         "triplet_margin", "weights", "fusion_mode", "toggles", "stage2_train_text", "model"},
        "train");
    TrainConfig t;
    maybe(j, "stage1_epochs", t.stage1_epochs);
    maybe(j, "stage2_epochs", t.stage2_epochs);
    maybe(j, "batch_p", t.batch_p);
    maybe(j, "batch_k", t.batch_k);
    maybe(j, "learning_rate", t.learning_rate);
    maybe(j, "weight_decay", t.weight_decay);
    maybe(j, "warmup_start_factor", t.warmup_start_factor);
    maybe(j, "warmup_fraction", t.warmup_fraction);
    maybe(j, "kd_temperature", t.kd_temperature);
    maybe(j, "triplet_margin", t.triplet_margin);
    maybe(j, "stage2_train_text", t.stage2_train_text);
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        reject_unknown_keys(w, {"id", "triplet", "global", "partial", "lkd"}, "train.weights");
        maybe(w, "id", t.weights.id);
        maybe(w, "triplet", t.weights.triplet);
        maybe(w, "global", t.weights.global);
        maybe(w, "partial", t.weights.partial);
        maybe(w, "lkd", t.weights.lkd);
    }
    if (j.contains("fusion_mode"))
        t.fusion_mode = fusion_mode_from_string(j.at("fusion_mode").get<std::string>());
    if (j.contains("toggles")) {
        const auto& g = j.at("toggles");
        reject_unknown_keys(g, {"dpf", "tfa", "kd", "lkd"}, "train.toggles");
        maybe(g, "dpf", t.toggles.dpf);
        maybe(g, "tfa", t.toggles.tfa);
        maybe(g, "kd", t.toggles.kd);
        maybe(g, "lkd", t.toggles.lkd);
    }
    if (j.contains("model")) t.model = model_config_from_json(j.at("model"));
    return t;
}

inline nlohmann::json train_config_to_json(const TrainConfig& t) {
    return nlohmann::json{
        {"stage1_epochs", t.stage1_epochs},
        {"stage2_epochs", t.stage2_epochs},
        {"batch_p", t.batch_p},
        {"batch_k", t.batch_k},
        {"learning_rate", t.learning_rate},
        {"weight_decay", t.weight_decay},
        {"warmup_start_factor", t.warmup_start_factor},
        {"warmup_fraction", t.warmup_fraction},
        {"kd_temperature", t.kd_temperature},
        {"triplet_margin", t.triplet_margin},
        {"stage2_train_text", t.stage2_train_text},
        {"weights",
         {{"id", t.weights.id},
          {"triplet", t.weights.triplet},
          {"global", t.weights.global},
          {"partial", t.weights.partial},
          {"lkd", t.weights.lkd}}},
        {"fusion_mode", to_string(t.fusion_mode)},
        {"toggles",
         {{"dpf", t.toggles.dpf},
          {"tfa", t.toggles.tfa},
          {"kd", t.toggles.kd},
          {"lkd", t.toggles.lkd}}},
        {"model", model_config_to_json(t.model)}};
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"name", "out_dir", "seed", "order", "generator", "train"},
                                "top level");
    RunConfig cfg;
    detail::maybe(j, "name", cfg.name);
    detail::maybe(j, "out_dir", cfg.out_dir);
    detail::maybe(j, "seed", cfg.seed);
    detail::maybe(j, "order", cfg.order);
    if (j.contains("generator")) cfg.generator = generator_config_from_json(j.at("generator"));
    if (j.contains("train")) cfg.train = detail::train_config_from_json(j.at("train"));
    cfg.train.seed = cfg.seed;
    cfg.generator.validate();
    cfg.train.validate();
    return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    return nlohmann::json{{"name", cfg.name},
                          {"out_dir", cfg.out_dir},
                          {"seed", cfg.seed},
                          {"order", cfg.order},
                          {"generator", generator_config_to_json(cfg.generator)},
                          {"train", detail::train_config_to_json(cfg.train)}};
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace dtp

#endif  // DTP_CONFIG_HPP

#ifndef DTP_TRAINER_HPP
#define DTP_TRAINER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtp/checkpoint.hpp"
#include "dtp/encoders.hpp"
#include "dtp/error.hpp"
#include "dtp/evalkit.hpp"
#include "dtp/fusion.hpp"
#include "dtp/losses.hpp"
#include "dtp/optim.hpp"
#include "dtp/stream_io.hpp"
#include "dtp/synthgen.hpp"
#include "dtp/textpipe.hpp"
#include "dtp/transformer.hpp"

namespace dtp {

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

struct ModelConfig {
    std::size_t width = 32;  // shared feature dimension d
    std::size_t heads = 4;
    std::size_t image_layers = 2;
    std::size_t text_layers = 2;
    std::size_t fusion_encoder_layers = 2;
    std::size_t fusion_decoder_layers = 2;
    std::size_t ffn_expansion = 2;
    std::size_t pkp_tokens = 4;
    std::size_t max_positions = 32;
    double init_scale = 0.02;
};

struct Toggles {
    bool dpf = true;
    bool tfa = true;
    bool kd = true;
    bool lkd = true;
};

struct TrainConfig {
    int stage1_epochs = 60;
    int stage2_epochs = 60;
    int batch_p = 4;  // identities per batch
    int batch_k = 4;  // instances per identity
    double learning_rate = 3.5e-4;
    double weight_decay = 1e-4;
    double warmup_start_factor = 0.01;
    double warmup_fraction = 0.1;  // of stage epochs
    double kd_temperature = 2.0;
    double triplet_margin = 0.3;
    double logit_scale_init = 0.0;  // tau = exp(logit_scale), trainable
    LossWeights weights;
    FusionMode fusion_mode = FusionMode::Dynamic;
    Toggles toggles;
    bool stage2_train_text = false;
    std::uint64_t seed = 0;
    ModelConfig model;

    void validate() const {
        if (stage1_epochs < 0 || stage2_epochs < 0) throw ConfigError("epochs must be >= 0");
        if (batch_p < 2 || batch_k < 1)
            throw ConfigError("batch sampler needs >= 2 identities and >= 1 instance");
        if (learning_rate <= 0.0) throw ConfigError("learning rate must be positive");
        if (weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
        if (kd_temperature <= 0.0) throw ConfigError("kd temperature must be positive");
        if (weights.id < 0 || weights.triplet < 0 || weights.global < 0 || weights.partial < 0 ||
            weights.lkd < 0)
            throw ConfigError("loss weights must be >= 0");
        if (toggles.lkd && !toggles.kd)
            throw ConfigError("the LKD toggle requires the KD path to be active");
        if (toggles.tfa && !toggles.dpf)
            throw ConfigError("the TFA toggle requires the DPF text path to be active");
    }
};

// ---------------------------------------------------------------------------
// Model state.
// ---------------------------------------------------------------------------

struct TeacherSnapshot {
    ImageEncoder encoder;
    ClassifierHead head;
    int domain_id = -1;
    bool present = false;
};

struct RunProgress {
    int domain_pos = 0;   // index into the training order
    int stage = 0;        // 0: domain not started, 1: stage-I done/in progress...
    int epochs_done = 0;  // within the current stage
    bool domain_initialized = false;
};

/// Everything the trainer mutates: parameters, teacher snapshot, RNG,
/// progress. Serializable bit-exactly.
struct ModelState {
    ModelConfig cfg;
    std::size_t region_dim = 0;
    Vocabulary vocab;
    TokenEmbedding embedding;
    FusionBlock fusion;
    TextEncoder text_encoder;
    ImageEncoder image_encoder;
    PKPStore pkp;
    ClassifierHead classifier;
    Tensor logit_scale;
    TemperaturePair temps;
    TeacherSnapshot teacher;

    RandomSource train_rng;
    std::int64_t global_step = 0;
    RunProgress progress;

    static ModelState init(const ModelConfig& cfg, std::size_t region_dim, std::uint64_t seed,
                           double logit_scale_init = 0.0) {
        ModelState s;
        s.cfg = cfg;
        s.region_dim = region_dim;
        s.vocab = Vocabulary::standard();
        RandomSource emb_rng = derive_rng(seed, 0x11);
        s.embedding = TokenEmbedding::init(s.vocab.size(), cfg.width, emb_rng,
                                           cfg.max_positions, cfg.init_scale);
        RandomSource fus_rng = derive_rng(seed, 0x12);
        s.fusion = FusionBlock::init(cfg.width, cfg.heads, cfg.fusion_encoder_layers,
                                     cfg.fusion_decoder_layers, cfg.ffn_expansion, fus_rng);
        RandomSource txt_rng = derive_rng(seed, 0x13);
        s.text_encoder = TextEncoder::init(cfg.width, cfg.text_layers, cfg.heads,
                                           cfg.ffn_expansion, cfg.max_positions, txt_rng,
                                           cfg.init_scale);
        RandomSource img_rng = derive_rng(seed, 0x14);
        s.image_encoder = ImageEncoder::init(region_dim, cfg.width, cfg.image_layers, cfg.heads,
                                             cfg.ffn_expansion, img_rng, cfg.init_scale);
        s.pkp.tokens_per_identity = cfg.pkp_tokens;
        s.pkp.dim = cfg.width;
        s.pkp.init_scale = cfg.init_scale;
        s.logit_scale = Tensor::scalar(0.0, true);
        s.temps = TemperaturePair::init(2.0);
        s.train_rng = derive_rng(seed, 0x15);
        return s;
    }

    /// Model parameters under stable names (teacher excluded; it is archived
    /// separately).
    NamedParams named_model_params() {
        NamedParams out;
        auto add = [&](const std::string& name, Tensor& t) { out.emplace_back(name, t); };
        add("embedding.table", embedding.table);
        add("embedding.positional", embedding.positional);
        fusion.visit([&](const std::string& n, Tensor& t) { add(n, t); }, "fusion");
        text_encoder.visit([&](const std::string& n, Tensor& t) { add(n, t); }, "text_encoder");
        image_encoder.visit([&](const std::string& n, Tensor& t) { add(n, t); }, "image_encoder");
        if (classifier.num_identities > 0)
            classifier.visit([&](const std::string& n, Tensor& t) { add(n, t); }, "classifier");
        for (auto& [id, block] : pkp.blocks) add("pkp.id" + std::to_string(id), block);
        add("logit_scale", logit_scale);
        temps.visit([&](const std::string& n, Tensor& t) { add(n, t); }, "temps");
        return out;
    }

    /// Freeze the current image encoder + classifier as the distillation
    /// teacher. The copy is deep and never receives gradients.
    void snapshot_teacher(int domain_id) {
        teacher.encoder = deep_copy(image_encoder);
        teacher.head = deep_copy(classifier);
        teacher.encoder.visit(
            [](const std::string&, Tensor& t) { t.set_requires_grad(false); }, "");
        teacher.head.visit([](const std::string&, Tensor& t) { t.set_requires_grad(false); }, "");
        teacher.domain_id = domain_id;
        teacher.present = true;
    }
};

// ---------------------------------------------------------------------------
// Batch sampling: P identities x K instances.
// ---------------------------------------------------------------------------

struct Batch {
    std::vector<std::size_t> image_indices;  // into the domain's train split
    std::vector<int> identity_ids;           // per image
    std::vector<int> labels;                 // domain-local class indices
};

struct DomainContext {
    int domain_id = -1;
    std::vector<int> identity_ids;               // sorted train identities
    std::map<int, int> identity_to_label;        // global id -> local class
    std::map<int, std::vector<std::size_t>> images_by_identity;
    std::map<int, std::string> captions;

    static DomainContext build(const Domain& domain, const Split& train) {
        DomainContext ctx;
        ctx.domain_id = domain.domain_id;
        for (const auto& rec : domain.train_identities) ctx.identity_ids.push_back(rec.identity_id);
        std::sort(ctx.identity_ids.begin(), ctx.identity_ids.end());
        for (std::size_t k = 0; k < ctx.identity_ids.size(); ++k)
            ctx.identity_to_label[ctx.identity_ids[k]] = static_cast<int>(k);
        for (std::size_t i = 0; i < train.images.size(); ++i)
            ctx.images_by_identity[train.images[i].identity_id].push_back(i);
        ctx.captions = domain.captions;
        return ctx;
    }
};

/// One epoch worth of P x K batches. Identity order is shuffled per epoch;
/// instances are drawn shuffled with wraparound when an identity has fewer
/// than K images. Trailing groups with fewer than 2 identities are dropped.
inline std::vector<Batch> sample_epoch(const DomainContext& ctx, int batch_p, int batch_k,
                                       RandomSource& rng) {
    std::vector<int> ids = ctx.identity_ids;
    rng.shuffle(ids);
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < ids.size(); start += static_cast<std::size_t>(batch_p)) {
        const std::size_t end = std::min(ids.size(), start + static_cast<std::size_t>(batch_p));
        if (end - start < 2) break;
        Batch batch;
        for (std::size_t k = start; k < end; ++k) {
            const int id = ids[k];
            std::vector<std::size_t> pool = ctx.images_by_identity.at(id);
            rng.shuffle(pool);
            for (int inst = 0; inst < batch_k; ++inst) {
                batch.image_indices.push_back(pool[static_cast<std::size_t>(inst) % pool.size()]);
                batch.identity_ids.push_back(id);
                batch.labels.push_back(ctx.identity_to_label.at(id));
            }
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

inline int steps_per_epoch(const DomainContext& ctx, int batch_p) {
    int full = static_cast<int>(ctx.identity_ids.size()) / batch_p;
    int rem = static_cast<int>(ctx.identity_ids.size()) % batch_p;
    return full + (rem >= 2 ? 1 : 0);
}

// ---------------------------------------------------------------------------
// Text path: caption -> invariant prompt -> fused prompt -> text features.
// ---------------------------------------------------------------------------

struct TextFeatures {
    Tensor global;                                  // [1 x d]
    std::array<Tensor, kNumBodyParts> local_parts;  // each [1 x d]
};

/// Full text forward for one identity: embeds the caption, fuses with the
/// identity's learnable prompt, and encodes [fused prompt; caption tokens].
/// Comma markers index into the caption region of the encoder states.
inline TextFeatures text_forward(ModelState& state, const std::string& caption_text, int identity,
                                 FusionMode mode, bool want_locals) {
    TokenSequence tokens = tokenize(caption_text, state.vocab);
    Tensor p_ip = embed(tokens, state.embedding);
    const Tensor& p_pkp = state.pkp.block(identity);
    Tensor p_dp = fuse_with_mode(mode, p_ip, p_pkp, state.fusion);

    Tensor prompt = concat_rows({p_dp, p_ip});
    TextEncoderOutput enc = state.text_encoder.forward(prompt);

    TextFeatures out;
    out.global = enc.global;
    if (want_locals) {
        // token_states rows: [cls, fused prompt rows, caption rows]
        const std::size_t caption_begin = 1 + p_dp.rows();
        Tensor caption_states = slice_rows(enc.token_states, caption_begin, tokens.length());
        Tensor cls_state = slice_rows(enc.token_states, 0, 1);
        auto parts = split_text_parts(cls_state, caption_states, tokens.comma_positions);
        for (int p = 0; p < kNumBodyParts; ++p) out.local_parts[p] = parts[p];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Run record sink.
// ---------------------------------------------------------------------------

using LogSink = std::function<void(const nlohmann::json&)>;

class LifelongTrainer;

struct TrainHooks {
    /// Called after every epoch. Return false to stop the run (used to
    /// exercise interruption + resume).
    std::function<bool(LifelongTrainer&, int domain_pos, int stage, int epoch)> after_epoch;
};

struct RunOptions {
    std::string out_dir;  // empty: nothing written to disk
    bool resume = false;
    bool overwrite = false;
    TrainHooks hooks;
};

struct RunRecord {
    std::vector<StageReport> reports;
    std::vector<nlohmann::json> steps;
    bool completed = false;
};

// ---------------------------------------------------------------------------
// The trainer.
// ---------------------------------------------------------------------------

class LifelongTrainer {
  public:
    LifelongTrainer(DomainStream& stream, TrainConfig config, std::vector<int> order)
        : stream_(stream), cfg_(std::move(config)), order_(std::move(order)) {
        cfg_.validate();
        if (order_.empty()) order_ = stream_.seen_domain_ids();
        for (int d : order_)
            if (!stream_.domain(d).seen)
                throw ConfigError("training order contains unseen domain " + std::to_string(d));
        state_ = ModelState::init(cfg_.model, stream_.config.region_dim, cfg_.seed);
    }

    ModelState& state() { return state_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<int>& order() const { return order_; }
    const std::vector<StageReport>& reports() const { return reports_; }

    void set_log_sink(LogSink sink) { log_sink_ = std::move(sink); }

    /// Algorithm: for each domain in order, reinitialize the per-domain
    /// parts, run stage-I (text path toward frozen image features), run
    /// stage-II (joint objective), snapshot the teacher, evaluate everything.
    RunRecord run(const RunOptions& opts = {}) {
        RunRecord record;
        bool stopped = false;
        while (state_.progress.domain_pos < static_cast<int>(order_.size())) {
            const int pos = state_.progress.domain_pos;
            const int domain_id = order_[static_cast<std::size_t>(pos)];
            stream_.begin_training(domain_id);
            DomainContext ctx = DomainContext::build(stream_.domain(domain_id),
                                                     stream_.train_split(domain_id));

            if (!state_.progress.domain_initialized) {
                begin_domain(ctx);
                state_.progress.domain_initialized = true;
                state_.progress.stage = 1;
                state_.progress.epochs_done = 0;
            }

            if (state_.progress.stage == 1) {
                if (!run_stage(ctx, /*stage=*/1, opts, record)) {
                    stopped = true;
                    break;
                }
                state_.progress.stage = 2;
                state_.progress.epochs_done = 0;
                save_stage_checkpoint(opts, pos, 1);
            }

            if (!run_stage(ctx, /*stage=*/2, opts, record)) {
                stopped = true;
                break;
            }

            stream_.end_training();
            state_.snapshot_teacher(domain_id);
            evaluate_all(record);
            // the checkpoint records the advanced position so a resume
            // continues with the next domain instead of re-evaluating
            state_.progress.domain_pos = pos + 1;
            state_.progress.stage = 0;
            state_.progress.epochs_done = 0;
            state_.progress.domain_initialized = false;
            save_stage_checkpoint(opts, pos, 2);
        }
        if (!stopped) stream_.end_training();
        record.completed = !stopped;
        record.reports = reports_;
        return record;
    }

    /// Bit-exact snapshot of parameters, optimizer, RNG and progress.
    void save_checkpoint(const std::string& path) {
        CheckpointData data;
        for (auto& [name, t] : state_.named_model_params()) {
            data.arrays[name] = t.values();
            data.shapes[name] = t.shape();
        }
        if (state_.teacher.present) {
            auto collect = [&](const std::string& n, Tensor& t) {
                data.arrays["teacher." + n] = t.values();
                data.shapes["teacher." + n] = t.shape();
            };
            state_.teacher.encoder.visit(collect, "encoder");
            state_.teacher.head.visit(collect, "head");
        }
        nlohmann::json meta;
        meta["seed"] = cfg_.seed;
        meta["region_dim"] = state_.region_dim;
        meta["global_step"] = state_.global_step;
        meta["train_rng"] = state_.train_rng.serialize();
        meta["progress"] = {{"domain_pos", state_.progress.domain_pos},
                            {"stage", state_.progress.stage},
                            {"epochs_done", state_.progress.epochs_done},
                            {"domain_initialized", state_.progress.domain_initialized}};
        meta["classifier"] = {{"domain_id", state_.classifier.domain_id},
                              {"num_identities", state_.classifier.num_identities}};
        meta["pkp_ids"] = nlohmann::json::array();
        for (const auto& [id, block] : state_.pkp.blocks) meta["pkp_ids"].push_back(id);
        meta["teacher"] = {{"present", state_.teacher.present},
                           {"domain_id", state_.teacher.domain_id},
                           {"num_identities",
                            state_.teacher.present ? state_.teacher.head.num_identities : 0}};
        meta["order"] = order_;
        meta["completed_reports"] = nlohmann::json::array();
        for (const auto& r : reports_) meta["completed_reports"].push_back(stage_report_to_json(r));

        if (optimizer_) {
            nlohmann::json opt;
            opt["step_count"] = optimizer_->state.step_count;
            opt["warmup_steps"] = optimizer_->state.warmup_steps;
            opt["names"] = optimizer_->names;
            meta["optimizer"] = opt;
            for (std::size_t k = 0; k < optimizer_->names.size(); ++k) {
                data.arrays["optim.m." + optimizer_->names[k]] = optimizer_->state.m[k];
                data.arrays["optim.v." + optimizer_->names[k]] = optimizer_->state.v[k];
            }
        }
        data.metadata = std::move(meta);
        save_checkpoint_file(path, data);
    }

    /// Rebuild trainer state from a checkpoint produced by save_checkpoint.
    void restore_checkpoint(const std::string& path) {
        CheckpointData data = load_checkpoint_file(path);
        const nlohmann::json& meta = data.metadata;

        // Recreate per-domain structures so every named array has a home.
        const int head_ids = meta.at("classifier").at("num_identities").get<int>();
        const int head_domain = meta.at("classifier").at("domain_id").get<int>();
        if (head_ids > 0) {
            RandomSource r = derive_rng(cfg_.seed, 0xDEAD);
            state_.classifier = ClassifierHead::init(state_.cfg.width, head_ids, head_domain, r);
        }
        std::vector<int> pkp_ids = meta.at("pkp_ids").get<std::vector<int>>();
        if (!pkp_ids.empty()) {
            RandomSource r = derive_rng(cfg_.seed, 0xBEEF);
            state_.pkp.reinit(pkp_ids, r);
        } else {
            state_.pkp.blocks.clear();
        }
        if (meta.at("teacher").at("present").get<bool>()) {
            RandomSource r = derive_rng(cfg_.seed, 0xFACE);
            state_.teacher.encoder = ImageEncoder::init(
                state_.region_dim, state_.cfg.width, state_.cfg.image_layers, state_.cfg.heads,
                state_.cfg.ffn_expansion, r, state_.cfg.init_scale);
            state_.teacher.head = ClassifierHead::init(
                state_.cfg.width, meta.at("teacher").at("num_identities").get<int>(),
                meta.at("teacher").at("domain_id").get<int>(), r);
            state_.teacher.domain_id = meta.at("teacher").at("domain_id").get<int>();
            state_.teacher.present = true;
            state_.teacher.encoder.visit(
                [](const std::string&, Tensor& t) { t.set_requires_grad(false); }, "");
            state_.teacher.head.visit(
                [](const std::string&, Tensor& t) { t.set_requires_grad(false); }, "");
        } else {
            state_.teacher.present = false;
        }

        auto load_into = [&](const std::string& name, Tensor& t) {
            auto it = data.arrays.find(name);
            if (it == data.arrays.end()) throw IoError("checkpoint missing array: " + name);
            if (it->second.size() != t.size())
                throw IoError("checkpoint array size mismatch for " + name);
            t.raw_values() = it->second;
        };
        for (auto& [name, t] : state_.named_model_params()) load_into(name, t);
        if (state_.teacher.present) {
            state_.teacher.encoder.visit(
                [&](const std::string& n, Tensor& t) { load_into("teacher." + n, t); }, "encoder");
            state_.teacher.head.visit(
                [&](const std::string& n, Tensor& t) { load_into("teacher." + n, t); }, "head");
        }

        state_.global_step = meta.at("global_step").get<std::int64_t>();
        state_.train_rng = RandomSource::deserialize(meta.at("train_rng").get<std::string>());
        state_.progress.domain_pos = meta.at("progress").at("domain_pos").get<int>();
        state_.progress.stage = meta.at("progress").at("stage").get<int>();
        state_.progress.epochs_done = meta.at("progress").at("epochs_done").get<int>();
        state_.progress.domain_initialized =
            meta.at("progress").at("domain_initialized").get<bool>();

        reports_.clear();
        for (const auto& jr : meta.at("completed_reports"))
            reports_.push_back(stage_report_from_json(jr));

        optimizer_.reset();
        if (meta.contains("optimizer")) {
            pending_optimizer_ = meta.at("optimizer");
            pending_optimizer_arrays_.clear();
            for (const std::string& n :
                 meta.at("optimizer").at("names").get<std::vector<std::string>>()) {
                pending_optimizer_arrays_["optim.m." + n] = data.arrays.at("optim.m." + n);
                pending_optimizer_arrays_["optim.v." + n] = data.arrays.at("optim.v." + n);
            }
        }
    }

    /// Evaluate every domain's retrieval splits with the current encoder.
    StageReport evaluate_stage() const {
        StageReport report;
        report.stage = state_.progress.domain_pos;
        report.trained_domain = order_[static_cast<std::size_t>(
            std::min<int>(state_.progress.domain_pos, static_cast<int>(order_.size()) - 1))];
        EmbedFn embed_fn = [this](const SyntheticImage& img) {
            ImageEncoderOutput out = encode_image(img, state_.image_encoder);
            return out.global.values();
        };
        for (const auto& domain : stream_.domains) {
            EvalResult res = evaluate(stream_.query_split(domain.domain_id),
                                      stream_.gallery_split(domain.domain_id), embed_fn);
            DomainMetrics m;
            m.domain_id = domain.domain_id;
            m.seen = domain.seen;
            m.map = res.map;
            m.rank1 = res.rank1;
            m.n_query = res.n_query;
            m.n_gallery = res.n_gallery;
            report.domains.push_back(m);
        }
        return report;
    }

  private:
    struct NamedOptimizer {
        OptimizerState state;
        std::vector<std::string> names;
        void add(const std::string& name, const Tensor& t) {
            names.push_back(name);
            state.add_param(t);
        }
    };

    void begin_domain(const DomainContext& ctx) {
        // fresh per-identity prompts and a fresh classifier head
        RandomSource pkp_rng =
            derive_rng(cfg_.seed, 0x6000 + static_cast<std::uint64_t>(ctx.domain_id));
        state_.pkp.reinit(ctx.identity_ids, pkp_rng);
        RandomSource head_rng =
            derive_rng(cfg_.seed, 0x7000 + static_cast<std::uint64_t>(ctx.domain_id));
        state_.classifier = ClassifierHead::init(
            state_.cfg.width, static_cast<int>(ctx.identity_ids.size()), ctx.domain_id, head_rng);
    }

    NamedOptimizer make_optimizer(const DomainContext& ctx, int stage) {
        NamedOptimizer opt;
        opt.state.base_lr = cfg_.learning_rate;
        opt.state.weight_decay = cfg_.weight_decay;
        opt.state.warmup_start_factor = cfg_.warmup_start_factor;
        const int stage_epochs = stage == 1 ? cfg_.stage1_epochs : cfg_.stage2_epochs;
        const int spe = steps_per_epoch(ctx, cfg_.batch_p);
        opt.state.warmup_steps =
            cfg_.warmup_fraction > 0.0
                ? std::max<std::int64_t>(
                      1, std::llround(cfg_.warmup_fraction * stage_epochs * spe))
                : 0;

        if (stage == 1) {
            opt.add("embedding.table", state_.embedding.table);
            opt.add("embedding.positional", state_.embedding.positional);
            if (cfg_.fusion_mode == FusionMode::Dynamic)
                state_.fusion.visit(
                    [&](const std::string& n, Tensor& t) { opt.add(n, t); }, "fusion");
            state_.text_encoder.visit(
                [&](const std::string& n, Tensor& t) { opt.add(n, t); }, "text_encoder");
            for (auto& [id, block] : state_.pkp.blocks)
                opt.add("pkp.id" + std::to_string(id), block);
            opt.add("logit_scale", state_.logit_scale);
        } else {
            state_.image_encoder.visit(
                [&](const std::string& n, Tensor& t) { opt.add(n, t); }, "image_encoder");
            state_.classifier.visit(
                [&](const std::string& n, Tensor& t) { opt.add(n, t); }, "classifier");
            if (cfg_.toggles.dpf) opt.add("logit_scale", state_.logit_scale);
            if (cfg_.toggles.kd && cfg_.toggles.lkd && state_.teacher.present)
                state_.temps.visit([&](const std::string& n, Tensor& t) { opt.add(n, t); },
                                   "temps");
            if (cfg_.stage2_train_text && cfg_.toggles.dpf) {
                opt.add("embedding.table", state_.embedding.table);
                opt.add("embedding.positional", state_.embedding.positional);
                if (cfg_.fusion_mode == FusionMode::Dynamic)
                    state_.fusion.visit(
                        [&](const std::string& n, Tensor& t) { opt.add(n, t); }, "fusion");
                state_.text_encoder.visit(
                    [&](const std::string& n, Tensor& t) { opt.add(n, t); }, "text_encoder");
                for (auto& [id, block] : state_.pkp.blocks)
                    opt.add("pkp.id" + std::to_string(id), block);
            }
        }
        return opt;
    }

    /// Runs the remaining epochs of one stage. Returns false if a hook
    /// requested a stop.
    bool run_stage(const DomainContext& ctx, int stage, const RunOptions& opts,
                   RunRecord& record) {
        const int total_epochs = stage == 1 ? cfg_.stage1_epochs : cfg_.stage2_epochs;
        if (stage == 1 && !cfg_.toggles.dpf) return true;  // no text path, nothing to train
        if (stage == 2 && cfg_.toggles.kd && state_.progress.domain_pos > 0 &&
            !state_.teacher.present)
            throw ContractError("stage-II on domain position " +
                                std::to_string(state_.progress.domain_pos) +
                                " requires a teacher snapshot");
        if (state_.progress.epochs_done >= total_epochs) return true;

        if (!optimizer_) {
            optimizer_ = make_optimizer(ctx, stage);
            if (pending_optimizer_.has_value()) {
                // resuming mid-stage: moments and counters come from the checkpoint
                const nlohmann::json& po = *pending_optimizer_;
                std::vector<std::string> names = po.at("names").get<std::vector<std::string>>();
                if (names != optimizer_->names)
                    throw IoError("checkpoint optimizer does not match the current stage");
                optimizer_->state.step_count = po.at("step_count").get<std::int64_t>();
                optimizer_->state.warmup_steps = po.at("warmup_steps").get<std::int64_t>();
                for (std::size_t k = 0; k < names.size(); ++k) {
                    optimizer_->state.m[k] = pending_optimizer_arrays_.at("optim.m." + names[k]);
                    optimizer_->state.v[k] = pending_optimizer_arrays_.at("optim.v." + names[k]);
                }
                pending_optimizer_.reset();
                pending_optimizer_arrays_.clear();
            }
        }

        // Stage-II with a frozen text path: text features per identity are
        // constant through the stage, so compute them once.
        std::map<int, TextFeatures> text_cache;
        const bool text_frozen = stage == 2 && !cfg_.stage2_train_text;
        if (stage == 2 && cfg_.toggles.dpf && text_frozen) {
            for (int id : ctx.identity_ids) {
                TextFeatures tf = text_forward(state_, ctx.captions.at(id), id,
                                               cfg_.fusion_mode, cfg_.toggles.tfa);
                TextFeatures frozen;
                frozen.global = tf.global.detach();
                if (cfg_.toggles.tfa)
                    for (int p = 0; p < kNumBodyParts; ++p)
                        frozen.local_parts[p] = tf.local_parts[p].detach();
                text_cache[id] = frozen;
            }
        }

        // Stage-I freezes the image encoder, so per-image global features are
        // constant; cache them detached across the stage.
        std::map<std::size_t, Tensor> image_cache;

        for (int epoch = state_.progress.epochs_done; epoch < total_epochs; ++epoch) {
            std::vector<Batch> batches =
                sample_epoch(ctx, cfg_.batch_p, cfg_.batch_k, state_.train_rng);
            for (const Batch& batch : batches) {
                if (stage == 1)
                    train_step_stage1(ctx, batch, image_cache, record);
                else
                    train_step_stage2(ctx, batch, text_cache, record);
            }
            state_.progress.epochs_done = epoch + 1;
            if (opts.hooks.after_epoch &&
                !opts.hooks.after_epoch(*this, state_.progress.domain_pos, stage, epoch))
                return false;
        }
        optimizer_.reset();
        return true;
    }

    /// Stage-I objective: global alignment with image features detached;
    /// only the text side (embedding, fusion, text encoder, prompts) moves.
    void train_step_stage1(const DomainContext& ctx, const Batch& batch,
                           std::map<std::size_t, Tensor>& image_cache, RunRecord& record) {
        const Split& train = stream_.train_split(ctx.domain_id);

        std::vector<Tensor> image_rows;
        std::vector<Tensor> text_rows;
        std::map<int, Tensor> text_by_id;
        for (std::size_t k = 0; k < batch.image_indices.size(); ++k) {
            const std::size_t img_idx = batch.image_indices[k];
            auto cached = image_cache.find(img_idx);
            if (cached == image_cache.end()) {
                const SyntheticImage& img = train.images[img_idx];
                ImageEncoderOutput out = encode_image(img, state_.image_encoder);
                cached = image_cache.emplace(img_idx, out.global.detach()).first;
            }
            image_rows.push_back(cached->second);  // fixed image encoder
            const int id = batch.identity_ids[k];
            auto it = text_by_id.find(id);
            if (it == text_by_id.end()) {
                TextFeatures tf =
                    text_forward(state_, ctx.captions.at(id), id, cfg_.fusion_mode, false);
                it = text_by_id.emplace(id, tf.global).first;
            }
            text_rows.push_back(it->second);
        }

        BatchFeatures feats;
        feats.image_features = concat_rows(image_rows);
        feats.text_features = concat_rows(text_rows);
        feats.labels = batch.labels;
        feats.logit_scale = state_.logit_scale;
        Tensor loss = global_loss(feats);

        zero_grads(optimizer_->state);
        backward(loss);
        const double lr = optimizer_->state.effective_lr();
        adam_step(optimizer_->state);
        ++state_.global_step;

        log_step(record, ctx.domain_id, 1, lr, loss.item(), {{"global", loss.item()}});
    }

    /// Stage-II objective: identity + triplet + global + partial + weighted
    /// distillation, text path frozen unless configured otherwise.
    void train_step_stage2(const DomainContext& ctx, const Batch& batch,
                           std::map<int, TextFeatures>& text_cache, RunRecord& record) {
        const Split& train = stream_.train_split(ctx.domain_id);
        const bool use_text = cfg_.toggles.dpf;
        const bool use_tfa = cfg_.toggles.tfa;
        const bool use_kd = cfg_.toggles.kd && state_.teacher.present;

        std::vector<Tensor> image_rows;
        std::vector<Tensor> teacher_rows;
        std::vector<std::array<Tensor, kNumBodyParts>> local_image;
        std::vector<std::array<Tensor, kNumBodyParts>> local_text;
        std::vector<Tensor> text_rows;

        for (std::size_t k = 0; k < batch.image_indices.size(); ++k) {
            const SyntheticImage& img = train.images[batch.image_indices[k]];
            ImageEncoderOutput out = encode_image(img, state_.image_encoder);
            image_rows.push_back(out.global);

            if (use_tfa) {
                std::array<Tensor, kNumBodyParts> locals;
                auto segments = split_image_parts(out.hidden);
                for (int p = 0; p < kNumBodyParts; ++p)
                    locals[p] = encode_local(segments[static_cast<std::size_t>(p)],
                                             out.hidden_cls, state_.image_encoder.layer_part);
                local_image.push_back(std::move(locals));
            }
            if (use_kd) {
                ImageEncoderOutput tout = encode_image(img, state_.teacher.encoder);
                teacher_rows.push_back(tout.global);
            }
            if (use_text) {
                const int id = batch.identity_ids[k];
                TextFeatures tf;
                auto it = text_cache.find(id);
                if (it != text_cache.end()) {
                    tf = it->second;
                } else {
                    tf = text_forward(state_, ctx.captions.at(id), id, cfg_.fusion_mode, use_tfa);
                    if (!cfg_.stage2_train_text) {
                        tf.global = tf.global.detach();
                        if (use_tfa)
                            for (int p = 0; p < kNumBodyParts; ++p)
                                tf.local_parts[p] = tf.local_parts[p].detach();
                    }
                    text_cache[id] = tf;
                }
                text_rows.push_back(tf.global);
                if (use_tfa) local_text.push_back(tf.local_parts);
            }
        }

        Tensor features = concat_rows(image_rows);
        Tensor logits = classify(features, state_.classifier, ctx.domain_id);

        StageTerms terms;
        terms.id = id_loss(logits, batch.labels);
        terms.triplet = triplet_loss(features, batch.labels, cfg_.triplet_margin);
        if (use_text) {
            BatchFeatures feats;
            feats.image_features = features;
            feats.text_features = concat_rows(text_rows);
            feats.labels = batch.labels;
            feats.logit_scale = state_.logit_scale;
            terms.global = global_loss(feats);
            if (use_tfa) terms.partial = partial_loss(local_image, local_text);
        }
        if (use_kd) {
            Tensor student_logits =
                classify(features, state_.teacher.head, state_.teacher.domain_id);
            Tensor teacher_logits = classify(concat_rows(teacher_rows), state_.teacher.head,
                                             state_.teacher.domain_id);
            terms.lkd = cfg_.toggles.lkd
                            ? lkd_loss(student_logits, teacher_logits, state_.temps)
                            : kd_loss(student_logits, teacher_logits, cfg_.kd_temperature);
        }

        StageLoss stage = stage2_loss(terms, cfg_.weights);

        zero_grads(optimizer_->state);
        backward(stage.total);
        const double lr = optimizer_->state.effective_lr();
        adam_step(optimizer_->state);
        ++state_.global_step;

        log_step(record, ctx.domain_id, 2, lr, stage.total.item(), stage.components);
    }

    void log_step(RunRecord& record, int domain_id, int stage, double lr, double total,
                  const std::map<std::string, double>& components) {
        nlohmann::json entry;
        entry["type"] = "step";
        entry["step"] = state_.global_step;
        entry["domain"] = domain_id;
        entry["stage"] = stage;
        entry["lr"] = lr;
        entry["loss"] = total;
        entry["components"] = components;
        entry["delta1"] = state_.temps.delta_student.item();
        entry["delta2"] = state_.temps.delta_teacher.item();
        if (state_.temps.student_clamped() || state_.temps.teacher_clamped())
            entry["temperature_clamped"] = true;
        record.steps.push_back(entry);
        if (log_sink_) log_sink_(entry);
    }

    void evaluate_all(RunRecord& record) {
        StageReport report = evaluate_stage();
        reports_.push_back(report);
        nlohmann::json entry;
        entry["type"] = "stage_report";
        entry["report"] = stage_report_to_json(report);
        record.steps.push_back(entry);
        if (log_sink_) log_sink_(entry);
    }

    void save_stage_checkpoint(const RunOptions& opts, int pos, int stage) {
        if (opts.out_dir.empty()) return;
        std::filesystem::create_directories(opts.out_dir + "/checkpoints");
        const std::string name =
            "ckpt_domain" + std::to_string(pos) + "_stage" + std::to_string(stage) + ".bin";
        save_checkpoint(opts.out_dir + "/checkpoints/" + name);
        save_checkpoint(opts.out_dir + "/checkpoints/latest.bin");
    }

    DomainStream& stream_;
    TrainConfig cfg_;
    std::vector<int> order_;
    ModelState state_;
    std::vector<StageReport> reports_;
    std::optional<NamedOptimizer> optimizer_;
    std::optional<nlohmann::json> pending_optimizer_;
    std::map<std::string, std::vector<double>> pending_optimizer_arrays_;
    LogSink log_sink_;
};

}  // namespace dtp

#endif  // DTP_TRAINER_HPP

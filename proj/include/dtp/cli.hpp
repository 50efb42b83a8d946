#ifndef DTP_CLI_HPP
#define DTP_CLI_HPP

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dtp/config.hpp"
#include "dtp/report.hpp"
#include "dtp/stream_io.hpp"
#include "dtp/trainer.hpp"

namespace dtp::cli {

namespace fs = std::filesystem;

/// Output root resolution: explicit flag > config out_dir > DTP_OUTPUT_ROOT
/// env var > ./runs.
inline std::string resolve_out_dir(const RunConfig& cfg, const std::string& override_dir) {
    if (!override_dir.empty()) return override_dir;
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    const char* root = std::getenv("DTP_OUTPUT_ROOT");
    const std::string base = root && *root ? root : "runs";
    return base + "/" + cfg.name;
}

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    bool overwrite = false;
};

inline RunConfig load_config(const CommonArgs& args) {
    RunConfig cfg = load_run_config(args.config_path);
    if (args.seed) {
        cfg.seed = *args.seed;
        cfg.train.seed = *args.seed;
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// generate: write a domain stream to disk.
// ---------------------------------------------------------------------------

inline int cmd_generate(const CommonArgs& args) {
    RunConfig cfg = load_config(args);
    const std::string out = resolve_out_dir(cfg, args.out_dir);
    if (fs::exists(out + "/manifest.json") && !args.overwrite) {
        std::fprintf(stderr, "error: %s already holds a stream (use --overwrite)\n", out.c_str());
        return 1;
    }
    DomainStream stream = generate_stream(cfg.generator, cfg.seed);
    export_stream(stream, out);

    std::size_t train_images = 0, eval_images = 0;
    for (const auto& d : stream.domains) {
        train_images += d.train.images.size();
        eval_images += d.query.images.size() + d.gallery.images.size();
    }
    std::printf("stream written to %s\n", out.c_str());
    std::printf("  seen domains:   %zu\n", stream.seen_domain_ids().size());
    std::printf("  unseen domains: %zu\n", stream.unseen_domain_ids().size());
    std::printf("  train images:   %zu\n", train_images);
    std::printf("  eval images:    %zu\n", eval_images);
    return 0;
}

// ---------------------------------------------------------------------------
// train: lifelong run over a stream (generated on demand).
// ---------------------------------------------------------------------------

struct TrainArgs : CommonArgs {
    std::string stream_dir;  // optional; default <out>/stream
    bool resume = false;
};

/// The tokenizer vocabulary ships with every run for checkpoint portability.
inline void write_vocabulary_file(const std::string& out) {
    Vocabulary::standard().save(out + "/vocabulary.txt");
}

inline int cmd_train(const TrainArgs& args) {
    RunConfig cfg = load_config(args);
    const std::string out = resolve_out_dir(cfg, args.out_dir);
    const std::string stream_dir = args.stream_dir.empty() ? out + "/stream" : args.stream_dir;

    if (fs::exists(out + "/run_record.jsonl") && !args.resume && !args.overwrite) {
        std::fprintf(stderr, "error: %s already holds a run (use --resume or --overwrite)\n",
                     out.c_str());
        return 1;
    }
    if (args.overwrite && !args.resume && fs::exists(out)) {
        fs::remove_all(out + "/run_record.jsonl");
        fs::remove_all(out + "/checkpoints");
        for (const auto& e : fs::directory_iterator(out)) {
            const std::string name = e.path().filename().string();
            if (name.rfind("report_stage_", 0) == 0) fs::remove(e.path());
        }
    }
    fs::create_directories(out);

    DomainStream stream;
    if (fs::exists(stream_dir + "/manifest.json")) {
        stream = import_stream(stream_dir);
        if (stream.seed != cfg.seed ||
            generator_config_to_json(stream.config) != generator_config_to_json(cfg.generator)) {
            std::fprintf(stderr, "error: stream at %s was generated from a different config\n",
                         stream_dir.c_str());
            return 1;
        }
    } else {
        stream = generate_stream(cfg.generator, cfg.seed);
        export_stream(stream, stream_dir);
    }

    {
        std::ofstream cfg_echo(out + "/config.json");
        cfg_echo << run_config_to_json(cfg).dump(2) << "\n";
    }
    write_vocabulary_file(out);

    LifelongTrainer trainer(stream, cfg.train, cfg.order);
    if (args.resume) {
        const std::string latest = out + "/checkpoints/latest.bin";
        if (!fs::exists(latest)) {
            std::fprintf(stderr, "error: --resume but no checkpoint at %s\n", latest.c_str());
            return 1;
        }
        trainer.restore_checkpoint(latest);
    }

    std::ofstream record_file(out + "/run_record.jsonl", std::ios::app);
    trainer.set_log_sink([&](const nlohmann::json& entry) {
        record_file << entry.dump() << "\n";
        record_file.flush();
    });

    RunOptions opts;
    opts.out_dir = out;
    RunRecord record = trainer.run(opts);

    for (const auto& report : trainer.reports()) {
        std::ofstream rf(out + "/report_stage_" + std::to_string(report.stage) + ".json");
        rf << stage_report_to_json(report).dump(2) << "\n";
    }
    if (!trainer.reports().empty()) {
        std::printf("final stage summary:\n%s",
                    final_summary_table(trainer.reports().back()).c_str());
    }
    std::printf("run artifacts in %s\n", out.c_str());
    return record.completed ? 0 : 1;
}

// ---------------------------------------------------------------------------
// report: tables and plots from a finished (or partial) run.
// ---------------------------------------------------------------------------

struct ReportArgs {
    std::string run_dir;
    std::string format = "table";  // table | csv
};

inline std::vector<StageReport> read_reports(const std::string& run_dir) {
    std::vector<StageReport> reports;
    for (int stage = 0;; ++stage) {
        const std::string path = run_dir + "/report_stage_" + std::to_string(stage) + ".json";
        if (!fs::exists(path)) break;
        std::ifstream in(path);
        nlohmann::json j;
        in >> j;
        reports.push_back(stage_report_from_json(j));
    }
    return reports;
}

inline int cmd_report(const ReportArgs& args) {
    std::vector<StageReport> reports = read_reports(args.run_dir);
    if (reports.empty()) {
        std::fprintf(stderr, "error: no stage reports under %s\n", args.run_dir.c_str());
        return 1;
    }

    // resolve the first-trained domain for the forgetting curve
    int first_domain = -1;
    {
        std::ifstream cfg_in(args.run_dir + "/config.json");
        if (cfg_in) {
            nlohmann::json j;
            cfg_in >> j;
            if (j.contains("order") && !j.at("order").empty())
                first_domain = j.at("order")[0].get<int>();
        }
        if (first_domain < 0) first_domain = reports.front().trained_domain;
        if (first_domain < 0 && !reports.front().domains.empty())
            first_domain = reports.front().domains.front().domain_id;
    }

    const std::string summary =
        args.format == "csv" ? final_summary_csv(reports.back()) : final_summary_table(reports.back());
    std::printf("%s", summary.c_str());
    {
        std::ofstream out(args.run_dir + "/summary." + (args.format == "csv" ? "csv" : "txt"));
        out << summary;
    }

    if (reports.size() >= 2) {
        auto rows = tendency_curves(reports, first_domain);
        write_curves_csv(args.run_dir + "/curves.csv", rows);

        std::vector<double> x;
        ChartSeries fmap{"first-domain mAP", {}}, frank{"first-domain rank1", {}};
        ChartSeries umap{"unseen avg mAP", {}}, urank{"unseen avg rank1", {}};
        for (const auto& r : rows) {
            x.push_back(r.stage);
            fmap.y.push_back(r.first_domain_map);
            frank.y.push_back(r.first_domain_rank1);
            umap.y.push_back(r.unseen_avg_map);
            urank.y.push_back(r.unseen_avg_rank1);
        }
        write_svg_chart(args.run_dir + "/forgetting.svg",
                        "First-domain retrieval across stages", x, {fmap, frank});
        write_svg_chart(args.run_dir + "/generalizing.svg", "Unseen-average across stages", x,
                        {umap, urank});
        std::printf("curves.csv, forgetting.svg, generalizing.svg written to %s\n",
                    args.run_dir.c_str());
    } else {
        std::printf("single completed stage: curve emission skipped\n");
    }
    return 0;
}

}  // namespace dtp::cli

#endif  // DTP_CLI_HPP

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "dtp/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"dtp: lifelong text-prompted retrieval experiments"};
    app.require_subcommand(1);

    dtp::cli::CommonArgs gen_args;
    dtp::cli::TrainArgs train_args;
    dtp::cli::ReportArgs report_args;
    std::uint64_t seed_value = 0;

    auto* gen = app.add_subcommand("generate", "generate a synthetic domain stream");
    gen->add_option("--config", gen_args.config_path, "run config file (JSON)")->required();
    gen->add_option("--out", gen_args.out_dir, "output directory");
    auto* gen_seed = gen->add_option("--seed", seed_value, "seed override");
    gen->add_flag("--overwrite", gen_args.overwrite, "replace an existing stream");

    auto* train = app.add_subcommand("train", "run lifelong training over a stream");
    train->add_option("--config", train_args.config_path, "run config file (JSON)")->required();
    train->add_option("--out", train_args.out_dir, "run output directory");
    train->add_option("--stream", train_args.stream_dir,
                      "stream directory (default: <out>/stream, generated when missing)");
    auto* train_seed = train->add_option("--seed", seed_value, "seed override");
    train->add_flag("--resume", train_args.resume, "resume from the latest checkpoint");
    train->add_flag("--overwrite", train_args.overwrite, "discard an existing run");

    auto* report = app.add_subcommand("report", "emit tables and plots for a run");
    report->add_option("--run-dir", report_args.run_dir, "run directory")->required();
    report->add_option("--format", report_args.format, "summary format: table|csv")
        ->check(CLI::IsMember({"table", "csv"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            if (gen_seed->count()) gen_args.seed = seed_value;
            return dtp::cli::cmd_generate(gen_args);
        }
        if (train->parsed()) {
            if (train_seed->count()) train_args.seed = seed_value;
            return dtp::cli::cmd_train(train_args);
        }
        if (report->parsed()) return dtp::cli::cmd_report(report_args);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}

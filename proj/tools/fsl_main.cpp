#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fsl/config.hpp"
#include "fsl/error.hpp"
#include "fsl/experiment.hpp"
#include "fsl/parallel.hpp"

// Exit codes: 0 success, 1 configuration error (bad flags, bad config file),
// 2 runtime failure.

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool quiet = false;
    int threads = 0;
};

void add_common(CLI::App* sub, CommonArgs& args, bool wants_out) {
    sub->add_option("config", args.config_path, "experiment config file")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", args.seed, "override run.seed from the config")
        ->each([&args](const std::string&) { args.seed_set = true; });
    if (wants_out) sub->add_option("--out", args.out_dir, "output directory (default: out)");
    sub->add_flag("--quiet", args.quiet, "suppress progress output");
    sub->add_option("--threads", args.threads, "worker threads (0 = all hardware threads)");
}

fsl::ExperimentConfig load(const CommonArgs& args) {
    fsl::ExperimentConfig cfg = fsl::load_config(args.config_path);
    if (args.seed_set) cfg.seed = args.seed;
    fsl::parallel::set_threads(args.threads);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale federated split learning simulator"};
    app.require_subcommand(1);

    CommonArgs run_args, sweep_args, probe_args;
    std::string sweep_axis;
    std::vector<std::string> sweep_values;
    bool check_quiet = false;

    CLI::App* run = app.add_subcommand("run", "train once and write metrics + artifacts");
    add_common(run, run_args, true);

    CLI::App* sweep = app.add_subcommand("sweep", "run once per value of one config axis");
    add_common(sweep, sweep_args, true);
    sweep->add_option("--axis", sweep_axis, "K, M, q, fedround, alpha, c or option")->required();
    sweep->add_option("--values", sweep_values, "axis values, comma separated")
        ->required()
        ->delimiter(',');

    CLI::App* probe = app.add_subcommand("probe", "heterogeneity probes, no training");
    add_common(probe, probe_args, true);

    CLI::App* check = app.add_subcommand("check", "built-in oracle self-tests");
    check->add_flag("--quiet", check_quiet, "print failures only");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (run->parsed()) {
            fsl::run_experiment(load(run_args), run_args.out_dir, run_args.quiet);
        } else if (sweep->parsed()) {
            fsl::run_sweep(load(sweep_args), sweep_axis, sweep_values, sweep_args.out_dir,
                           sweep_args.quiet);
        } else if (probe->parsed()) {
            fsl::run_probe(load(probe_args), probe_args.out_dir, probe_args.quiet);
        } else if (check->parsed()) {
            return fsl::self_check(check_quiet) == 0 ? 0 : 2;
        }
    } catch (const fsl::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}

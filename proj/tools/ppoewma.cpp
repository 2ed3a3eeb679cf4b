// ppoewma: command-line front end for the experiment suites.
//
//   ppoewma <run|staleness|batchsize|linear-lr|headtohead|com-kl-grid|gradcheck>
//           --config <path> [--out <dir>] [--seeds a,b,c] [--jobs n]
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure,
// 3 failed acceptance assertion (configs with `check = true`, and gradcheck).

#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "ppoewma/config.hpp"
#include "ppoewma/experiments.hpp"
#include "ppoewma/gradcheck.hpp"

namespace {

enum ExitCode { ok = 0, config_error = 1, runtime_failure = 2, assertion_failure = 3 };

struct Options {
    std::string config;
    std::string out;
    std::vector<std::uint64_t> seeds;
    int jobs = 1;
};

int execute_command(ppoewma::ExperimentKind kind, const Options& opt) {
    using namespace ppoewma;
    ExperimentConfig cfg;
    if (opt.config.empty()) {
        if (kind != ExperimentKind::gradcheck) throw ConfigError("<command line>", 0, "--config is required");
        cfg = parse_config("[experiment]\nkind = gradcheck\n", "<defaults>");
    } else {
        cfg = load_config(opt.config);
    }
    if (cfg.kind != kind) {
        throw ConfigError(cfg.source, 0,
                          "config is for '" + to_string(cfg.kind) + "', not '" + to_string(kind) + "'");
    }
    if (!opt.seeds.empty()) cfg.seeds = opt.seeds;
    if (!opt.out.empty()) cfg.output_dir = opt.out;
    if (cfg.output_dir.empty()) cfg.output_dir = "results/" + to_string(kind);

    const CommandOutput out = run_experiment(cfg, opt.jobs);
    write_outputs(out, cfg.output_dir);
    if (const auto it = out.files.find("summary.txt"); it != out.files.end()) std::cout << it->second;
    std::cout << "outputs written to " << cfg.output_dir << "\n";

    const bool enforce = cfg.check || kind == ExperimentKind::gradcheck;
    if (enforce && !out.asserted_checks_pass()) {
        std::cerr << "error: acceptance assertions failed\n";
        return assertion_failure;
    }
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decoupled PPO / PPG with EWMA proximal policies: experiment runner"};
    app.require_subcommand(1);

    Options opt;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"run", "train one configuration for every seed"},
        {"staleness", "couplings x staleness delays"},
        {"batchsize", "batch-size invariance sweep with adjustment ablations"},
        {"linear-lr", "square-root vs linear step-size rule"},
        {"headtohead", "PPO, PPO-EWMA, PPG and PPG-EWMA on every environment"},
        {"com-kl-grid", "proximal EWMA center of mass x KL coefficient grid"},
        {"gradcheck", "finite-difference and identity checks of every gradient"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        auto* config = sub->add_option("--config", opt.config, "experiment file")->check(CLI::ExistingFile);
        if (name != "gradcheck") config->required();
        sub->add_option("--out", opt.out, "output directory (overrides output_dir)");
        sub->add_option("--seeds", opt.seeds, "comma-separated seeds (overrides the config)")->delimiter(',');
        sub->add_option("--jobs", opt.jobs, "parallel runs")
            ->check(CLI::Range(1, 1024))
            ->default_val(1);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config_error;
    }

    const auto* chosen = app.get_subcommands().front();
    try {
        return execute_command(ppoewma::parse_experiment_kind(chosen->get_name()), opt);
    } catch (const ppoewma::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return config_error;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return runtime_failure;
    }
}

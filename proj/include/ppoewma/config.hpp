#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ppoewma/algos.hpp"
#include "ppoewma/hyperparams.hpp"
#include "ppoewma/optim.hpp"
#include "ppoewma/rollout.hpp"

namespace ppoewma {

/// A configuration problem, with the 1-based line it was found on (0 when
/// it concerns the file as a whole).
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& source, int line, const std::string& what);
    int line() const noexcept { return m_line; }

private:
    int m_line;
};

enum class ExperimentKind { run, staleness, batchsize, linear_lr, headtohead, com_kl_grid, gradcheck };

std::string to_string(ExperimentKind k);
ExperimentKind parse_experiment_kind(const std::string& s);

/// Parsed experiment file. Layout:
///
///   # comment
///   [experiment]
///   kind = staleness
///   env = windy-grid
///   algo = ppo
///   seeds = 1,2,3
///   total_steps = 307200
///   [hparams]
///   step_size = 1e-4
///   [sweep]
///   delays = 0,1,2,4,8
///
/// Hyperparameter overrides are kept as text so that they can be applied on
/// top of each algorithm's own defaults.
struct ExperimentConfig {
    std::string source;
    ExperimentKind kind = ExperimentKind::run;
    std::optional<EnvKind> env;
    std::optional<Algo> algo;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::int64_t total_steps = 0;
    std::string output_dir;
    bool check = false;

    std::vector<std::pair<std::string, std::string>> overrides;

    // staleness
    std::vector<int> delays{0, 1, 2, 4, 8};
    std::vector<Coupling> couplings{Coupling::coupled_recent, Coupling::decoupled, Coupling::coupled_behav};
    // batchsize / linear-lr
    std::vector<double> divisors{1, 4, 16};
    std::vector<std::string> arms{"adjusted", "unadjusted", "no-lr", "no-ewma", "no-advnorm", "no-npi"};
    // Divisors at which the single-ablation arms run; all divisors when unset.
    std::optional<std::vector<double>> ablation_divisors;
    StepRule rule = StepRule::adam_sqrt;
    std::optional<double> reference_kl_coef;  // weak-penalty PPG reference arm
    // com-kl-grid
    std::vector<double> coms;
    std::vector<double> kl_coefs;
    double grid_divisor = 1.0;
    // headtohead
    std::vector<Algo> algos{Algo::ppo, Algo::ppo_ewma, Algo::ppg, Algo::ppg_ewma};
    std::vector<EnvKind> envs{EnvKind::corridor, EnvKind::windy_grid};
    // gradcheck
    int gradcheck_instances = 100;

    /// Defaults of `a` with this file's overrides applied.
    HyperParams hparams_for(Algo a) const;
};

/// Sets one hyperparameter from its text form. Throws std::invalid_argument
/// for unknown keys or malformed values.
void set_hparam(HyperParams& hp, const std::string& key, const std::string& value);

/// Names accepted by set_hparam.
const std::vector<std::string>& hparam_keys();

ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace ppoewma

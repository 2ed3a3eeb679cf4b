#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ppoewma/algos.hpp"
#include "ppoewma/config.hpp"
#include "ppoewma/invariance.hpp"

namespace ppoewma {

struct RunSpec {
    std::string run_id;
    Algo algo = Algo::ppo;
    EnvKind env = EnvKind::corridor;
    HyperParams hp;
    std::uint64_t seed = 0;
    std::int64_t total_steps = 0;
};

struct RunResult {
    RunSpec spec;
    std::vector<RunRecord> records;
    double final_return = 0.0;
};

/// Runs every spec on up to `jobs` worker threads. Results come back in spec
/// order and do not depend on `jobs`. If runs fail, the failure of the
/// earliest failing spec is rethrown after all workers have stopped.
std::vector<RunResult> execute(const std::vector<RunSpec>& specs, int jobs = 1);

/// An ordinal claim evaluated on a command's results. Asserted checks decide
/// the exit status when the configuration sets `check = true`; the others
/// are reported only.
struct Check {
    std::string name;
    bool asserted = true;
    bool passed = false;
    std::string detail;
};

/// Everything a command produces. Files are keyed by path relative to the
/// output directory and are rendered only after every run has finished.
struct CommandOutput {
    std::vector<RunResult> runs;
    std::map<std::string, std::string> files;
    std::vector<Check> checks;

    bool asserted_checks_pass() const;
};

void write_outputs(const CommandOutput& out, const std::filesystem::path& dir);

/// Per-run CSVs, an aggregate across seeds, warnings and a return plot.
CommandOutput cmd_run(const ExperimentConfig& cfg, int jobs = 1);

struct StalenessCell {
    Coupling coupling = Coupling::coupled_recent;
    int delay = 0;
    std::vector<double> final_returns;  // one per seed
    double mean = 0.0;
    double stddev = 0.0;
};

struct StalenessResult {
    CommandOutput output;
    std::vector<StalenessCell> cells;

    const StalenessCell* find(Coupling coupling, int delay) const;
    /// Mean final return at delay 0 minus mean final return at `delay`.
    std::optional<double> drop(Coupling coupling, int delay) const;
};

/// Couplings x delays x seeds with the configured algorithm.
StalenessResult cmd_staleness(const ExperimentConfig& cfg, int jobs = 1);

struct GapEntry {
    std::string arm;
    StepRule rule = StepRule::adam_sqrt;
    double divisor = 1.0;
    InvarianceReport report;
    double final_return_mean = 0.0;
};

struct SweepResult {
    CommandOutput output;
    std::vector<GapEntry> reports;
    std::optional<GapEntry> reference;

    const GapEntry* find(const std::string& arm, double divisor, StepRule rule = StepRule::adam_sqrt) const;
    std::optional<double> gap(const std::string& arm, double divisor, StepRule rule = StepRule::adam_sqrt) const;
};

/// Baseline at c = 1 against every configured arm at every divisor (ablation
/// arms only at `ablation_divisors` when set), plus the optional weak-penalty
/// reference run.
SweepResult cmd_batchsize(const ExperimentConfig& cfg, int jobs = 1);

/// The adjusted arm under the square-root and the linear step-size rules,
/// each compared against the shared c = 1 baseline.
SweepResult cmd_linear_lr(const ExperimentConfig& cfg, int jobs = 1);

struct HeadToHeadCell {
    Algo algo = Algo::ppo;
    EnvKind env = EnvKind::corridor;
    std::vector<double> final_returns;
    double mean = 0.0;
    double stddev = 0.0;
};

struct PassCounts {
    double forward_only = 0.0;
    double forward_backward = 0.0;
};

/// Network passes per environment step implied by the hyperparameters.
PassCounts pass_counts(Algo algo, const HyperParams& hp);

struct HeadToHeadResult {
    CommandOutput output;
    std::vector<HeadToHeadCell> cells;
};

HeadToHeadResult cmd_headtohead(const ExperimentConfig& cfg, int jobs = 1);

struct GridCell {
    double com = 0.0;
    double kl_coef = 0.0;
    std::vector<double> final_returns;
    double mean = 0.0;
    double stddev = 0.0;
};

struct GridStats {
    /// mean |R(com, b) - R(com/2, 2b)| over cells with such a neighbour.
    double diagonal_mean_abs_diff = 0.0;
    /// mean |R(com, b) - R(com/2, b)| over cells with such a neighbour.
    double off_diagonal_mean_abs_diff = 0.0;
    int diagonal_pairs = 0;
    int off_diagonal_pairs = 0;
    /// Pearson correlation of R with log2(com) + log2(b).
    double band_correlation = 0.0;
};

struct GridResult {
    CommandOutput output;
    std::vector<GridCell> cells;
    GridStats stats;

    const GridCell* find(double com, double kl_coef) const;
};

GridStats grid_stats(const std::vector<GridCell>& cells);

/// Requires the klpen family. Hyperparameters are adjusted for
/// `grid_divisor` first, then com and the KL coefficient are set per cell.
GridResult cmd_com_kl_grid(const ExperimentConfig& cfg, int jobs = 1);

/// Dispatches on cfg.kind (gradcheck included).
CommandOutput run_experiment(const ExperimentConfig& cfg, int jobs = 1);

}  // namespace ppoewma

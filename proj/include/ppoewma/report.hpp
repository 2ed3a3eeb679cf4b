#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ppoewma/algos.hpp"
#include "ppoewma/invariance.hpp"

namespace ppoewma {

/// Column names of a run CSV, in RunRecord field order.
const std::vector<std::string>& run_csv_columns();

/// Shortest round-trip decimal form; "nan", "inf", "-inf" for non-finite.
std::string format_number(double v);

/// Header plus one row per record, '\n' line endings.
std::string run_csv(const std::vector<RunRecord>& records);

/// Per-iteration mean and sample standard deviation of mean_episode_return
/// across runs that share an iteration grid. Columns:
/// iteration, env_steps, return_mean, return_std, n_runs.
std::string aggregate_csv(const std::vector<std::vector<RunRecord>>& runs);

struct PlotSeries {
    std::string label;
    Curve curve;
};

/// Minimal standalone SVG line chart.
std::string svg_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                     const std::vector<PlotSeries>& series);

struct Warning {
    std::string kind;  // low-clip, high-clip, adv-std-oscillation
    int first_iteration = 0;
    int last_iteration = 0;
    std::string message;
};

struct WarningContext {
    int policy_epochs = 1;
    bool clipping = true;  // clip_frac is meaningful
    int window = 10;       // records per evaluation window
};

/// Monitoring advice for one run:
///   clip fraction below 1% over a window: raise the iteration batch or beta_prox
///   clip fraction above 10% (1 policy epoch) or 20% (more epochs): lower the step size
///   advantage std estimate swinging by a factor of 10 or more within a window
///   while changing direction: use more normalization iterations
std::vector<Warning> emit_warnings(const std::vector<RunRecord>& records, const WarningContext& ctx = {});

std::string format_warnings(const std::string& run_id, const std::vector<Warning>& warnings);

/// Writes `content` to `path`, creating parent directories.
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace ppoewma

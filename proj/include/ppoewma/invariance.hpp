#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ppoewma/algos.hpp"
#include "ppoewma/hyperparams.hpp"
#include "ppoewma/optim.hpp"

namespace ppoewma {

/// Hyperparameters for an iteration batch divided by c, with the chosen
/// subset of compensating adjustments. Adjustments::none() gives the
/// unadjusted baseline (only the batch geometry changes).
HyperParams adjust(const HyperParams& hp, double c, Adjustments flags = Adjustments::all(),
                   StepRule rule = StepRule::adam_sqrt);

/// Comma-separated subset of lr, ewma, advnorm, npi (plus "all" / "none").
Adjustments parse_adjustments(const std::string& s);
std::string to_string(const Adjustments& a);

/// A named set of adjustments used by the batch-size sweeps.
struct SweepArm {
    std::string name;
    Adjustments adjust;
};

/// all, none, and every "all but one" ablation.
std::vector<SweepArm> standard_arms();

struct CurvePoint {
    double env_steps = 0.0;
    double value = 0.0;
};
using Curve = std::vector<CurvePoint>;

/// Mean-return curve of a run, skipping iterations without a return yet.
Curve return_curve(const std::vector<RunRecord>& records);

/// Pointwise mean of curves that share the same env_steps grid.
Curve mean_curve(const std::vector<Curve>& curves);

/// Bias-corrected EWMA smoothing whose span is given in env steps, so curves
/// recorded at different iteration batch sizes are smoothed alike.
Curve smooth(const Curve& curve, double span_env_steps);

inline constexpr double kSmoothingSpanRecords = 10.0;

struct InvarianceReport {
    Curve curve_a;
    Curve curve_b;
    /// Area between the linearly interpolated curves over their common step
    /// range, divided by (step range x return range).
    double normalized_area_gap = 0.0;
    /// |a - b| at the end of the common step range.
    double final_gap = 0.0;
};

/// Compares two curves as given. The return range defaults to the spread of
/// both curves over the common step range; a zero range gives a zero gap.
/// Throws std::invalid_argument when the step ranges do not overlap.
InvarianceReport compare_curves(const Curve& a, const Curve& b, std::optional<double> return_range = {});

/// Builds, seed-averages and smooths the return curves of two groups of
/// runs (span kSmoothingSpanRecords records of the coarser group), then
/// compares them.
InvarianceReport compare_runs(const std::vector<std::vector<RunRecord>>& runs_a,
                              const std::vector<std::vector<RunRecord>>& runs_b,
                              std::optional<double> return_range = {});

}  // namespace ppoewma

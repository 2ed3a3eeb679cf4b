#pragma once

#include <cstdint>

#include "ppoewma/gradnet.hpp"
#include "ppoewma/hyperparams.hpp"

namespace ppoewma {

/// params - lr * grad
ParamVector sgd_step(ParamVector params, const ParamVector& grad, double lr);

struct AdamConfig {
    double step_size = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    ParamVector m;
    ParamVector v;
    std::uint64_t t = 0;

    static AdamState zeros(const ParamVector& like, AdamConfig config);
};

/// Bias-corrected Adam update, in place.
void adam_step(AdamState& state, ParamVector& params, const ParamVector& grad);

/// Normalized exponentially-weighted average of parameter vectors, kept in
/// incremental form: the stored average is already divided by the running
/// weight w = 1 + decay + decay^2 + ...
class EwmaState {
public:
    EwmaState(const ParamVector& theta, double decay);

    void update(const ParamVector& theta);
    void reset(const ParamVector& theta);

    const ParamVector& average() const noexcept { return m_average; }
    double weight() const noexcept { return m_weight; }
    double decay() const noexcept { return m_decay; }

private:
    ParamVector m_average;
    double m_weight = 1.0;
    double m_decay = 0.0;
};

/// Center of mass (mean age in updates) of an EWMA: com = 1/(1-decay) - 1.
double com_to_beta(double com);
double beta_to_com(double beta);

/// Effective sample size (span) of an EWMA: ess = 2/(1-decay) - 1.
double ess_to_decay(double ess);
double decay_to_ess(double decay);

enum class StepRule { sgd_linear, adam_sqrt, adam_linear };

std::string to_string(StepRule rule);
StepRule parse_step_rule(const std::string& s);

/// Which hyperparameters follow the batch size.
struct Adjustments {
    bool step_size = true;
    bool ewma = true;
    bool adv_norm = true;
    bool n_pi = true;
    bool adam_betas = false;

    static Adjustments all() { return {}; }
    static Adjustments none() { return {false, false, false, false, false}; }
};

/// Compensates for the iteration and optimization batch sizes being divided
/// by `c` (c < 1 multiplies them). Throws std::invalid_argument when c is not
/// positive or a batch size would drop below one.
HyperParams scale_for_batch_divisor(const HyperParams& hp, double c, StepRule rule,
                                    Adjustments adjust = Adjustments::all());

}  // namespace ppoewma

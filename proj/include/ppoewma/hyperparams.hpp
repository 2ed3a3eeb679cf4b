#pragma once

#include <optional>
#include <string>
#include <vector>

namespace ppoewma {

enum class ObjectiveFamily { clip, klpen };

/// Which policy anchors the update-size control and which one divides the
/// importance ratio.
///   coupled_recent: the policy at the start of the iteration plays both roles
///   coupled_behav:  the behavior policy plays both roles
///   decoupled:      the behavior policy divides the ratio, a separate
///                   proximal policy (recent, or the EWMA for -EWMA algorithms)
///                   anchors clipping and the KL penalty
enum class Coupling { coupled_recent, coupled_behav, decoupled };

/// Every tunable of a training run. Defaults are the desk-scale values used
/// by the bundled experiments.
struct HyperParams {
    // Adam
    double step_size = 5e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double aux_step_size = 5e-4;
    bool reset_adam_each_phase = false;

    // Policy objective
    ObjectiveFamily family = ObjectiveFamily::clip;
    Coupling coupling = Coupling::coupled_recent;
    std::optional<double> clip_epsilon = 0.2;  // nullopt = never clip
    double kl_coef = 0.0;
    double ratio_cap = 100.0;
    double value_coef = 0.5;
    double entropy_coef = 0.01;

    // Returns and advantages
    double gamma = 0.999;
    double lambda = 0.95;
    bool reward_normalize = true;
    double reward_norm_ess = 65536.0;  // in samples
    bool adv_normalize = true;
    bool adv_subtract_mean = true;
    bool adv_update_before_use = true;
    double adv_norm_ess = 32.0;        // in iterations

    // Batch geometry
    int n_env = 16;
    int horizon = 64;                  // T
    int minibatches = 8;
    int staleness_delay = 0;

    // Epochs
    int ppo_epochs = 3;                // E
    int policy_epochs = 1;             // E_pi
    int value_epochs = 1;              // E_V

    // PPG
    int n_pi = 8;
    int aux_epochs = 6;
    int aux_minibatch_size = 64;
    double clone_coef = 1.0;

    // Proximal-policy EWMA, as center of mass in gradient steps
    double prox_com = 8.0;

    std::vector<int> hidden{64, 64};

    /// Iteration batch size relative to the unscaled configuration; the
    /// reciprocal of every batch divisor applied so far.
    double batch_scale = 1.0;

    int iteration_batch() const noexcept { return n_env * horizon; }
    int minibatch_size() const noexcept { return iteration_batch() / minibatches; }
    int phase_batch() const noexcept { return n_pi * iteration_batch(); }
};

std::string to_string(ObjectiveFamily f);
std::string to_string(Coupling c);
ObjectiveFamily parse_family(const std::string& s);
Coupling parse_coupling(const std::string& s);

/// Throws std::invalid_argument naming the first inconsistent field.
void validate(const HyperParams& hp);

}  // namespace ppoewma

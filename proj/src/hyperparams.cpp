#include "ppoewma/hyperparams.hpp"

#include <cmath>
#include <stdexcept>

namespace ppoewma {

std::string to_string(ObjectiveFamily f) {
    return f == ObjectiveFamily::clip ? "clip" : "klpen";
}

std::string to_string(Coupling c) {
    switch (c) {
        case Coupling::coupled_recent: return "coupled-recent";
        case Coupling::coupled_behav: return "coupled-behav";
        case Coupling::decoupled: return "decoupled";
    }
    return "?";
}

ObjectiveFamily parse_family(const std::string& s) {
    if (s == "clip") return ObjectiveFamily::clip;
    if (s == "klpen") return ObjectiveFamily::klpen;
    throw std::invalid_argument("unknown objective family '" + s + "' (expected clip or klpen)");
}

Coupling parse_coupling(const std::string& s) {
    if (s == "coupled-recent") return Coupling::coupled_recent;
    if (s == "coupled-behav") return Coupling::coupled_behav;
    if (s == "decoupled") return Coupling::decoupled;
    throw std::invalid_argument("unknown coupling '" + s +
                                "' (expected coupled-recent, coupled-behav or decoupled)");
}

void validate(const HyperParams& hp) {
    auto require = [](bool ok, const char* field, const char* what) {
        if (!ok) throw std::invalid_argument(std::string(field) + ": " + what);
    };
    require(hp.step_size > 0.0, "step_size", "must be positive");
    require(hp.aux_step_size > 0.0, "aux_step_size", "must be positive");
    require(hp.adam_beta1 >= 0.0 && hp.adam_beta1 < 1.0, "adam_beta1", "must lie in [0, 1)");
    require(hp.adam_beta2 >= 0.0 && hp.adam_beta2 < 1.0, "adam_beta2", "must lie in [0, 1)");
    require(hp.adam_epsilon >= 0.0, "adam_epsilon", "must be non-negative");
    require(!hp.clip_epsilon || *hp.clip_epsilon > 0.0, "clip_epsilon", "must be positive");
    require(hp.kl_coef >= 0.0, "kl_coef", "must be non-negative");
    require(hp.ratio_cap > 1.0, "ratio_cap", "must exceed 1");
    require(hp.gamma >= 0.0 && hp.gamma <= 1.0, "gamma", "must lie in [0, 1]");
    require(hp.lambda >= 0.0 && hp.lambda <= 1.0, "lambda", "must lie in [0, 1]");
    require(hp.reward_norm_ess >= 1.0, "reward_norm_ess", "must be >= 1");
    require(hp.adv_norm_ess >= 1.0, "adv_norm_ess", "must be >= 1");
    require(hp.n_env >= 1, "n_env", "must be >= 1");
    require(hp.horizon >= 1, "horizon", "must be >= 1");
    require(hp.minibatches >= 1, "minibatches", "must be >= 1");
    require(hp.minibatches <= hp.iteration_batch(), "minibatches", "exceeds the iteration batch");
    require(hp.staleness_delay >= 0, "staleness_delay", "must be >= 0");
    require(hp.ppo_epochs >= 1, "ppo_epochs", "must be >= 1");
    require(hp.policy_epochs >= 1, "policy_epochs", "must be >= 1");
    require(hp.value_epochs >= 0, "value_epochs", "must be >= 0");
    require(hp.n_pi >= 1, "n_pi", "must be >= 1");
    require(hp.aux_epochs >= 0, "aux_epochs", "must be >= 0");
    require(hp.aux_minibatch_size >= 1, "aux_minibatch_size", "must be >= 1");
    require(hp.clone_coef >= 0.0, "clone_coef", "must be non-negative");
    require(hp.prox_com >= 0.0 && std::isfinite(hp.prox_com), "prox_com", "must be finite and >= 0");
    require(!hp.hidden.empty(), "hidden", "needs at least one layer");
    for (int h : hp.hidden) require(h >= 1, "hidden", "widths must be positive");
    require(hp.batch_scale > 0.0, "batch_scale", "must be positive");
}

}  // namespace ppoewma

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "ppoewma/gradnet.hpp"

namespace ppoewma {

/// Everything a policy surrogate needs for one batch of samples. The three
/// distributions are row-aligned with `actions` and `adv`.
///
/// For the coupled objectives `prox` carries the policy from the start of
/// the iteration (the "recent" policy); OldPolicy selects which of recent or
/// behavior plays the single "old" role.
struct ObjectiveInputs {
    const CategoricalDist& theta;
    const CategoricalDist& prox;
    const CategoricalDist& behav;
    std::span<const int> actions;
    std::span<const double> adv;
    double kl_coef = 0.0;
    std::optional<double> clip_epsilon = 0.2;  // nullopt: never clip
    double ratio_cap = 100.0;
};

struct ObjectiveDiagnostics {
    double clip_fraction = 0.0;
    double kl_prox = 0.0;   // mean KL[prox, theta]
    double kl_behav = 0.0;  // mean KL[behav, theta]
    double max_ratio = 0.0; // max pi_theta / pi_behav, before any cap
};

/// Loss to minimize (the negated objective) and its gradient with respect
/// to the logits of `theta`.
struct ObjectiveOutput {
    double loss = 0.0;
    Matrix d_logits;
    ObjectiveDiagnostics diagnostics;
};

enum class OldPolicy { recent, behav };

/// mean[ min(pi_theta / pi_behav, cap) * A ]
ObjectiveOutput vanilla_pg(const ObjectiveInputs& in);

/// mean[ min(pi_theta / pi_behav, cap) * A - kl_coef * KL[pi_prox, pi_theta] ]
ObjectiveOutput klpen_decoupled(const ObjectiveInputs& in);
ObjectiveOutput klpen_coupled(const ObjectiveInputs& in, OldPolicy old);

/// mean[ w * min(r A, clip(r, 1-eps, 1+eps) A) ] with r = pi_theta / pi_prox
/// and w = min(pi_prox / pi_behav, cap). A positive kl_coef adds the same
/// KL[pi_prox, pi_theta] penalty as the klpen family.
ObjectiveOutput clip_decoupled(const ObjectiveInputs& in);
ObjectiveOutput clip_coupled(const ObjectiveInputs& in, OldPolicy old);

/// -coef * mean entropy, so that minimizing it rewards entropy.
ObjectiveOutput entropy_bonus(const CategoricalDist& theta, double coef);

struct RegressionLoss {
    double loss = 0.0;
    std::vector<double> grad;  // d loss / d pred
};

/// 0.5 * mean((pred - target)^2)
RegressionLoss value_loss(std::span<const double> pred, std::span<const double> targets);

struct AuxLoss {
    double loss = 0.0;
    Matrix d_logits;
    std::vector<double> d_aux_value;
    double distill_loss = 0.0;
    double clone_kl = 0.0;
};

/// Auxiliary-phase joint loss on the policy network: value distillation into
/// the auxiliary head plus clone_coef * KL[pi_frozen, pi_theta].
AuxLoss aux_phase_loss(const CategoricalDist& theta, const CategoricalDist& frozen,
                       std::span<const double> aux_value_pred, std::span<const double> value_targets,
                       double clone_coef);

}  // namespace ppoewma

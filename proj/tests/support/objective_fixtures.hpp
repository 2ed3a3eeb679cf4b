#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "oracles.hpp"
#include "ppoewma/objectives.hpp"

namespace fixture {

using ppoewma::CategoricalDist;
using ppoewma::Matrix;

/// A random objective instance: theta logits near the proximal and behavior
/// policies so that ratios land on both sides of the clip range.
struct ObjectiveInstance {
    Matrix theta_logits;
    CategoricalDist prox;
    CategoricalDist behav;
    std::vector<int> actions;
    std::vector<double> adv;
};

inline ObjectiveInstance random_instance(ppoewma::Rng& rng, std::size_t n = 12, std::size_t actions = 4,
                                         double spread = 0.3) {
    ObjectiveInstance inst;
    const Matrix base = oracle::random_matrix(n, actions, rng);
    Matrix prox = base, behav = base, theta = base;
    std::normal_distribution<double> normal(0.0, spread);
    for (std::size_t i = 0; i < base.storage().size(); ++i) {
        prox.storage()[i] += normal(rng);
        behav.storage()[i] += normal(rng);
        theta.storage()[i] += normal(rng);
    }
    inst.theta_logits = theta;
    inst.prox = CategoricalDist::from_logits(prox);
    inst.behav = CategoricalDist::from_logits(behav);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(actions) - 1);
    for (std::size_t i = 0; i < n; ++i) inst.actions.push_back(pick(rng));
    inst.adv = oracle::random_vector(n, rng);
    return inst;
}

/// True when some ratio sits within `margin` of a kink of the clipped or
/// capped objective, where a central difference straddles two branches.
inline bool near_kink(const ObjectiveInstance& inst, const CategoricalDist& theta, const CategoricalDist& anchor,
                      const CategoricalDist& denom, std::optional<double> eps, double cap, double margin = 1e-3) {
    for (std::size_t i = 0; i < inst.actions.size(); ++i) {
        const auto a = static_cast<std::size_t>(inst.actions[i]);
        const double r = std::exp(theta.log_prob(i, a) - anchor.log_prob(i, a));
        if (eps && (std::abs(r - (1 - *eps)) < margin || std::abs(r - (1 + *eps)) < margin)) return true;
        const double w = std::exp(theta.log_prob(i, a) - denom.log_prob(i, a));
        if (std::abs(w - cap) < margin * cap) return true;
    }
    return false;
}

using Objective = std::function<ppoewma::ObjectiveOutput(const ppoewma::ObjectiveInputs&)>;

/// Analytic-vs-central-difference error of an objective's logit gradient.
inline double objective_fd_error(const ObjectiveInstance& inst, const Objective& objective, double kl_coef,
                                 std::optional<double> eps, double cap) {
    auto evaluate = [&](const Matrix& logits) {
        const auto theta = CategoricalDist::from_logits(logits);
        ppoewma::ObjectiveInputs in{theta, inst.prox, inst.behav, inst.actions, inst.adv, kl_coef, eps, cap};
        return objective(in);
    };
    const auto analytic = evaluate(inst.theta_logits);
    auto loss = [&](const std::vector<double>& x) {
        Matrix z = inst.theta_logits;
        std::copy(x.begin(), x.end(), z.storage().begin());
        return evaluate(z).loss;
    };
    const auto fd = oracle::fd_gradient(loss, inst.theta_logits.storage());
    return oracle::max_rel_error(analytic.d_logits.storage(), fd);
}

}  // namespace fixture

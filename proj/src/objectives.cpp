#include "ppoewma/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace ppoewma {

namespace {

void check_inputs(const ObjectiveInputs& in) {
    const std::size_t n = in.actions.size();
    if (n == 0) throw std::invalid_argument("objective: empty batch");
    if (in.adv.size() != n || in.theta.size() != n || in.prox.size() != n || in.behav.size() != n) {
        throw std::invalid_argument("objective: inputs are not row-aligned");
    }
    const std::size_t a_count = in.theta.action_count();
    if (in.prox.action_count() != a_count || in.behav.action_count() != a_count) {
        throw std::invalid_argument("objective: action-count mismatch between distributions");
    }
    if (!(in.ratio_cap > 0.0)) throw std::invalid_argument("objective: ratio_cap must be positive");
    for (std::size_t i = 0; i < n; ++i) {
        if (in.actions[i] < 0 || static_cast<std::size_t>(in.actions[i]) >= a_count) {
            throw std::invalid_argument("objective: action out of range at sample " + std::to_string(i));
        }
        if (!std::isfinite(in.adv[i])) {
            throw std::domain_error("objective: non-finite advantage at sample " + std::to_string(i));
        }
    }
}

double checked_log_prob(const CategoricalDist& d, std::size_t i, int a, const char* which) {
    const double lp = d.log_prob(i, static_cast<std::size_t>(a));
    if (!std::isfinite(lp)) {
        throw std::domain_error(std::string("objective: non-finite ratio at sample ") + std::to_string(i) +
                                " (log pi_" + which + " = " + std::to_string(lp) + ")");
    }
    return lp;
}

// d[i, :] += coef * d log pi(a | s_i) / d logits = coef * (onehot(a) - p)
void add_log_prob_grad(Matrix& d, const CategoricalDist& theta, std::size_t i, int a, double coef) {
    auto row = d.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] -= coef * std::exp(theta.log_prob(i, j));
    row[static_cast<std::size_t>(a)] += coef;
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Adds coef * mean KL[anchor, theta] to the loss; d/dlogits = coef * (p - q) / n.
void add_kl_penalty(ObjectiveOutput& out, const CategoricalDist& theta, const CategoricalDist& anchor,
                    double coef) {
    if (coef == 0.0) return;
    const std::size_t n = theta.size();
    const double scale = coef / static_cast<double>(n);
    out.loss += coef * out.diagnostics.kl_prox;
    for (std::size_t i = 0; i < n; ++i) {
        auto row = out.d_logits.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] += scale * (std::exp(theta.log_prob(i, j)) - std::exp(anchor.log_prob(i, j)));
        }
    }
}

ObjectiveDiagnostics diagnose(const ObjectiveInputs& in, const CategoricalDist& anchor) {
    ObjectiveDiagnostics diag;
    diag.kl_prox = mean(kl(anchor, in.theta));
    diag.kl_behav = mean(kl(in.behav, in.theta));
    double max_log_ratio = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < in.actions.size(); ++i) {
        const auto a = static_cast<std::size_t>(in.actions[i]);
        max_log_ratio = std::max(max_log_ratio, in.theta.log_prob(i, a) - in.behav.log_prob(i, a));
    }
    diag.max_ratio = std::exp(max_log_ratio);
    return diag;
}

// mean[min(pi_theta / pi_denom, cap) * A] - coef * mean KL[anchor, theta]
ObjectiveOutput importance_weighted(const ObjectiveInputs& in, const CategoricalDist& denom,
                                    const CategoricalDist& anchor, double coef) {
    check_inputs(in);
    const std::size_t n = in.actions.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    const double log_cap = std::log(in.ratio_cap);
    ObjectiveOutput out;
    out.d_logits = Matrix(n, in.theta.action_count());
    out.diagnostics = diagnose(in, anchor);
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int a = in.actions[i];
        const double log_ratio = checked_log_prob(in.theta, i, a, "theta") - checked_log_prob(denom, i, a, "behav");
        if (log_ratio > log_cap) {
            objective += in.ratio_cap * in.adv[i];
            continue;
        }
        const double ratio = std::exp(log_ratio);
        objective += ratio * in.adv[i];
        add_log_prob_grad(out.d_logits, in.theta, i, a, -inv_n * ratio * in.adv[i]);
    }
    out.loss = -objective * inv_n;
    add_kl_penalty(out, in.theta, anchor, coef);
    return out;
}

// mean[w * min(r A, clip(r) A)] with r = pi_theta / pi_prox, w = min(pi_prox / pi_behav, cap)
ObjectiveOutput clipped(const ObjectiveInputs& in, const CategoricalDist& prox, const CategoricalDist& behav) {
    check_inputs(in);
    const std::size_t n = in.actions.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    const double log_cap = std::log(in.ratio_cap);
    ObjectiveOutput out;
    out.d_logits = Matrix(n, in.theta.action_count());
    out.diagnostics = diagnose(in, prox);
    double objective = 0.0;
    std::size_t clipped_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int a = in.actions[i];
        const double lp_theta = checked_log_prob(in.theta, i, a, "theta");
        const double lp_prox = checked_log_prob(prox, i, a, "prox");
        const double lp_behav = checked_log_prob(behav, i, a, "behav");
        const double log_w = lp_prox - lp_behav;
        const double w = log_w > log_cap ? in.ratio_cap : std::exp(log_w);
        const double r = std::exp(lp_theta - lp_prox);
        if (!std::isfinite(r)) {
            throw std::domain_error("objective: non-finite ratio at sample " + std::to_string(i));
        }
        const double adv = in.adv[i];
        const double unclipped = r * adv;
        if (in.clip_epsilon) {
            const double eps = *in.clip_epsilon;
            const double clipped_term = std::clamp(r, 1.0 - eps, 1.0 + eps) * adv;
            if (clipped_term < unclipped) {
                objective += w * clipped_term;
                ++clipped_count;
                continue;
            }
        }
        objective += w * unclipped;
        add_log_prob_grad(out.d_logits, in.theta, i, a, -inv_n * (w * r * adv));
    }
    out.loss = -objective * inv_n;
    out.diagnostics.clip_fraction = static_cast<double>(clipped_count) * inv_n;
    add_kl_penalty(out, in.theta, prox, in.kl_coef);
    return out;
}

const CategoricalDist& old_policy(const ObjectiveInputs& in, OldPolicy old) {
    return old == OldPolicy::recent ? in.prox : in.behav;
}

}  // namespace

ObjectiveOutput vanilla_pg(const ObjectiveInputs& in) {
    return importance_weighted(in, in.behav, in.prox, 0.0);
}

ObjectiveOutput klpen_decoupled(const ObjectiveInputs& in) {
    return importance_weighted(in, in.behav, in.prox, in.kl_coef);
}

ObjectiveOutput klpen_coupled(const ObjectiveInputs& in, OldPolicy old) {
    const auto& o = old_policy(in, old);
    return importance_weighted(in, o, o, in.kl_coef);
}

ObjectiveOutput clip_decoupled(const ObjectiveInputs& in) { return clipped(in, in.prox, in.behav); }

ObjectiveOutput clip_coupled(const ObjectiveInputs& in, OldPolicy old) {
    const auto& o = old_policy(in, old);
    return clipped(in, o, o);
}

ObjectiveOutput entropy_bonus(const CategoricalDist& theta, double coef) {
    const std::size_t n = theta.size();
    ObjectiveOutput out;
    out.d_logits = Matrix(n, theta.action_count());
    if (n == 0) return out;
    const auto h = entropy(theta);
    out.loss = -coef * mean(h);
    // dH/dz_j = -p_j (log p_j + H)
    const double scale = coef / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = out.d_logits.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
            const double lp = theta.log_prob(i, j);
            const double p = std::exp(lp);
            if (p > 0.0) row[j] = scale * p * (lp + h[i]);
        }
    }
    return out;
}

RegressionLoss value_loss(std::span<const double> pred, std::span<const double> targets) {
    if (pred.size() != targets.size()) throw std::invalid_argument("value_loss: size mismatch");
    RegressionLoss out;
    out.grad.resize(pred.size());
    if (pred.empty()) return out;
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    double sq = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double diff = pred[i] - targets[i];
        sq += diff * diff;
        out.grad[i] = diff * inv_n;
    }
    out.loss = 0.5 * sq * inv_n;
    return out;
}

AuxLoss aux_phase_loss(const CategoricalDist& theta, const CategoricalDist& frozen,
                       std::span<const double> aux_value_pred, std::span<const double> value_targets,
                       double clone_coef) {
    const std::size_t n = theta.size();
    if (frozen.size() != n || aux_value_pred.size() != n || value_targets.size() != n) {
        throw std::invalid_argument("aux_phase_loss: inputs are not row-aligned");
    }
    AuxLoss out;
    auto distill = value_loss(aux_value_pred, value_targets);
    out.distill_loss = distill.loss;
    out.d_aux_value = std::move(distill.grad);
    out.d_logits = Matrix(n, theta.action_count());
    if (n == 0) return out;
    out.clone_kl = mean(kl(frozen, theta));
    out.loss = out.distill_loss + clone_coef * out.clone_kl;
    if (clone_coef != 0.0) {
        const double scale = clone_coef / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            auto row = out.d_logits.row(i);
            for (std::size_t j = 0; j < row.size(); ++j) {
                row[j] = scale * (std::exp(theta.log_prob(i, j)) - std::exp(frozen.log_prob(i, j)));
            }
        }
    }
    return out;
}

}  // namespace ppoewma

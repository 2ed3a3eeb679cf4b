#include "ppoewma/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ppoewma {

ParamVector sgd_step(ParamVector params, const ParamVector& grad, double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: learning rate must be positive");
    if (params.size() != grad.size()) throw std::invalid_argument("sgd_step: size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
    return params;
}

AdamState AdamState::zeros(const ParamVector& like, AdamConfig config) {
    return AdamState{config, like.zeros_like(), like.zeros_like(), 0};
}

void adam_step(AdamState& state, ParamVector& params, const ParamVector& grad) {
    if (params.size() != grad.size() || state.m.size() != params.size()) {
        throw std::invalid_argument("adam_step: size mismatch");
    }
    const AdamConfig& c = state.config;
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * (g * g);
        const double m_hat = state.m[i] / correction1;
        const double v_hat = state.v[i] / correction2;
        params[i] -= c.step_size * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
}

EwmaState::EwmaState(const ParamVector& theta, double decay) : m_average(theta), m_decay(decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("EwmaState: decay must lie in [0, 1)");
}

void EwmaState::update(const ParamVector& theta) {
    if (theta.size() != m_average.size()) throw std::invalid_argument("EwmaState::update: size mismatch");
    const double w_new = 1.0 + m_decay * m_weight;
    const double keep = m_decay * (m_weight / w_new);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        m_average[i] = theta[i] / w_new + keep * m_average[i];
    }
    m_weight = w_new;
}

void EwmaState::reset(const ParamVector& theta) {
    m_average = theta;
    m_weight = 1.0;
}

double com_to_beta(double com) {
    if (!(com >= 0.0) || !std::isfinite(com)) throw std::invalid_argument("com_to_beta: com must be >= 0");
    return com / (com + 1.0);
}

double beta_to_com(double beta) {
    if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("beta_to_com: beta must lie in [0, 1)");
    return 1.0 / (1.0 - beta) - 1.0;
}

double ess_to_decay(double ess) {
    if (!(ess >= 1.0) || !std::isfinite(ess)) throw std::invalid_argument("ess_to_decay: ess must be >= 1");
    return 1.0 - 2.0 / (ess + 1.0);
}

double decay_to_ess(double decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("decay_to_ess: decay must lie in [0, 1)");
    return 2.0 / (1.0 - decay) - 1.0;
}

std::string to_string(StepRule rule) {
    switch (rule) {
        case StepRule::sgd_linear: return "sgd-linear";
        case StepRule::adam_sqrt: return "adam-sqrt";
        case StepRule::adam_linear: return "adam-linear-ablation";
    }
    return "?";
}

StepRule parse_step_rule(const std::string& s) {
    if (s == "sgd-linear") return StepRule::sgd_linear;
    if (s == "adam-sqrt") return StepRule::adam_sqrt;
    if (s == "adam-linear-ablation" || s == "adam-linear") return StepRule::adam_linear;
    throw std::invalid_argument("unknown step rule '" + s + "'");
}

HyperParams scale_for_batch_divisor(const HyperParams& hp, double c, StepRule rule, Adjustments adjust) {
    if (!(c > 0.0) || !std::isfinite(c)) throw std::invalid_argument("batch divisor must be a positive finite number");

    HyperParams out = hp;
    const double n_env = static_cast<double>(hp.n_env) / c;
    if (n_env < 1.0) {
        throw std::invalid_argument("batch divisor " + std::to_string(c) +
                                    " leaves fewer than one parallel environment");
    }
    if (n_env * hp.horizon / hp.minibatches < 1.0) {
        throw std::invalid_argument("batch divisor " + std::to_string(c) +
                                    " makes the optimization batch smaller than one sample");
    }
    out.n_env = static_cast<int>(std::lround(n_env));
    out.batch_scale = hp.batch_scale / c;

    if (adjust.step_size) {
        switch (rule) {
            case StepRule::sgd_linear:
            case StepRule::adam_linear: out.step_size = hp.step_size / c; break;
            case StepRule::adam_sqrt: out.step_size = hp.step_size / std::sqrt(c); break;
        }
    }
    if (adjust.adam_betas) {
        out.adam_beta1 = std::pow(hp.adam_beta1, 1.0 / c);
        out.adam_beta2 = std::pow(hp.adam_beta2, 1.0 / c);
    }
    if (adjust.ewma) out.prox_com = hp.prox_com * c;
    if (adjust.adv_norm) out.adv_norm_ess = hp.adv_norm_ess * c;
    if (adjust.n_pi) out.n_pi = std::max(1, static_cast<int>(std::lround(hp.n_pi * c)));
    return out;
}

}  // namespace ppoewma

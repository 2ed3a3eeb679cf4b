#include "ppoewma/gradnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ppoewma {

namespace {

// out[r, :] = b + sum_k in[r, k] * W[:, k]   (W column-major, rows = fan-out)
void affine_forward(const Matrix& in, const double* w, const double* b, std::size_t fan_out,
                    Matrix& out) {
    const std::size_t n = in.rows();
    const std::size_t fan_in = in.cols();
    out = Matrix(n, fan_out);
    for (std::size_t r = 0; r < n; ++r) {
        double* y = out.data() + r * fan_out;
        std::copy(b, b + fan_out, y);
        const double* x = in.data() + r * fan_in;
        for (std::size_t k = 0; k < fan_in; ++k) {
            const double xk = x[k];
            if (xk == 0.0) continue;
            const double* wk = w + k * fan_out;
            for (std::size_t j = 0; j < fan_out; ++j) y[j] += xk * wk[j];
        }
    }
}

// Accumulates dW, db for one affine block and optionally returns d(in).
void affine_backward(const Matrix& in, const double* w, std::size_t fan_out, const Matrix& d_out,
                     double* dw, double* db, Matrix* d_in) {
    const std::size_t n = in.rows();
    const std::size_t fan_in = in.cols();
    for (std::size_t r = 0; r < n; ++r) {
        const double* dy = d_out.data() + r * fan_out;
        const double* x = in.data() + r * fan_in;
        for (std::size_t j = 0; j < fan_out; ++j) db[j] += dy[j];
        for (std::size_t k = 0; k < fan_in; ++k) {
            const double xk = x[k];
            if (xk == 0.0) continue;
            double* dwk = dw + k * fan_out;
            for (std::size_t j = 0; j < fan_out; ++j) dwk[j] += xk * dy[j];
        }
    }
    if (d_in == nullptr) return;
    *d_in = Matrix(n, fan_in);
    for (std::size_t r = 0; r < n; ++r) {
        const double* dy = d_out.data() + r * fan_out;
        double* dx = d_in->data() + r * fan_in;
        for (std::size_t k = 0; k < fan_in; ++k) {
            const double* wk = w + k * fan_out;
            double acc = 0.0;
            for (std::size_t j = 0; j < fan_out; ++j) acc += dy[j] * wk[j];
            dx[k] = acc;
        }
    }
}

}  // namespace

// ---------------------------------------------------------------- ParamVector

ParamVector::ParamVector(std::vector<LayerDesc> layout) : m_layout(std::move(layout)) {
    std::size_t total = 0;
    for (const auto& l : m_layout) {
        if (l.offset != total) throw std::invalid_argument("ParamVector: non-contiguous layout");
        total += l.size();
    }
    m_values.assign(total, 0.0);
}

ParamVector ParamVector::zeros_like() const { return ParamVector(m_layout); }

bool ParamVector::all_finite() const noexcept {
    return std::all_of(m_values.begin(), m_values.end(), [](double v) { return std::isfinite(v); });
}

// ----------------------------------------------------------- NetArchitecture

NetArchitecture::NetArchitecture(int input_dim, std::vector<int> hidden, Heads heads,
                                 Activation activation)
    : m_input_dim(input_dim), m_hidden(std::move(hidden)), m_heads(heads), m_activation(activation) {
    if (m_input_dim <= 0) throw std::invalid_argument("NetArchitecture: input_dim must be positive");
    if (m_hidden.empty()) throw std::invalid_argument("NetArchitecture: at least one hidden layer required");
    for (int h : m_hidden) {
        if (h <= 0) throw std::invalid_argument("NetArchitecture: hidden widths must be positive");
    }
    if (m_heads.actions < 0) throw std::invalid_argument("NetArchitecture: negative action count");
    if (m_heads.actions == 0 && !m_heads.value && !m_heads.aux_value) {
        throw std::invalid_argument("NetArchitecture: network has no output head");
    }
}

std::vector<LayerDesc> NetArchitecture::layout() const {
    std::vector<LayerDesc> out;
    std::size_t offset = 0;
    auto push = [&](std::string name, std::size_t rows, std::size_t cols) {
        out.push_back({std::move(name), rows, cols, offset});
        offset += rows * cols + rows;
    };
    std::size_t fan_in = static_cast<std::size_t>(m_input_dim);
    for (std::size_t i = 0; i < m_hidden.size(); ++i) {
        push("hidden" + std::to_string(i), static_cast<std::size_t>(m_hidden[i]), fan_in);
        fan_in = static_cast<std::size_t>(m_hidden[i]);
    }
    if (m_heads.actions > 0) push("policy", static_cast<std::size_t>(m_heads.actions), fan_in);
    if (m_heads.value) push("value", 1, fan_in);
    if (m_heads.aux_value) push("aux_value", 1, fan_in);
    return out;
}

std::size_t NetArchitecture::param_count() const {
    std::size_t total = 0;
    for (const auto& l : layout()) total += l.size();
    return total;
}

// ------------------------------------------------------------------------ Mlp

Mlp::Mlp(NetArchitecture arch) : m_arch(std::move(arch)), m_layout(m_arch.layout()) {
    std::size_t idx = m_arch.hidden().size();
    if (m_arch.heads().actions > 0) m_policy_layer = idx++;
    if (m_arch.heads().value) m_value_layer = idx++;
    if (m_arch.heads().aux_value) m_aux_layer = idx++;
}

ParamVector Mlp::zero_params() const { return ParamVector(m_layout); }

ParamVector Mlp::init_params(std::uint64_t seed) const {
    ParamVector p(m_layout);
    Rng rng = make_rng(seed, 0x1217);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& l : m_layout) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(l.cols));
        for (std::size_t i = 0; i < l.weight_count(); ++i) p[l.offset + i] = scale * normal(rng);
    }
    return p;
}

void Mlp::check_params(const ParamVector& params) const {
    if (params.layout() != m_layout) throw std::invalid_argument("Mlp: parameter layout mismatch");
}

Mlp::Trace Mlp::run_hidden(const ParamVector& params, const Matrix& obs) const {
    check_params(params);
    if (obs.cols() != static_cast<std::size_t>(m_arch.input_dim())) {
        throw std::invalid_argument("Mlp: observation width " + std::to_string(obs.cols()) +
                                    " != input_dim " + std::to_string(m_arch.input_dim()));
    }
    Trace trace;
    trace.activations.reserve(m_arch.hidden().size() + 1);
    trace.activations.push_back(obs);
    const double* base = params.values().data();
    for (std::size_t i = 0; i < m_arch.hidden().size(); ++i) {
        const auto& l = m_layout[i];
        Matrix h;
        affine_forward(trace.activations.back(), base + l.offset, base + l.bias_offset(), l.rows, h);
        if (m_arch.activation() == Activation::tanh) {
            for (double& v : h.storage()) v = std::tanh(v);
        }
        trace.activations.push_back(std::move(h));
    }
    return trace;
}

NetOutput Mlp::forward(const ParamVector& params, const Matrix& obs) const {
    const Trace trace = run_hidden(params, obs);
    const Matrix& top = trace.activations.back();
    const double* base = params.values().data();
    NetOutput out;
    if (m_arch.heads().actions > 0) {
        const auto& l = m_layout[m_policy_layer];
        affine_forward(top, base + l.offset, base + l.bias_offset(), l.rows, out.logits);
    }
    auto scalar_head = [&](std::size_t layer, std::vector<double>& dst) {
        const auto& l = m_layout[layer];
        Matrix v;
        affine_forward(top, base + l.offset, base + l.bias_offset(), 1, v);
        dst = std::move(v.storage());
    };
    if (m_arch.heads().value) scalar_head(m_value_layer, out.value);
    if (m_arch.heads().aux_value) scalar_head(m_aux_layer, out.aux_value);
    return out;
}

ParamVector Mlp::backward(const ParamVector& params, const Matrix& obs, const Matrix& d_logits,
                          std::span<const double> d_value, std::span<const double> d_aux_value) const {
    const Trace trace = run_hidden(params, obs);
    const std::size_t n = obs.rows();
    const Matrix& top = trace.activations.back();
    const double* base = params.values().data();
    ParamVector grad(m_layout);
    double* g = grad.values().data();

    Matrix d_top(n, top.cols());
    auto accumulate_head = [&](const LayerDesc& l, const Matrix& d_out) {
        Matrix d_in;
        affine_backward(top, base + l.offset, l.rows, d_out, g + l.offset, g + l.bias_offset(), &d_in);
        for (std::size_t i = 0; i < d_top.storage().size(); ++i) d_top.storage()[i] += d_in.storage()[i];
    };

    if (!d_logits.empty()) {
        if (m_arch.heads().actions == 0) throw std::invalid_argument("Mlp::backward: no policy head");
        if (d_logits.rows() != n || d_logits.cols() != static_cast<std::size_t>(m_arch.heads().actions)) {
            throw std::invalid_argument("Mlp::backward: d_logits shape mismatch");
        }
        accumulate_head(m_layout[m_policy_layer], d_logits);
    }
    auto scalar_head = [&](bool present, std::size_t layer, std::span<const double> d, const char* what) {
        if (d.empty()) return;
        if (!present) throw std::invalid_argument(std::string("Mlp::backward: no ") + what + " head");
        if (d.size() != n) throw std::invalid_argument(std::string("Mlp::backward: ") + what + " size mismatch");
        Matrix d_out(n, 1);
        std::copy(d.begin(), d.end(), d_out.data());
        accumulate_head(m_layout[layer], d_out);
    };
    scalar_head(m_arch.heads().value, m_value_layer, d_value, "value");
    scalar_head(m_arch.heads().aux_value, m_aux_layer, d_aux_value, "aux_value");

    Matrix d_h = std::move(d_top);
    for (std::size_t i = m_arch.hidden().size(); i-- > 0;) {
        const Matrix& h = trace.activations[i + 1];
        if (m_arch.activation() == Activation::tanh) {
            for (std::size_t e = 0; e < d_h.storage().size(); ++e) {
                const double y = h.storage()[e];
                d_h.storage()[e] *= 1.0 - y * y;
            }
        }
        const auto& l = m_layout[i];
        Matrix d_in;
        affine_backward(trace.activations[i], base + l.offset, l.rows, d_h, g + l.offset,
                        g + l.bias_offset(), i > 0 ? &d_in : nullptr);
        d_h = std::move(d_in);
    }
    return grad;
}

// ------------------------------------------------------------ CategoricalDist

CategoricalDist CategoricalDist::from_logits(const Matrix& logits) {
    Matrix lp(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto z = logits.row(r);
        const double m = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (double v : z) s += std::exp(v - m);
        const double lse = m + std::log(s);
        auto out = lp.row(r);
        for (std::size_t a = 0; a < z.size(); ++a) out[a] = z[a] - lse;
    }
    return CategoricalDist(std::move(lp));
}

CategoricalDist dist_from_log_probs(Matrix log_probs) { return CategoricalDist(std::move(log_probs)); }

std::vector<double> CategoricalDist::log_probs_of(std::span<const int> actions) const {
    if (actions.size() != size()) throw std::invalid_argument("log_probs_of: size mismatch");
    std::vector<double> out(actions.size());
    for (std::size_t i = 0; i < actions.size(); ++i) {
        out[i] = m_log_probs(i, static_cast<std::size_t>(actions[i]));
    }
    return out;
}

CategoricalDist CategoricalDist::gather(std::span<const std::size_t> rows) const {
    return CategoricalDist(m_log_probs.gather_rows(rows));
}

std::vector<double> kl(const CategoricalDist& p, const CategoricalDist& q) {
    if (p.size() != q.size() || p.action_count() != q.action_count()) {
        throw std::invalid_argument("kl: distribution shape mismatch");
    }
    std::vector<double> out(p.size(), 0.0);
    for (std::size_t s = 0; s < p.size(); ++s) {
        double acc = 0.0;
        for (std::size_t a = 0; a < p.action_count(); ++a) {
            const double lp = p.log_prob(s, a);
            const double pa = std::exp(lp);
            if (pa == 0.0) continue;
            acc += pa * (lp - q.log_prob(s, a));
        }
        out[s] = std::max(acc, 0.0);
    }
    return out;
}

std::vector<double> entropy(const CategoricalDist& dist) {
    std::vector<double> out(dist.size(), 0.0);
    for (std::size_t s = 0; s < dist.size(); ++s) {
        double h = 0.0;
        for (std::size_t a = 0; a < dist.action_count(); ++a) {
            const double lp = dist.log_prob(s, a);
            const double pa = std::exp(lp);
            if (pa > 0.0) h -= pa * lp;
        }
        out[s] = h;
    }
    return out;
}

SampledAction sample_action(const CategoricalDist& dist, std::size_t state, Rng& rng) {
    const double u = uniform01(rng);
    double cum = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t a = 0; a < dist.action_count(); ++a) {
        const double pa = std::exp(dist.log_prob(state, a));
        if (pa > 0.0) last_positive = a;
        cum += pa;
        if (u < cum) return {static_cast<int>(a), dist.log_prob(state, a)};
    }
    return {static_cast<int>(last_positive), dist.log_prob(state, last_positive)};
}

}  // namespace ppoewma

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ppoewma/matrix.hpp"
#include "ppoewma/rng.hpp"

namespace ppoewma {

/// One affine block inside a ParamVector. The weight block holds a
/// rows x cols matrix (rows = fan-out) stored column-major, followed by
/// `rows` bias entries.
struct LayerDesc {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0;

    std::size_t weight_count() const noexcept { return rows * cols; }
    std::size_t bias_offset() const noexcept { return offset + rows * cols; }
    std::size_t size() const noexcept { return rows * cols + rows; }

    friend bool operator==(const LayerDesc&, const LayerDesc&) = default;
};

/// Flat parameter array plus the layer layout that gives it meaning.
/// Gradients, EWMA averages and snapshots all share this type.
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(std::vector<LayerDesc> layout);

    std::size_t size() const noexcept { return m_values.size(); }
    const std::vector<LayerDesc>& layout() const noexcept { return m_layout; }

    std::span<double> values() noexcept { return m_values; }
    std::span<const double> values() const noexcept { return m_values; }
    double& operator[](std::size_t i) noexcept { return m_values[i]; }
    double operator[](std::size_t i) const noexcept { return m_values[i]; }

    /// Same layout, every entry zero.
    ParamVector zeros_like() const;
    bool all_finite() const noexcept;
    bool same_layout(const ParamVector& other) const noexcept {
        return m_layout == other.m_layout;
    }

    friend bool operator==(const ParamVector&, const ParamVector&) = default;

private:
    std::vector<LayerDesc> m_layout;
    std::vector<double> m_values;
};

enum class Activation { tanh, identity };

struct Heads {
    int actions = 0;          // policy logits; 0 disables the head
    bool value = false;
    bool aux_value = false;   // PPG auxiliary value head on the policy net
};

/// Fully-connected network shape. At least one hidden layer is required.
class NetArchitecture {
public:
    NetArchitecture(int input_dim, std::vector<int> hidden, Heads heads,
                    Activation activation = Activation::tanh);

    int input_dim() const noexcept { return m_input_dim; }
    const std::vector<int>& hidden() const noexcept { return m_hidden; }
    const Heads& heads() const noexcept { return m_heads; }
    Activation activation() const noexcept { return m_activation; }

    std::vector<LayerDesc> layout() const;
    std::size_t param_count() const;

private:
    int m_input_dim;
    std::vector<int> m_hidden;
    Heads m_heads;
    Activation m_activation;
};

struct NetOutput {
    Matrix logits;                  // n x actions (empty without a policy head)
    std::vector<double> value;      // n (empty without a value head)
    std::vector<double> aux_value;  // n (empty without an aux head)
};

/// Exact forward and backward passes for a NetArchitecture. Per-element
/// accumulation order is fixed and independent of the batch size, so the
/// same observation row produces bit-identical outputs in any batch.
class Mlp {
public:
    explicit Mlp(NetArchitecture arch);

    const NetArchitecture& arch() const noexcept { return m_arch; }

    /// Weights ~ N(0, 1/fan_in), biases zero.
    ParamVector init_params(std::uint64_t seed) const;
    ParamVector zero_params() const;

    NetOutput forward(const ParamVector& params, const Matrix& obs) const;

    /// Gradient of a scalar loss given its derivatives with respect to the
    /// network outputs. Empty spans mean a zero derivative for that head.
    ParamVector backward(const ParamVector& params, const Matrix& obs, const Matrix& d_logits,
                         std::span<const double> d_value,
                         std::span<const double> d_aux_value = {}) const;

private:
    struct Trace {
        std::vector<Matrix> activations;  // input followed by each hidden output
    };

    Trace run_hidden(const ParamVector& params, const Matrix& obs) const;
    void check_params(const ParamVector& params) const;

    NetArchitecture m_arch;
    std::vector<LayerDesc> m_layout;
    std::size_t m_policy_layer = 0;
    std::size_t m_value_layer = 0;
    std::size_t m_aux_layer = 0;
};

/// Categorical distributions, one per row (state).
class CategoricalDist {
public:
    CategoricalDist() = default;
    static CategoricalDist from_logits(const Matrix& logits);

    std::size_t size() const noexcept { return m_log_probs.rows(); }
    std::size_t action_count() const noexcept { return m_log_probs.cols(); }
    const Matrix& log_probs() const noexcept { return m_log_probs; }
    double log_prob(std::size_t state, std::size_t action) const noexcept {
        return m_log_probs(state, action);
    }
    /// Log-probabilities of one chosen action per state.
    std::vector<double> log_probs_of(std::span<const int> actions) const;
    CategoricalDist gather(std::span<const std::size_t> rows) const;

private:
    explicit CategoricalDist(Matrix log_probs) : m_log_probs(std::move(log_probs)) {}
    friend CategoricalDist dist_from_log_probs(Matrix log_probs);

    Matrix m_log_probs;
};

/// Wraps an existing log-probability table (rows must already be normalized).
CategoricalDist dist_from_log_probs(Matrix log_probs);

/// KL[p, q] per state, computed in log space.
std::vector<double> kl(const CategoricalDist& p, const CategoricalDist& q);
std::vector<double> entropy(const CategoricalDist& dist);

struct SampledAction {
    int action = 0;
    double log_prob = 0.0;
};

SampledAction sample_action(const CategoricalDist& dist, std::size_t state, Rng& rng);

}  // namespace ppoewma

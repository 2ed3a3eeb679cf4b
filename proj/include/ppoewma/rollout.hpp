#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ppoewma/gradnet.hpp"
#include "ppoewma/matrix.hpp"
#include "ppoewma/rng.hpp"

namespace ppoewma {

// ------------------------------------------------------------- environments

struct StepResult {
    double reward = 0.0;
    bool terminal = false;   // reached an absorbing state
    bool truncated = false;  // hit the step cap without terminating
};

class Environment {
public:
    virtual ~Environment() = default;

    virtual int observation_dim() const = 0;
    virtual int action_count() const = 0;
    virtual void reset() = 0;
    virtual void observe(std::span<double> out) const = 0;
    virtual StepResult step(int action, Rng& rng) = 0;
};

/// 16 cells, start at the left end, +1 on entering the right end.
/// Actions: 0 = left, 1 = right. One-hot position observation.
class Corridor final : public Environment {
public:
    static constexpr int kLength = 16;
    static constexpr int kStepCap = 64;

    int observation_dim() const override { return kLength; }
    int action_count() const override { return 2; }
    void reset() override;
    void observe(std::span<double> out) const override;
    StepResult step(int action, Rng& rng) override;

    int position() const noexcept { return m_pos; }

private:
    int m_pos = 0;
    int m_steps = 0;
};

/// 8x8 grid from (0,0) to the goal corner (7,7). After each move a gust
/// with probability 0.2 pushes the agent one more cell up (toward row 0,
/// away from the goal). Reward -0.01 per step plus 1 on reaching the goal.
/// Actions: 0 = up, 1 = down, 2 = left, 3 = right.
/// Observation: (row/7, col/7), one-hot row, one-hot column.
class WindyGrid final : public Environment {
public:
    static constexpr int kSize = 8;
    static constexpr int kStepCap = 128;
    static constexpr double kWindProbability = 0.2;
    static constexpr double kStepPenalty = 0.01;

    int observation_dim() const override { return 2 + 2 * kSize; }
    int action_count() const override { return 4; }
    void reset() override;
    void observe(std::span<double> out) const override;
    StepResult step(int action, Rng& rng) override;

    int row() const noexcept { return m_row; }
    int col() const noexcept { return m_col; }
    /// Whether the gust fired on the most recent step.
    bool last_step_windy() const noexcept { return m_windy; }

private:
    int m_row = 0;
    int m_col = 0;
    int m_steps = 0;
    bool m_windy = false;
};

enum class EnvKind { corridor, windy_grid };

std::string to_string(EnvKind kind);
EnvKind parse_env_kind(const std::string& s);
std::unique_ptr<Environment> make_env(EnvKind kind);

// ----------------------------------------------------------- normalization

/// Bias-corrected EWMA of a mean and a mean square. After k updates the
/// estimates equal sum_i decay^i x_{k-i} / sum_i decay^i.
class NormalizerState {
public:
    explicit NormalizerState(double ess);

    void update(double mean, double mean_sq);
    double mean() const noexcept;
    double mean_sq() const noexcept;
    double variance() const noexcept;
    double stddev() const noexcept;
    double rms() const noexcept;
    double ess() const noexcept { return m_ess; }
    double decay() const noexcept { return m_decay; }
    std::uint64_t count() const noexcept { return m_count; }

private:
    double m_ess;
    double m_decay;
    double m_raw_mean = 0.0;
    double m_raw_mean_sq = 0.0;
    double m_decay_power = 1.0;
    std::uint64_t m_count = 0;
};

inline constexpr double kStdFloor = 1e-8;

/// Divides rewards by the running scale (root mean square) of a per-stream
/// discounted-return accumulator. The accumulator statistics update once per
/// sample, so the estimate does not depend on how many streams run in
/// parallel. The uncentered scale stays positive while every observed return
/// is equal, which happens on the first steps of any environment with a
/// constant step penalty.
class RewardNormalizer {
public:
    RewardNormalizer(double ess, double gamma, int n_streams);

    /// Normalizes one reward of stream `stream`; `episode_end` clears the
    /// stream's accumulator after use.
    double normalize(int stream, double reward, bool episode_end);
    const NormalizerState& state() const noexcept { return m_state; }

private:
    NormalizerState m_state;
    double m_gamma;
    std::vector<double> m_returns;
};

struct AdvantageNormOptions {
    bool subtract_mean = true;
    bool update_before_use = true;
};

/// Standardizes advantages with EWMA estimates of the per-batch mean and mean
/// square (effective sample size measured in batches).
std::vector<double> normalize_advantages(NormalizerState& state, std::span<const double> adv,
                                         AdvantageNormOptions options = {});

// ------------------------------------------------------------------ batches

/// One iteration of experience. Sample index = env * horizon + t.
struct RolloutBatch {
    int n_env = 0;
    int horizon = 0;
    int birth_iteration = 0;

    Matrix obs;
    std::vector<int> actions;
    Matrix behav_log_probs;            // full behavior-policy rows
    std::vector<double> logp_behav;    // of the taken action
    std::vector<double> rewards;       // as fed to GAE (normalized if enabled)
    std::vector<double> raw_rewards;
    std::vector<std::uint8_t> terminal;
    std::vector<std::uint8_t> truncated;

    /// Observations whose value bootstraps a cut trajectory: the successor
    /// state of every truncated step and of each stream's final step.
    Matrix bootstrap_obs;
    std::vector<std::int64_t> bootstrap_row;  // per sample, -1 when unused

    std::vector<double> completed_returns;     // undiscounted episode returns

    std::size_t size() const noexcept { return actions.size(); }
};

/// N parallel environment streams whose episodes continue across batches.
class VecEnv {
public:
    VecEnv(EnvKind kind, int n_env);

    int n_env() const noexcept { return static_cast<int>(m_envs.size()); }
    int observation_dim() const noexcept { return m_envs.front()->observation_dim(); }
    int action_count() const noexcept { return m_envs.front()->action_count(); }
    Environment& env(int i) { return *m_envs[static_cast<std::size_t>(i)]; }

    /// Steps every stream `horizon` times under the given policy. Streams are
    /// advanced sequentially, so the batch is a deterministic function of the
    /// parameters and generator states.
    RolloutBatch collect(const Mlp& policy, const ParamVector& params_behav, int horizon,
                         Rng& action_rng, Rng& env_rng, RewardNormalizer* reward_norm = nullptr);

private:
    std::vector<std::unique_ptr<Environment>> m_envs;
    std::vector<double> m_episode_returns;
    Matrix m_obs;
};

// --------------------------------------------------------------------- GAE

struct Advantages {
    std::vector<double> adv;
    std::vector<double> value_targets;
};

/// GAE over one time-ordered stream. `next_values[t]` is V(s_{t+1}) (ignored
/// when terminal[t]); `boundary[t]` stops the recursion from reaching past t.
///   delta_t = r_t + gamma (1 - terminal_t) next_values_t - values_t
///   A_t     = delta_t + gamma lambda (1 - boundary_t) A_{t+1}
Advantages gae(std::span<const double> rewards, std::span<const double> values,
               std::span<const double> next_values, std::span<const std::uint8_t> terminal,
               std::span<const std::uint8_t> boundary, double gamma, double lambda);

/// GAE for a whole batch: `values` per sample, `bootstrap_values` per row of
/// batch.bootstrap_obs. Terminals bootstrap from zero, truncations and
/// segment ends from V.
Advantages gae(const RolloutBatch& batch, std::span<const double> values,
               std::span<const double> bootstrap_values, double gamma, double lambda);

// ---------------------------------------------------------------- staleness

/// FIFO that releases each batch `delay` pushes after it entered.
class StalenessBuffer {
public:
    explicit StalenessBuffer(int delay);

    std::optional<RolloutBatch> push_pop(RolloutBatch batch);
    int delay() const noexcept { return m_delay; }
    std::size_t pending() const noexcept { return m_queue.size(); }

private:
    int m_delay;
    std::deque<RolloutBatch> m_queue;
};

}  // namespace ppoewma

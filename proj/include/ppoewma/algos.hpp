#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ppoewma/gradnet.hpp"
#include "ppoewma/hyperparams.hpp"
#include "ppoewma/optim.hpp"
#include "ppoewma/rollout.hpp"

namespace ppoewma {

/// ppo:      shared policy/value network, E epochs per iteration.
/// ppg:      separate value network, policy phases of N_pi iterations followed
///           by an auxiliary phase.
/// *_ewma:   the proximal policy is an EWMA of the policy parameters; these
///           require the decoupled objective.
enum class Algo { ppo, ppo_ewma, ppg, ppg_ewma };

std::string to_string(Algo a);
Algo parse_algo(const std::string& s);
bool uses_ewma(Algo a) noexcept;
bool is_phasic(Algo a) noexcept;

/// Default hyperparameters for an algorithm: coupled-recent for the plain
/// variants, decoupled for the EWMA variants, E_pi = E_V = 1 for PPG.
HyperParams algo_defaults(Algo a);

/// Per-iteration diagnostics. Loss-type fields are means over the policy
/// gradient steps of the iteration (NaN when no optimization happened);
/// mean_episode_return averages episodes completed during this iteration's
/// collection and carries the previous value forward when none completed.
struct RunRecord {
    std::string run_id;
    Algo algo = Algo::ppo;
    EnvKind env = EnvKind::corridor;
    std::uint64_t seed = 0;
    int iteration = 0;
    std::int64_t env_steps = 0;
    double mean_episode_return = 0.0;
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double kl_prox = 0.0;
    double kl_behav = 0.0;
    double clip_frac = 0.0;
    double adv_std_estimate = 0.0;
    double max_ratio = 0.0;
};

/// Sequential minibatch partition of a random permutation of [0, n). Every
/// index appears in exactly one minibatch; sizes differ by at most one.
std::vector<std::vector<std::size_t>> shuffled_minibatches(std::size_t n, std::size_t count, Rng& rng);

/// One training run. Each call to iterate() performs a single alternation
/// between collection and optimization (plus an auxiliary phase for PPG
/// when the policy phase completes).
class Trainer {
public:
    Trainer(Algo algo, EnvKind env, HyperParams hp, std::uint64_t seed, std::string run_id = {});

    RunRecord iterate();

    Algo algo() const noexcept { return m_algo; }
    const HyperParams& hp() const noexcept { return m_hp; }
    int iteration() const noexcept { return m_iteration; }
    std::int64_t env_steps() const noexcept { return m_env_steps; }
    const ParamVector& policy_params() const noexcept { return m_theta; }
    const ParamVector& value_params() const noexcept { return m_phi; }
    std::optional<ParamVector> proximal_params() const;
    std::size_t phase_buffer_size() const noexcept { return m_phase_targets.size(); }
    int aux_phases_run() const noexcept { return m_aux_phases; }
    int policy_steps() const noexcept { return m_policy_steps; }

private:
    struct StepStats;
    struct PreparedBatch;

    PreparedBatch prepare(const RolloutBatch& batch);
    void policy_epochs(const RolloutBatch& batch, const PreparedBatch& prep, StepStats& stats);
    void value_epochs(const RolloutBatch& batch, const PreparedBatch& prep);
    void aux_phase();
    [[noreturn]] void fail(const std::string& what) const;

    Algo m_algo;
    EnvKind m_env_kind;
    HyperParams m_hp;
    std::uint64_t m_seed;
    std::string m_run_id;

    VecEnv m_envs;
    Mlp m_policy_net;
    std::optional<Mlp> m_value_net;
    ParamVector m_theta;
    ParamVector m_phi;
    AdamState m_policy_adam;
    std::optional<AdamState> m_value_adam;
    std::optional<AdamState> m_aux_adam;
    std::optional<EwmaState> m_ewma;

    RewardNormalizer m_reward_norm;
    NormalizerState m_adv_norm;
    StalenessBuffer m_staleness;
    Rng m_env_rng;
    Rng m_action_rng;
    Rng m_shuffle_rng;

    std::vector<double> m_phase_obs;  // row-major, observation_dim columns
    std::vector<double> m_phase_targets;
    int m_phase_iterations = 0;
    int m_aux_phases = 0;
    int m_policy_steps = 0;

    int m_iteration = 0;
    std::int64_t m_env_steps = 0;
    double m_last_return;
};

/// Full deterministic training run. total_steps must be a multiple of the
/// iteration batch (N_env * T); zero gives no records.
std::vector<RunRecord> run(Algo algo, EnvKind env, const HyperParams& hp, std::uint64_t seed,
                           std::int64_t total_steps, const std::string& run_id = {});

/// Mean of mean_episode_return over the records in the last `fraction` of
/// env steps, skipping NaN entries.
double final_return(const std::vector<RunRecord>& records, double fraction = 0.1);

}  // namespace ppoewma

#include "ppoewma/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ppoewma/optim.hpp"

namespace ppoewma {

// ------------------------------------------------------------- environments

void Corridor::reset() {
    m_pos = 0;
    m_steps = 0;
}

void Corridor::observe(std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    out[static_cast<std::size_t>(m_pos)] = 1.0;
}

StepResult Corridor::step(int action, Rng& /*rng*/) {
    if (action != 0 && action != 1) throw std::invalid_argument("Corridor: invalid action");
    m_pos = std::clamp(m_pos + (action == 1 ? 1 : -1), 0, kLength - 1);
    ++m_steps;
    StepResult r;
    if (m_pos == kLength - 1) {
        r.reward = 1.0;
        r.terminal = true;
    } else if (m_steps >= kStepCap) {
        r.truncated = true;
    }
    return r;
}

void WindyGrid::reset() {
    m_row = 0;
    m_col = 0;
    m_steps = 0;
    m_windy = false;
}

void WindyGrid::observe(std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    out[0] = static_cast<double>(m_row) / (kSize - 1);
    out[1] = static_cast<double>(m_col) / (kSize - 1);
    out[2 + static_cast<std::size_t>(m_row)] = 1.0;
    out[2 + kSize + static_cast<std::size_t>(m_col)] = 1.0;
}

StepResult WindyGrid::step(int action, Rng& rng) {
    static constexpr int kDr[] = {-1, 1, 0, 0};
    static constexpr int kDc[] = {0, 0, -1, 1};
    if (action < 0 || action > 3) throw std::invalid_argument("WindyGrid: invalid action");
    m_row = std::clamp(m_row + kDr[action], 0, kSize - 1);
    m_col = std::clamp(m_col + kDc[action], 0, kSize - 1);
    // The gust is drawn on every step so the generator advances uniformly.
    m_windy = uniform01(rng) < kWindProbability;
    if (m_windy) m_row = std::max(m_row - 1, 0);
    ++m_steps;

    StepResult r;
    r.reward = -kStepPenalty;
    if (m_row == kSize - 1 && m_col == kSize - 1) {
        r.reward += 1.0;
        r.terminal = true;
    } else if (m_steps >= kStepCap) {
        r.truncated = true;
    }
    return r;
}

std::string to_string(EnvKind kind) {
    return kind == EnvKind::corridor ? "corridor" : "windy-grid";
}

EnvKind parse_env_kind(const std::string& s) {
    if (s == "corridor") return EnvKind::corridor;
    if (s == "windy-grid") return EnvKind::windy_grid;
    throw std::invalid_argument("unknown environment '" + s + "' (expected corridor or windy-grid)");
}

std::unique_ptr<Environment> make_env(EnvKind kind) {
    if (kind == EnvKind::corridor) return std::make_unique<Corridor>();
    return std::make_unique<WindyGrid>();
}

// ----------------------------------------------------------- normalization

NormalizerState::NormalizerState(double ess) : m_ess(ess), m_decay(ess_to_decay(ess)) {}

void NormalizerState::update(double mean, double mean_sq) {
    m_raw_mean = m_decay * m_raw_mean + (1.0 - m_decay) * mean;
    m_raw_mean_sq = m_decay * m_raw_mean_sq + (1.0 - m_decay) * mean_sq;
    m_decay_power *= m_decay;
    ++m_count;
}

double NormalizerState::mean() const noexcept {
    return m_count == 0 ? 0.0 : m_raw_mean / (1.0 - m_decay_power);
}

double NormalizerState::mean_sq() const noexcept {
    return m_count == 0 ? 0.0 : m_raw_mean_sq / (1.0 - m_decay_power);
}

double NormalizerState::variance() const noexcept {
    const double m = mean();
    return std::max(0.0, mean_sq() - m * m);
}

double NormalizerState::stddev() const noexcept { return std::sqrt(variance()); }

double NormalizerState::rms() const noexcept { return std::sqrt(mean_sq()); }

RewardNormalizer::RewardNormalizer(double ess, double gamma, int n_streams)
    : m_state(ess), m_gamma(gamma), m_returns(static_cast<std::size_t>(n_streams), 0.0) {}

double RewardNormalizer::normalize(int stream, double reward, bool episode_end) {
    double& ret = m_returns.at(static_cast<std::size_t>(stream));
    ret = m_gamma * ret + reward;
    m_state.update(ret, ret * ret);
    if (episode_end) ret = 0.0;
    return reward / std::max(m_state.rms(), kStdFloor);
}

std::vector<double> normalize_advantages(NormalizerState& state, std::span<const double> adv,
                                         AdvantageNormOptions options) {
    if (adv.empty()) return {};
    double sum = 0.0;
    double sum_sq = 0.0;
    for (double a : adv) {
        sum += a;
        sum_sq += a * a;
    }
    const double n = static_cast<double>(adv.size());
    // With update-after the very first batch has nothing to be normalized
    // against, so it seeds the estimate first.
    const bool update_first = options.update_before_use || state.count() == 0;
    if (update_first) state.update(sum / n, sum_sq / n);
    const double mean = options.subtract_mean ? state.mean() : 0.0;
    const double scale = std::max(state.stddev(), kStdFloor);
    std::vector<double> out(adv.size());
    for (std::size_t i = 0; i < adv.size(); ++i) out[i] = (adv[i] - mean) / scale;
    if (!update_first) state.update(sum / n, sum_sq / n);
    return out;
}

// ------------------------------------------------------------------ VecEnv

VecEnv::VecEnv(EnvKind kind, int n_env) {
    if (n_env < 1) throw std::invalid_argument("VecEnv: n_env must be >= 1");
    for (int i = 0; i < n_env; ++i) {
        m_envs.push_back(make_env(kind));
        m_envs.back()->reset();
    }
    m_episode_returns.assign(static_cast<std::size_t>(n_env), 0.0);
    m_obs = Matrix(static_cast<std::size_t>(n_env), static_cast<std::size_t>(observation_dim()));
    for (int i = 0; i < n_env; ++i) m_envs[static_cast<std::size_t>(i)]->observe(m_obs.row(static_cast<std::size_t>(i)));
}

RolloutBatch VecEnv::collect(const Mlp& policy, const ParamVector& params_behav, int horizon,
                             Rng& action_rng, Rng& env_rng, RewardNormalizer* reward_norm) {
    if (horizon < 1) throw std::invalid_argument("collect: horizon must be >= 1");
    const std::size_t n_env = m_envs.size();
    const std::size_t T = static_cast<std::size_t>(horizon);
    const std::size_t n = n_env * T;
    const std::size_t obs_dim = static_cast<std::size_t>(observation_dim());
    const std::size_t a_count = static_cast<std::size_t>(action_count());

    RolloutBatch b;
    b.n_env = static_cast<int>(n_env);
    b.horizon = horizon;
    b.obs = Matrix(n, obs_dim);
    b.actions.assign(n, 0);
    b.behav_log_probs = Matrix(n, a_count);
    b.logp_behav.assign(n, 0.0);
    b.rewards.assign(n, 0.0);
    b.raw_rewards.assign(n, 0.0);
    b.terminal.assign(n, 0);
    b.truncated.assign(n, 0);
    b.bootstrap_row.assign(n, -1);
    std::vector<double> boot;

    for (std::size_t t = 0; t < T; ++t) {
        const auto dist = CategoricalDist::from_logits(policy.forward(params_behav, m_obs).logits);
        for (std::size_t e = 0; e < n_env; ++e) {
            const std::size_t i = e * T + t;
            std::copy(m_obs.row(e).begin(), m_obs.row(e).end(), b.obs.row(i).begin());
            const auto lp = dist.log_probs().row(e);
            std::copy(lp.begin(), lp.end(), b.behav_log_probs.row(i).begin());
            const auto sampled = sample_action(dist, e, action_rng);
            b.actions[i] = sampled.action;
            b.logp_behav[i] = sampled.log_prob;

            Environment& env = *m_envs[e];
            const StepResult r = env.step(sampled.action, env_rng);
            const bool episode_end = r.terminal || r.truncated;
            b.raw_rewards[i] = r.reward;
            b.rewards[i] = reward_norm ? reward_norm->normalize(static_cast<int>(e), r.reward, episode_end) : r.reward;
            b.terminal[i] = r.terminal ? 1 : 0;
            b.truncated[i] = r.truncated ? 1 : 0;

            m_episode_returns[e] += r.reward;
            env.observe(m_obs.row(e));
            if (r.truncated || (t + 1 == T && !r.terminal)) {
                b.bootstrap_row[i] = static_cast<std::int64_t>(boot.size() / obs_dim);
                boot.insert(boot.end(), m_obs.row(e).begin(), m_obs.row(e).end());
            }
            if (episode_end) {
                b.completed_returns.push_back(m_episode_returns[e]);
                m_episode_returns[e] = 0.0;
                env.reset();
                env.observe(m_obs.row(e));
            }
        }
    }
    b.bootstrap_obs = Matrix(boot.size() / obs_dim, obs_dim);
    std::copy(boot.begin(), boot.end(), b.bootstrap_obs.data());
    return b;
}

// --------------------------------------------------------------------- GAE

Advantages gae(std::span<const double> rewards, std::span<const double> values,
               std::span<const double> next_values, std::span<const std::uint8_t> terminal,
               std::span<const std::uint8_t> boundary, double gamma, double lambda) {
    const std::size_t n = rewards.size();
    if (values.size() != n || next_values.size() != n || terminal.size() != n || boundary.size() != n) {
        throw std::invalid_argument("gae: inputs are not aligned");
    }
    Advantages out;
    out.adv.assign(n, 0.0);
    out.value_targets.assign(n, 0.0);
    double next_adv = 0.0;
    for (std::size_t k = n; k-- > 0;) {
        const double bootstrap = terminal[k] ? 0.0 : gamma * next_values[k];
        const double delta = rewards[k] + bootstrap - values[k];
        const double carry = boundary[k] ? 0.0 : gamma * lambda * next_adv;
        out.adv[k] = delta + carry;
        out.value_targets[k] = out.adv[k] + values[k];
        next_adv = out.adv[k];
    }
    return out;
}

Advantages gae(const RolloutBatch& batch, std::span<const double> values,
               std::span<const double> bootstrap_values, double gamma, double lambda) {
    const std::size_t n = batch.size();
    const std::size_t T = static_cast<std::size_t>(batch.horizon);
    if (values.size() != n) throw std::invalid_argument("gae: values must have one entry per sample");
    if (bootstrap_values.size() != batch.bootstrap_obs.rows()) {
        throw std::invalid_argument("gae: bootstrap values must match bootstrap observations");
    }
    Advantages out;
    out.adv.resize(n);
    out.value_targets.resize(n);
    std::vector<double> next(T);
    std::vector<std::uint8_t> boundary(T);
    for (std::size_t e = 0; e < static_cast<std::size_t>(batch.n_env); ++e) {
        const std::size_t base = e * T;
        for (std::size_t t = 0; t < T; ++t) {
            const std::size_t i = base + t;
            const auto row = batch.bootstrap_row[i];
            next[t] = row >= 0 ? bootstrap_values[static_cast<std::size_t>(row)]
                               : (t + 1 < T ? values[i + 1] : 0.0);
            boundary[t] = (batch.terminal[i] || batch.truncated[i] || t + 1 == T) ? 1 : 0;
        }
        const auto seg = gae(std::span(batch.rewards).subspan(base, T), values.subspan(base, T), next,
                             std::span(batch.terminal).subspan(base, T), boundary, gamma, lambda);
        std::copy(seg.adv.begin(), seg.adv.end(), out.adv.begin() + static_cast<std::ptrdiff_t>(base));
        std::copy(seg.value_targets.begin(), seg.value_targets.end(),
                  out.value_targets.begin() + static_cast<std::ptrdiff_t>(base));
    }
    return out;
}

// ---------------------------------------------------------------- staleness

StalenessBuffer::StalenessBuffer(int delay) : m_delay(delay) {
    if (delay < 0) throw std::invalid_argument("StalenessBuffer: delay must be >= 0");
}

std::optional<RolloutBatch> StalenessBuffer::push_pop(RolloutBatch batch) {
    m_queue.push_back(std::move(batch));
    if (m_queue.size() <= static_cast<std::size_t>(m_delay)) return std::nullopt;
    RolloutBatch out = std::move(m_queue.front());
    m_queue.pop_front();
    return out;
}

}  // namespace ppoewma

#include "ppoewma/algos.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ppoewma/objectives.hpp"

namespace ppoewma {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum Stream : std::uint64_t { env_stream = 1, action_stream = 2, shuffle_stream = 3 };
constexpr std::uint64_t kValueInitSalt = 0x9e3779b97f4a7c15ULL;

NetArchitecture policy_arch(Algo algo, const VecEnv& envs, const HyperParams& hp) {
    Heads heads;
    heads.actions = envs.action_count();
    heads.value = !is_phasic(algo);
    heads.aux_value = is_phasic(algo);
    return NetArchitecture(envs.observation_dim(), hp.hidden, heads);
}

AdamConfig adam_config(const HyperParams& hp, double step_size) {
    return AdamConfig{step_size, hp.adam_beta1, hp.adam_beta2, hp.adam_epsilon};
}

std::vector<double> gather_values(std::span<const double> v, std::span<const std::size_t> idx) {
    return gather(v, idx);
}

}  // namespace

std::string to_string(Algo a) {
    switch (a) {
        case Algo::ppo: return "ppo";
        case Algo::ppo_ewma: return "ppo-ewma";
        case Algo::ppg: return "ppg";
        case Algo::ppg_ewma: return "ppg-ewma";
    }
    return "?";
}

Algo parse_algo(const std::string& s) {
    if (s == "ppo") return Algo::ppo;
    if (s == "ppo-ewma") return Algo::ppo_ewma;
    if (s == "ppg") return Algo::ppg;
    if (s == "ppg-ewma") return Algo::ppg_ewma;
    throw std::invalid_argument("unknown algorithm '" + s + "' (expected ppo, ppo-ewma, ppg or ppg-ewma)");
}

bool uses_ewma(Algo a) noexcept { return a == Algo::ppo_ewma || a == Algo::ppg_ewma; }
bool is_phasic(Algo a) noexcept { return a == Algo::ppg || a == Algo::ppg_ewma; }

HyperParams algo_defaults(Algo a) {
    HyperParams hp;
    hp.coupling = uses_ewma(a) ? Coupling::decoupled : Coupling::coupled_recent;
    if (is_phasic(a)) {
        hp.policy_epochs = 1;
        hp.value_epochs = 1;
    }
    return hp;
}

std::vector<std::vector<std::size_t>> shuffled_minibatches(std::size_t n, std::size_t count, Rng& rng) {
    if (count == 0 || count > n) throw std::invalid_argument("shuffled_minibatches: need 1 <= count <= n");
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i-- > 1;) std::swap(perm[i], perm[rng() % (i + 1)]);
    std::vector<std::vector<std::size_t>> out(count);
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t lo = k * n / count, hi = (k + 1) * n / count;
        out[k].assign(perm.begin() + static_cast<std::ptrdiff_t>(lo), perm.begin() + static_cast<std::ptrdiff_t>(hi));
    }
    return out;
}

// ------------------------------------------------------------------ Trainer

struct Trainer::StepStats {
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double kl_prox = 0.0;
    double kl_behav = 0.0;
    double clip_frac = 0.0;
    double max_ratio = 0.0;
    int steps = 0;
    int value_steps = 0;
};

struct Trainer::PreparedBatch {
    std::vector<double> adv;
    std::vector<double> value_targets;
    CategoricalDist behav;
    std::optional<CategoricalDist> recent;
    double adv_std = 0.0;
};

Trainer::Trainer(Algo algo, EnvKind env, HyperParams hp, std::uint64_t seed, std::string run_id)
    : m_algo(algo),
      m_env_kind(env),
      m_hp(std::move(hp)),
      m_seed(seed),
      m_run_id(run_id.empty() ? to_string(algo) + "-" + to_string(env) + "-s" + std::to_string(seed) : std::move(run_id)),
      m_envs(env, std::max(1, m_hp.n_env)),
      m_policy_net(policy_arch(algo, m_envs, m_hp)),
      m_reward_norm(std::max(1.0, m_hp.reward_norm_ess), m_hp.gamma, std::max(1, m_hp.n_env)),
      m_adv_norm(std::max(1.0, m_hp.adv_norm_ess)),
      m_staleness(std::max(0, m_hp.staleness_delay)),
      m_env_rng(make_rng(seed, env_stream)),
      m_action_rng(make_rng(seed, action_stream)),
      m_shuffle_rng(make_rng(seed, shuffle_stream)),
      m_last_return(kNaN) {
    validate(m_hp);
    if (uses_ewma(m_algo) && m_hp.coupling != Coupling::decoupled) {
        throw std::invalid_argument("coupling: " + to_string(m_algo) + " requires the decoupled objective");
    }
    const int epochs = is_phasic(m_algo) ? m_hp.policy_epochs : m_hp.ppo_epochs;
    if (m_hp.batch_scale != 1.0 && epochs != 1) {
        throw std::invalid_argument("policy_epochs: batch-size adjustments require exactly one policy epoch");
    }

    m_theta = m_policy_net.init_params(seed);
    m_policy_adam = AdamState::zeros(m_theta, adam_config(m_hp, m_hp.step_size));
    if (is_phasic(m_algo)) {
        m_value_net.emplace(NetArchitecture(m_envs.observation_dim(), m_hp.hidden, Heads{0, true, false}));
        m_phi = m_value_net->init_params(seed ^ kValueInitSalt);
        m_value_adam = AdamState::zeros(m_phi, adam_config(m_hp, m_hp.step_size));
        m_aux_adam = AdamState::zeros(m_theta, adam_config(m_hp, m_hp.aux_step_size));
    }
    if (uses_ewma(m_algo)) m_ewma.emplace(m_theta, com_to_beta(m_hp.prox_com));
}

std::optional<ParamVector> Trainer::proximal_params() const {
    if (m_ewma) return m_ewma->average();
    return std::nullopt;
}

void Trainer::fail(const std::string& what) const {
    std::ostringstream os;
    os << m_run_id << ": " << what << " at iteration " << m_iteration << " (env_steps " << m_env_steps << ")";
    throw std::runtime_error(os.str());
}

Trainer::PreparedBatch Trainer::prepare(const RolloutBatch& batch) {
    PreparedBatch prep;
    const bool needs_recent = !uses_ewma(m_algo) && m_hp.coupling != Coupling::coupled_behav;
    std::optional<NetOutput> policy_out;
    if (!is_phasic(m_algo) || needs_recent) policy_out = m_policy_net.forward(m_theta, batch.obs);
    std::vector<double> values, boot;
    if (is_phasic(m_algo)) {
        values = m_value_net->forward(m_phi, batch.obs).value;
        if (batch.bootstrap_obs.rows() > 0) boot = m_value_net->forward(m_phi, batch.bootstrap_obs).value;
    } else {
        values = policy_out->value;
        if (batch.bootstrap_obs.rows() > 0) boot = m_policy_net.forward(m_theta, batch.bootstrap_obs).value;
    }
    auto adv = gae(batch, values, boot, m_hp.gamma, m_hp.lambda);
    prep.value_targets = std::move(adv.value_targets);
    if (m_hp.adv_normalize) {
        prep.adv = normalize_advantages(m_adv_norm, adv.adv,
                                        AdvantageNormOptions{m_hp.adv_subtract_mean, m_hp.adv_update_before_use});
        prep.adv_std = m_adv_norm.stddev();
    } else {
        prep.adv = std::move(adv.adv);
        double m = 0.0, sq = 0.0;
        for (double a : prep.adv) {
            m += a;
            sq += a * a;
        }
        m /= static_cast<double>(prep.adv.size());
        prep.adv_std = std::sqrt(std::max(0.0, sq / static_cast<double>(prep.adv.size()) - m * m));
    }
    for (std::size_t i = 0; i < prep.adv.size(); ++i) {
        if (!std::isfinite(prep.adv[i])) fail("non-finite advantage at sample " + std::to_string(i));
    }
    prep.behav = dist_from_log_probs(batch.behav_log_probs);
    if (needs_recent) prep.recent = CategoricalDist::from_logits(policy_out->logits);
    return prep;
}

void Trainer::policy_epochs(const RolloutBatch& batch, const PreparedBatch& prep, StepStats& stats) {
    const bool phasic = is_phasic(m_algo);
    const int epochs = phasic ? m_hp.policy_epochs : m_hp.ppo_epochs;
    const std::optional<double> eps =
        m_hp.family == ObjectiveFamily::clip ? m_hp.clip_epsilon : std::optional<double>{};
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const auto minibatches = shuffled_minibatches(batch.size(), static_cast<std::size_t>(m_hp.minibatches), m_shuffle_rng);
        for (const auto& idx : minibatches) {
            const Matrix obs = batch.obs.gather_rows(idx);
            const NetOutput out = m_policy_net.forward(m_theta, obs);
            const auto theta = CategoricalDist::from_logits(out.logits);
            const auto behav = prep.behav.gather(idx);
            CategoricalDist prox;
            if (m_ewma) {
                prox = CategoricalDist::from_logits(m_policy_net.forward(m_ewma->average(), obs).logits);
            } else if (prep.recent) {
                prox = prep.recent->gather(idx);
            } else {
                prox = behav;
            }
            const auto actions = gather(std::span<const int>(batch.actions), idx);
            const auto adv = gather_values(prep.adv, idx);
            const ObjectiveInputs in{theta, prox, behav, actions, adv, m_hp.kl_coef, eps, m_hp.ratio_cap};

            ObjectiveOutput obj;
            try {
                const bool clip = m_hp.family == ObjectiveFamily::clip;
                switch (m_hp.coupling) {
                    case Coupling::decoupled: obj = clip ? clip_decoupled(in) : klpen_decoupled(in); break;
                    case Coupling::coupled_recent:
                        obj = clip ? clip_coupled(in, OldPolicy::recent) : klpen_coupled(in, OldPolicy::recent);
                        break;
                    case Coupling::coupled_behav:
                        obj = clip ? clip_coupled(in, OldPolicy::behav) : klpen_coupled(in, OldPolicy::behav);
                        break;
                }
            } catch (const std::domain_error& e) {
                fail(e.what());
            }
            const auto ent = entropy_bonus(theta, m_hp.entropy_coef);
            Matrix d_logits = obj.d_logits;
            for (std::size_t i = 0; i < d_logits.storage().size(); ++i) d_logits.storage()[i] += ent.d_logits.storage()[i];

            std::vector<double> d_value;
            double v_loss = kNaN;
            if (!phasic) {
                const auto targets = gather_values(prep.value_targets, idx);
                auto vl = value_loss(out.value, targets);
                v_loss = vl.loss;
                d_value = std::move(vl.grad);
                for (double& g : d_value) g *= m_hp.value_coef;
            }
            const double total = obj.loss + ent.loss + (phasic ? 0.0 : m_hp.value_coef * v_loss);
            if (!std::isfinite(total)) {
                std::ostringstream os;
                os << "non-finite loss (policy " << obj.loss << ", value " << v_loss << ", entropy " << ent.loss << ")";
                fail(os.str());
            }
            const ParamVector grad = m_policy_net.backward(m_theta, obs, d_logits, d_value);
            if (!grad.all_finite()) fail("non-finite policy gradient");
            adam_step(m_policy_adam, m_theta, grad);
            if (m_ewma) m_ewma->update(m_theta);
            ++m_policy_steps;

            stats.policy_loss += obj.loss;
            if (!phasic) {
                stats.value_loss += v_loss;
                ++stats.value_steps;
            }
            double h = 0.0;
            for (double x : entropy(theta)) h += x;
            stats.entropy += h / static_cast<double>(theta.size());
            stats.kl_prox += obj.diagnostics.kl_prox;
            stats.kl_behav += obj.diagnostics.kl_behav;
            stats.clip_frac += obj.diagnostics.clip_fraction;
            stats.max_ratio = std::max(stats.max_ratio, obj.diagnostics.max_ratio);
            ++stats.steps;
        }
    }
}

void Trainer::value_epochs(const RolloutBatch& batch, const PreparedBatch& prep) {
    for (int epoch = 0; epoch < m_hp.value_epochs; ++epoch) {
        const auto minibatches = shuffled_minibatches(batch.size(), static_cast<std::size_t>(m_hp.minibatches), m_shuffle_rng);
        for (const auto& idx : minibatches) {
            const Matrix obs = batch.obs.gather_rows(idx);
            const auto out = m_value_net->forward(m_phi, obs);
            const auto vl = value_loss(out.value, gather_values(prep.value_targets, idx));
            if (!std::isfinite(vl.loss)) fail("non-finite value loss");
            const ParamVector grad = m_value_net->backward(m_phi, obs, Matrix{}, vl.grad);
            adam_step(*m_value_adam, m_phi, grad);
        }
    }
}

void Trainer::aux_phase() {
    const std::size_t n = m_phase_targets.size();
    const std::size_t dim = static_cast<std::size_t>(m_envs.observation_dim());
    Matrix all_obs(n, dim);
    std::copy(m_phase_obs.begin(), m_phase_obs.end(), all_obs.data());
    const auto frozen = CategoricalDist::from_logits(m_policy_net.forward(m_theta, all_obs).logits);
    const std::size_t count = std::max<std::size_t>(1, n / static_cast<std::size_t>(m_hp.aux_minibatch_size));
    for (int epoch = 0; epoch < m_hp.aux_epochs; ++epoch) {
        for (const auto& idx : shuffled_minibatches(n, count, m_shuffle_rng)) {
            const Matrix obs = all_obs.gather_rows(idx);
            const auto targets = gather_values(m_phase_targets, idx);

            const auto out = m_policy_net.forward(m_theta, obs);
            const auto aux = aux_phase_loss(CategoricalDist::from_logits(out.logits), frozen.gather(idx),
                                            out.aux_value, targets, m_hp.clone_coef);
            if (!std::isfinite(aux.loss)) fail("non-finite auxiliary loss");
            adam_step(*m_aux_adam, m_theta, m_policy_net.backward(m_theta, obs, aux.d_logits, {}, aux.d_aux_value));

            const auto vout = m_value_net->forward(m_phi, obs);
            const auto vl = value_loss(vout.value, targets);
            if (!std::isfinite(vl.loss)) fail("non-finite value loss in auxiliary phase");
            adam_step(*m_value_adam, m_phi, m_value_net->backward(m_phi, obs, Matrix{}, vl.grad));
        }
    }
    m_phase_obs.clear();
    m_phase_targets.clear();
    m_phase_iterations = 0;
    ++m_aux_phases;
}

RunRecord Trainer::iterate() {
    RolloutBatch fresh = m_envs.collect(m_policy_net, m_theta, m_hp.horizon, m_action_rng, m_env_rng,
                                        m_hp.reward_normalize ? &m_reward_norm : nullptr);
    fresh.birth_iteration = m_iteration;
    if (!fresh.completed_returns.empty()) {
        double s = 0.0;
        for (double r : fresh.completed_returns) s += r;
        m_last_return = s / static_cast<double>(fresh.completed_returns.size());
    }

    RunRecord rec;
    rec.run_id = m_run_id;
    rec.algo = m_algo;
    rec.env = m_env_kind;
    rec.seed = m_seed;
    rec.iteration = m_iteration;
    rec.mean_episode_return = m_last_return;
    rec.policy_loss = rec.value_loss = rec.entropy = rec.kl_prox = rec.kl_behav = kNaN;
    rec.clip_frac = rec.adv_std_estimate = rec.max_ratio = kNaN;

    std::optional<RolloutBatch> batch = m_staleness.push_pop(std::move(fresh));
    if (batch) {
        const bool phasic = is_phasic(m_algo);
        if (phasic && m_phase_iterations == 0) {
            if (m_ewma) m_ewma->reset(m_theta);
            if (m_hp.reset_adam_each_phase) {
                m_policy_adam = AdamState::zeros(m_theta, m_policy_adam.config);
                m_value_adam = AdamState::zeros(m_phi, m_value_adam->config);
            }
        }
        const PreparedBatch prep = prepare(*batch);
        StepStats stats;
        policy_epochs(*batch, prep, stats);
        if (phasic) {
            value_epochs(*batch, prep);
            const auto& s = batch->obs.storage();
            m_phase_obs.insert(m_phase_obs.end(), s.begin(), s.end());
            m_phase_targets.insert(m_phase_targets.end(), prep.value_targets.begin(), prep.value_targets.end());
            ++m_phase_iterations;
            const auto vals = m_value_net->forward(m_phi, batch->obs).value;
            rec.value_loss = value_loss(vals, prep.value_targets).loss;
        } else {
            rec.value_loss = stats.value_loss / std::max(1, stats.value_steps);
        }
        const double k = static_cast<double>(std::max(1, stats.steps));
        rec.policy_loss = stats.policy_loss / k;
        rec.entropy = stats.entropy / k;
        rec.kl_prox = stats.kl_prox / k;
        rec.kl_behav = stats.kl_behav / k;
        rec.clip_frac = stats.clip_frac / k;
        rec.max_ratio = stats.max_ratio;
        rec.adv_std_estimate = prep.adv_std;
        if (phasic && m_phase_iterations == m_hp.n_pi) aux_phase();
    }

    ++m_iteration;
    m_env_steps += static_cast<std::int64_t>(m_hp.iteration_batch());
    rec.env_steps = m_env_steps;
    return rec;
}

std::vector<RunRecord> run(Algo algo, EnvKind env, const HyperParams& hp, std::uint64_t seed,
                           std::int64_t total_steps, const std::string& run_id) {
    if (total_steps < 0) throw std::invalid_argument("total_steps must be non-negative");
    const std::int64_t batch = hp.iteration_batch();
    if (batch <= 0 || total_steps % batch != 0) {
        throw std::invalid_argument("total_steps " + std::to_string(total_steps) +
                                    " is not a multiple of the iteration batch " + std::to_string(batch));
    }
    std::vector<RunRecord> out;
    if (total_steps == 0) return out;
    Trainer trainer(algo, env, hp, seed, run_id);
    const std::int64_t iterations = total_steps / batch;
    out.reserve(static_cast<std::size_t>(iterations));
    for (std::int64_t i = 0; i < iterations; ++i) out.push_back(trainer.iterate());
    return out;
}

double final_return(const std::vector<RunRecord>& records, double fraction) {
    if (records.empty()) return kNaN;
    const double last = static_cast<double>(records.back().env_steps);
    const double cutoff = last * (1.0 - fraction);
    double sum = 0.0;
    int count = 0;
    for (const auto& r : records) {
        if (static_cast<double>(r.env_steps) <= cutoff && &r != &records.back()) continue;
        if (std::isnan(r.mean_episode_return)) continue;
        sum += r.mean_episode_return;
        ++count;
    }
    return count == 0 ? kNaN : sum / count;
}

}  // namespace ppoewma

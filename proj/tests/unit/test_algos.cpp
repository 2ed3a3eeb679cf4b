#include <cmath>
#include <set>

#include "doctest.h"
#include "ppoewma/algos.hpp"
#include "ppoewma/invariance.hpp"
#include "ppoewma/objectives.hpp"
#include "ppoewma/report.hpp"

using namespace ppoewma;

namespace {

HyperParams small(Algo algo) {
    HyperParams hp = algo_defaults(algo);
    hp.n_env = 4;
    hp.horizon = 16;
    hp.minibatches = 4;
    hp.hidden = {8};
    hp.n_pi = 3;
    hp.aux_epochs = 2;
    hp.aux_minibatch_size = 16;
    return hp;
}

double max_abs_diff(const ParamVector& a, const ParamVector& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

}  // namespace

TEST_CASE("minibatches partition the sample indices") {
    Rng rng = make_rng(3, 3);
    for (std::size_t count : {1u, 3u, 8u}) {
        const auto mbs = shuffled_minibatches(50, count, rng);
        REQUIRE(mbs.size() == count);
        std::set<std::size_t> seen;
        std::size_t lo = 50, hi = 0;
        for (const auto& mb : mbs) {
            lo = std::min(lo, mb.size());
            hi = std::max(hi, mb.size());
            for (auto i : mb) CHECK(seen.insert(i).second);
        }
        CHECK(seen.size() == 50);
        CHECK(hi - lo <= 1);
    }
    CHECK_THROWS_AS(shuffled_minibatches(4, 5, rng), std::invalid_argument);
}

TEST_CASE("coupling regression: decoupled with beta_prox = 0 tracks coupled-recent bitwise") {
    HyperParams plain = small(Algo::ppo);
    plain.ppo_epochs = 1;
    plain.minibatches = 1;
    HyperParams ewma = small(Algo::ppo_ewma);
    ewma.ppo_epochs = 1;
    ewma.minibatches = 1;
    ewma.prox_com = 0.0;
    for (EnvKind env : {EnvKind::corridor, EnvKind::windy_grid}) {
        Trainer a(Algo::ppo, env, plain, 5), b(Algo::ppo_ewma, env, ewma, 5);
        for (int i = 0; i < 6; ++i) {
            a.iterate();
            b.iterate();
            REQUIRE(a.policy_params() == b.policy_params());
        }
    }
}

TEST_CASE("with several gradient steps per iteration beta_prox = 0 departs from coupled-recent") {
    // The KL anchor moves with theta under beta_prox = 0 but stays put for coupled-recent.
    HyperParams plain = small(Algo::ppo);
    plain.family = ObjectiveFamily::klpen;
    plain.kl_coef = 1.0;
    HyperParams ewma = plain;
    ewma.coupling = Coupling::decoupled;
    ewma.prox_com = 0.0;
    Trainer a(Algo::ppo, EnvKind::windy_grid, plain, 5), b(Algo::ppo_ewma, EnvKind::windy_grid, ewma, 5);
    bool differ = false;
    for (int i = 0; i < 4 && !differ; ++i) {
        a.iterate();
        b.iterate();
        differ = !(a.policy_params() == b.policy_params());
    }
    CHECK(differ);
}

TEST_CASE("without staleness the three couplings coincide for PPO") {
    HyperParams hp = small(Algo::ppo);
    std::vector<ParamVector> finals;
    for (Coupling c : {Coupling::coupled_recent, Coupling::coupled_behav, Coupling::decoupled}) {
        hp.coupling = c;
        Trainer t(Algo::ppo, EnvKind::windy_grid, hp, 9);
        for (int i = 0; i < 4; ++i) t.iterate();
        finals.push_back(t.policy_params());
    }
    CHECK(finals[0] == finals[1]);
    CHECK(finals[0] == finals[2]);
}

TEST_CASE("staleness separates the couplings") {
    HyperParams hp = small(Algo::ppo);
    hp.staleness_delay = 2;
    std::vector<ParamVector> finals;
    for (Coupling c : {Coupling::coupled_recent, Coupling::coupled_behav, Coupling::decoupled}) {
        hp.coupling = c;
        Trainer t(Algo::ppo, EnvKind::windy_grid, hp, 9);
        for (int i = 0; i < 5; ++i) t.iterate();
        finals.push_back(t.policy_params());
    }
    CHECK_FALSE(finals[0] == finals[1]);
    CHECK_FALSE(finals[0] == finals[2]);
    CHECK_FALSE(finals[1] == finals[2]);
}

TEST_CASE("single step with one epoch, one minibatch and no clipping is a vanilla PG step") {
    HyperParams hp = small(Algo::ppo);
    hp.ppo_epochs = 1;
    hp.minibatches = 1;
    hp.clip_epsilon.reset();
    hp.kl_coef = 0.0;
    hp.entropy_coef = 0.0;
    hp.value_coef = 0.0;
    hp.reward_normalize = false;
    hp.adv_normalize = false;
    const std::uint64_t seed = 21;
    Trainer trainer(Algo::ppo, EnvKind::corridor, hp, seed);
    const ParamVector theta0 = trainer.policy_params();
    trainer.iterate();

    // Independent replay of the first iteration from the same generator streams.
    VecEnv envs(EnvKind::corridor, hp.n_env);
    const Mlp net(NetArchitecture(envs.observation_dim(), hp.hidden, Heads{envs.action_count(), true, false}));
    REQUIRE(net.init_params(seed) == theta0);
    Rng env_rng = make_rng(seed, 1), action_rng = make_rng(seed, 2);
    const RolloutBatch batch = envs.collect(net, theta0, hp.horizon, action_rng, env_rng);
    const NetOutput out = net.forward(theta0, batch.obs);
    const auto boot = net.forward(theta0, batch.bootstrap_obs).value;
    const auto adv = gae(batch, out.value, boot, hp.gamma, hp.lambda).adv;
    const auto theta = CategoricalDist::from_logits(out.logits);
    const auto behav = dist_from_log_probs(batch.behav_log_probs);
    const ObjectiveInputs in{theta, theta, behav, batch.actions, adv, 0.0, std::nullopt, hp.ratio_cap};
    const auto pg = vanilla_pg(in);
    const auto grad = net.backward(theta0, batch.obs, pg.d_logits, std::vector<double>(batch.size(), 0.0));
    ParamVector expected = theta0;
    AdamState adam = AdamState::zeros(expected, AdamConfig{hp.step_size, hp.adam_beta1, hp.adam_beta2, hp.adam_epsilon});
    adam_step(adam, expected, grad);

    CHECK(max_abs_diff(trainer.policy_params(), expected) < 1e-12);
    CHECK(max_abs_diff(trainer.policy_params(), theta0) > 1e-6);
}

TEST_CASE("PPG phase accounting") {
    HyperParams hp = small(Algo::ppg);
    Trainer t(Algo::ppg, EnvKind::corridor, hp, 2);
    const std::size_t per_iter = static_cast<std::size_t>(hp.iteration_batch());
    for (int phase = 0; phase < 2; ++phase) {
        for (int k = 1; k < hp.n_pi; ++k) {
            t.iterate();
            CHECK(t.phase_buffer_size() == static_cast<std::size_t>(k) * per_iter);
            CHECK(t.aux_phases_run() == phase);
        }
        t.iterate();
        CHECK(t.phase_buffer_size() == 0);
        CHECK(t.aux_phases_run() == phase + 1);
    }
    CHECK(t.policy_steps() == 2 * hp.n_pi * hp.minibatches * hp.policy_epochs);
}

TEST_CASE("phase batch size is invariant under batch-size adjustment") {
    const HyperParams hp = algo_defaults(Algo::ppg_ewma);
    for (double c : {2.0, 4.0, 16.0}) CHECK(adjust(hp, c).phase_batch() == hp.phase_batch());
}

TEST_CASE("empty auxiliary phases make the phase length irrelevant") {
    HyperParams one = small(Algo::ppg);
    one.n_pi = 1;
    one.aux_epochs = 0;
    HyperParams five = one;
    five.n_pi = 5;
    Trainer a(Algo::ppg, EnvKind::windy_grid, one, 4), b(Algo::ppg, EnvKind::windy_grid, five, 4);
    for (int i = 0; i < 5; ++i) {
        a.iterate();
        b.iterate();
    }
    CHECK(a.aux_phases_run() == 5);
    CHECK(b.aux_phases_run() == 1);
    CHECK(a.policy_params() == b.policy_params());
    CHECK(a.value_params() == b.value_params());
}

TEST_CASE("PPG-EWMA restarts the proximal average at every policy phase") {
    HyperParams hp = small(Algo::ppg_ewma);
    hp.n_pi = 1;
    hp.aux_epochs = 0;
    hp.minibatches = 1;
    hp.prox_com = 3.0;
    const double beta = com_to_beta(hp.prox_com);
    Trainer t(Algo::ppg_ewma, EnvKind::corridor, hp, 6);
    for (int i = 0; i < 4; ++i) {
        const ParamVector start = t.policy_params();
        t.iterate();
        const ParamVector& end = t.policy_params();
        const auto prox = t.proximal_params();
        REQUIRE(prox);
        double err = 0.0;
        for (std::size_t j = 0; j < end.size(); ++j) {
            err = std::max(err, std::abs((*prox)[j] - (end[j] + beta * start[j]) / (1.0 + beta)));
        }
        CHECK(err < 1e-12);
    }
}

TEST_CASE("records: env_steps accounting, diagnostics and determinism") {
    const HyperParams hp = small(Algo::ppo);
    const auto a = run(Algo::ppo, EnvKind::corridor, hp, 3, 10 * hp.iteration_batch());
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].iteration == static_cast<int>(i));
        CHECK(a[i].env_steps == static_cast<std::int64_t>(i + 1) * hp.n_env * hp.horizon);
        CHECK(std::isfinite(a[i].policy_loss));
        CHECK(a[i].clip_frac >= 0.0);
        CHECK(a[i].clip_frac <= 1.0);
        CHECK(a[i].kl_behav >= 0.0);
        CHECK(a[i].max_ratio > 0.0);
    }
    const auto b = run(Algo::ppo, EnvKind::corridor, hp, 3, 10 * hp.iteration_batch());
    CHECK(run_csv(a) == run_csv(b));
    const auto c = run(Algo::ppo, EnvKind::corridor, hp, 4, 10 * hp.iteration_batch());
    CHECK(run_csv(a) != run_csv(c));
}

TEST_CASE("run: step budget") {
    const HyperParams hp = small(Algo::ppo);
    CHECK(run(Algo::ppo, EnvKind::corridor, hp, 1, 0).empty());
    CHECK_THROWS_AS(run(Algo::ppo, EnvKind::corridor, hp, 1, hp.iteration_batch() + 1), std::invalid_argument);
    CHECK_THROWS_AS(run(Algo::ppo, EnvKind::corridor, hp, 1, -hp.iteration_batch()), std::invalid_argument);
}

TEST_CASE("staleness warm-up records no optimization") {
    HyperParams hp = small(Algo::ppo);
    hp.staleness_delay = 2;
    Trainer t(Algo::ppo, EnvKind::corridor, hp, 1);
    const ParamVector theta0 = t.policy_params();
    for (int i = 0; i < 2; ++i) {
        const auto rec = t.iterate();
        CHECK(std::isnan(rec.policy_loss));
        CHECK(t.policy_params() == theta0);
    }
    const auto rec = t.iterate();
    CHECK(std::isfinite(rec.policy_loss));
    CHECK(rec.env_steps == 3 * hp.iteration_batch());
    CHECK(t.policy_steps() == hp.ppo_epochs * hp.minibatches);
}

TEST_CASE("invalid algorithm configurations are rejected") {
    HyperParams hp = small(Algo::ppo_ewma);
    hp.coupling = Coupling::coupled_recent;
    CHECK_THROWS_AS(Trainer(Algo::ppo_ewma, EnvKind::corridor, hp, 1), std::invalid_argument);
    HyperParams scaled = adjust(small(Algo::ppo), 2.0);
    scaled.ppo_epochs = 3;
    CHECK_THROWS_AS(Trainer(Algo::ppo, EnvKind::corridor, scaled, 1), std::invalid_argument);
    CHECK_THROWS_AS(parse_algo("trpo"), std::invalid_argument);
    for (Algo a : {Algo::ppo, Algo::ppo_ewma, Algo::ppg, Algo::ppg_ewma}) CHECK(parse_algo(to_string(a)) == a);
}

TEST_CASE("final return averages the last tenth of env steps") {
    std::vector<RunRecord> recs(20);
    for (int i = 0; i < 20; ++i) {
        recs[static_cast<std::size_t>(i)].env_steps = (i + 1) * 100;
        recs[static_cast<std::size_t>(i)].mean_episode_return = i < 18 ? 0.0 : 1.0 + i;
    }
    CHECK(final_return(recs) == doctest::Approx((19.0 + 20.0) / 2.0));
    recs.back().mean_episode_return = std::numeric_limits<double>::quiet_NaN();
    CHECK(final_return(recs) == doctest::Approx(19.0));
    CHECK(std::isnan(final_return({})));
}

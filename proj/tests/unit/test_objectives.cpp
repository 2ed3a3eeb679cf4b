#include <cmath>
#include <limits>

#include "doctest.h"
#include "objective_fixtures.hpp"
#include "ppoewma/objectives.hpp"

using namespace ppoewma;
using fixture::ObjectiveInstance;

namespace {

ObjectiveInputs inputs(const ObjectiveInstance& inst, const CategoricalDist& theta, double kl_coef,
                       std::optional<double> eps, double cap = 100.0) {
    return ObjectiveInputs{theta, inst.prox, inst.behav, inst.actions, inst.adv, kl_coef, eps, cap};
}

void check_same(const ObjectiveOutput& a, const ObjectiveOutput& b, double tol) {
    CHECK(std::abs(a.loss - b.loss) <= tol);
    REQUIRE(a.d_logits.storage().size() == b.d_logits.storage().size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.d_logits.storage().size(); ++i) {
        worst = std::max(worst, std::abs(a.d_logits.storage()[i] - b.d_logits.storage()[i]));
    }
    CHECK(worst <= tol);
}

}  // namespace

TEST_CASE("every objective's logit gradient matches central differences") {
    Rng rng = make_rng(1, 1);
    const std::optional<double> eps = 0.2;
    struct Case {
        const char* name;
        fixture::Objective fn;
        double kl;
        std::optional<double> eps;
    };
    const std::vector<Case> cases{
        {"vanilla", vanilla_pg, 0.0, std::nullopt},
        {"klpen-decoupled", klpen_decoupled, 0.7, std::nullopt},
        {"klpen-coupled-recent", [](const ObjectiveInputs& in) { return klpen_coupled(in, OldPolicy::recent); }, 0.7, std::nullopt},
        {"klpen-coupled-behav", [](const ObjectiveInputs& in) { return klpen_coupled(in, OldPolicy::behav); }, 0.7, std::nullopt},
        {"clip-decoupled", clip_decoupled, 0.0, eps},
        {"clip-decoupled+kl", clip_decoupled, 0.3, eps},
        {"clip-coupled-recent", [](const ObjectiveInputs& in) { return clip_coupled(in, OldPolicy::recent); }, 0.0, eps},
        {"clip-coupled-behav", [](const ObjectiveInputs& in) { return clip_coupled(in, OldPolicy::behav); }, 0.0, eps},
    };
    for (const auto& c : cases) {
        CAPTURE(c.name);
        int tested = 0;
        while (tested < 25) {
            const auto inst = fixture::random_instance(rng);
            const auto theta = CategoricalDist::from_logits(inst.theta_logits);
            if (fixture::near_kink(inst, theta, inst.prox, inst.behav, c.eps, 100.0) ||
                fixture::near_kink(inst, theta, inst.behav, inst.prox, c.eps, 100.0)) {
                continue;
            }
            CHECK(fixture::objective_fd_error(inst, c.fn, c.kl, c.eps, 100.0) < 1e-6);
            ++tested;
        }
    }
}

TEST_CASE("clipping is active on some samples of the fixtures") {
    Rng rng = make_rng(2, 2);
    const auto inst = fixture::random_instance(rng, 200);
    const auto theta = CategoricalDist::from_logits(inst.theta_logits);
    const auto out = clip_decoupled(inputs(inst, theta, 0.0, 0.2));
    CHECK(out.diagnostics.clip_fraction > 0.05);
    CHECK(out.diagnostics.clip_fraction < 0.95);
}

TEST_CASE("decoupled objectives with prox = behav equal the coupled ones") {
    Rng rng = make_rng(3, 3);
    for (int trial = 0; trial < 200; ++trial) {
        auto inst = fixture::random_instance(rng);
        inst.prox = inst.behav;
        const auto theta = CategoricalDist::from_logits(inst.theta_logits);
        check_same(clip_decoupled(inputs(inst, theta, 0.0, 0.2)),
                   clip_coupled(inputs(inst, theta, 0.0, 0.2), OldPolicy::behav), 1e-12);
        check_same(klpen_decoupled(inputs(inst, theta, 0.5, std::nullopt)),
                   klpen_coupled(inputs(inst, theta, 0.5, std::nullopt), OldPolicy::behav), 1e-12);
    }
}

TEST_CASE("zero KL coefficient and no clipping recover vanilla PG") {
    Rng rng = make_rng(4, 4);
    for (int trial = 0; trial < 200; ++trial) {
        const auto inst = fixture::random_instance(rng);
        const auto theta = CategoricalDist::from_logits(inst.theta_logits);
        const auto vanilla = vanilla_pg(inputs(inst, theta, 0.0, std::nullopt));
        check_same(klpen_decoupled(inputs(inst, theta, 0.0, std::nullopt)), vanilla, 1e-12);
        check_same(clip_decoupled(inputs(inst, theta, 0.0, std::nullopt)), vanilla, 1e-12);
    }
}

TEST_CASE("vanilla PG value is the importance-weighted mean advantage") {
    Rng rng = make_rng(5, 5);
    const auto inst = fixture::random_instance(rng, 7);
    const auto theta = CategoricalDist::from_logits(inst.theta_logits);
    const auto out = vanilla_pg(inputs(inst, theta, 0.0, std::nullopt));
    double expected = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
        const auto a = static_cast<std::size_t>(inst.actions[i]);
        expected += std::exp(theta.log_prob(i, a)) / std::exp(inst.behav.log_prob(i, a)) * inst.adv[i];
    }
    CHECK(out.loss == doctest::Approx(-expected / 7).epsilon(1e-12));
}

TEST_CASE("at theta = prox = behav the clipped gradient is the plain policy gradient") {
    Rng rng = make_rng(6, 6);
    auto inst = fixture::random_instance(rng);
    const auto theta = CategoricalDist::from_logits(inst.theta_logits);
    inst.prox = theta;
    inst.behav = theta;
    const auto out = clip_decoupled(inputs(inst, theta, 0.0, 0.2));
    CHECK(out.diagnostics.clip_fraction == 0.0);
    CHECK(out.diagnostics.kl_prox == 0.0);
    CHECK(out.diagnostics.max_ratio == doctest::Approx(1.0));
    check_same(out, vanilla_pg(inputs(inst, theta, 0.0, std::nullopt)), 1e-15);
}

TEST_CASE("clipped samples contribute no gradient") {
    // One sample, positive advantage, ratio far above 1 + eps.
    Matrix z(1, 2);
    z(0, 0) = 2.0;
    const auto theta = CategoricalDist::from_logits(z);
    const auto prox = CategoricalDist::from_logits(Matrix(1, 2));
    const std::vector<int> a{0};
    const std::vector<double> adv{1.0};
    const auto out = clip_decoupled(ObjectiveInputs{theta, prox, prox, a, adv, 0.0, 0.2});
    CHECK(out.diagnostics.clip_fraction == 1.0);
    CHECK(out.loss == doctest::Approx(-1.2));
    CHECK(out.d_logits(0, 0) == 0.0);
    CHECK(out.d_logits(0, 1) == 0.0);
    // Negative advantage: the unclipped branch is the minimum, gradient flows.
    const std::vector<double> neg{-1.0};
    const auto out2 = clip_decoupled(ObjectiveInputs{theta, prox, prox, a, neg, 0.0, 0.2});
    CHECK(out2.diagnostics.clip_fraction == 0.0);
    CHECK(out2.d_logits(0, 0) != 0.0);
}

TEST_CASE("the prox/behav weight scales the clipped objective") {
    Matrix zp(1, 2), zb(1, 2);
    zb(0, 0) = std::log(0.5 / 0.5);  // behav uniform
    zp(0, 0) = std::log(3.0);        // prox: p(0) = 0.75
    const auto prox = CategoricalDist::from_logits(zp);
    const auto behav = CategoricalDist::from_logits(zb);
    const std::vector<int> a{0};
    const std::vector<double> adv{2.0};
    const auto out = clip_decoupled(ObjectiveInputs{prox, prox, behav, a, adv, 0.0, 0.2});
    CHECK(out.loss == doctest::Approx(-(0.75 / 0.5) * 2.0).epsilon(1e-12));
}

TEST_CASE("ratio cap bounds the importance weight and zeroes its gradient") {
    Matrix zt(1, 2), zb(1, 2);
    zt(0, 0) = 10.0;
    zb(0, 0) = -10.0;
    const auto theta = CategoricalDist::from_logits(zt);
    const auto behav = CategoricalDist::from_logits(zb);
    const std::vector<int> a{0};
    const std::vector<double> adv{1.0};
    const auto out = vanilla_pg(ObjectiveInputs{theta, theta, behav, a, adv, 0.0, std::nullopt, 100.0});
    CHECK(out.loss == doctest::Approx(-100.0));
    CHECK(out.d_logits(0, 0) == 0.0);
    CHECK(out.diagnostics.max_ratio > 100.0);
}

TEST_CASE("non-finite inputs are reported with the sample index") {
    Matrix lp(2, 2, std::log(0.5));
    lp(1, 0) = -std::numeric_limits<double>::infinity();
    lp(1, 1) = 0.0;
    const auto behav = dist_from_log_probs(lp);
    const auto theta = CategoricalDist::from_logits(Matrix(2, 2));
    const std::vector<int> a{0, 0};
    const std::vector<double> adv{1.0, 1.0};
    try {
        vanilla_pg(ObjectiveInputs{theta, theta, behav, a, adv});
        FAIL("expected an exception");
    } catch (const std::domain_error& e) {
        CHECK(std::string(e.what()).find("sample 1") != std::string::npos);
    }
    const std::vector<double> bad{1.0, std::nan("")};
    CHECK_THROWS_AS(vanilla_pg(ObjectiveInputs{theta, theta, theta, a, bad}), std::domain_error);
    const std::vector<int> out_of_range{0, 2};
    CHECK_THROWS_AS(vanilla_pg(ObjectiveInputs{theta, theta, theta, out_of_range, adv}), std::invalid_argument);
}

TEST_CASE("entropy bonus gradient matches central differences") {
    Rng rng = make_rng(7, 7);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix z = oracle::random_matrix(5, 4, rng, 2.0);
        auto loss = [&](const std::vector<double>& x) {
            Matrix m = z;
            std::copy(x.begin(), x.end(), m.storage().begin());
            return entropy_bonus(CategoricalDist::from_logits(m), 0.01).loss;
        };
        const auto out = entropy_bonus(CategoricalDist::from_logits(z), 0.01);
        CHECK(oracle::max_rel_error(out.d_logits.storage(), oracle::fd_gradient(loss, z.storage())) < 1e-8);
    }
}

TEST_CASE("value loss and gradient") {
    const std::vector<double> pred{1.0, 2.0, 4.0}, target{0.0, 2.0, 1.0};
    const auto out = value_loss(pred, target);
    CHECK(out.loss == doctest::Approx(0.5 * (1.0 + 0.0 + 9.0) / 3));
    CHECK(out.grad[0] == doctest::Approx(1.0 / 3));
    CHECK(out.grad[2] == doctest::Approx(3.0 / 3));
    CHECK(value_loss({}, {}).loss == 0.0);
}

TEST_CASE("aux phase loss: value distillation plus behavioral cloning") {
    Rng rng = make_rng(8, 8);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix z = oracle::random_matrix(6, 3, rng);
        const auto frozen = CategoricalDist::from_logits(oracle::random_matrix(6, 3, rng));
        const auto pred = oracle::random_vector(6, rng);
        const auto targets = oracle::random_vector(6, rng);
        auto loss = [&](const std::vector<double>& x) {
            Matrix m = z;
            std::copy(x.begin(), x.begin() + 18, m.storage().begin());
            const std::vector<double> p(x.begin() + 18, x.end());
            return aux_phase_loss(CategoricalDist::from_logits(m), frozen, p, targets, 1.5).loss;
        };
        std::vector<double> x = z.storage();
        x.insert(x.end(), pred.begin(), pred.end());
        const auto out = aux_phase_loss(CategoricalDist::from_logits(z), frozen, pred, targets, 1.5);
        std::vector<double> analytic = out.d_logits.storage();
        analytic.insert(analytic.end(), out.d_aux_value.begin(), out.d_aux_value.end());
        CHECK(oracle::max_rel_error(analytic, oracle::fd_gradient(loss, x)) < 1e-8);
        CHECK(out.loss == doctest::Approx(out.distill_loss + 1.5 * out.clone_kl));
    }
    const auto same = CategoricalDist::from_logits(Matrix(2, 3));
    const std::vector<double> v{1.0, 1.0};
    CHECK(aux_phase_loss(same, same, v, v, 1.0).loss == 0.0);
}

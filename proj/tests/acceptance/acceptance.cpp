// Acceptance run: one PASS/FAIL line per criterion. Thresholds are pinned in
// the manifest below; the ordinal criteria use the configurations under
// configs/ at full desk scale.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "objective_fixtures.hpp"
#include "oracles.hpp"
#include "ppoewma/experiments.hpp"
#include "ppoewma/objectives.hpp"
#include "ppoewma/optim.hpp"
#include "ppoewma/rollout.hpp"

using namespace ppoewma;

namespace manifest {

// 1. gradient correctness
constexpr int fd_instances = 100;
constexpr double fd_max_rel_error = 1e-4;
constexpr double fd_runtime_s = 60.0;
// 2. decoupling identities
constexpr int identity_batches = 1000;
constexpr double identity_tolerance = 1e-12;
// 3. EWMA exactness
constexpr int ewma_steps = 10000;
constexpr double ewma_tolerance = 1e-10;
constexpr double round_trip_tolerance = 1e-12;
constexpr double com_0889_lo = 8.0, com_0889_hi = 8.02;
// 4. adjustment calculator
constexpr int group_action_trials = 1000;
constexpr double group_action_tolerance = 1e-10;
// 5. GAE
constexpr int gae_cases = 1000;
constexpr int gae_max_length = 8;
constexpr double gae_tolerance = 1e-12;
// 6. staleness
constexpr int staleness_delay = 4;
constexpr double staleness_relative_band = 0.25;
constexpr double staleness_runtime_s = 30 * 60.0;
// 7. batch size
constexpr double batchsize_runtime_s = 60 * 60.0;
constexpr double batchsize_largest_divisor = 16.0;
// 8. sqrt vs linear
constexpr double linear_divisor = 16.0;
// 11. learning sanity
constexpr double sanity_return = 0.9;
constexpr std::int64_t sanity_steps = 200000;

}  // namespace manifest

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::filesystem::path config_path(const std::string& name) {
    return std::filesystem::path(PPOEWMA_SOURCE_DIR) / "configs" / name;
}

ObjectiveInputs inputs(const fixture::ObjectiveInstance& inst, const CategoricalDist& theta, double kl,
                       std::optional<double> eps) {
    return ObjectiveInputs{theta, inst.prox, inst.behav, inst.actions, inst.adv, kl, eps, 100.0};
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

double output_diff(const ObjectiveOutput& a, const ObjectiveOutput& b) {
    return std::max(std::abs(a.loss - b.loss), max_abs_diff(a.d_logits.storage(), b.d_logits.storage()));
}

Outcome gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng = make_rng(101, 1);
    const std::optional<double> eps = 0.2;
    struct Case {
        const char* name;
        fixture::Objective fn;
        double kl;
        std::optional<double> eps;
    };
    const std::vector<Case> cases{
        {"vanilla", vanilla_pg, 0.0, std::nullopt},
        {"klpen/coupled-recent", [](const ObjectiveInputs& in) { return klpen_coupled(in, OldPolicy::recent); }, 0.7,
         std::nullopt},
        {"klpen/coupled-behav", [](const ObjectiveInputs& in) { return klpen_coupled(in, OldPolicy::behav); }, 0.7,
         std::nullopt},
        {"klpen/decoupled", klpen_decoupled, 0.7, std::nullopt},
        {"clip/coupled-recent", [](const ObjectiveInputs& in) { return clip_coupled(in, OldPolicy::recent); }, 0.0, eps},
        {"clip/coupled-behav", [](const ObjectiveInputs& in) { return clip_coupled(in, OldPolicy::behav); }, 0.0, eps},
        {"clip/decoupled", clip_decoupled, 0.0, eps},
    };
    double worst = 0.0;
    std::string worst_name = "none";
    auto record = [&](const std::string& name, double err) {
        if (!(err <= worst)) {
            worst = err;
            worst_name = name;
        }
    };
    for (const auto& c : cases) {
        for (int tested = 0; tested < manifest::fd_instances;) {
            const auto inst = fixture::random_instance(rng);
            const auto theta = CategoricalDist::from_logits(inst.theta_logits);
            if (fixture::near_kink(inst, theta, inst.prox, inst.behav, c.eps, 100.0) ||
                fixture::near_kink(inst, theta, inst.behav, inst.prox, c.eps, 100.0)) {
                continue;
            }
            record(c.name, fixture::objective_fd_error(inst, c.fn, c.kl, c.eps, 100.0));
            ++tested;
        }
    }
    for (int i = 0; i < manifest::fd_instances; ++i) {
        const auto pred = oracle::random_vector(10, rng), target = oracle::random_vector(10, rng);
        auto loss = [&](const std::vector<double>& x) { return value_loss(x, target).loss; };
        record("value", oracle::max_rel_error(value_loss(pred, target).grad, oracle::fd_gradient(loss, pred)));
    }
    for (int i = 0; i < manifest::fd_instances; ++i) {
        const Matrix z = oracle::random_matrix(6, 3, rng);
        const auto frozen = CategoricalDist::from_logits(oracle::random_matrix(6, 3, rng));
        const auto pred = oracle::random_vector(6, rng), targets = oracle::random_vector(6, rng);
        auto loss = [&](const std::vector<double>& x) {
            Matrix m = z;
            std::copy(x.begin(), x.begin() + 18, m.storage().begin());
            const std::vector<double> p(x.begin() + 18, x.end());
            return aux_phase_loss(CategoricalDist::from_logits(m), frozen, p, targets, 1.0).loss;
        };
        std::vector<double> x = z.storage();
        x.insert(x.end(), pred.begin(), pred.end());
        const auto out = aux_phase_loss(CategoricalDist::from_logits(z), frozen, pred, targets, 1.0);
        std::vector<double> analytic = out.d_logits.storage();
        analytic.insert(analytic.end(), out.d_aux_value.begin(), out.d_aux_value.end());
        record("aux", oracle::max_rel_error(analytic, oracle::fd_gradient(loss, x)));
    }
    // Through the network: clipped decoupled policy loss plus value loss.
    const Mlp net(NetArchitecture(5, {6}, Heads{3, true, false}));
    for (int i = 0, tested = 0; tested < manifest::fd_instances; ++i) {
        const ParamVector p0 = net.init_params(1000 + static_cast<std::uint64_t>(i));
        const Matrix obs = oracle::random_matrix(8, 5, rng);
        auto inst = fixture::random_instance(rng, 8, 3);
        const auto target = oracle::random_vector(8, rng);
        auto evaluate = [&](const ParamVector& p, ObjectiveOutput* pol, RegressionLoss* val) {
            const auto out = net.forward(p, obs);
            const auto o = clip_decoupled(inputs(inst, CategoricalDist::from_logits(out.logits), 0.0, eps));
            const auto v = value_loss(out.value, target);
            if (pol) *pol = o;
            if (val) *val = v;
            return o.loss + v.loss;
        };
        ObjectiveOutput pol;
        RegressionLoss val;
        evaluate(p0, &pol, &val);
        const auto theta = CategoricalDist::from_logits(net.forward(p0, obs).logits);
        if (fixture::near_kink(inst, theta, inst.prox, inst.behav, eps, 100.0)) continue;
        const auto grad = net.backward(p0, obs, pol.d_logits, val.grad);
        auto loss = [&](const std::vector<double>& x) {
            ParamVector p = p0;
            std::copy(x.begin(), x.end(), p.values().begin());
            return evaluate(p, nullptr, nullptr);
        };
        const std::vector<double> x(p0.values().begin(), p0.values().end());
        const std::vector<double> g(grad.values().begin(), grad.values().end());
        record("network", oracle::max_rel_error(g, oracle::fd_gradient(loss, x)));
        ++tested;
    }
    const double secs = seconds_since(t0);
    return {worst < manifest::fd_max_rel_error && secs < manifest::fd_runtime_s,
            "max relative error " + fmt(worst) + " (" + worst_name + "), " + fmt(secs, 3) + " s"};
}

Outcome decoupling_identities() {
    Rng rng = make_rng(102, 2);
    double worst = 0.0;
    for (int trial = 0; trial < manifest::identity_batches; ++trial) {
        auto inst = fixture::random_instance(rng);
        const auto theta = CategoricalDist::from_logits(inst.theta_logits);
        const auto vanilla = vanilla_pg(inputs(inst, theta, 0.0, std::nullopt));
        worst = std::max(worst, output_diff(klpen_decoupled(inputs(inst, theta, 0.0, std::nullopt)), vanilla));
        worst = std::max(worst, output_diff(clip_decoupled(inputs(inst, theta, 0.0, std::nullopt)), vanilla));
        inst.prox = inst.behav;
        worst = std::max(worst, output_diff(clip_decoupled(inputs(inst, theta, 0.0, 0.2)),
                                            clip_coupled(inputs(inst, theta, 0.0, 0.2), OldPolicy::behav)));
        worst = std::max(worst, output_diff(klpen_decoupled(inputs(inst, theta, 0.5, std::nullopt)),
                                            klpen_coupled(inputs(inst, theta, 0.5, std::nullopt), OldPolicy::behav)));
    }
    return {worst <= manifest::identity_tolerance, "max deviation " + fmt(worst) + " over " +
                                                       std::to_string(manifest::identity_batches) + " batches"};
}

Outcome ewma_exactness() {
    double worst = 0.0;
    for (double beta : {0.0, 0.5, 0.889, 0.999}) {
        Rng rng = make_rng(103, static_cast<std::uint64_t>(beta * 1000));
        ParamVector theta({LayerDesc{"x", 1, 1, 0}});
        theta[0] = oracle::random_vector(1, rng)[0];
        std::vector<double> history{theta[0]};
        EwmaState e(theta, beta);
        for (int k = 0; k < manifest::ewma_steps; ++k) {
            theta[0] += oracle::random_vector(1, rng, 0.1)[0];
            history.push_back(theta[0]);
            e.update(theta);
            if (k % 101 == 0 || k + 1 == manifest::ewma_steps) {
                worst = std::max(worst, std::abs(e.average()[0] - oracle::closed_form_ewma(history, beta)));
            }
        }
    }
    double round_trip = 0.0;
    for (double com : {0.0, 0.5, 1.0, 8.0, 32.0, 1000.0}) {
        round_trip = std::max(round_trip, std::abs(beta_to_com(com_to_beta(com)) - com) / std::max(1.0, com));
    }
    for (double ess : {1.0, 3.0, 32.0, 128.0, 65536.0}) {
        round_trip = std::max(round_trip, std::abs(decay_to_ess(ess_to_decay(ess)) - ess) / ess);
    }
    const double com = beta_to_com(0.889);
    const bool ok = worst <= manifest::ewma_tolerance && round_trip <= manifest::round_trip_tolerance &&
                    com >= manifest::com_0889_lo && com <= manifest::com_0889_hi;
    return {ok, "incremental vs closed form " + fmt(worst) + ", round trips " + fmt(round_trip) + ", com(0.889) = " +
                    fmt(com, 6)};
}

Outcome adjustment_calculator() {
    HyperParams hp = algo_defaults(Algo::ppg_ewma);
    hp.step_size = 5e-4;
    hp.prox_com = 8.0;
    hp.n_pi = 8;
    hp.adv_norm_ess = 32.0;
    const auto out = adjust(hp, 4.0);
    const bool exact = out.step_size == 2.5e-4 && out.prox_com == 32.0 && out.n_pi == 32 && out.adv_norm_ess == 128.0;

    HyperParams wide = hp;
    wide.n_env = 1 << 14;
    Rng rng = make_rng(104, 4);
    std::uniform_real_distribution<double> u(std::log(0.25), std::log(16.0));
    double worst = 0.0;
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); };
    for (int trial = 0; trial < manifest::group_action_trials; ++trial) {
        const double c1 = std::exp(u(rng)), c2 = std::exp(u(rng));
        for (StepRule rule : {StepRule::adam_sqrt, StepRule::adam_linear, StepRule::sgd_linear}) {
            Adjustments adj;
            adj.adam_betas = true;
            const auto two = scale_for_batch_divisor(scale_for_batch_divisor(wide, c1, rule, adj), c2, rule, adj);
            const auto one = scale_for_batch_divisor(wide, c1 * c2, rule, adj);
            worst = std::max({worst, rel(two.step_size, one.step_size), rel(two.prox_com, one.prox_com),
                              rel(two.adv_norm_ess, one.adv_norm_ess), rel(two.batch_scale, one.batch_scale),
                              std::abs(two.adam_beta1 - one.adam_beta1), std::abs(two.adam_beta2 - one.adam_beta2)});
        }
    }
    return {exact && worst <= manifest::group_action_tolerance,
            std::string("c = 4: ") + (exact ? "exact" : "mismatch") + " (step " + fmt(out.step_size) + ", com " +
                fmt(out.prox_com) + ", n_pi " + std::to_string(out.n_pi) + ", ess " + fmt(out.adv_norm_ess) +
                "), group action deviation " + fmt(worst)};
}

Outcome gae_oracle() {
    Rng rng = make_rng(105, 5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < manifest::gae_cases; ++trial) {
        const std::size_t len = 1 + static_cast<std::size_t>(trial % manifest::gae_max_length);
        const double gamma = u(rng), lambda = u(rng);
        const auto r = oracle::random_vector(len, rng);
        const auto v = oracle::random_vector(len, rng);
        const double last = oracle::random_vector(1, rng)[0];
        const bool terminal = u(rng) < 0.5;
        std::vector<double> next(len);
        for (std::size_t t = 0; t < len; ++t) next[t] = t + 1 < len ? v[t + 1] : last;
        std::vector<std::uint8_t> term(len, 0), boundary(len, 0);
        term[len - 1] = terminal ? 1 : 0;
        boundary[len - 1] = 1;
        const auto out = gae(r, v, next, term, boundary, gamma, lambda);
        worst = std::max(worst, max_abs_diff(out.adv, oracle::brute_force_gae(r, v, last, terminal, gamma, lambda)));
    }
    return {worst <= manifest::gae_tolerance,
            "max deviation " + fmt(worst) + " over " + std::to_string(manifest::gae_cases) + " episodes"};
}

Outcome staleness() {
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = load_config(config_path("staleness.conf"));
    cfg.delays = {0, manifest::staleness_delay};
    cfg.couplings = {Coupling::coupled_recent, Coupling::decoupled};
    const auto res = cmd_staleness(cfg);
    const double secs = seconds_since(t0);
    const auto* d0 = res.find(Coupling::decoupled, 0);
    const auto* d4 = res.find(Coupling::decoupled, manifest::staleness_delay);
    const double dec_drop = res.drop(Coupling::decoupled, manifest::staleness_delay).value();
    const double rec_drop = res.drop(Coupling::coupled_recent, manifest::staleness_delay).value();
    const bool within = std::abs(d4->mean - d0->mean) <= manifest::staleness_relative_band * std::abs(d0->mean);
    const bool ok = within && rec_drop > dec_drop && secs < manifest::staleness_runtime_s;
    return {ok, "decoupled " + fmt(d0->mean) + " -> " + fmt(d4->mean) + ", drops coupled-recent " + fmt(rec_drop) +
                    " vs decoupled " + fmt(dec_drop) + ", " + std::to_string(res.output.runs.size()) + " runs in " +
                    fmt(secs, 3) + " s"};
}

Outcome batchsize() {
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = load_config(config_path("batchsize.conf"));
    cfg.ablation_divisors = std::vector<double>{manifest::batchsize_largest_divisor};
    cfg.reference_kl_coef.reset();
    const auto res = cmd_batchsize(cfg);
    const double secs = seconds_since(t0);
    bool ok = secs < manifest::batchsize_runtime_s;
    std::string detail;
    for (double c : {4.0, 16.0}) {
        const double adj = res.gap("adjusted", c).value(), un = res.gap("unadjusted", c).value();
        ok = ok && adj < un;
        detail += "c = " + fmt(c) + ": adjusted " + fmt(adj) + " vs unadjusted " + fmt(un) + "; ";
    }
    std::string largest;
    double largest_gap = -1.0;
    for (const char* arm : {"no-lr", "no-ewma", "no-advnorm", "no-npi"}) {
        const double g = res.gap(arm, manifest::batchsize_largest_divisor).value();
        if (g > largest_gap) {
            largest_gap = g;
            largest = arm;
        }
    }
    ok = ok && largest == "no-lr";
    detail += "largest ablation gap at c = 16: " + largest + " " + fmt(largest_gap) + "; " +
              std::to_string(res.output.runs.size()) + " runs in " + fmt(secs, 3) + " s";
    return {ok, detail};
}

Outcome sqrt_vs_linear() {
    auto cfg = load_config(config_path("linear_lr.conf"));
    cfg.divisors = {1.0, manifest::linear_divisor};
    const auto res = cmd_linear_lr(cfg);
    const double sq = res.gap("adjusted", manifest::linear_divisor, StepRule::adam_sqrt).value();
    const double lin = res.gap("adjusted", manifest::linear_divisor, StepRule::adam_linear).value();
    return {sq <= lin, "c = 16: sqrt " + fmt(sq) + " vs linear " + fmt(lin)};
}

Outcome com_kl_grid() {
    const auto cfg = load_config(config_path("com_kl_grid.conf"));
    const auto res = cmd_com_kl_grid(cfg);
    const auto& s = res.stats;
    const bool four_by_four = cfg.coms.size() == 4 && cfg.kl_coefs.size() == 4;
    return {four_by_four && s.diagonal_mean_abs_diff < s.off_diagonal_mean_abs_diff,
            "diagonal " + fmt(s.diagonal_mean_abs_diff) + " vs off-diagonal " + fmt(s.off_diagonal_mean_abs_diff) +
                ", band correlation " + fmt(s.band_correlation)};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome determinism() {
    const std::string hparams = "[hparams]\nn_env = 4\nhorizon = 32\nhidden = 16\nn_pi = 2\naux_epochs = 1\n";
    const std::vector<std::pair<std::string, std::string>> configs{
        {"run", "[experiment]\nkind = run\nenv = windy-grid\nalgo = ppg-ewma\nseeds = 1,2,3\ntotal_steps = 2048\n" +
                    hparams},
        {"staleness", "[experiment]\nkind = staleness\nenv = windy-grid\nseeds = 1,2\ntotal_steps = 2048\n" + hparams +
                          "[sweep]\ndelays = 0,2\n"},
        {"batchsize", "[experiment]\nkind = batchsize\nenv = corridor\nalgo = ppg-ewma\nseeds = 1,2\ntotal_steps = "
                      "2048\n" + hparams + "[sweep]\ndivisors = 1,2\nreference_kl_coef = 0.01\n"},
        {"linear-lr", "[experiment]\nkind = linear-lr\nenv = corridor\nalgo = ppg-ewma\nseeds = 1\ntotal_steps = "
                      "2048\n" + hparams + "[sweep]\ndivisors = 1,2\n"},
        {"headtohead", "[experiment]\nkind = headtohead\nseeds = 1,2\ntotal_steps = 1024\n" + hparams},
        {"com-kl-grid", "[experiment]\nkind = com-kl-grid\nenv = windy-grid\nalgo = ppo-ewma\nseeds = 1\ntotal_steps = "
                        "1024\n" + hparams + "family = klpen\n[sweep]\ncoms = 4,2\nkl_coefs = 1,2\n"},
        {"gradcheck", "[experiment]\nkind = gradcheck\n[sweep]\ngradcheck_instances = 5\n"},
    };
    const auto dir = std::filesystem::temp_directory_path() / "ppoewma_acceptance_determinism";
    std::size_t files = 0;
    std::string failed;
    for (const auto& [name, text] : configs) {
        const auto cfg = parse_config(text, name + ".conf");
        const auto serial = run_experiment(cfg, 1);
        std::filesystem::remove_all(dir);
        write_outputs(serial, dir);
        for (int jobs : {2, 4}) {
            const auto again = run_experiment(cfg, jobs);
            if (again.files != serial.files) failed += name + "(jobs " + std::to_string(jobs) + ") ";
        }
        for (const auto& [rel, content] : serial.files) {
            ++files;
            if (slurp(dir / rel) != content) failed += name + ":" + rel + " ";
        }
    }
    std::filesystem::remove_all(dir);
    return {failed.empty(), failed.empty() ? std::to_string(files) + " files identical across jobs 1, 2, 4 and reruns"
                                           : "differences in " + failed};
}

Outcome learning_sanity() {
    std::string detail;
    bool ok = true;
    for (const char* name : {"run_corridor_ppo.conf", "run_corridor_ppg_ewma.conf"}) {
        const auto cfg = load_config(config_path(name));
        ok = ok && cfg.total_steps <= manifest::sanity_steps && cfg.seeds.size() >= 3;
        const auto out = cmd_run(cfg);
        detail += to_string(*cfg.algo) + ":";
        for (const auto& r : out.runs) {
            ok = ok && r.final_return >= manifest::sanity_return;
            detail += " " + fmt(r.final_return);
        }
        detail += "; ";
    }
    detail += "threshold " + fmt(manifest::sanity_return);
    return {ok, detail};
}

}  // namespace

// With arguments, runs only the listed criterion numbers.
int main(int argc, char** argv) {
    struct Criterion {
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {"gradient correctness", gradient_correctness},
        {"decoupling identities", decoupling_identities},
        {"ewma exactness", ewma_exactness},
        {"adjustment calculator", adjustment_calculator},
        {"gae oracle equivalence", gae_oracle},
        {"staleness (windy-grid, 3 seeds)", staleness},
        {"batch-size invariance (ppg-ewma, 3 seeds)", batchsize},
        {"sqrt vs linear step rule", sqrt_vs_linear},
        {"com x kl grid banding", com_kl_grid},
        {"determinism across --jobs", determinism},
        {"learning sanity on corridor", learning_sanity},
    };
    std::vector<bool> selected(criteria.size(), argc <= 1);
    for (int a = 1; a < argc; ++a) {
        const int n = std::atoi(argv[a]);
        if (n < 1 || n > static_cast<int>(criteria.size())) {
            std::fprintf(stderr, "unknown criterion '%s'\n", argv[a]);
            return 2;
        }
        selected[static_cast<std::size_t>(n - 1)] = true;
    }
    int failures = 0, ran = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!selected[i]) continue;
        ++ran;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        if (!o.passed) ++failures;
        std::printf("%s  %2zu %-42s %s [%.1f s]\n", o.passed ? "PASS" : "FAIL", i + 1, criteria[i].name,
                    o.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
    }
    std::printf("%d of %d criteria passed\n", ran - failures, ran);
    return failures == 0 ? 0 : 1;
}

#include "ppoewma/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <random>
#include <sstream>

#include "ppoewma/gradnet.hpp"
#include "ppoewma/objectives.hpp"
#include "ppoewma/optim.hpp"
#include "ppoewma/rng.hpp"
#include "ppoewma/rollout.hpp"

namespace ppoewma {

namespace {

constexpr double kFdStep = 1e-5;
constexpr double kKinkMargin = 1e-3;
constexpr double kEwmaTolerance = 1e-10;

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (double& x : m.storage()) x = normal(rng);
    return m;
}

std::vector<double> random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<double> v(n);
    for (double& x : v) x = normal(rng);
    return v;
}

std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + kFdStep;
        const double up = f(x);
        x[i] = x0 - kFdStep;
        const double down = f(x);
        x[i] = x0;
        g[i] = (up - down) / (2.0 * kFdStep);
    }
    return g;
}

/// max |a - b| / max(1, max |b|)
double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, scale = 1.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max(scale, std::abs(b[i]));
    }
    return diff / scale;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

struct Instance {
    Matrix theta;
    CategoricalDist prox;
    CategoricalDist behav;
    std::vector<int> actions;
    std::vector<double> adv;
};

Instance random_instance(Rng& rng) {
    constexpr std::size_t n = 12, k = 4;
    const Matrix base = random_matrix(n, k, rng);
    Matrix prox = base, behav = base, theta = base;
    std::normal_distribution<double> jitter(0.0, 0.3);
    for (std::size_t i = 0; i < base.storage().size(); ++i) {
        prox.storage()[i] += jitter(rng);
        behav.storage()[i] += jitter(rng);
        theta.storage()[i] += jitter(rng);
    }
    Instance inst{theta, CategoricalDist::from_logits(prox), CategoricalDist::from_logits(behav), {}, {}};
    std::uniform_int_distribution<int> pick(0, static_cast<int>(k) - 1);
    for (std::size_t i = 0; i < n; ++i) inst.actions.push_back(pick(rng));
    inst.adv = random_vector(n, rng);
    return inst;
}

enum class Anchor { none, prox, behav };

struct ObjectiveCase {
    std::string name;
    std::function<ObjectiveOutput(const ObjectiveInputs&)> fn;
    double kl_coef = 0.0;
    std::optional<double> eps;
    double cap = 100.0;
    Anchor clip_anchor = Anchor::none;  // which policy divides the clipped ratio
    bool capped_by_theta = false;       // cap applies to pi_theta / pi_behav
    bool clip_family = false;
};

bool near_kink(const Instance& inst, const ObjectiveCase& c) {
    const auto theta = CategoricalDist::from_logits(inst.theta);
    for (std::size_t i = 0; i < inst.actions.size(); ++i) {
        const auto a = static_cast<std::size_t>(inst.actions[i]);
        if (c.eps && c.clip_anchor != Anchor::none) {
            const auto& anchor = c.clip_anchor == Anchor::prox ? inst.prox : inst.behav;
            const double r = std::exp(theta.log_prob(i, a) - anchor.log_prob(i, a));
            if (std::abs(r - (1.0 - *c.eps)) < kKinkMargin || std::abs(r - (1.0 + *c.eps)) < kKinkMargin) return true;
        }
        if (c.capped_by_theta) {
            const double w = std::exp(theta.log_prob(i, a) - inst.behav.log_prob(i, a));
            if (std::abs(w - c.cap) < kKinkMargin * c.cap) return true;
        }
    }
    return false;
}

std::vector<ObjectiveCase> objective_cases() {
    std::vector<ObjectiveCase> cases;
    cases.push_back({"vanilla", vanilla_pg, 0.0, std::nullopt, 100.0, Anchor::none, true, false});
    cases.push_back({"vanilla/capped", vanilla_pg, 0.0, std::nullopt, 1.1, Anchor::none, true, false});
    cases.push_back({"klpen/coupled-recent", [](const ObjectiveInputs& in) { return klpen_coupled(in, OldPolicy::recent); },
                     0.7, std::nullopt, 100.0, Anchor::none, false, false});
    cases.push_back({"klpen/coupled-behav", [](const ObjectiveInputs& in) { return klpen_coupled(in, OldPolicy::behav); },
                     0.7, std::nullopt, 100.0, Anchor::none, false, false});
    cases.push_back({"klpen/decoupled", klpen_decoupled, 0.7, std::nullopt, 100.0, Anchor::none, true, false});
    cases.push_back({"clip/coupled-recent", [](const ObjectiveInputs& in) { return clip_coupled(in, OldPolicy::recent); },
                     0.0, 0.2, 100.0, Anchor::prox, false, true});
    cases.push_back({"clip/coupled-behav", [](const ObjectiveInputs& in) { return clip_coupled(in, OldPolicy::behav); },
                     0.0, 0.2, 100.0, Anchor::behav, false, true});
    cases.push_back({"clip/decoupled", clip_decoupled, 0.0, 0.2, 100.0, Anchor::prox, false, true});
    cases.push_back({"clip+klpen/decoupled", clip_decoupled, 0.5, 0.2, 100.0, Anchor::prox, false, true});
    return cases;
}

GradcheckEntry fd_entry(std::string name, int instances, double tol,
                        const std::function<std::optional<double>(Rng&)>& one, Rng& rng) {
    GradcheckEntry e{std::move(name), "finite-difference", 0, 0, 0.0, tol, false};
    const int max_attempts = instances * 20;
    for (int attempt = 0; attempt < max_attempts && e.checked < instances; ++attempt) {
        const auto err = one(rng);
        if (!err) {
            ++e.skipped;
            continue;
        }
        ++e.checked;
        e.max_error = std::max(e.max_error, *err);
    }
    e.passed = e.checked == instances && e.max_error < tol;
    return e;
}

GradcheckEntry identity_entry(std::string name, int instances, double tol, const std::function<double(Rng&)>& one,
                              Rng& rng) {
    GradcheckEntry e{std::move(name), "identity", 0, 0, 0.0, tol, false};
    for (int i = 0; i < instances; ++i) {
        e.max_error = std::max(e.max_error, one(rng));
        ++e.checked;
    }
    e.passed = e.max_error <= tol;
    return e;
}

double output_diff(const ObjectiveOutput& a, const ObjectiveOutput& b) {
    return std::max(std::abs(a.loss - b.loss), max_abs_diff(a.d_logits.storage(), b.d_logits.storage()));
}

/// Brute-force GAE over one episode: A_t = sum_k (gamma lambda)^k delta_{t+k}.
double gae_identity_error(Rng& rng) {
    std::uniform_int_distribution<int> len_dist(1, 8);
    const int len = len_dist(rng);
    const double gamma = uniform01(rng), lambda = uniform01(rng);
    const auto rewards = random_vector(static_cast<std::size_t>(len), rng);
    const auto values = random_vector(static_cast<std::size_t>(len), rng);
    const double bootstrap = random_vector(1, rng)[0];
    const bool terminal_end = (rng() & 1u) != 0;

    std::vector<double> next(static_cast<std::size_t>(len));
    std::vector<std::uint8_t> terminal(static_cast<std::size_t>(len), 0), boundary(static_cast<std::size_t>(len), 0);
    for (int t = 0; t + 1 < len; ++t) next[static_cast<std::size_t>(t)] = values[static_cast<std::size_t>(t + 1)];
    next.back() = bootstrap;
    terminal.back() = terminal_end ? 1 : 0;
    boundary.back() = 1;
    const auto got = gae(rewards, values, next, terminal, boundary, gamma, lambda);

    double err = 0.0;
    for (int t = 0; t < len; ++t) {
        long double sum = 0.0L, weight = 1.0L;
        for (int k = t; k < len; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            const long double nv = (k == len - 1 && terminal_end) ? 0.0L : static_cast<long double>(next[ku]);
            const long double delta = rewards[ku] + gamma * nv - values[ku];
            sum += weight * delta;
            weight *= static_cast<long double>(gamma) * lambda;
        }
        const auto tu = static_cast<std::size_t>(t);
        err = std::max(err, std::abs(got.adv[tu] - static_cast<double>(sum)));
        err = std::max(err, std::abs(got.value_targets[tu] - static_cast<double>(sum + values[tu])));
    }
    return err;
}

/// Incremental EWMA against the directly weighted average after each update.
double ewma_identity_error(double decay, Rng& rng) {
    const Mlp net(NetArchitecture(2, {2}, Heads{0, true, false}));
    constexpr int steps = 1000;
    std::vector<ParamVector> history;
    ParamVector p = net.init_params(rng());
    EwmaState ewma(p, decay);
    history.push_back(p);
    std::normal_distribution<double> normal(0.0, 1.0);
    double err = 0.0;
    for (int t = 1; t < steps; ++t) {
        for (double& x : p.values()) x += normal(rng);
        ewma.update(p);
        history.push_back(p);
        if (t % 97 != 0 && t != steps - 1) continue;
        for (std::size_t j = 0; j < p.size(); ++j) {
            long double num = 0.0L, den = 0.0L, w = 1.0L;
            for (int k = t; k >= 0; --k) {
                num += w * history[static_cast<std::size_t>(k)][j];
                den += w;
                w *= decay;
            }
            err = std::max(err, std::abs(ewma.average()[j] - static_cast<double>(num / den)));
        }
    }
    return err;
}

double network_fd_error(const Mlp& net, Rng& rng) {
    const auto& heads = net.arch().heads();
    const std::size_t n = 5;
    const ParamVector params = net.init_params(rng());
    const Matrix obs = random_matrix(n, static_cast<std::size_t>(net.arch().input_dim()), rng);
    const Matrix g_logits = heads.actions > 0 ? random_matrix(n, static_cast<std::size_t>(heads.actions), rng) : Matrix{};
    const auto g_value = heads.value ? random_vector(n, rng) : std::vector<double>{};
    const auto g_aux = heads.aux_value ? random_vector(n, rng) : std::vector<double>{};

    auto loss = [&](const std::vector<double>& x) {
        ParamVector q = params;
        std::copy(x.begin(), x.end(), q.values().begin());
        const auto out = net.forward(q, obs);
        double s = 0.0;
        for (std::size_t i = 0; i < g_logits.storage().size(); ++i) s += g_logits.storage()[i] * out.logits.storage()[i];
        for (std::size_t i = 0; i < g_value.size(); ++i) s += g_value[i] * out.value[i];
        for (std::size_t i = 0; i < g_aux.size(); ++i) s += g_aux[i] * out.aux_value[i];
        return s;
    };
    const auto analytic = net.backward(params, obs, g_logits, g_value, g_aux);
    const std::vector<double> x(params.values().begin(), params.values().end());
    const std::vector<double> a(analytic.values().begin(), analytic.values().end());
    return relative_error(a, central_difference(loss, x));
}

}  // namespace

bool GradcheckReport::passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed; });
}

std::string GradcheckReport::format() const {
    std::ostringstream os;
    for (const auto& e : entries) {
        char line[256];
        std::snprintf(line, sizeof line, "%s  %-44s %-17s checked=%-4d skipped=%-3d max_error=%.3e tol=%.0e\n",
                      e.passed ? "PASS" : "FAIL", e.name.c_str(), e.kind.c_str(), e.checked, e.skipped, e.max_error,
                      e.tolerance);
        os << line;
    }
    os << (passed() ? "PASS" : "FAIL") << "  gradcheck: " << entries.size() << " suites\n";
    return os.str();
}

std::string GradcheckReport::csv() const {
    std::ostringstream os;
    os << "name,kind,checked,skipped,max_error,tolerance,passed\n";
    for (const auto& e : entries) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g,%.17g", e.max_error, e.tolerance);
        os << e.name << ',' << e.kind << ',' << e.checked << ',' << e.skipped << ',' << buf << ','
           << (e.passed ? 1 : 0) << '\n';
    }
    return os.str();
}

GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
    GradcheckReport report;
    Rng rng = make_rng(opt.seed, 0x67c);

    for (const auto& c : objective_cases()) {
        const bool flip = opt.flip_clip_gradient_sign && c.clip_family;
        report.entries.push_back(fd_entry(c.name, opt.instances, opt.fd_tolerance, [&](Rng& r) -> std::optional<double> {
            const Instance inst = random_instance(r);
            if (near_kink(inst, c)) return std::nullopt;
            auto evaluate = [&](const Matrix& logits) {
                const auto theta = CategoricalDist::from_logits(logits);
                const ObjectiveInputs in{theta, inst.prox, inst.behav, inst.actions, inst.adv, c.kl_coef, c.eps, c.cap};
                return c.fn(in);
            };
            auto analytic = evaluate(inst.theta).d_logits.storage();
            if (flip) {
                for (double& g : analytic) g = -g;
            }
            auto loss = [&](const std::vector<double>& x) {
                Matrix z = inst.theta;
                z.storage() = x;
                return evaluate(z).loss;
            };
            return relative_error(analytic, central_difference(loss, inst.theta.storage()));
        }, rng));
    }

    report.entries.push_back(fd_entry("entropy", opt.instances, opt.fd_tolerance, [](Rng& r) -> std::optional<double> {
        const Matrix logits = random_matrix(10, 5, r);
        const auto analytic = entropy_bonus(CategoricalDist::from_logits(logits), 0.5).d_logits.storage();
        auto loss = [&](const std::vector<double>& x) {
            Matrix z = logits;
            z.storage() = x;
            return entropy_bonus(CategoricalDist::from_logits(z), 0.5).loss;
        };
        return relative_error(analytic, central_difference(loss, logits.storage()));
    }, rng));

    report.entries.push_back(fd_entry("value", opt.instances, opt.fd_tolerance, [](Rng& r) -> std::optional<double> {
        const auto pred = random_vector(16, r), targets = random_vector(16, r);
        const auto analytic = value_loss(pred, targets).grad;
        auto loss = [&](const std::vector<double>& x) { return value_loss(x, targets).loss; };
        return relative_error(analytic, central_difference(loss, pred));
    }, rng));

    report.entries.push_back(fd_entry("aux", opt.instances, opt.fd_tolerance, [](Rng& r) -> std::optional<double> {
        const std::size_t n = 10, k = 4;
        const Matrix logits = random_matrix(n, k, r);
        const auto frozen = CategoricalDist::from_logits(random_matrix(n, k, r));
        const auto aux_pred = random_vector(n, r), targets = random_vector(n, r);
        auto eval = [&](const std::vector<double>& x) {
            Matrix z(n, k);
            std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n * k), z.storage().begin());
            const std::vector<double> pred(x.begin() + static_cast<std::ptrdiff_t>(n * k), x.end());
            return aux_phase_loss(CategoricalDist::from_logits(z), frozen, pred, targets, 0.8);
        };
        std::vector<double> x = logits.storage();
        x.insert(x.end(), aux_pred.begin(), aux_pred.end());
        const auto out = eval(x);
        std::vector<double> analytic = out.d_logits.storage();
        analytic.insert(analytic.end(), out.d_aux_value.begin(), out.d_aux_value.end());
        return relative_error(analytic, central_difference([&](const std::vector<double>& y) { return eval(y).loss; }, x));
    }, rng));

    const Mlp shared(NetArchitecture(6, {5, 4}, Heads{3, true, false}));
    const Mlp phasic(NetArchitecture(6, {5, 4}, Heads{3, false, true}));
    const Mlp value_only(NetArchitecture(6, {5}, Heads{0, true, false}));
    report.entries.push_back(fd_entry("network/policy+value", opt.instances, opt.fd_tolerance,
                                      [&](Rng& r) -> std::optional<double> { return network_fd_error(shared, r); }, rng));
    report.entries.push_back(fd_entry("network/policy+aux", opt.instances, opt.fd_tolerance,
                                      [&](Rng& r) -> std::optional<double> { return network_fd_error(phasic, r); }, rng));
    report.entries.push_back(fd_entry("network/value", opt.instances, opt.fd_tolerance,
                                      [&](Rng& r) -> std::optional<double> { return network_fd_error(value_only, r); }, rng));

    auto inputs_with = [](const Instance& inst, const CategoricalDist& theta, const CategoricalDist& prox, double kl,
                          std::optional<double> eps) {
        return ObjectiveInputs{theta, prox, inst.behav, inst.actions, inst.adv, kl, eps, 100.0};
    };
    report.entries.push_back(identity_entry("clip/decoupled(prox=behav)==coupled-behav", opt.instances,
                                            opt.identity_tolerance, [&](Rng& r) {
        const Instance inst = random_instance(r);
        const auto theta = CategoricalDist::from_logits(inst.theta);
        const auto in = inputs_with(inst, theta, inst.behav, 0.0, 0.2);
        return output_diff(clip_decoupled(in), clip_coupled(in, OldPolicy::behav));
    }, rng));
    report.entries.push_back(identity_entry("klpen/decoupled(prox=behav)==coupled-behav", opt.instances,
                                            opt.identity_tolerance, [&](Rng& r) {
        const Instance inst = random_instance(r);
        const auto theta = CategoricalDist::from_logits(inst.theta);
        const auto in = inputs_with(inst, theta, inst.behav, 0.7, std::nullopt);
        return output_diff(klpen_decoupled(in), klpen_coupled(in, OldPolicy::behav));
    }, rng));
    report.entries.push_back(identity_entry("klpen(kl_coef=0)==vanilla", opt.instances, opt.identity_tolerance,
                                            [&](Rng& r) {
        const Instance inst = random_instance(r);
        const auto theta = CategoricalDist::from_logits(inst.theta);
        const auto in = inputs_with(inst, theta, inst.prox, 0.0, std::nullopt);
        return output_diff(klpen_decoupled(in), vanilla_pg(in));
    }, rng));
    report.entries.push_back(identity_entry("clip(eps=inf)==vanilla", opt.instances, opt.identity_tolerance,
                                            [&](Rng& r) {
        const Instance inst = random_instance(r);
        const auto theta = CategoricalDist::from_logits(inst.theta);
        const auto in = inputs_with(inst, theta, inst.prox, 0.0, std::nullopt);
        return output_diff(clip_decoupled(in), vanilla_pg(in));
    }, rng));
    report.entries.push_back(identity_entry("gae==brute-force", opt.instances * 10, opt.identity_tolerance,
                                            gae_identity_error, rng));
    for (double decay : {0.0, 0.5, 0.889, 0.999}) {
        char name[64];
        std::snprintf(name, sizeof name, "ewma==closed-form(decay=%g)", decay);
        report.entries.push_back(identity_entry(name, 1, kEwmaTolerance,
                                                [decay](Rng& r) { return ewma_identity_error(decay, r); }, rng));
    }
    return report;
}

}  // namespace ppoewma

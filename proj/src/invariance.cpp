#include "ppoewma/invariance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace ppoewma {

namespace {

double interpolate(const Curve& c, double x) {
    if (x <= c.front().env_steps) return c.front().value;
    if (x >= c.back().env_steps) return c.back().value;
    const auto it = std::lower_bound(c.begin(), c.end(), x,
                                     [](const CurvePoint& p, double v) { return p.env_steps < v; });
    const CurvePoint& hi = *it;
    if (hi.env_steps == x) return hi.value;
    const CurvePoint& lo = *(it - 1);
    const double t = (x - lo.env_steps) / (hi.env_steps - lo.env_steps);
    return lo.value + t * (hi.value - lo.value);
}

// Integral of |d| over an interval of width h on which d is linear from d0 to d1.
double abs_linear_area(double d0, double d1, double h) {
    if ((d0 >= 0.0) == (d1 >= 0.0)) return 0.5 * h * (std::abs(d0) + std::abs(d1));
    return 0.5 * h * (d0 * d0 + d1 * d1) / (std::abs(d0) + std::abs(d1));
}

void check_curve(const Curve& c, const char* name) {
    if (c.empty()) throw std::invalid_argument(std::string("compare_curves: curve ") + name + " is empty");
    for (std::size_t i = 1; i < c.size(); ++i) {
        if (!(c[i].env_steps > c[i - 1].env_steps)) {
            throw std::invalid_argument(std::string("compare_curves: curve ") + name + " steps are not increasing");
        }
    }
}

double spacing(const Curve& c) {
    return c.size() < 2 ? 1.0 : (c.back().env_steps - c.front().env_steps) / static_cast<double>(c.size() - 1);
}

}  // namespace

HyperParams adjust(const HyperParams& hp, double c, Adjustments flags, StepRule rule) {
    return scale_for_batch_divisor(hp, c, rule, flags);
}

Adjustments parse_adjustments(const std::string& s) {
    if (s == "all") return Adjustments::all();
    Adjustments out = Adjustments::none();
    if (s == "none" || s.empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "lr") out.step_size = true;
        else if (item == "ewma") out.ewma = true;
        else if (item == "advnorm") out.adv_norm = true;
        else if (item == "npi") out.n_pi = true;
        else if (item == "betas") out.adam_betas = true;
        else throw std::invalid_argument("unknown adjustment '" + item + "' (expected lr, ewma, advnorm, npi, betas)");
    }
    return out;
}

std::string to_string(const Adjustments& a) {
    std::string out;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!out.empty()) out += ',';
        out += name;
    };
    add(a.step_size, "lr");
    add(a.ewma, "ewma");
    add(a.adv_norm, "advnorm");
    add(a.n_pi, "npi");
    add(a.adam_betas, "betas");
    return out.empty() ? "none" : out;
}

std::vector<SweepArm> standard_arms() {
    std::vector<SweepArm> arms{{"adjusted", Adjustments::all()}, {"unadjusted", Adjustments::none()}};
    Adjustments a = Adjustments::all();
    a.step_size = false;
    arms.push_back({"no-lr", a});
    a = Adjustments::all();
    a.ewma = false;
    arms.push_back({"no-ewma", a});
    a = Adjustments::all();
    a.adv_norm = false;
    arms.push_back({"no-advnorm", a});
    a = Adjustments::all();
    a.n_pi = false;
    arms.push_back({"no-npi", a});
    return arms;
}

Curve return_curve(const std::vector<RunRecord>& records) {
    Curve out;
    for (const auto& r : records) {
        if (std::isnan(r.mean_episode_return)) continue;
        out.push_back({static_cast<double>(r.env_steps), r.mean_episode_return});
    }
    return out;
}

Curve mean_curve(const std::vector<Curve>& curves) {
    if (curves.empty()) return {};
    // Align on the latest common start: early points may be missing in some
    // runs when no episode had completed yet.
    double start = curves.front().empty() ? 0.0 : curves.front().front().env_steps;
    for (const auto& c : curves) {
        if (c.empty()) return {};
        start = std::max(start, c.front().env_steps);
    }
    Curve out;
    const Curve& ref = curves.front();
    for (const auto& p : ref) {
        if (p.env_steps < start) continue;
        double sum = 0.0;
        for (const auto& c : curves) {
            const auto it = std::lower_bound(c.begin(), c.end(), p.env_steps,
                                             [](const CurvePoint& q, double v) { return q.env_steps < v; });
            if (it == c.end() || it->env_steps != p.env_steps) {
                throw std::invalid_argument("mean_curve: curves do not share an env_steps grid");
            }
            sum += it->value;
        }
        out.push_back({p.env_steps, sum / static_cast<double>(curves.size())});
    }
    return out;
}

Curve smooth(const Curve& curve, double span_env_steps) {
    if (curve.size() < 2) return curve;
    const double span_records = std::max(1.0, span_env_steps / spacing(curve));
    const double decay = ess_to_decay(span_records);
    Curve out(curve.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < curve.size(); ++i) {
        num = decay * num + curve[i].value;
        den = decay * den + 1.0;
        out[i] = {curve[i].env_steps, num / den};
    }
    return out;
}

InvarianceReport compare_curves(const Curve& a, const Curve& b, std::optional<double> return_range) {
    check_curve(a, "a");
    check_curve(b, "b");
    const double lo = std::max(a.front().env_steps, b.front().env_steps);
    const double hi = std::min(a.back().env_steps, b.back().env_steps);
    if (lo > hi) throw std::invalid_argument("compare_curves: step ranges do not overlap");

    InvarianceReport rep;
    rep.curve_a = a;
    rep.curve_b = b;
    rep.final_gap = std::abs(interpolate(a, hi) - interpolate(b, hi));
    if (lo == hi) return rep;

    std::vector<double> xs{lo, hi};
    for (const auto* c : {&a, &b}) {
        for (const auto& p : *c) {
            if (p.env_steps > lo && p.env_steps < hi) xs.push_back(p.env_steps);
        }
    }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());

    double area = 0.0;
    double vmin = std::numeric_limits<double>::infinity(), vmax = -vmin;
    double prev_d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double ya = interpolate(a, xs[i]), yb = interpolate(b, xs[i]);
        vmin = std::min({vmin, ya, yb});
        vmax = std::max({vmax, ya, yb});
        const double d = ya - yb;
        if (i > 0) area += abs_linear_area(prev_d, d, xs[i] - xs[i - 1]);
        prev_d = d;
    }
    const double range = return_range ? *return_range : vmax - vmin;
    if (!(range > 0.0)) return rep;
    rep.normalized_area_gap = area / ((hi - lo) * range);
    return rep;
}

InvarianceReport compare_runs(const std::vector<std::vector<RunRecord>>& runs_a,
                              const std::vector<std::vector<RunRecord>>& runs_b,
                              std::optional<double> return_range) {
    auto averaged = [](const std::vector<std::vector<RunRecord>>& runs) {
        std::vector<Curve> curves;
        for (const auto& r : runs) curves.push_back(return_curve(r));
        return mean_curve(curves);
    };
    const Curve a = averaged(runs_a), b = averaged(runs_b);
    if (a.empty() || b.empty()) throw std::invalid_argument("compare_runs: a group has no completed episodes");
    const double span = kSmoothingSpanRecords * std::max(spacing(a), spacing(b));
    return compare_curves(smooth(a, span), smooth(b, span), return_range);
}

}  // namespace ppoewma

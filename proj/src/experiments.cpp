#include "ppoewma/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <sstream>
#include <thread>

#include "ppoewma/gradcheck.hpp"
#include "ppoewma/report.hpp"

namespace ppoewma {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v, int precision = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return kNaN;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

bool same_value(double a, double b) {
    return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b));
}

WarningContext warning_context(Algo algo, const HyperParams& hp) {
    WarningContext ctx;
    ctx.policy_epochs = is_phasic(algo) ? hp.policy_epochs : hp.ppo_epochs;
    ctx.clipping = hp.family == ObjectiveFamily::clip && hp.clip_epsilon.has_value();
    return ctx;
}

/// Validates hyperparameters and the step budget before any run starts.
void require_runnable(const ExperimentConfig& cfg, const HyperParams& hp, const std::string& what) {
    try {
        validate(hp);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(cfg.source, 0, what + ": " + e.what());
    }
    if (cfg.total_steps % hp.iteration_batch() != 0) {
        throw ConfigError(cfg.source, 0,
                          what + ": total_steps " + std::to_string(cfg.total_steps) +
                              " is not a multiple of the iteration batch " + std::to_string(hp.iteration_batch()));
    }
}

/// Per-run CSVs and the warnings file.
void add_run_files(CommandOutput& out) {
    std::string warnings;
    for (const auto& r : out.runs) {
        out.files["runs/" + r.spec.run_id + ".csv"] = run_csv(r.records);
        warnings += format_warnings(r.spec.run_id, emit_warnings(r.records, warning_context(r.spec.algo, r.spec.hp)));
    }
    out.files["warnings.txt"] = warnings;
}

std::vector<std::vector<RunRecord>> records_of(const std::vector<RunResult>& runs,
                                               const std::vector<std::size_t>& idx) {
    std::vector<std::vector<RunRecord>> out;
    for (auto i : idx) out.push_back(runs[i].records);
    return out;
}

std::vector<double> finals_of(const std::vector<RunResult>& runs, const std::vector<std::size_t>& idx) {
    std::vector<double> out;
    for (auto i : idx) out.push_back(runs[i].final_return);
    return out;
}

/// Seed-mean return curve of a group, or an empty curve when nothing was
/// recorded yet.
Curve group_curve(const std::vector<RunResult>& runs, const std::vector<std::size_t>& idx) {
    std::vector<Curve> curves;
    for (auto i : idx) {
        auto c = return_curve(runs[i].records);
        if (c.empty()) return {};
        curves.push_back(std::move(c));
    }
    return curves.empty() ? Curve{} : mean_curve(curves);
}

std::string format_checks(const std::vector<Check>& checks) {
    std::string s;
    for (const auto& c : checks) {
        const std::string tag = c.asserted ? (c.passed ? "PASS" : "FAIL") : (c.passed ? "NOTE holds" : "NOTE does not hold");
        s += tag + "  " + c.name + ": " + c.detail + "\n";
    }
    return s;
}

std::string seeds_text(const std::vector<std::uint64_t>& seeds) {
    std::string s;
    for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? "," : "") + std::to_string(seeds[i]);
    return s;
}

std::string header(const ExperimentConfig& cfg, const std::string& title) {
    return title + "\nconfig: " + cfg.source + "\nseeds: " + seeds_text(cfg.seeds) +
           "\ntotal_steps per run: " + std::to_string(cfg.total_steps) + "\n\n";
}

}  // namespace

std::vector<RunResult> execute(const std::vector<RunSpec>& specs, int jobs) {
    std::vector<RunResult> results(specs.size());
    std::vector<std::exception_ptr> errors(specs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= specs.size()) return;
            try {
                const auto& s = specs[i];
                results[i].spec = s;
                results[i].records = run(s.algo, s.env, s.hp, s.seed, s.total_steps, s.run_id);
                results[i].final_return = final_return(results[i].records);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, jobs)), specs.size());
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return results;
}

bool CommandOutput::asserted_checks_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return !c.asserted || c.passed; });
}

void write_outputs(const CommandOutput& out, const std::filesystem::path& dir) {
    for (const auto& [rel, content] : out.files) write_file(dir / rel, content);
}

// ------------------------------------------------------------------- run

CommandOutput cmd_run(const ExperimentConfig& cfg, int jobs) {
    const Algo algo = cfg.algo.value_or(Algo::ppo);
    const EnvKind env = cfg.env.value();
    const HyperParams hp = cfg.hparams_for(algo);
    require_runnable(cfg, hp, to_string(algo));

    std::vector<RunSpec> specs;
    for (auto seed : cfg.seeds) {
        specs.push_back({to_string(algo) + "-" + to_string(env) + "-s" + std::to_string(seed), algo, env, hp, seed,
                         cfg.total_steps});
    }
    CommandOutput out;
    out.runs = execute(specs, jobs);
    add_run_files(out);

    std::vector<std::size_t> all(out.runs.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    out.files["aggregate.csv"] = aggregate_csv(records_of(out.runs, all));

    std::vector<PlotSeries> series;
    std::string summary = header(cfg, "run: " + to_string(algo) + " on " + to_string(env));
    summary += "seed  final_return\n";
    for (const auto& r : out.runs) {
        series.push_back({"seed " + std::to_string(r.spec.seed), return_curve(r.records)});
        summary += std::to_string(r.spec.seed) + "  " + fmt(r.final_return) + "\n";
    }
    const auto finals = finals_of(out.runs, all);
    summary += "mean  " + fmt(mean_of(finals)) + " +- " + fmt(stddev_of(finals)) + "\n";
    series.push_back({"mean", group_curve(out.runs, all)});
    out.files["plots/returns.svg"] =
        svg_plot(to_string(algo) + " on " + to_string(env), "env steps", "mean episode return", series);
    out.files["summary.txt"] = summary;
    return out;
}

// -------------------------------------------------------------- staleness

const StalenessCell* StalenessResult::find(Coupling coupling, int delay) const {
    for (const auto& c : cells) {
        if (c.coupling == coupling && c.delay == delay) return &c;
    }
    return nullptr;
}

std::optional<double> StalenessResult::drop(Coupling coupling, int delay) const {
    const auto* base = find(coupling, 0);
    const auto* cell = find(coupling, delay);
    if (!base || !cell) return std::nullopt;
    return base->mean - cell->mean;
}

StalenessResult cmd_staleness(const ExperimentConfig& cfg, int jobs) {
    const Algo algo = cfg.algo.value_or(Algo::ppo);
    const EnvKind env = cfg.env.value();
    std::vector<RunSpec> specs;
    std::vector<std::pair<StalenessCell, std::vector<std::size_t>>> groups;
    for (auto coupling : cfg.couplings) {
        if (uses_ewma(algo) && coupling != Coupling::decoupled) {
            throw ConfigError(cfg.source, 0, to_string(algo) + " only supports the decoupled objective");
        }
        for (int delay : cfg.delays) {
            if (delay < 0) throw ConfigError(cfg.source, 0, "delays must be non-negative");
            HyperParams hp = cfg.hparams_for(algo);
            hp.coupling = coupling;
            hp.staleness_delay = delay;
            require_runnable(cfg, hp, to_string(coupling));
            StalenessCell cell;
            cell.coupling = coupling;
            cell.delay = delay;
            std::vector<std::size_t> idx;
            for (auto seed : cfg.seeds) {
                idx.push_back(specs.size());
                specs.push_back({"staleness-" + to_string(coupling) + "-d" + std::to_string(delay) + "-s" +
                                     std::to_string(seed),
                                 algo, env, hp, seed, cfg.total_steps});
            }
            groups.emplace_back(cell, idx);
        }
    }

    StalenessResult res;
    res.output.runs = execute(specs, jobs);
    auto& out = res.output;
    add_run_files(out);

    for (auto& [cell, idx] : groups) {
        cell.final_returns = finals_of(out.runs, idx);
        cell.mean = mean_of(cell.final_returns);
        cell.stddev = stddev_of(cell.final_returns);
        out.files["aggregate/" + to_string(cell.coupling) + "-d" + std::to_string(cell.delay) + ".csv"] =
            aggregate_csv(records_of(out.runs, idx));
        res.cells.push_back(cell);
    }

    std::string csv = "coupling,delay,final_return_mean,final_return_std,drop_vs_delay0\n";
    std::string table = header(cfg, "staleness sweep: " + to_string(algo) + " on " + to_string(env));
    table += "coupling         delay  final_return (mean +- std)  drop vs delay 0\n";
    for (const auto& c : res.cells) {
        const auto d = res.drop(c.coupling, c.delay);
        csv += to_string(c.coupling) + "," + std::to_string(c.delay) + "," + format_number(c.mean) + "," +
               format_number(c.stddev) + "," + format_number(d.value_or(kNaN)) + "\n";
        char line[160];
        std::snprintf(line, sizeof line, "%-16s %5d  %8.4f +- %-8.4f         %s\n", to_string(c.coupling).c_str(),
                      c.delay, c.mean, c.stddev, d ? fmt(*d).c_str() : "n/a");
        table += line;
    }
    out.files["summary.csv"] = csv;

    for (auto coupling : cfg.couplings) {
        std::vector<PlotSeries> series;
        for (const auto& [cell, idx] : groups) {
            if (cell.coupling != coupling) continue;
            series.push_back({"delay " + std::to_string(cell.delay), group_curve(out.runs, idx)});
        }
        out.files["plots/" + to_string(coupling) + ".svg"] =
            svg_plot("staleness: " + to_string(coupling), "env steps", "mean episode return (seed mean)", series);
    }

    const auto dec2 = res.drop(Coupling::decoupled, 2), rec2 = res.drop(Coupling::coupled_recent, 2);
    if (dec2 && rec2) {
        out.checks.push_back({"decoupled-drop<=coupled-recent-drop@delay2", true, *dec2 <= *rec2,
                              "decoupled drop " + fmt(*dec2) + ", coupled-recent drop " + fmt(*rec2)});
    }
    const auto* dec0 = res.find(Coupling::decoupled, 0);
    const auto* dec4 = res.find(Coupling::decoupled, 4);
    if (dec0 && dec4) {
        const bool ok = std::abs(dec4->mean - dec0->mean) <= 0.25 * std::abs(dec0->mean);
        out.checks.push_back({"decoupled-delay4-within-25%", true, ok,
                              "delay 0 " + fmt(dec0->mean) + ", delay 4 " + fmt(dec4->mean)});
    }
    const auto dec_d4 = res.drop(Coupling::decoupled, 4), rec_d4 = res.drop(Coupling::coupled_recent, 4);
    if (dec_d4 && rec_d4) {
        out.checks.push_back({"coupled-recent-drop>decoupled-drop@delay4", true, *rec_d4 > *dec_d4,
                              "coupled-recent drop " + fmt(*rec_d4) + ", decoupled drop " + fmt(*dec_d4)});
    }
    const auto* behav0 = res.find(Coupling::coupled_behav, 0);
    if (behav0 && dec0) {
        out.checks.push_back({"coupled-behav<=decoupled@delay0", false, behav0->mean <= dec0->mean,
                              "coupled-behav " + fmt(behav0->mean) + ", decoupled " + fmt(dec0->mean)});
    }
    out.files["summary.txt"] = table + "\n" + format_checks(out.checks);
    return res;
}

// ------------------------------------------------------ batch-size sweeps

const GapEntry* SweepResult::find(const std::string& arm, double divisor, StepRule rule) const {
    for (const auto& e : reports) {
        if (e.arm == arm && e.rule == rule && same_value(e.divisor, divisor)) return &e;
    }
    return nullptr;
}

std::optional<double> SweepResult::gap(const std::string& arm, double divisor, StepRule rule) const {
    const auto* e = find(arm, divisor, rule);
    if (!e) return std::nullopt;
    return e->report.normalized_area_gap;
}

namespace {

struct ArmPlan {
    std::string arm;
    Adjustments adjust;
    StepRule rule = StepRule::adam_sqrt;
    bool ablation = false;
};

bool is_ablation(const std::string& arm) { return arm != "adjusted" && arm != "unadjusted"; }

SweepResult sweep(const ExperimentConfig& cfg, int jobs, const std::string& prefix, const std::vector<ArmPlan>& plans,
                  bool include_reference) {
    const Algo algo = cfg.algo.value_or(Algo::ppg_ewma);
    const EnvKind env = cfg.env.value();
    const HyperParams base = cfg.hparams_for(algo);
    require_runnable(cfg, base, "baseline");
    if (std::none_of(cfg.divisors.begin(), cfg.divisors.end(), [](double c) { return c == 1.0; })) {
        throw ConfigError(cfg.source, 0, "divisors must include the c = 1 baseline");
    }
    auto runs_at = [&](const ArmPlan& p, double c) {
        if (!p.ablation || !cfg.ablation_divisors) return true;
        const auto& ad = *cfg.ablation_divisors;
        return std::any_of(ad.begin(), ad.end(), [&](double x) { return same_value(x, c); });
    };

    std::vector<RunSpec> specs;
    std::vector<std::size_t> baseline;
    for (auto seed : cfg.seeds) {
        baseline.push_back(specs.size());
        specs.push_back({prefix + "-baseline-s" + std::to_string(seed), algo, env, base, seed, cfg.total_steps});
    }
    struct Group {
        ArmPlan plan;
        double divisor;
        std::vector<std::size_t> idx;
    };
    std::vector<Group> groups;
    for (double c : cfg.divisors) {
        for (const auto& p : plans) {
            if (!runs_at(p, c)) continue;
            Group g{p, c, {}};
            if (c == 1.0) {
                g.idx = baseline;
            } else {
                HyperParams hp;
                try {
                    hp = adjust(base, c, p.adjust, p.rule);
                } catch (const std::invalid_argument& e) {
                    throw ConfigError(cfg.source, 0, "divisor " + format_number(c) + ": " + e.what());
                }
                require_runnable(cfg, hp, p.arm + " at c = " + format_number(c));
                const std::string tag = prefix + "-" + p.arm + (prefix == "linear-lr" ? "-" + to_string(p.rule) : "") +
                                        "-c" + format_number(c);
                for (auto seed : cfg.seeds) {
                    g.idx.push_back(specs.size());
                    specs.push_back({tag + "-s" + std::to_string(seed), algo, env, hp, seed, cfg.total_steps});
                }
            }
            groups.push_back(std::move(g));
        }
    }
    std::vector<std::size_t> reference;
    if (include_reference && cfg.reference_kl_coef) {
        HyperParams hp = base;
        hp.family = ObjectiveFamily::klpen;
        hp.clip_epsilon.reset();
        hp.kl_coef = *cfg.reference_kl_coef;
        require_runnable(cfg, hp, "reference");
        for (auto seed : cfg.seeds) {
            reference.push_back(specs.size());
            specs.push_back({prefix + "-reference-s" + std::to_string(seed), algo, env, hp, seed, cfg.total_steps});
        }
    }

    SweepResult res;
    res.output.runs = execute(specs, jobs);
    auto& out = res.output;
    add_run_files(out);
    const auto base_records = records_of(out.runs, baseline);
    out.files["aggregate/baseline.csv"] = aggregate_csv(base_records);

    std::string csv = "divisor,arm,rule,normalized_area_gap,final_gap,final_return_mean\n";
    auto add_row = [&](const GapEntry& e) {
        csv += format_number(e.divisor) + "," + e.arm + "," + to_string(e.rule) + "," +
               format_number(e.report.normalized_area_gap) + "," + format_number(e.report.final_gap) + "," +
               format_number(e.final_return_mean) + "\n";
    };
    std::map<double, std::vector<PlotSeries>> plots;
    for (const auto& g : groups) {
        GapEntry e;
        e.arm = g.plan.arm;
        e.rule = g.plan.rule;
        e.divisor = g.divisor;
        e.report = compare_runs(base_records, records_of(out.runs, g.idx));
        e.final_return_mean = mean_of(finals_of(out.runs, g.idx));
        if (g.divisor != 1.0) {
            out.files["aggregate/" + g.plan.arm + (prefix == "linear-lr" ? "-" + to_string(g.plan.rule) : "") + "-c" +
                      format_number(g.divisor) + ".csv"] = aggregate_csv(records_of(out.runs, g.idx));
        }
        auto& series = plots[g.divisor];
        if (series.empty()) series.push_back({"baseline c=1", e.report.curve_a});
        if (g.divisor != 1.0) {
            series.push_back({g.plan.arm + (prefix == "linear-lr" ? " " + to_string(g.plan.rule) : ""), e.report.curve_b});
        }
        add_row(e);
        res.reports.push_back(std::move(e));
    }
    if (!reference.empty()) {
        GapEntry e;
        e.arm = "reference";
        e.divisor = 1.0;
        e.report = compare_runs(base_records, records_of(out.runs, reference));
        e.final_return_mean = mean_of(finals_of(out.runs, reference));
        out.files["aggregate/reference.csv"] = aggregate_csv(records_of(out.runs, reference));
        add_row(e);
        res.reference = std::move(e);
    }
    out.files["reports.csv"] = csv;
    for (const auto& [c, series] : plots) {
        if (c == 1.0) continue;
        out.files["plots/c" + format_number(c) + ".svg"] =
            svg_plot(prefix + ": batch divisor c = " + format_number(c), "env steps", "smoothed return (seed mean)",
                     series);
    }

    std::string table = header(cfg, prefix + " sweep: " + to_string(algo) + " on " + to_string(env));
    table += "divisor  arm          rule                  area_gap  final_gap  final_return\n";
    for (const auto& e : res.reports) {
        char line[200];
        std::snprintf(line, sizeof line, "%7s  %-12s %-20s %9.5f  %9.5f  %12.4f\n", format_number(e.divisor).c_str(),
                      e.arm.c_str(), to_string(e.rule).c_str(), e.report.normalized_area_gap, e.report.final_gap,
                      e.final_return_mean);
        table += line;
    }
    if (res.reference) {
        table += "reference (klpen, kl_coef " + format_number(*cfg.reference_kl_coef) + ", c = 1): area_gap " +
                 fmt(res.reference->report.normalized_area_gap, 5) + ", final_return " +
                 fmt(res.reference->final_return_mean) + "\n";
    }
    res.output.files["summary.txt"] = table;
    return res;
}

}  // namespace

SweepResult cmd_batchsize(const ExperimentConfig& cfg, int jobs) {
    std::vector<ArmPlan> plans;
    const auto arms = standard_arms();
    for (const auto& name : cfg.arms) {
        const auto it = std::find_if(arms.begin(), arms.end(), [&](const SweepArm& a) { return a.name == name; });
        if (it == arms.end()) throw ConfigError(cfg.source, 0, "unknown arm '" + name + "'");
        plans.push_back({name, it->adjust, cfg.rule, is_ablation(name)});
    }
    SweepResult res = sweep(cfg, jobs, "batchsize", plans, true);
    auto& checks = res.output.checks;

    double largest_ablation_divisor = 0.0;
    for (double c : cfg.divisors) {
        if (c == 1.0) continue;
        const auto adj = res.gap("adjusted", c, cfg.rule), unadj = res.gap("unadjusted", c, cfg.rule);
        if (adj && unadj) {
            checks.push_back({"adjusted-gap<unadjusted-gap@c=" + format_number(c), true, *adj < *unadj,
                              "adjusted " + fmt(*adj, 5) + ", unadjusted " + fmt(*unadj, 5)});
        }
        int ablations = 0;
        for (const auto& e : res.reports) {
            if (is_ablation(e.arm) && same_value(e.divisor, c)) ++ablations;
        }
        if (ablations >= 2) largest_ablation_divisor = std::max(largest_ablation_divisor, c);
    }
    if (largest_ablation_divisor > 0.0 && res.find("no-lr", largest_ablation_divisor, cfg.rule)) {
        const double c = largest_ablation_divisor;
        const double no_lr = *res.gap("no-lr", c, cfg.rule);
        std::string worst_other;
        double other = -1.0;
        for (const auto& e : res.reports) {
            if (!is_ablation(e.arm) || e.arm == "no-lr" || !same_value(e.divisor, c)) continue;
            if (e.report.normalized_area_gap > other) {
                other = e.report.normalized_area_gap;
                worst_other = e.arm;
            }
        }
        checks.push_back({"no-lr-largest-ablation-gap@c=" + format_number(c), true, no_lr > other,
                          "no-lr " + fmt(no_lr, 5) + ", next largest " + worst_other + " " + fmt(other, 5)});
    }
    if (res.reference) {
        const auto adj = res.gap("adjusted", cfg.divisors.back(), cfg.rule);
        if (adj) {
            checks.push_back({"reference-gap>adjusted-gap@c=" + format_number(cfg.divisors.back()), false,
                              res.reference->report.normalized_area_gap > *adj,
                              "reference " + fmt(res.reference->report.normalized_area_gap, 5) + ", adjusted " +
                                  fmt(*adj, 5)});
        }
    }
    res.output.files["summary.txt"] += "\n" + format_checks(checks);
    return res;
}

SweepResult cmd_linear_lr(const ExperimentConfig& cfg, int jobs) {
    const std::vector<ArmPlan> plans{{"adjusted", Adjustments::all(), StepRule::adam_sqrt, false},
                                     {"adjusted", Adjustments::all(), StepRule::adam_linear, false}};
    SweepResult res = sweep(cfg, jobs, "linear-lr", plans, false);
    const double cmax = *std::max_element(cfg.divisors.begin(), cfg.divisors.end());
    for (double c : cfg.divisors) {
        if (c == 1.0) continue;
        const auto sq = res.gap("adjusted", c, StepRule::adam_sqrt);
        const auto lin = res.gap("adjusted", c, StepRule::adam_linear);
        if (!sq || !lin) continue;
        res.output.checks.push_back({"sqrt-gap<=linear-gap@c=" + format_number(c), c == cmax, *sq <= *lin,
                                     "sqrt " + fmt(*sq, 5) + ", linear " + fmt(*lin, 5)});
    }
    res.output.files["summary.txt"] += "\n" + format_checks(res.output.checks);
    return res;
}

// ------------------------------------------------------------ head to head

PassCounts pass_counts(Algo algo, const HyperParams& hp) {
    PassCounts p;
    if (is_phasic(algo)) {
        // collection, plus the frozen-policy forward before each auxiliary phase
        p.forward_only = 2.0;
        p.forward_backward = hp.policy_epochs + hp.value_epochs + hp.aux_epochs;
        if (uses_ewma(algo)) p.forward_only += hp.policy_epochs;
    } else {
        p.forward_only = 1.0;
        p.forward_backward = hp.ppo_epochs;
        if (uses_ewma(algo)) p.forward_only += hp.ppo_epochs;
    }
    return p;
}

HeadToHeadResult cmd_headtohead(const ExperimentConfig& cfg, int jobs) {
    const std::vector<EnvKind> envs = cfg.env ? std::vector<EnvKind>{*cfg.env} : cfg.envs;
    std::vector<RunSpec> specs;
    std::vector<std::pair<HeadToHeadCell, std::vector<std::size_t>>> groups;
    for (auto env : envs) {
        for (auto algo : cfg.algos) {
            const HyperParams hp = cfg.hparams_for(algo);
            require_runnable(cfg, hp, to_string(algo));
            HeadToHeadCell cell;
            cell.algo = algo;
            cell.env = env;
            std::vector<std::size_t> idx;
            for (auto seed : cfg.seeds) {
                idx.push_back(specs.size());
                specs.push_back({"headtohead-" + to_string(algo) + "-" + to_string(env) + "-s" + std::to_string(seed),
                                 algo, env, hp, seed, cfg.total_steps});
            }
            groups.emplace_back(cell, idx);
        }
    }
    HeadToHeadResult res;
    res.output.runs = execute(specs, jobs);
    auto& out = res.output;
    add_run_files(out);

    std::string csv = "env,algo,final_return_mean,final_return_std,forward_only_per_step,forward_backward_per_step\n";
    std::string table = header(cfg, "head to head");
    table += "env         algo       final_return (mean +- std)\n";
    std::map<EnvKind, std::vector<PlotSeries>> plots;
    for (auto& [cell, idx] : groups) {
        cell.final_returns = finals_of(out.runs, idx);
        cell.mean = mean_of(cell.final_returns);
        cell.stddev = stddev_of(cell.final_returns);
        const auto passes = pass_counts(cell.algo, cfg.hparams_for(cell.algo));
        csv += to_string(cell.env) + "," + to_string(cell.algo) + "," + format_number(cell.mean) + "," +
               format_number(cell.stddev) + "," + format_number(passes.forward_only) + "," +
               format_number(passes.forward_backward) + "\n";
        char line[160];
        std::snprintf(line, sizeof line, "%-11s %-10s %8.4f +- %.4f\n", to_string(cell.env).c_str(),
                      to_string(cell.algo).c_str(), cell.mean, cell.stddev);
        table += line;
        out.files["aggregate/" + to_string(cell.env) + "-" + to_string(cell.algo) + ".csv"] =
            aggregate_csv(records_of(out.runs, idx));
        plots[cell.env].push_back({to_string(cell.algo), group_curve(out.runs, idx)});
        res.cells.push_back(cell);
    }
    out.files["summary.csv"] = csv;
    for (const auto& [env, series] : plots) {
        out.files["plots/" + to_string(env) + ".svg"] =
            svg_plot("head to head: " + to_string(env), "env steps", "mean episode return (seed mean)", series);
    }

    table += "\nnetwork passes per env step (a pass evaluates every network the step needs):\n";
    for (auto algo : cfg.algos) {
        const auto p = pass_counts(algo, cfg.hparams_for(algo));
        table += "  " + to_string(algo) + ": " + format_number(p.forward_only) + " forward-only + " +
                 format_number(p.forward_backward) + " forward-backward\n";
    }

    for (auto env : envs) {
        for (auto [plain, ewma] : {std::pair{Algo::ppo, Algo::ppo_ewma}, std::pair{Algo::ppg, Algo::ppg_ewma}}) {
            const HeadToHeadCell *a = nullptr, *b = nullptr;
            for (const auto& c : res.cells) {
                if (c.env != env) continue;
                if (c.algo == plain) a = &c;
                if (c.algo == ewma) b = &c;
            }
            if (!a || !b) continue;
            const double noise = std::max(a->stddev, b->stddev);
            out.checks.push_back({to_string(ewma) + ">=" + to_string(plain) + "-within-noise@" + to_string(env), false,
                                  b->mean >= a->mean - noise,
                                  to_string(ewma) + " " + fmt(b->mean) + ", " + to_string(plain) + " " +
                                      fmt(a->mean) + ", noise " + fmt(noise)});
        }
    }
    out.files["summary.txt"] = table + "\n" + format_checks(out.checks);
    return res;
}

// ---------------------------------------------------------------- com x kl

const GridCell* GridResult::find(double com, double kl_coef) const {
    for (const auto& c : cells) {
        if (same_value(c.com, com) && same_value(c.kl_coef, kl_coef)) return &c;
    }
    return nullptr;
}

GridStats grid_stats(const std::vector<GridCell>& cells) {
    auto lookup = [&](double com, double kl) -> const GridCell* {
        for (const auto& c : cells) {
            if (same_value(c.com, com) && same_value(c.kl_coef, kl)) return &c;
        }
        return nullptr;
    };
    GridStats s;
    double diag = 0.0, off = 0.0;
    for (const auto& c : cells) {
        if (const auto* d = lookup(c.com / 2.0, c.kl_coef * 2.0)) {
            diag += std::abs(c.mean - d->mean);
            ++s.diagonal_pairs;
        }
        if (const auto* o = lookup(c.com / 2.0, c.kl_coef)) {
            off += std::abs(c.mean - o->mean);
            ++s.off_diagonal_pairs;
        }
    }
    s.diagonal_mean_abs_diff = s.diagonal_pairs ? diag / s.diagonal_pairs : kNaN;
    s.off_diagonal_mean_abs_diff = s.off_diagonal_pairs ? off / s.off_diagonal_pairs : kNaN;

    std::vector<double> x, y;
    for (const auto& c : cells) {
        x.push_back(std::log2(c.com) + std::log2(c.kl_coef));
        y.push_back(c.mean);
    }
    const double mx = mean_of(x), my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    s.band_correlation = (sxx > 0.0 && syy > 0.0) ? sxy / std::sqrt(sxx * syy) : kNaN;
    return s;
}

GridResult cmd_com_kl_grid(const ExperimentConfig& cfg, int jobs) {
    const Algo algo = cfg.algo.value_or(Algo::ppg_ewma);
    const EnvKind env = cfg.env.value();
    if (!uses_ewma(algo)) throw ConfigError(cfg.source, 0, "com-kl-grid needs an EWMA algorithm");
    HyperParams base;
    try {
        base = adjust(cfg.hparams_for(algo), cfg.grid_divisor, Adjustments::all(), cfg.rule);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(cfg.source, 0, std::string("grid_divisor: ") + e.what());
    }
    if (base.family != ObjectiveFamily::klpen) {
        throw ConfigError(cfg.source, 0, "com-kl-grid needs family = klpen in [hparams]");
    }
    for (double v : cfg.coms) {
        if (!(v > 0.0)) throw ConfigError(cfg.source, 0, "coms must be positive");
    }
    for (double v : cfg.kl_coefs) {
        if (!(v > 0.0)) throw ConfigError(cfg.source, 0, "kl_coefs must be positive");
    }

    std::vector<RunSpec> specs;
    std::vector<std::pair<GridCell, std::vector<std::size_t>>> groups;
    for (double com : cfg.coms) {
        for (double kl : cfg.kl_coefs) {
            HyperParams hp = base;
            hp.prox_com = com;
            hp.kl_coef = kl;
            require_runnable(cfg, hp, "grid cell");
            GridCell cell;
            cell.com = com;
            cell.kl_coef = kl;
            std::vector<std::size_t> idx;
            for (auto seed : cfg.seeds) {
                idx.push_back(specs.size());
                specs.push_back({"grid-com" + format_number(com) + "-kl" + format_number(kl) + "-s" +
                                     std::to_string(seed),
                                 algo, env, hp, seed, cfg.total_steps});
            }
            groups.emplace_back(cell, idx);
        }
    }

    GridResult res;
    res.output.runs = execute(specs, jobs);
    auto& out = res.output;
    add_run_files(out);
    std::string csv = "com,kl_coef,final_return_mean,final_return_std,n_seeds\n";
    for (auto& [cell, idx] : groups) {
        cell.final_returns = finals_of(out.runs, idx);
        cell.mean = mean_of(cell.final_returns);
        cell.stddev = stddev_of(cell.final_returns);
        csv += format_number(cell.com) + "," + format_number(cell.kl_coef) + "," + format_number(cell.mean) + "," +
               format_number(cell.stddev) + "," + std::to_string(cell.final_returns.size()) + "\n";
        res.cells.push_back(cell);
    }
    out.files["grid.csv"] = csv;
    res.stats = grid_stats(res.cells);

    std::string table = header(cfg, "com x kl grid: " + to_string(algo) + " on " + to_string(env) +
                                        ", batch divisor " + format_number(cfg.grid_divisor));
    table += "rows: com, columns: kl_coef; entries: mean final return\n";
    char cellbuf[64];
    table += "         ";
    for (double kl : cfg.kl_coefs) {
        std::snprintf(cellbuf, sizeof cellbuf, " %9s", format_number(kl).c_str());
        table += cellbuf;
    }
    table += "\n";
    for (double com : cfg.coms) {
        std::snprintf(cellbuf, sizeof cellbuf, "%9s", format_number(com).c_str());
        table += cellbuf;
        for (double kl : cfg.kl_coefs) {
            std::snprintf(cellbuf, sizeof cellbuf, " %9.4f", res.find(com, kl)->mean);
            table += cellbuf;
        }
        table += "\n";
    }
    const auto& st = res.stats;
    table += "\nmean |R(com,b) - R(com/2,2b)| = " + fmt(st.diagonal_mean_abs_diff, 5) + " over " +
             std::to_string(st.diagonal_pairs) + " pairs\n";
    table += "mean |R(com,b) - R(com/2,b)|  = " + fmt(st.off_diagonal_mean_abs_diff, 5) + " over " +
             std::to_string(st.off_diagonal_pairs) + " pairs\n";
    table += "correlation of R with log2(com) + log2(b) = " + fmt(st.band_correlation) + "\n";

    if (st.diagonal_pairs > 0 && st.off_diagonal_pairs > 0) {
        out.checks.push_back({"diagonal-band", true, st.diagonal_mean_abs_diff < st.off_diagonal_mean_abs_diff,
                              "diagonal " + fmt(st.diagonal_mean_abs_diff, 5) + ", off-diagonal " +
                                  fmt(st.off_diagonal_mean_abs_diff, 5)});
    }
    const double com_max = *std::max_element(cfg.coms.begin(), cfg.coms.end());
    const double com_min = *std::min_element(cfg.coms.begin(), cfg.coms.end());
    const double kl_max = *std::max_element(cfg.kl_coefs.begin(), cfg.kl_coefs.end());
    const double kl_min = *std::min_element(cfg.kl_coefs.begin(), cfg.kl_coefs.end());
    if (!same_value(com_max, com_min) || !same_value(kl_max, kl_min)) {
        const auto* def = res.find(com_max, kl_min);
        const auto* ext = res.find(com_min, kl_max);
        out.checks.push_back({"extreme-corner<default-corner", true, ext->mean < def->mean,
                              "default (com " + format_number(com_max) + ", kl " + format_number(kl_min) + ") " +
                                  fmt(def->mean) + ", extreme (com " + format_number(com_min) + ", kl " +
                                  format_number(kl_max) + ") " + fmt(ext->mean)});
    }
    out.files["summary.txt"] = table + "\n" + format_checks(out.checks);
    return res;
}

// ---------------------------------------------------------------- dispatch

CommandOutput run_experiment(const ExperimentConfig& cfg, int jobs) {
    switch (cfg.kind) {
        case ExperimentKind::run: return cmd_run(cfg, jobs);
        case ExperimentKind::staleness: return cmd_staleness(cfg, jobs).output;
        case ExperimentKind::batchsize: return cmd_batchsize(cfg, jobs).output;
        case ExperimentKind::linear_lr: return cmd_linear_lr(cfg, jobs).output;
        case ExperimentKind::headtohead: return cmd_headtohead(cfg, jobs).output;
        case ExperimentKind::com_kl_grid: return cmd_com_kl_grid(cfg, jobs).output;
        case ExperimentKind::gradcheck: {
            GradcheckOptions opt;
            opt.instances = cfg.gradcheck_instances;
            opt.seed = cfg.seeds.front();
            const auto report = run_gradcheck(opt);
            CommandOutput out;
            out.files["gradcheck.txt"] = report.format();
            out.files["gradcheck.csv"] = report.csv();
            out.files["summary.txt"] = report.format();
            for (const auto& e : report.entries) {
                out.checks.push_back({e.name, true, e.passed, "max error " + format_number(e.max_error)});
            }
            return out;
        }
    }
    throw std::logic_error("unhandled experiment kind");
}

}  // namespace ppoewma

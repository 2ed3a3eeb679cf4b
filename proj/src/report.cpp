#include "ppoewma/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace ppoewma {

namespace {

std::string fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

const std::vector<std::string>& run_csv_columns() {
    static const std::vector<std::string> cols{"run_id",        "algo",        "env",       "seed",
                                               "iteration",     "env_steps",   "mean_episode_return",
                                               "policy_loss",   "value_loss",  "entropy",   "kl_prox",
                                               "kl_behav",      "clip_frac",   "adv_std_estimate",
                                               "max_ratio"};
    return cols;
}

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string run_csv(const std::vector<RunRecord>& records) {
    std::ostringstream os;
    const auto& cols = run_csv_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    for (const auto& r : records) {
        os << r.run_id << ',' << to_string(r.algo) << ',' << to_string(r.env) << ',' << r.seed << ',' << r.iteration
           << ',' << r.env_steps << ',' << format_number(r.mean_episode_return) << ','
           << format_number(r.policy_loss) << ',' << format_number(r.value_loss) << ',' << format_number(r.entropy)
           << ',' << format_number(r.kl_prox) << ',' << format_number(r.kl_behav) << ','
           << format_number(r.clip_frac) << ',' << format_number(r.adv_std_estimate) << ','
           << format_number(r.max_ratio) << '\n';
    }
    return os.str();
}

std::string aggregate_csv(const std::vector<std::vector<RunRecord>>& runs) {
    std::ostringstream os;
    os << "iteration,env_steps,return_mean,return_std,n_runs\n";
    if (runs.empty()) return os.str();
    const std::size_t len = runs.front().size();
    for (const auto& r : runs) {
        if (r.size() != len) throw std::invalid_argument("aggregate_csv: runs have different lengths");
    }
    for (std::size_t i = 0; i < len; ++i) {
        std::vector<double> vals;
        for (const auto& r : runs) {
            if (r[i].env_steps != runs.front()[i].env_steps) {
                throw std::invalid_argument("aggregate_csv: runs do not share an env_steps grid");
            }
            if (!std::isnan(r[i].mean_episode_return)) vals.push_back(r[i].mean_episode_return);
        }
        double mean = std::numeric_limits<double>::quiet_NaN(), sd = std::numeric_limits<double>::quiet_NaN();
        if (!vals.empty()) {
            mean = 0.0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(vals.size());
            sd = 0.0;
            if (vals.size() > 1) {
                for (double v : vals) sd += (v - mean) * (v - mean);
                sd = std::sqrt(sd / static_cast<double>(vals.size() - 1));
            }
        }
        os << runs.front()[i].iteration << ',' << runs.front()[i].env_steps << ',' << format_number(mean) << ','
           << format_number(sd) << ',' << vals.size() << '\n';
    }
    return os.str();
}

std::string svg_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                     const std::vector<PlotSeries>& series) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    const double width = 720, height = 440, left = 70, right = 190, top = 40, bottom = 50;
    const double pw = width - left - right, ph = height - top - bottom;

    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        for (const auto& p : s.curve) {
            if (!std::isfinite(p.value)) continue;
            x0 = std::min(x0, p.env_steps);
            x1 = std::max(x1, p.env_steps);
            y0 = std::min(y0, p.value);
            y1 = std::max(y1, p.value);
        }
    }
    if (!std::isfinite(x0)) {
        x0 = 0;
        x1 = 1;
        y0 = 0;
        y1 = 1;
    }
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto sy = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << fixed(left + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
       << xml_escape(title) << "</text>\n";
    os << "<rect x=\"" << fixed(left) << "\" y=\"" << fixed(top) << "\" width=\"" << fixed(pw) << "\" height=\""
       << fixed(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
        os << "<text x=\"" << fixed(sx(fx)) << "\" y=\"" << fixed(top + ph + 16) << "\" text-anchor=\"middle\">"
           << fixed(fx, 0) << "</text>\n";
        os << "<text x=\"" << fixed(left - 6) << "\" y=\"" << fixed(sy(fy) + 4) << "\" text-anchor=\"end\">"
           << fixed(fy, 3) << "</text>\n";
    }
    os << "<text x=\"" << fixed(left + pw / 2) << "\" y=\"" << fixed(height - 10) << "\" text-anchor=\"middle\">"
       << xml_escape(x_label) << "</text>\n";
    os << "<text x=\"16\" y=\"" << fixed(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
       << fixed(top + ph / 2) << ")\">" << xml_escape(y_label) << "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = palette[i % (sizeof palette / sizeof palette[0])];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        bool first = true;
        for (const auto& p : series[i].curve) {
            if (!std::isfinite(p.value)) continue;
            os << (first ? "" : " ") << fixed(sx(p.env_steps)) << ',' << fixed(sy(p.value));
            first = false;
        }
        os << "\"/>\n";
        const double ly = top + 14 + 18 * static_cast<double>(i);
        os << "<line x1=\"" << fixed(left + pw + 12) << "\" y1=\"" << fixed(ly - 4) << "\" x2=\""
           << fixed(left + pw + 32) << "\" y2=\"" << fixed(ly - 4) << "\" stroke=\"" << color
           << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << fixed(left + pw + 38) << "\" y=\"" << fixed(ly) << "\">" << xml_escape(series[i].label)
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::vector<Warning> emit_warnings(const std::vector<RunRecord>& records, const WarningContext& ctx) {
    std::vector<Warning> out;
    const std::size_t w = static_cast<std::size_t>(std::max(1, ctx.window));
    std::vector<const RunRecord*> active;
    for (const auto& r : records) {
        if (!std::isnan(r.clip_frac)) active.push_back(&r);
    }
    const double high = ctx.policy_epochs <= 1 ? 0.10 : 0.20;
    for (std::size_t start = 0; start + w <= active.size(); start += w) {
        const auto first = active[start]->iteration;
        const auto last = active[start + w - 1]->iteration;
        double clip = 0.0;
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        int turns = 0;
        for (std::size_t i = start; i < start + w; ++i) {
            clip += active[i]->clip_frac;
            const double a = active[i]->adv_std_estimate;
            lo = std::min(lo, a);
            hi = std::max(hi, a);
            if (i >= start + 2) {
                const double d1 = active[i - 1]->adv_std_estimate - active[i - 2]->adv_std_estimate;
                const double d2 = a - active[i - 1]->adv_std_estimate;
                if (d1 * d2 < 0.0) ++turns;
            }
        }
        clip /= static_cast<double>(w);
        if (ctx.clipping && clip < 0.01) {
            out.push_back({"low-clip", first, last,
                           "clip fraction " + format_number(clip) +
                               " is well below 1%: consider a larger iteration batch or a larger beta_prox"});
        }
        if (ctx.clipping && clip > high) {
            out.push_back({"high-clip", first, last,
                           "clip fraction " + format_number(clip) + " exceeds " + format_number(high) +
                               " with " + std::to_string(ctx.policy_epochs) +
                               " policy epoch(s): consider a lower step size"});
        }
        if (lo > 0.0 && hi / lo >= 10.0 && turns >= 2) {
            out.push_back({"adv-std-oscillation", first, last,
                           "advantage std estimate varies by a factor of " + format_number(hi / lo) +
                               ": consider more advantage-normalization iterations (larger adv_norm_ess)"});
        }
    }
    return out;
}

std::string format_warnings(const std::string& run_id, const std::vector<Warning>& warnings) {
    std::ostringstream os;
    for (const auto& w : warnings) {
        os << run_id << " iterations " << w.first_iteration << "-" << w.last_iteration << " [" << w.kind << "] "
           << w.message << '\n';
    }
    return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace ppoewma

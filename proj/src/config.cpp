#include "ppoewma/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include "ppoewma/invariance.hpp"

namespace ppoewma {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_double(const std::string& s) {
    const std::string t = trim(s);
    if (t == "inf") return std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
        throw std::invalid_argument("expected a number, got '" + s + "'");
    }
    return v;
}

std::int64_t parse_int(const std::string& s) {
    const std::string t = trim(s);
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
        throw std::invalid_argument("expected an integer, got '" + s + "'");
    }
    return v;
}

int parse_int32(const std::string& s) {
    const auto v = parse_int(s);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
        throw std::invalid_argument("integer out of range: '" + s + "'");
    }
    return static_cast<int>(v);
}

bool parse_bool(const std::string& s) {
    const std::string t = trim(s);
    if (t == "true" || t == "yes" || t == "1") return true;
    if (t == "false" || t == "no" || t == "0") return false;
    throw std::invalid_argument("expected true or false, got '" + s + "'");
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& s, F parse_one) {
    std::vector<T> out;
    for (const auto& item : split_list(s)) out.push_back(parse_one(item));
    if (out.empty()) throw std::invalid_argument("expected a non-empty comma-separated list");
    return out;
}

using Setter = std::function<void(HyperParams&, const std::string&)>;

const std::map<std::string, Setter>& hparam_table() {
    static const std::map<std::string, Setter> table{
        {"step_size", [](HyperParams& h, const std::string& v) { h.step_size = parse_double(v); }},
        {"adam_beta1", [](HyperParams& h, const std::string& v) { h.adam_beta1 = parse_double(v); }},
        {"adam_beta2", [](HyperParams& h, const std::string& v) { h.adam_beta2 = parse_double(v); }},
        {"adam_epsilon", [](HyperParams& h, const std::string& v) { h.adam_epsilon = parse_double(v); }},
        {"aux_step_size", [](HyperParams& h, const std::string& v) { h.aux_step_size = parse_double(v); }},
        {"reset_adam_each_phase", [](HyperParams& h, const std::string& v) { h.reset_adam_each_phase = parse_bool(v); }},
        {"family", [](HyperParams& h, const std::string& v) { h.family = parse_family(trim(v)); }},
        {"coupling", [](HyperParams& h, const std::string& v) { h.coupling = parse_coupling(trim(v)); }},
        {"clip_epsilon",
         [](HyperParams& h, const std::string& v) {
             const std::string t = trim(v);
             if (t == "none" || t == "inf") {
                 h.clip_epsilon.reset();
             } else {
                 h.clip_epsilon = parse_double(t);
             }
         }},
        {"kl_coef", [](HyperParams& h, const std::string& v) { h.kl_coef = parse_double(v); }},
        {"ratio_cap", [](HyperParams& h, const std::string& v) { h.ratio_cap = parse_double(v); }},
        {"value_coef", [](HyperParams& h, const std::string& v) { h.value_coef = parse_double(v); }},
        {"entropy_coef", [](HyperParams& h, const std::string& v) { h.entropy_coef = parse_double(v); }},
        {"gamma", [](HyperParams& h, const std::string& v) { h.gamma = parse_double(v); }},
        {"lambda", [](HyperParams& h, const std::string& v) { h.lambda = parse_double(v); }},
        {"reward_normalize", [](HyperParams& h, const std::string& v) { h.reward_normalize = parse_bool(v); }},
        {"reward_norm_ess", [](HyperParams& h, const std::string& v) { h.reward_norm_ess = parse_double(v); }},
        {"adv_normalize", [](HyperParams& h, const std::string& v) { h.adv_normalize = parse_bool(v); }},
        {"adv_subtract_mean", [](HyperParams& h, const std::string& v) { h.adv_subtract_mean = parse_bool(v); }},
        {"adv_update_before_use", [](HyperParams& h, const std::string& v) { h.adv_update_before_use = parse_bool(v); }},
        {"adv_norm_ess", [](HyperParams& h, const std::string& v) { h.adv_norm_ess = parse_double(v); }},
        {"n_env", [](HyperParams& h, const std::string& v) { h.n_env = parse_int32(v); }},
        {"horizon", [](HyperParams& h, const std::string& v) { h.horizon = parse_int32(v); }},
        {"minibatches", [](HyperParams& h, const std::string& v) { h.minibatches = parse_int32(v); }},
        {"staleness_delay", [](HyperParams& h, const std::string& v) { h.staleness_delay = parse_int32(v); }},
        {"ppo_epochs", [](HyperParams& h, const std::string& v) { h.ppo_epochs = parse_int32(v); }},
        {"policy_epochs", [](HyperParams& h, const std::string& v) { h.policy_epochs = parse_int32(v); }},
        {"value_epochs", [](HyperParams& h, const std::string& v) { h.value_epochs = parse_int32(v); }},
        {"n_pi", [](HyperParams& h, const std::string& v) { h.n_pi = parse_int32(v); }},
        {"aux_epochs", [](HyperParams& h, const std::string& v) { h.aux_epochs = parse_int32(v); }},
        {"aux_minibatch_size", [](HyperParams& h, const std::string& v) { h.aux_minibatch_size = parse_int32(v); }},
        {"clone_coef", [](HyperParams& h, const std::string& v) { h.clone_coef = parse_double(v); }},
        {"prox_com", [](HyperParams& h, const std::string& v) { h.prox_com = parse_double(v); }},
        {"hidden", [](HyperParams& h, const std::string& v) { h.hidden = parse_list<int>(v, parse_int32); }},
    };
    return table;
}

}  // namespace

ConfigError::ConfigError(const std::string& source, int line, const std::string& what)
    : std::runtime_error(source + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what),
      m_line(line) {}

std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::run: return "run";
        case ExperimentKind::staleness: return "staleness";
        case ExperimentKind::batchsize: return "batchsize";
        case ExperimentKind::linear_lr: return "linear-lr";
        case ExperimentKind::headtohead: return "headtohead";
        case ExperimentKind::com_kl_grid: return "com-kl-grid";
        case ExperimentKind::gradcheck: return "gradcheck";
    }
    return "?";
}

ExperimentKind parse_experiment_kind(const std::string& s) {
    for (auto k : {ExperimentKind::run, ExperimentKind::staleness, ExperimentKind::batchsize, ExperimentKind::linear_lr,
                   ExperimentKind::headtohead, ExperimentKind::com_kl_grid, ExperimentKind::gradcheck}) {
        if (to_string(k) == s) return k;
    }
    throw std::invalid_argument("unknown experiment kind '" + s +
                                "' (expected run, staleness, batchsize, linear-lr, headtohead, com-kl-grid or gradcheck)");
}

void set_hparam(HyperParams& hp, const std::string& key, const std::string& value) {
    const auto& table = hparam_table();
    const auto it = table.find(key);
    if (it == table.end()) throw std::invalid_argument("unknown hyperparameter '" + key + "'");
    it->second(hp, value);
}

const std::vector<std::string>& hparam_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const auto& [k, _] : hparam_table()) out.push_back(k);
        return out;
    }();
    return keys;
}

HyperParams ExperimentConfig::hparams_for(Algo a) const {
    HyperParams hp = algo_defaults(a);
    for (const auto& [k, v] : overrides) set_hparam(hp, k, v);
    return hp;
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
    ExperimentConfig cfg;
    cfg.source = source;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line_no = 0;
    bool have_kind = false, have_steps = false;
    std::map<std::string, int> seen;

    while (std::getline(in, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(source, line_no, "malformed section header '" + line + "'");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "experiment" && section != "hparams" && section != "sweep") {
                throw ConfigError(source, line_no, "unknown section [" + section + "]");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(source, line_no, "expected key = value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(source, line_no, "empty key");
        if (section.empty()) throw ConfigError(source, line_no, "key '" + key + "' appears before any section header");
        const std::string qualified = section + "." + key;
        if (const auto prev = seen.find(qualified); prev != seen.end()) {
            throw ConfigError(source, line_no,
                              "duplicate key '" + key + "' (first set on line " + std::to_string(prev->second) + ")");
        }
        seen[qualified] = line_no;

        try {
            if (section == "hparams") {
                HyperParams probe;
                set_hparam(probe, key, value);
                cfg.overrides.emplace_back(key, value);
            } else if (section == "experiment") {
                if (key == "kind") {
                    cfg.kind = parse_experiment_kind(value);
                    have_kind = true;
                } else if (key == "env") {
                    cfg.env = parse_env_kind(value);
                } else if (key == "algo") {
                    cfg.algo = parse_algo(value);
                } else if (key == "seeds") {
                    cfg.seeds = parse_list<std::uint64_t>(value, [](const std::string& s) {
                        const auto v = parse_int(s);
                        if (v < 0) throw std::invalid_argument("seeds must be non-negative");
                        return static_cast<std::uint64_t>(v);
                    });
                } else if (key == "total_steps") {
                    cfg.total_steps = parse_int(value);
                    if (cfg.total_steps < 0) throw std::invalid_argument("total_steps must be non-negative");
                    have_steps = true;
                } else if (key == "output_dir") {
                    cfg.output_dir = value;
                } else if (key == "check") {
                    cfg.check = parse_bool(value);
                } else {
                    throw std::invalid_argument("unknown key '" + key + "' in [experiment]");
                }
            } else {  // sweep
                if (key == "delays") {
                    cfg.delays = parse_list<int>(value, parse_int32);
                } else if (key == "couplings") {
                    cfg.couplings = parse_list<Coupling>(value, parse_coupling);
                } else if (key == "divisors") {
                    cfg.divisors = parse_list<double>(value, parse_double);
                } else if (key == "arms") {
                    cfg.arms = parse_list<std::string>(value, [](const std::string& s) {
                        for (const auto& arm : standard_arms()) {
                            if (arm.name == s) return s;
                        }
                        throw std::invalid_argument("unknown arm '" + s + "'");
                    });
                } else if (key == "ablation_divisors") {
                    cfg.ablation_divisors = parse_list<double>(value, parse_double);
                } else if (key == "rule") {
                    cfg.rule = parse_step_rule(value);
                } else if (key == "reference_kl_coef") {
                    cfg.reference_kl_coef = parse_double(value);
                } else if (key == "coms") {
                    cfg.coms = parse_list<double>(value, parse_double);
                } else if (key == "kl_coefs") {
                    cfg.kl_coefs = parse_list<double>(value, parse_double);
                } else if (key == "grid_divisor") {
                    cfg.grid_divisor = parse_double(value);
                } else if (key == "algos") {
                    cfg.algos = parse_list<Algo>(value, parse_algo);
                } else if (key == "envs") {
                    cfg.envs = parse_list<EnvKind>(value, parse_env_kind);
                } else if (key == "gradcheck_instances") {
                    cfg.gradcheck_instances = parse_int32(value);
                } else {
                    throw std::invalid_argument("unknown key '" + key + "' in [sweep]");
                }
            }
        } catch (const std::invalid_argument& e) {
            throw ConfigError(source, line_no, e.what());
        }
    }

    if (!have_kind) throw ConfigError(source, 0, "missing required key 'kind' in [experiment]");
    if (cfg.seeds.empty()) throw ConfigError(source, 0, "seeds must not be empty");
    const bool needs_env = cfg.kind != ExperimentKind::headtohead && cfg.kind != ExperimentKind::gradcheck;
    if (needs_env && !cfg.env) throw ConfigError(source, 0, "missing required key 'env' in [experiment]");
    if (cfg.kind != ExperimentKind::gradcheck && !have_steps) {
        throw ConfigError(source, 0, "missing required key 'total_steps' in [experiment]");
    }
    if (cfg.kind == ExperimentKind::com_kl_grid && (cfg.coms.empty() || cfg.kl_coefs.empty())) {
        throw ConfigError(source, 0, "com-kl-grid needs 'coms' and 'kl_coefs' in [sweep]");
    }
    if (cfg.kind == ExperimentKind::gradcheck && cfg.gradcheck_instances < 1) {
        throw ConfigError(source, 0, "gradcheck_instances must be >= 1");
    }
    // Surface inconsistent overrides now rather than inside a worker.
    try {
        validate(cfg.hparams_for(cfg.algo.value_or(Algo::ppo)));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(source, 0, std::string("invalid hyperparameters: ") + e.what());
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string(), 0, "cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

}  // namespace ppoewma

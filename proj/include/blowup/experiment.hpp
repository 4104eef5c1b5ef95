#pragma once

// Config-driven experiment runner: INI configs, named presets, dispatch to the modules and
// report bundles (summary JSON, CSVs, text table) written atomically.

#include "blowup/comparison_ode.hpp"
#include "blowup/critical_curves.hpp"
#include "blowup/eigenfunction.hpp"
#include "blowup/errors.hpp"
#include "blowup/metric.hpp"
#include "blowup/wave_sim.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace blowup {

inline constexpr const char* kVersion = "1.0.0";

enum class ExperimentKind { CurvesScan, EigenVerify, Lemma22Verify, OdeSweep, PdeSweep, KatoGrid, ValidateMetric };

inline const char* to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::CurvesScan: return "curves-scan";
        case ExperimentKind::EigenVerify: return "eigen-verify";
        case ExperimentKind::Lemma22Verify: return "lemma22-verify";
        case ExperimentKind::OdeSweep: return "ode-sweep";
        case ExperimentKind::PdeSweep: return "pde-sweep";
        case ExperimentKind::KatoGrid: return "kato-grid";
        case ExperimentKind::ValidateMetric: return "validate-metric";
    }
    return "?";
}

inline const std::vector<ExperimentKind>& all_experiment_kinds() {
    static const std::vector<ExperimentKind> kinds = {
        ExperimentKind::CurvesScan, ExperimentKind::EigenVerify, ExperimentKind::Lemma22Verify, ExperimentKind::OdeSweep,
        ExperimentKind::PdeSweep,   ExperimentKind::KatoGrid,    ExperimentKind::ValidateMetric};
    return kinds;
}

inline ExperimentKind experiment_kind_from_string(const std::string& s, const std::string& key = "experiment") {
    for (auto k : all_experiment_kinds()) {
        if (s == to_string(k)) return k;
    }
    throw ConfigError(key, "unknown experiment '" + s + "'");
}

struct ExperimentConfig {
    /// Section name; also the bundle subdirectory.
    std::string name;
    ExperimentKind kind = ExperimentKind::CurvesScan;
    /// Preset the parameters started from, if any.
    std::string preset;
    std::map<std::string, std::string> params;
};

struct RunConfig {
    std::vector<ExperimentConfig> experiments;
    std::filesystem::path out = "results";
    unsigned threads = 0;
};

/// Typed, key-checked view of one experiment's parameters. Errors name "section.key".
class Params {
public:
    Params(std::string section, const std::map<std::string, std::string>& kv) : section_(std::move(section)), kv_(kv) {}

    void allow(std::initializer_list<const char*> keys) const {
        std::set<std::string> ok(keys.begin(), keys.end());
        for (const auto& [k, v] : kv_) {
            if (!ok.count(k)) throw ConfigError(path(k), "unknown key");
        }
    }

    std::string path(const std::string& key) const { return section_ + "." + key; }
    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    std::string str(const std::string& key, const std::string& def) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? def : it->second;
    }

    double num(const std::string& key, double def) const { return has(key) ? parse_num(key, kv_.at(key)) : def; }

    int integer(const std::string& key, int def) const {
        if (!has(key)) return def;
        const double x = parse_num(key, kv_.at(key));
        if (x != std::floor(x) || std::abs(x) > 1e9) throw ConfigError(path(key), "expected an integer");
        return static_cast<int>(x);
    }

    bool flag(const std::string& key, bool def) const {
        if (!has(key)) return def;
        const auto& v = kv_.at(key);
        if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
        if (v == "false" || v == "no" || v == "0" || v == "off") return false;
        throw ConfigError(path(key), "expected true or false, got '" + v + "'");
    }

    std::vector<std::string> words(const std::string& key, const std::vector<std::string>& def) const {
        if (!has(key)) return def;
        return split(kv_.at(key));
    }

    std::vector<double> nums(const std::string& key, const std::vector<double>& def) const {
        if (!has(key)) return def;
        std::vector<double> out;
        for (const auto& w : split(kv_.at(key))) out.push_back(parse_num(key, w));
        if (out.empty()) throw ConfigError(path(key), "empty list");
        return out;
    }

    static std::vector<std::string> split(const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        std::istringstream is(s);
        while (std::getline(is, cur, ',')) {
            const auto a = cur.find_first_not_of(" \t");
            const auto b = cur.find_last_not_of(" \t");
            if (a != std::string::npos) out.push_back(cur.substr(a, b - a + 1));
        }
        return out;
    }

private:
    double parse_num(const std::string& key, const std::string& v) const {
        char* end = nullptr;
        const double x = std::strtod(v.c_str(), &end);
        if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(x)) {
            throw ConfigError(path(key), "expected a number, got '" + v + "'");
        }
        return x;
    }

    std::string section_;
    const std::map<std::string, std::string>& kv_;
};

// ---------------------------------------------------------------------------
// Presets

struct PresetInfo {
    std::string name;
    ExperimentKind kind;
    std::string description;
    std::map<std::string, std::string> params;
};

inline const std::vector<PresetInfo>& preset_table() {
    static const std::vector<PresetInfo> table = {
        {"curves-n3-c05", ExperimentKind::CurvesScan, "region table over p, q in [1.1, 4], n = 3, c = 0.5",
         {{"p_min", "1.1"}, {"p_max", "4"}, {"p_steps", "30"}, {"ns", "3"}, {"c", "0.5"}, {"kinds", "SS,GG,SG"}}},
        {"flat-eigen-n3", ExperimentKind::EigenVerify, "flat n = 3 eigenfunction against sinh(x)/x",
         {{"metric", "flat"}, {"ns", "3"}, {"lambdas", "0.1,0.5"}, {"range", "50"}, {"h", "0.1"}, {"tol", "1e-6"}}},
        {"flat-eigen-n2", ExperimentKind::EigenVerify, "flat n = 2 eigenfunction against the I0 series",
         {{"metric", "flat"}, {"ns", "2"}, {"lambdas", "0.1,0.5"}, {"range", "20"}, {"h", "0.05"}, {"tol", "1e-6"}}},
        {"longrange-eigen", ExperimentKind::EigenVerify, "long-range metric (delta 0.1, rho 2) sandwich constant",
         {{"metric", "long_range"}, {"delta", "0.1"}, {"rho", "2"}, {"ns", "2,3"}, {"lambdas", "0.1"}, {"range", "50"},
          {"h", "0.25"}}},
        {"cone-integrals-flat-n3", ExperimentKind::Lemma22Verify, "weighted cone integrals, flat n = 3, c in {1, 0.5}",
         {{"n", "3"}, {"cs", "1,0.5"}, {"ps", "2,3"}, {"lambda", "0.5"}, {"R1", "1"}, {"t_min", "1"}, {"t_max", "100"},
          {"t_count", "40"}, {"h", "0.1"}, {"slope_tol", "0.1"}}},
        {"ss-n3-p2q2", ExperimentKind::OdeSweep, "SS comparison system, n = 3, p = q = 2",
         {{"system", "SS2nd"}, {"p", "2"}, {"q", "2"}, {"n", "3"}, {"eps_max", "1e-2"}, {"eps_min", "1e-4"},
          {"eps_count", "9"}, {"slope_tol", "0.15"}}},
        {"gg-n2-p2q2", ExperimentKind::OdeSweep, "GG comparison system, n = 2, p = q = 2",
         {{"system", "GG1st"}, {"p", "2"}, {"q", "2"}, {"n", "2"}, {"eps_max", "1e-2"}, {"eps_min", "1e-4"},
          {"eps_count", "9"}, {"slope_tol", "0.15"}}},
        {"gg-multi-n2-c05", ExperimentKind::OdeSweep, "GG two-speed comparison system, n = 2, c = 0.5, lambda = 0.25",
         {{"system", "GGMulti"}, {"p", "2"}, {"q", "2"}, {"n", "2"}, {"c", "0.5"}, {"lambda", "0.25"},
          {"eps_max", "1e-1"}, {"eps_min", "1e-3"}, {"eps_count", "9"}, {"slope_tol", "0.25"}}},
        {"sg-n3-p2q2", ExperimentKind::OdeSweep, "SG comparison system, n = 3, p = q = 2",
         {{"system", "SG"}, {"p", "2"}, {"q", "2"}, {"n", "3"}, {"eps_max", "1e-1"}, {"eps_min", "1e-3"},
          {"eps_count", "9"}, {"slope_tol", "0.25"}}},
        {"kato-grid", ExperimentKind::KatoGrid, "20 sampled Kato hypothesis sets integrated to t = 1e6",
         {{"samples", "20"}, {"seed", "2024"}, {"min_margin", "0.5"}, {"t_max", "1e6"}}},
        {"pde-ss-n3", ExperimentKind::PdeSweep, "PDE suite: SS flat n = 3 p = q = 2 sweep plus solver checks",
         {{"kind", "SS"}, {"p", "2"}, {"q", "2"}, {"n", "3"}, {"h", "0.05"}, {"t_max", "600"}, {"eps_max", "10"},
          {"eps_min", "1"}, {"eps_count", "5"}, {"slope_tol", "0.3"}, {"refine", "true"}, {"refine_tol", "0.1"},
          {"checks", "sweep,support,identity,manufactured,dalembert"}}},
        {"validate-longrange", ExperimentKind::ValidateMetric, "decay and ellipticity of the long-range profile",
         {{"metric", "long_range"}, {"delta", "0.1"}, {"rho", "2"}, {"r_max", "100"}, {"h", "0.1"}}},
    };
    return table;
}

inline std::vector<std::string> preset_names() {
    std::vector<std::string> out;
    for (const auto& p : preset_table()) out.push_back(p.name);
    return out;
}

inline ExperimentConfig preset(const std::string& name) {
    for (const auto& p : preset_table()) {
        if (p.name == name) return {p.name, p.kind, p.name, p.params};
    }
    std::string avail;
    for (const auto& n : preset_names()) avail += (avail.empty() ? "" : ", ") + n;
    throw LookupError("unknown preset '" + name + "'; available: " + avail);
}

// ---------------------------------------------------------------------------
// Config files

namespace detail {
inline bool safe_name(const std::string& s) {
    if (s.empty() || s[0] == '.') return false;
    for (char ch : s) {
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) return false;
    }
    return true;
}
}  // namespace detail

/// Builds an experiment from a section: optional `preset`, optional `experiment` (required without a preset),
/// the remaining keys override the preset's parameters.
inline ExperimentConfig experiment_from_section(const std::string& name, const std::map<std::string, std::string>& kv) {
    if (!detail::safe_name(name)) throw ConfigError(name, "experiment names may use letters, digits, '-', '_' and '.'");
    ExperimentConfig cfg;
    cfg.name = name;
    bool have_kind = false;
    if (auto it = kv.find("preset"); it != kv.end()) {
        try {
            const auto base = preset(it->second);
            cfg.kind = base.kind;
            cfg.params = base.params;
            cfg.preset = base.preset;
            have_kind = true;
        } catch (const LookupError& e) {
            throw ConfigError(name + ".preset", e.what());
        }
    }
    if (auto it = kv.find("experiment"); it != kv.end()) {
        const auto k = experiment_kind_from_string(it->second, name + ".experiment");
        if (have_kind && k != cfg.kind) throw ConfigError(name + ".experiment", "does not match the preset's experiment");
        cfg.kind = k;
        have_kind = true;
    }
    if (!have_kind) throw ConfigError(name + ".experiment", "missing (or give a preset)");
    for (const auto& [k, v] : kv) {
        if (k != "preset" && k != "experiment") cfg.params[k] = v;
    }
    return cfg;
}

/// INI layout:
///   [run]            experiments = a, b   (ordered; a name without a section is taken as a preset)
///                    out = DIR, threads = N
///   [a]              experiment = ode-sweep | preset = ss-n3-p2q2, then parameters
inline RunConfig parse_config(std::istream& is) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("", std::string("malformed config: ") + e.what());
    }
    auto section = [&](const std::string& name) {
        std::map<std::string, std::string> kv;
        if (auto node = tree.get_child_optional(pt::ptree::path_type(name, '\0'))) {
            for (const auto& [k, v] : *node) {
                if (!v.empty()) throw ConfigError(name + "." + k, "nested keys are not supported");
                kv[k] = v.data();
            }
        }
        return kv;
    };
    RunConfig rc;
    const auto run = section("run");
    const Params rp("run", run);
    rp.allow({"experiments", "out", "threads"});
    if (!tree.get_child_optional("run")) throw ConfigError("run", "missing [run] section");
    rc.out = rp.str("out", rc.out.string());
    const int th = rp.integer("threads", 0);
    if (th < 0) throw ConfigError("run.threads", "must be >= 0");
    rc.threads = static_cast<unsigned>(th);
    std::set<std::string> seen;
    for (const auto& name : rp.words("experiments", {})) {
        if (!seen.insert(name).second) throw ConfigError("run.experiments", "duplicate experiment '" + name + "'");
        if (tree.get_child_optional(pt::ptree::path_type(name, '\0'))) {
            rc.experiments.push_back(experiment_from_section(name, section(name)));
        } else {
            try {
                rc.experiments.push_back(preset(name));
            } catch (const LookupError&) {
                throw ConfigError("run.experiments", "'" + name + "' is neither a section nor a preset");
            }
        }
    }
    for (const auto& [k, v] : tree) {
        if (k != "run" && !seen.count(k)) throw ConfigError(k, "section is not listed in run.experiments");
    }
    return rc;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("", "cannot open config file " + path.string());
    return parse_config(is);
}

// ---------------------------------------------------------------------------
// Results

struct Assertion {
    std::string name;
    double measured = 0.0;
    double expected = 0.0;
    double tolerance = 0.0;
    /// abs: |m - e| <= tol; rel: |m - e| <= tol |e|; max: m <= tol; min: m >= tol; range: e <= m <= tol;
    /// positive: m > 0; finite: m is finite.
    std::string rule;
    bool passed = false;
};

struct ExperimentResult {
    std::string name;
    ExperimentKind kind = ExperimentKind::CurvesScan;
    std::string preset;
    std::map<std::string, std::string> params;
    std::vector<Assertion> assertions;
    std::vector<std::string> files;
    nlohmann::json details = nlohmann::json::object();

    bool passed() const {
        for (const auto& a : assertions)
            if (!a.passed) return false;
        return true;
    }

    void check_abs(std::string n, double m, double e, double tol) {
        assertions.push_back({std::move(n), m, e, tol, "abs", std::abs(m - e) <= tol});
    }
    void check_rel(std::string n, double m, double e, double tol) {
        assertions.push_back({std::move(n), m, e, tol, "rel", std::abs(m - e) <= tol * std::abs(e)});
    }
    void check_max(std::string n, double m, double limit) {
        assertions.push_back({std::move(n), m, limit, limit, "max", m <= limit});
    }
    void check_min(std::string n, double m, double limit) {
        assertions.push_back({std::move(n), m, limit, limit, "min", m >= limit});
    }
    void check_range(std::string n, double m, double lo, double hi) {
        assertions.push_back({std::move(n), m, lo, hi, "range", m >= lo && m <= hi});
    }
    void check_positive(std::string n, double m) {
        assertions.push_back({std::move(n), m, 0.0, 0.0, "positive", m > 0.0});
    }
    void check_finite(std::string n, double m) {
        assertions.push_back({std::move(n), m, 0.0, 0.0, "finite", std::isfinite(m)});
    }
    void check_true(std::string n, bool ok) {
        assertions.push_back({std::move(n), ok ? 1.0 : 0.0, 1.0, 0.0, "abs", ok});
    }
};

struct ReportBundle {
    std::filesystem::path path;
    std::vector<ExperimentResult> results;

    bool passed() const {
        for (const auto& r : results)
            if (!r.passed()) return false;
        return true;
    }
};

namespace detail {
inline nlohmann::json num(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); }

inline std::vector<double> geometric(double a, double b, int k) {
    if (k < 2 || !(a > 0.0) || !(b > 0.0)) throw DomainError("geometric: need k >= 2 and positive ends");
    std::vector<double> v;
    for (int i = 0; i < k; ++i) v.push_back(a * std::pow(b / a, static_cast<double>(i) / (k - 1)));
    return v;
}

inline std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

/// Creates files under one experiment's directory and records their bundle-relative names.
class FileSink {
public:
    FileSink(std::filesystem::path dir, ExperimentResult& res) : dir_(std::move(dir)), res_(res) {
        std::filesystem::create_directories(dir_);
    }

    std::ofstream open(const std::string& file) {
        res_.files.push_back(res_.name + "/" + file);
        std::ofstream os(dir_ / file, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + (dir_ / file).string());
        return os;
    }

private:
    std::filesystem::path dir_;
    ExperimentResult& res_;
};

inline double log_sinhc(double x) { return x == 0.0 ? 0.0 : x + std::log1p(-std::exp(-2.0 * x)) - std::log(2.0 * x); }

/// log I0(x) from the power series sum (x^2/4)^k / (k!)^2.
inline double log_bessel_i0_series(double x) {
    long double term = 1.0L, sum = 1.0L;
    const long double y = static_cast<long double>(x) * x / 4.0L;
    for (int k = 1; k < 2000; ++k) {
        term *= y / (static_cast<long double>(k) * k);
        sum += term;
        if (term < sum * 1e-21L) break;
    }
    return static_cast<double>(std::log(sum));
}

inline MetricProfile metric_from(const Params& p, double default_delta0 = 0.5) {
    const auto kind = p.str("metric", "flat");
    const double delta0 = p.num("delta0", default_delta0);
    if (!(delta0 > 0.0 && delta0 < 1.0)) throw ConfigError(p.path("delta0"), "must lie in (0, 1)");
    if (kind == "flat") return MetricProfile::flat(delta0);
    if (kind == "long_range") return MetricProfile::long_range(p.num("delta", 0.1), p.num("rho", 2.0), delta0);
    if (kind == "tabulated") {
        const auto file = p.str("file", "");
        if (file.empty() || !std::filesystem::exists(file)) throw ConfigError(p.path("file"), "file not found: '" + file + "'");
        return load_tabulated_csv(file, delta0, p.num("rho", 1.0));
    }
    throw ConfigError(p.path("metric"), "expected flat, long_range or tabulated");
}

inline std::vector<SystemKind> kinds_from(const Params& p, const std::string& key, const std::vector<std::string>& def) {
    std::vector<SystemKind> out;
    for (const auto& w : p.words(key, def)) {
        try {
            out.push_back(system_kind_from_string(w));
        } catch (const DomainError&) {
            throw ConfigError(p.path(key), "unknown system kind '" + w + "'");
        }
    }
    return out;
}

inline std::vector<int> ints_from(const Params& p, const std::string& key, const std::vector<double>& def) {
    std::vector<int> out;
    for (double x : p.nums(key, def)) {
        if (x != std::floor(x) || x < 2) throw ConfigError(p.path(key), "dimensions must be integers >= 2");
        out.push_back(static_cast<int>(x));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Experiments

inline void run_curves(const Params& p, ExperimentResult& res, FileSink& sink) {
    p.allow({"p_min", "p_max", "p_steps", "q_min", "q_max", "q_steps", "ns", "c", "kinds"});
    auto axis = [&](const char* lo, const char* hi, const char* steps, double dlo, double dhi, int dsteps) {
        const double a = p.num(lo, dlo), b = p.num(hi, dhi);
        const int k = p.integer(steps, dsteps);
        if (!(a > 1.0) || !(b >= a) || k < 1) throw ConfigError(p.path(lo), "need 1 < min <= max and steps >= 1");
        std::vector<double> v;
        for (int i = 0; i < k; ++i) {
            const double x = k == 1 ? a : a + (b - a) * i / (k - 1);
            v.push_back(std::round(x * 1e10) / 1e10);
        }
        return v;
    };
    const auto ps = axis("p_min", "p_max", "p_steps", 1.1, 4.0, 30);
    const auto qs = p.has("q_min") || p.has("q_max") || p.has("q_steps")
                        ? axis("q_min", "q_max", "q_steps", p.num("p_min", 1.1), p.num("p_max", 4.0), p.integer("p_steps", 30))
                        : ps;
    const auto ns = ints_from(p, "ns", {3});
    const double c = p.num("c", 1.0);
    if (!(c > 0.0)) throw ConfigError(p.path("c"), "must be positive");
    const auto kinds = kinds_from(p, "kinds", {"SS", "GG", "SG"});
    const auto rows = region_scan(ps, qs, ns, c, kinds);
    {
        auto os = sink.open("region.csv");
        write_region_csv(os, rows);
    }
    // Hand values.
    res.check_abs("Gamma_SS(2,2,3)", gamma_ss(2, 2, 3), 0.5, 1e-12);
    res.check_abs("Gamma_GG(2,2,3)", gamma_gg(2, 2, 3), 0.0, 1e-12);
    res.check_abs("Gamma*_GG(2,2,2)", gamma_gg_star(2, 2, 2), 1.0 / 6.0, 1e-12);
    res.check_abs("Gamma_SG(2,2,3)", gamma_sg(2, 2, 3), 1.0 / 6.0, 1e-12);
    res.check_abs("M*(2,2,2)", m_star_curve(2, 2, 2), 1.0 / 6.0, 1e-12);
    res.check_abs("SS diagonal root n=3", diagonal_root(CurveId::SS, 3), 1.0 + std::sqrt(2.0), 1e-10);
    res.check_abs("GG diagonal root n=3", diagonal_root(CurveId::GG, 3), 2.0, 1e-10);
    // Spot rows of the table at p = q = 2, n = 3.
    std::size_t spots = 0;
    for (const auto& r : rows) {
        if (r.p != 2.0 || r.q != 2.0 || r.n != 3) continue;
        const bool unit = std::abs(r.c - 1.0) <= 1e-12;
        if (r.kind == SystemKind::SS) {
            res.check_abs("table SS (2,2,3)", r.gamma, 0.5, 1e-12);
            ++spots;
        } else if (r.kind == SystemKind::GG) {
            res.check_abs(unit ? "table GG (2,2,3)" : "table Gamma*_GG (2,2,3)", r.gamma, unit ? 0.0 : -1.0 / 3.0, 1e-12);
            ++spots;
        }
    }
    res.details = {{"rows", rows.size()}, {"spot_rows_checked", spots}, {"c", c}};
}

inline void run_eigen(const Params& p, ExperimentResult& res, FileSink& sink) {
    p.allow({"metric", "delta", "rho", "delta0", "file", "ns", "lambdas", "range", "h", "tol", "lambda0"});
    const auto metric = metric_from(p);
    const auto ns = ints_from(p, "ns", {3});
    const auto lambdas = p.nums("lambdas", {0.1, 0.5});
    const double range = p.num("range", 50.0), h = p.num("h", 0.1), tol = p.num("tol", 1e-6);
    const double lambda0 = p.num("lambda0", 0.5);
    if (!(range > 0.0) || !(h > 0.0)) throw ConfigError(p.path("range"), "range and h must be positive");
    auto table = sink.open("eigen.csv");
    table << "n,lambda,r_max,points,max_rel_error,c0\n";
    nlohmann::json cases = nlohmann::json::array();
    for (int n : ns) {
        for (double lam : lambdas) {
            EigenSolverConfig ec;
            ec.lambda = lam;
            ec.lambda0 = lambda0;
            ec.grid = RadialGrid::covering(range / lam, h);
            const auto eig = solve_eigenfunction(metric, n, ec);
            const std::string tag = "n=" + std::to_string(n) + " lambda=" + fmt("%g", lam);
            double worst = std::numeric_limits<double>::quiet_NaN();
            if (metric.is_flat() && (n == 2 || n == 3)) {
                worst = 0.0;
                const auto& g = eig.grid();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double x = lam * g[i];
                    const double exact = n == 3 ? log_sinhc(x) : log_bessel_i0_series(x);
                    worst = std::max(worst, std::abs(std::expm1(eig.log_values()[i] - exact)));
                }
                res.check_max(std::string(n == 3 ? "sinh(x)/x" : "I0 series") + " rel error " + tag, worst, tol);
            }
            res.check_positive("sandwich c0 " + tag, eig.c0_measured());
            char buf[200];
            std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%zu,%.17g,%.17g\n", n, lam, eig.grid().back(), eig.grid().size(),
                          worst, eig.c0_measured());
            table << buf;
            {
                auto os = sink.open("eigen_n" + std::to_string(n) + "_lambda" + fmt("%g", lam) + ".csv");
                write_eigen_csv(os, eig);
            }
            cases.push_back({{"n", n}, {"lambda", lam}, {"max_rel_error", num(worst)}, {"c0", eig.c0_measured()}});
        }
    }
    res.details = {{"cases", cases}};
}

inline void run_lemma22(const Params& p, ExperimentResult& res, FileSink& sink) {
    p.allow({"metric", "delta", "rho", "delta0", "file", "n", "cs", "ps", "lambda", "R1", "t_min", "t_max", "t_count", "h",
             "slope_tol"});
    const auto metric = metric_from(p);
    const int n = p.integer("n", 3);
    const auto cs = p.nums("cs", {1.0, 0.5});
    const auto ps = p.nums("ps", {2.0, 3.0});
    const double lam = p.num("lambda", 0.5), R1 = p.num("R1", 1.0), h = p.num("h", 0.1);
    const double t_min = p.num("t_min", 1.0), t_max = p.num("t_max", 100.0), slope_tol = p.num("slope_tol", 0.1);
    const int t_count = p.integer("t_count", 40);
    if (!(t_min > 0.0 && t_max > t_min) || t_count < 2) throw ConfigError(p.path("t_min"), "need 0 < t_min < t_max, t_count >= 2");
    EigenSolverConfig ec;
    ec.lambda = lam;
    ec.lambda0 = std::max(lam, 0.5);
    ec.grid = eigen_grid_for(metric, t_max + R1, h);
    const auto eig = solve_eigenfunction(metric, n, ec);
    const auto ts = geometric(t_min, t_max, t_count);
    auto os = sink.open("lemma22.csv");
    os << "c,p,t,log_first,log_second,log_third\n";
    nlohmann::json reports = nlohmann::json::array();
    for (double c : cs) {
        for (double pp : ps) {
            const SystemSpec spec{SystemKind::SS, pp, pp, c, n};
            const auto rep = check_lemma22(eig, spec, R1, ts, 1, slope_tol);
            char buf[200];
            for (std::size_t i = 0; i < ts.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", c, pp, ts[i], rep.log_values[0][i],
                              rep.log_values[1][i], rep.log_values[2][i]);
                os << buf;
            }
            const std::string tag = " c=" + fmt("%g", c) + " p=" + fmt("%g", pp);
            if (std::abs(c - 1.0) <= 1e-12) {
                const auto& e = rep.estimates[0];
                res.check_abs("first integral slope" + tag, e.fitted_slope.value_or(std::numeric_limits<double>::quiet_NaN()),
                              e.predicted_exponent, slope_tol);
            } else {
                for (int k : {1, 2}) {
                    const auto& e = rep.estimates[k];
                    res.check_finite(e.name + " integral sup ratio" + tag, e.sup_ratio);
                }
            }
            reports.push_back({{"c", c}, {"p", pp}, {"report", rep}});
        }
    }
    res.details = {{"lambda", lam}, {"R1", R1}, {"reports", reports}};
}

inline ComparisonSystem comparison_from(const Params& p) {
    ComparisonSystem sys;
    try {
        sys.id = system_id_from_string(p.str("system", "SS2nd"));
    } catch (const DomainError& e) {
        throw ConfigError(p.path("system"), e.what());
    }
    switch (sys.id) {
        case SystemId::SS2nd: sys.spec.kind = SystemKind::SS; break;
        case SystemId::GG1st:
        case SystemId::GGMulti: sys.spec.kind = SystemKind::GG; break;
        case SystemId::SG:
        case SystemId::SGMulti: sys.spec.kind = SystemKind::SG; break;
    }
    sys.spec.p = p.num("p", 2.0);
    sys.spec.q = p.num("q", 2.0);
    sys.spec.c = p.num("c", 1.0);
    sys.spec.n = p.integer("n", 3);
    sys.lambda = p.num("lambda", 0.25);
    sys.R = p.num("R", 1.0);
    sys.c0 = p.num("c0", 1.0);
    sys.c1 = p.num("c1", 1.0);
    sys.c2 = p.num("c2", -1.0);
    sys.seed_forcing = p.flag("seed_forcing", true);
    try {
        sys.form = form_from_string(p.str("form", "auto"));
        sys.validate();
    } catch (const DomainError& e) {
        throw ConfigError(p.path("system"), e.what());
    }
    return sys;
}

inline void run_ode_sweep(const Params& p, ExperimentResult& res, FileSink& sink, unsigned threads) {
    p.allow({"system", "p", "q", "c", "n", "lambda", "R", "c0", "c1", "c2", "form", "seed_forcing", "eps_max", "eps_min", "eps_count",
             "threshold", "t_max", "rtol", "slope_tol"});
    const auto sys = comparison_from(p);
    const double eps_max = p.num("eps_max", 1e-2), eps_min = p.num("eps_min", 1e-4);
    const int count = p.integer("eps_count", 9);
    if (!(eps_min > 0.0 && eps_max > eps_min) || count < 4) {
        throw ConfigError(p.path("eps_min"), "need 0 < eps_min < eps_max and eps_count >= 4");
    }
    RunOptions opt;
    opt.threshold = p.num("threshold", 1e40);
    opt.t_max = p.num("t_max", 1e30);
    opt.rtol = p.num("rtol", 1e-10);
    opt.keep_trajectory = false;
    const auto rep = epsilon_sweep(sys, geometric(eps_max, eps_min, count), opt, threads);
    {
        auto os = sink.open("sweep.csv");
        write_sweep_csv(os, rep);
    }
    res.check_abs("fitted slope", rep.fit.slope, rep.predicted_slope, p.num("slope_tol", 0.15) * std::abs(rep.predicted_slope));
    res.check_min("eps decades", std::log10(eps_max / eps_min), 2.0);
    res.details = rep;
}

inline WaveConfig wave_from(const Params& p) {
    WaveConfig cfg;
    try {
        cfg.spec.kind = system_kind_from_string(p.str("kind", "SS"));
    } catch (const DomainError&) {
        throw ConfigError(p.path("kind"), "unknown system kind");
    }
    cfg.spec.p = p.num("p", 2.0);
    cfg.spec.q = p.num("q", 2.0);
    cfg.spec.c = p.num("c", 1.0);
    cfg.spec.n = p.integer("n", 3);
    cfg.metric = metric_from(p, 0.9);
    cfg.h = p.num("h", 0.05);
    cfg.t_max = p.num("t_max", 600.0);
    cfg.cfl = p.num("cfl", 0.5);
    cfg.dt = p.num("dt", 0.0);
    cfg.blowup_threshold = p.num("threshold", 1e8);
    try {
        cfg.spec.validate();
    } catch (const DomainError& e) {
        throw ConfigError(p.path("kind"), e.what());
    }
    resolved_dt(cfg);
    return cfg;
}

inline void run_pde(const Params& p, ExperimentResult& res, FileSink& sink, unsigned threads) {
    p.allow({"kind", "p", "q", "c", "n", "metric", "delta", "rho", "delta0", "file", "h", "t_max", "cfl", "dt", "threshold",
             "eps_max", "eps_min", "eps_count", "slope_tol", "refine", "refine_tol", "checks", "support_h",
             "support_t_max", "support_eps", "support_cs", "support_kinds", "identity_h", "identity_t_max",
             "identity_eps", "identity_kinds", "identity_tol", "mms_hs", "mms_delta", "mms_rho", "mms_c", "mms_t",
             "dalembert_hs", "dalembert_t"});
    const WaveConfig base = wave_from(p);
    DataProfile data;
    data.eps = 1.0;
    data.R = 1.0;
    data.R1 = base.metric.rtilde(data.R);
    data.u0 = data.u1 = data.v0 = data.v1 = {Shape::PolyBump, 1.0};

    std::set<std::string> checks;
    for (const auto& w : p.words("checks", {"sweep"})) {
        if (w != "sweep" && w != "support" && w != "identity" && w != "manufactured" && w != "dalembert") {
            throw ConfigError(p.path("checks"), "unknown check '" + w + "'");
        }
        checks.insert(w);
    }
    nlohmann::json details = nlohmann::json::object();

    if (checks.count("sweep")) {
        const double eps_max = p.num("eps_max", 10.0), eps_min = p.num("eps_min", 1.0);
        const int count = p.integer("eps_count", 5);
        if (!(eps_min > 0.0 && eps_max > eps_min) || count < 2) {
            throw ConfigError(p.path("eps_min"), "need 0 < eps_min < eps_max and eps_count >= 2");
        }
        const auto eps = geometric(eps_max, eps_min, count);
        const auto rep = sweep_blowup_times(base, data, eps, threads);
        {
            auto os = sink.open("pde_sweep.csv");
            write_pde_sweep_csv(os, rep);
        }
        res.check_abs("PDE fitted slope", rep.fit.slope, rep.predicted_slope,
                      p.num("slope_tol", 0.3) * std::abs(rep.predicted_slope));
        details["sweep"] = rep;
        if (p.flag("refine", false)) {
            WaveConfig fine = base;
            fine.h = base.h / 2;
            const auto rep2 = sweep_blowup_times(fine, data, eps, threads);
            {
                auto os = sink.open("pde_sweep_refined.csv");
                write_pde_sweep_csv(os, rep2);
            }
            res.check_max("slope change under h/2", std::abs(rep2.fit.slope - rep.fit.slope) / std::abs(rep.fit.slope),
                          p.num("refine_tol", 0.1));
            details["sweep_refined"] = rep2;
        }
    }

    if (checks.count("support")) {
        const auto kinds = kinds_from(p, "support_kinds", {"SS", "GG", "SG"});
        const auto cs = p.nums("support_cs", {1.0, 0.5});
        struct Job {
            SystemKind kind;
            double c;
        };
        std::vector<Job> jobs;
        for (auto k : kinds)
            for (double c : cs) jobs.push_back({k, c});
        std::vector<SimOutcome> outs(jobs.size());
        DataProfile d = data;
        d.eps = p.num("support_eps", 2.0);
        parallel_for(jobs.size(), threads, [&](std::size_t i) {
            WaveConfig cfg = base;
            cfg.spec.kind = jobs[i].kind;
            cfg.spec.c = jobs[i].c;
            cfg.h = p.num("support_h", 0.0125);
            cfg.t_max = p.num("support_t_max", 15.0);
            cfg.dt = 0.0;
            cfg.functionals = false;
            cfg.snapshot_every = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.25 / max_stable_dt(cfg))));
            DataProfile dd = d;
            dd.R1 = cfg.metric.rtilde(dd.R);
            outs[i] = run_simulation(cfg, dd);
        });
        auto os = sink.open("support.csv");
        os << "kind,c,t,edge_u,allowed_u,edge_v,allowed_v\n";
        nlohmann::json runs = nlohmann::json::array();
        char buf[256];
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            const auto& rep = *outs[i].support;
            for (const auto& s : rep.samples) {
                std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", to_string(jobs[i].kind), jobs[i].c,
                              s.t, s.edge_u, s.allowed_u, s.edge_v, s.allowed_v);
                os << buf;
            }
            res.check_max(std::string("support excess ") + to_string(jobs[i].kind) + " c=" + fmt("%g", jobs[i].c),
                          rep.worst_excess, 0.0);
            runs.push_back({{"kind", to_string(jobs[i].kind)}, {"c", jobs[i].c}, {"outcome", outs[i]}});
        }
        details["support"] = runs;
    }

    if (checks.count("identity")) {
        const auto kinds = kinds_from(p, "identity_kinds", {"SS", "GG", "SG"});
        const double h0 = p.num("identity_h", 0.02);
        std::vector<std::pair<SystemKind, double>> jobs;
        for (auto k : kinds)
            for (double h : {h0, h0 / 2}) jobs.push_back({k, h});
        std::vector<SimOutcome> outs(jobs.size());
        parallel_for(jobs.size(), threads, [&](std::size_t i) {
            WaveConfig cfg = base;
            cfg.spec.kind = jobs[i].first;
            cfg.spec.c = 1.0;
            cfg.h = jobs[i].second;
            cfg.dt = 0.0;
            cfg.t_max = p.num("identity_t_max", 6.0);
            cfg.record_every = 1;
            DataProfile dd = data;
            dd.eps = p.num("identity_eps", 1.0);
            dd.R1 = cfg.metric.rtilde(dd.R) + 1.0;
            outs[i] = run_simulation(cfg, dd);
        });
        auto os = sink.open("identity.csv");
        os << "kind,h,rel_error\n";
        nlohmann::json rows = nlohmann::json::array();
        char buf[160];
        for (std::size_t i = 0; i < jobs.size(); i += 2) {
            const auto kind = jobs[i].first;
            const double e1 = functional_identity_error(outs[i].series, kind, outs[i].dt);
            const double e2 = functional_identity_error(outs[i + 1].series, kind, outs[i + 1].dt);
            for (std::size_t j : {i, i + 1}) {
                std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g\n", to_string(kind), jobs[j].second,
                              j == i ? e1 : e2);
                os << buf;
            }
            const std::string tag = std::string(kind == SystemKind::SS ? "F'' " : "F' ") + to_string(kind);
            res.check_max(tag + " identity rel error", e1, p.num("identity_tol", 0.03));
            res.check_min(tag + " identity error ratio under h/2", e1 / e2, 3.0);
            rows.push_back({{"kind", to_string(kind)}, {"h", jobs[i].second}, {"rel_error", e1}, {"rel_error_half_h", e2}});
            auto fs = sink.open(std::string("functionals_") + to_string(kind) + ".csv");
            write_functional_csv(fs, outs[i].series);
        }
        details["identity"] = rows;
    }

    auto write_study = [&](const std::string& file, const ConvergenceStudy& st) {
        auto os = sink.open(file);
        os << "h,error,order\n";
        char buf[128];
        for (std::size_t i = 0; i < st.h.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", st.h[i], st.error[i],
                          i == 0 ? std::numeric_limits<double>::quiet_NaN() : st.orders[i - 1]);
            os << buf;
        }
    };
    if (checks.count("manufactured")) {
        const auto metric = MetricProfile::long_range(p.num("mms_delta", 0.3), p.num("mms_rho", 0.5));
        const auto st = manufactured_convergence(metric, base.spec.n, p.num("mms_c", 0.5), p.nums("mms_hs", {0.04, 0.02, 0.01}),
                                                 p.num("mms_t", 1.0));
        write_study("manufactured.csv", st);
        res.check_range("manufactured order (min)", st.min_order(), 1.8, 2.2);
        res.check_range("manufactured order (max)", st.max_order(), 1.8, 2.2);
        details["manufactured"] = {{"h", st.h}, {"error", st.error}, {"orders", st.orders}};
    }
    if (checks.count("dalembert")) {
        const auto st = dalembert_convergence(1.0, p.nums("dalembert_hs", {0.02, 0.01}), p.num("dalembert_t", 3.0));
        write_study("dalembert.csv", st);
        res.check_range("d'Alembert order (min)", st.min_order(), 1.8, 2.2);
        res.check_range("d'Alembert order (max)", st.max_order(), 1.8, 2.2);
        details["dalembert"] = {{"h", st.h}, {"error", st.error}, {"orders", st.orders}};
    }
    res.details = details;
}

inline void run_kato(const Params& p, ExperimentResult& res, FileSink& sink, unsigned threads) {
    p.allow({"samples", "seed", "min_margin", "t_max", "threshold"});
    const int count = p.integer("samples", 20);
    if (count < 1) throw ConfigError(p.path("samples"), "must be >= 1");
    const double seed = p.num("seed", 2024);
    if (seed < 0 || seed != std::floor(seed)) throw ConfigError(p.path("seed"), "must be a nonnegative integer");
    const auto hs = sample_kato_hypotheses(static_cast<std::size_t>(count), static_cast<std::uint64_t>(seed),
                                           p.num("min_margin", 0.5));
    RunOptions opt;
    opt.t_max = p.num("t_max", 1e6);
    opt.threshold = p.num("threshold", 1e10);
    opt.keep_trajectory = false;
    std::vector<OdeRun> runs(hs.size());
    parallel_for(hs.size(), threads, [&](std::size_t i) { runs[i] = integrate_kato(hs[i], opt); });
    auto os = sink.open("kato.csv");
    os << "index,alpha,beta,e,l,s,margin,status,T_star\n";
    std::size_t blown = 0;
    char buf[256];
    for (std::size_t i = 0; i < hs.size(); ++i) {
        const auto& h = hs[i];
        const bool ok = runs[i].status == RunStatus::BlowUp && runs[i].T_star <= opt.t_max;
        blown += ok;
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s,%.17g\n", i, h.alpha, h.beta, h.e, h.l, h.s,
                      kato_margin(h), to_string(runs[i].status), runs[i].T_star);
        os << buf;
    }
    res.check_abs("sampled sets blowing up within t_max", static_cast<double>(blown), static_cast<double>(hs.size()), 0.0);
    res.check_true("kato_check(3,3,2,2,2) is true", kato_check({3, 3, 2, 2, 2}));
    res.check_true("kato_check(6,6,3,3,1) is false", !kato_check({6, 6, 3, 3, 1}));
    res.details = {{"samples", hs.size()}, {"blown_up", blown}, {"t_max", opt.t_max}};
}

inline void run_validate_metric(const Params& p, ExperimentResult& res, FileSink& sink) {
    p.allow({"metric", "delta", "rho", "delta0", "file", "r_max", "h", "max_constant"});
    const auto metric = metric_from(p);
    const double r_max = std::min(p.num("r_max", 100.0), metric.r_max());
    const auto grid = RadialGrid::covering(r_max, p.num("h", 0.1));
    const auto rep = validate_profile(metric, grid, p.num("max_constant", 1e6));
    auto os = sink.open("metric.csv");
    os << "r,k,rtilde\n";
    const auto rt = rtilde_on_grid(metric, grid);
    char buf[128];
    for (std::size_t i = 0; i < grid.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", grid[i], metric.k(grid[i]), rt[i]);
        os << buf;
    }
    res.check_true("ellipticity delta0 < K < 1/delta0", rep.ellipticity_ok);
    for (int m = 0; m < 3; ++m) {
        res.check_max("decay constant m=" + std::to_string(m), rep.decay_constants[m], rep.max_constant);
    }
    res.check_max("continuity ratio", rep.continuity_ratio, rep.max_constant);
    res.details = rep;
}

inline nlohmann::json assertion_json(const Assertion& a) {
    return {{"name", a.name},         {"measured", num(a.measured)}, {"expected", num(a.expected)},
            {"tolerance", num(a.tolerance)}, {"rule", a.rule},        {"passed", a.passed}};
}

inline std::string text_table(const std::vector<ExperimentResult>& results) {
    std::ostringstream os;
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-20s %-46s %-14s %-14s %-12s %-8s %s\n", "experiment", "assertion", "measured", "expected",
                  "tolerance", "rule", "result");
    os << buf;
    for (const auto& r : results) {
        for (const auto& a : r.assertions) {
            std::snprintf(buf, sizeof buf, "%-20s %-46s %-14.8g %-14.8g %-12.4g %-8s %s\n", r.name.c_str(), a.name.c_str(),
                          a.measured, a.expected, a.tolerance, a.rule.c_str(), a.passed ? "PASS" : "FAIL");
            os << buf;
        }
    }
    return os.str();
}

}  // namespace detail

/// Runs one experiment, writing its files under dir/<name>/.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir, unsigned threads = 0) {
    ExperimentResult res;
    res.name = cfg.name;
    res.kind = cfg.kind;
    res.preset = cfg.preset;
    res.params = cfg.params;
    const Params p(cfg.name, cfg.params);
    detail::FileSink sink(dir / cfg.name, res);
    try {
        switch (cfg.kind) {
            case ExperimentKind::CurvesScan: detail::run_curves(p, res, sink); break;
            case ExperimentKind::EigenVerify: detail::run_eigen(p, res, sink); break;
            case ExperimentKind::Lemma22Verify: detail::run_lemma22(p, res, sink); break;
            case ExperimentKind::OdeSweep: detail::run_ode_sweep(p, res, sink, threads); break;
            case ExperimentKind::PdeSweep: detail::run_pde(p, res, sink, threads); break;
            case ExperimentKind::KatoGrid: detail::run_kato(p, res, sink, threads); break;
            case ExperimentKind::ValidateMetric: detail::run_validate_metric(p, res, sink); break;
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ExperimentError("experiment '" + cfg.name + "' (" + to_string(cfg.kind) + "): " + e.what());
    }
    return res;
}

inline nlohmann::json summary_json(const std::vector<ExperimentResult>& results) {
    nlohmann::json exps = nlohmann::json::array();
    bool all = true;
    for (const auto& r : results) {
        nlohmann::json as = nlohmann::json::array();
        for (const auto& a : r.assertions) as.push_back(detail::assertion_json(a));
        exps.push_back({{"name", r.name},
                        {"experiment", to_string(r.kind)},
                        {"preset", r.preset},
                        {"inputs", r.params},
                        {"passed", r.passed()},
                        {"assertions", as},
                        {"files", r.files},
                        {"details", r.details}});
        all = all && r.passed();
    }
    return {{"version", kVersion}, {"passed", all}, {"experiments", exps}};
}

/// Runs every experiment into `<out>.partial` and renames it to `out` only when all of them finished,
/// replacing any previous bundle.
inline ReportBundle run_experiments(const RunConfig& rc) {
    namespace fs = std::filesystem;
    if (rc.out.empty()) throw ConfigError("run.out", "empty output path");
    std::set<std::string> names;
    for (const auto& e : rc.experiments) {
        if (!detail::safe_name(e.name)) throw ConfigError(e.name, "invalid experiment name");
        if (!names.insert(e.name).second) throw ConfigError("run.experiments", "duplicate experiment '" + e.name + "'");
    }
    const fs::path tmp = rc.out.string() + ".partial";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    ReportBundle bundle;
    bundle.path = rc.out;
    try {
        for (const auto& e : rc.experiments) bundle.results.push_back(run_experiment(e, tmp, rc.threads));
        {
            std::ofstream js(tmp / "summary.json", std::ios::binary);
            js << summary_json(bundle.results).dump(2) << '\n';
            std::ofstream tx(tmp / "summary.txt", std::ios::binary);
            tx << detail::text_table(bundle.results);
            tx << (bundle.passed() ? "ALL PASS\n" : "FAILURES PRESENT\n");
            if (!js || !tx) throw std::runtime_error("cannot write the summary files");
        }
    } catch (...) {
        std::error_code ec;
        fs::remove_all(tmp, ec);
        throw;
    }
    if (fs::exists(rc.out)) fs::remove_all(rc.out);
    if (rc.out.has_parent_path()) fs::create_directories(rc.out.parent_path());
    fs::rename(tmp, rc.out);
    return bundle;
}

/// 0 when every assertion passed, 1 otherwise.
inline int exit_code(const ReportBundle& b) { return b.passed() ? 0 : 1; }

}  // namespace blowup

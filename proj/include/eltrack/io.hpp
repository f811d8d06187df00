#pragma once

// Serialization and run configuration: trajectory CSV emission, JSON reports
// for certification and batch experiments, and a small TOML-style config
// format shared by the command-line front end and the gains files it writes.

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "certify.hpp"
#include "simulate.hpp"

#include "json.hpp"

namespace eltrack {

/// Shortest exact decimal form of a double: 17 significant digits round-trip
/// IEEE binary64, so files written this way re-read bit-identically.
inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Trajectory CSV

/// Canonical column order: t, qtilde_0.., dqtilde_0.., theta0_0..,
/// xi_i_j.., theta_i_j.. (stage-major), u_0.., V1, V2, V, W with V = V1 + V2.
inline void write_traj_csv(std::ostream& os, const ClosedLoopTraj& traj) {
    const std::size_t n = traj.n, m = traj.m;
    os << "t";
    for (std::size_t j = 0; j < n; ++j) os << ",qtilde_" << j;
    for (std::size_t j = 0; j < n; ++j) os << ",dqtilde_" << j;
    for (std::size_t j = 0; j < n; ++j) os << ",theta0_" << j;
    for (std::size_t i = 1; i <= m; ++i)
        for (std::size_t j = 0; j < n; ++j) os << ",xi_" << i << "_" << j;
    for (std::size_t i = 1; i <= m; ++i)
        for (std::size_t j = 0; j < n; ++j) os << ",theta_" << i << "_" << j;
    for (std::size_t j = 0; j < n; ++j) os << ",u_" << j;
    os << ",V1,V2,V,W\n";
    for (std::size_t k = 0; k < traj.t.size(); ++k) {
        os << fmt_g17(traj.t[k]);
        const Vec& e = traj.err[k];
        // err layout: qtilde, dqtilde, theta0, xi~_1..m, theta_1..m
        for (std::size_t c = 0; c < 3 * n; ++c) os << "," << fmt_g17(e[c]);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) os << "," << fmt_g17(e[(3 + i) * n + j]);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) os << "," << fmt_g17(e[(3 + m + i) * n + j]);
        for (std::size_t j = 0; j < n; ++j) os << "," << fmt_g17(traj.u[k][j]);
        os << "," << fmt_g17(traj.V1[k]) << "," << fmt_g17(traj.V2[k]) << ","
           << fmt_g17(traj.V1[k] + traj.V2[k]) << "," << fmt_g17(traj.W[k]) << "\n";
    }
}

// ---------------------------------------------------------------------------
// JSON reports

inline nlohmann::ordered_json cert_report_json(const CertReport& rep) {
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const CertEntry& e : rep.entries) {
        entries.push_back({{"id", e.id},
                           {"label", "Eq." + e.id},
                           {"pass", e.pass},
                           {"margin", e.margin},
                           {"detail", e.detail}});
    }
    return {{"overall", rep.overall()}, {"conditions", entries}};
}

inline nlohmann::ordered_json ugas_report_json(const UgasReport& rep) {
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    for (const UgasRun& r : rep.runs) {
        runs.push_back({{"r", r.r},
                        {"t0", r.t0},
                        {"envelope", r.envelope},
                        {"entry_time", r.entry_time},
                        {"integral_excess", r.integral_excess},
                        {"diverged", r.diverged}});
    }
    return {{"verdict", rep.verdict},
            {"overall", rep.overall()},
            {"all_converged", rep.all_converged},
            {"none_diverged", rep.none_diverged},
            {"envelopes_monotone", rep.envelopes_monotone},
            {"uniform_across_phases", rep.uniform_across_phases},
            {"max_phase_variation", rep.max_phase_variation},
            {"lambda_fit", rep.lambda_fit},
            {"r2_fit", rep.r2_fit},
            {"envelopes", runs}};
}

// ---------------------------------------------------------------------------
// TOML-style configuration

using TomlValue = std::variant<bool, double, std::string, std::vector<double>>;

/// Flat key-value view of a TOML-subset document: "[section]" headers plus
/// "key = value" lines become entries under "section.key". Values are bools,
/// numbers, double-quoted strings, or arrays of numbers. '#' starts a
/// comment. That subset covers every config this tool reads or writes.
struct ConfigMap {
    std::map<std::string, TomlValue> values;

    bool has(const std::string& key) const { return values.count(key) != 0; }

    double number(const std::string& key, double fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        if (const double* v = std::get_if<double>(&it->second)) return *v;
        throw config_error("config: expected a number for '" + key + "'");
    }

    std::string text(const std::string& key, const std::string& fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        if (const std::string* v = std::get_if<std::string>(&it->second)) return *v;
        throw config_error("config: expected a string for '" + key + "'");
    }

    bool flag(const std::string& key, bool fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        if (const bool* v = std::get_if<bool>(&it->second)) return *v;
        throw config_error("config: expected a boolean for '" + key + "'");
    }

    std::vector<double> array(const std::string& key, const std::vector<double>& fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        if (const std::vector<double>* v = std::get_if<std::vector<double>>(&it->second)) return *v;
        if (const double* s = std::get_if<double>(&it->second)) return {*s};
        throw config_error("config: expected an array for '" + key + "'");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline TomlValue parse_toml_value(const std::string& raw, const std::string& key) {
    const std::string v = trim(raw);
    if (v.empty()) throw config_error("config: empty value for '" + key + "'");
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"')
            throw config_error("config: unterminated string for '" + key + "'");
        return v.substr(1, v.size() - 2);
    }
    if (v.front() == '[') {
        if (v.back() != ']') throw config_error("config: unterminated array for '" + key + "'");
        std::vector<double> out;
        std::string item;
        std::istringstream body(v.substr(1, v.size() - 2));
        while (std::getline(body, item, ',')) {
            const std::string it = trim(item);
            if (it.empty()) continue;
            std::size_t used = 0;
            out.push_back(std::stod(it, &used));
            if (used != it.size())
                throw config_error("config: bad array element '" + it + "' for '" + key + "'");
        }
        return out;
    }
    std::size_t used = 0;
    double num = 0;
    try {
        num = std::stod(v, &used);
    } catch (const std::exception&) {
        throw config_error("config: unreadable value '" + v + "' for '" + key + "'");
    }
    if (used != v.size()) throw config_error("config: trailing junk in value for '" + key + "'");
    return num;
}

}  // namespace detail

inline ConfigMap parse_config(std::istream& in) {
    ConfigMap cfg;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string s = detail::trim(line);
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw config_error("config line " + std::to_string(lineno) + ": bad section header");
            section = detail::trim(s.substr(1, s.size() - 2));
            if (section.empty())
                throw config_error("config line " + std::to_string(lineno) + ": empty section name");
            continue;
        }
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(s.substr(0, eq));
        if (key.empty())
            throw config_error("config line " + std::to_string(lineno) + ": empty key");
        const std::string full = section.empty() ? key : section + "." + key;
        cfg.values[full] = detail::parse_toml_value(s.substr(eq + 1), full);
    }
    return cfg;
}

inline ConfigMap parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("config: cannot open '" + path + "'");
    return parse_config(in);
}

// ---------------------------------------------------------------------------
// Run configuration

/// Everything a run needs, with explicit defaults. The TOML emitted by
/// to_toml() re-parses to the same configuration (floats via fmt_g17).
struct RunConfig {
    // [model]
    std::string model = "pendulum";  // pendulum | two_link | flexjoint
    double friction = 0.0;           // > 0 adds viscous friction friction * I
    std::vector<double> joint_stiffness{30.0};  // flexjoint K diagonal
    std::vector<double> rotor_inertia{1.0};     // flexjoint J diagonal

    // [reference]
    std::string reference = "sinusoid";  // sinusoid | unforced
    std::vector<double> amp{0.5}, freq{1.0}, phase{0.0};
    std::vector<double> q0{}, v0{};  // unforced initial condition (defaults: zeros)
    double ref_horizon = 60.0;

    // [controller]
    std::string controller = "rd2";  // rd2 | cascade
    std::size_t m = 0;
    bool allow_forced_reference = false;

    // [gains]
    std::string gains_mode = "explicit";  // explicit | search
    double kp0 = 30.0, kd0 = 30.0, a0 = 20.0, b0 = 20.0;
    std::vector<double> kp{}, kd{}, a{}, b{};
    std::size_t budget = 400;

    // [eta]
    std::string eta_method = "sampled";  // sampled | analytic | explicit
    double eta1 = 0.0, eta2 = 0.0, eta3 = 0.0;
    std::size_t eta_samples = 20000;
    double eta_safety = 1.2;

    // [experiment]
    std::string experiment = "single";  // single | ugas | certify | equivalence
    std::vector<double> err0{};         // initial error coordinates; empty = zeros
    double t0 = 0.0;
    std::vector<double> radii{0.1, 1.0, 10.0};
    std::size_t phases = 8, directions = 8;
    double period = 0.0, sigma = 1e-3;
    double envelope_tol = 0.10, fit_radius = 0.01;
    double eq_tol = 1e-6;

    // [numerics]
    double h = 1e-3, horizon = 30.0, divergence_cap = 1e9;

    // [output]
    std::string out_dir = "out";
    std::string prefix = "run";

    std::uint64_t seed = 1;

    static RunConfig from_map(const ConfigMap& c) {
        RunConfig r;
        r.model = c.text("model.name", r.model);
        r.friction = c.number("model.friction", r.friction);
        r.joint_stiffness = c.array("model.joint_stiffness", r.joint_stiffness);
        r.rotor_inertia = c.array("model.rotor_inertia", r.rotor_inertia);

        r.reference = c.text("reference.kind", r.reference);
        r.amp = c.array("reference.amp", r.amp);
        r.freq = c.array("reference.freq", r.freq);
        r.phase = c.array("reference.phase", r.phase);
        r.q0 = c.array("reference.q0", r.q0);
        r.v0 = c.array("reference.v0", r.v0);
        r.ref_horizon = c.number("reference.horizon", r.ref_horizon);

        r.controller = c.text("controller.type", r.controller);
        r.m = static_cast<std::size_t>(c.number("controller.m", double(r.m)));
        r.allow_forced_reference =
            c.flag("controller.allow_forced_reference", r.allow_forced_reference);

        r.gains_mode = c.text("gains.mode", r.gains_mode);
        r.kp0 = c.number("gains.kp0", r.kp0);
        r.kd0 = c.number("gains.kd0", r.kd0);
        r.a0 = c.number("gains.a0", r.a0);
        r.b0 = c.number("gains.b0", r.b0);
        r.kp = c.array("gains.kp", r.kp);
        r.kd = c.array("gains.kd", r.kd);
        r.a = c.array("gains.a", r.a);
        r.b = c.array("gains.b", r.b);
        r.budget = static_cast<std::size_t>(c.number("gains.budget", double(r.budget)));

        r.eta_method = c.text("eta.method", r.eta_method);
        r.eta1 = c.number("eta.eta1", r.eta1);
        r.eta2 = c.number("eta.eta2", r.eta2);
        r.eta3 = c.number("eta.eta3", r.eta3);
        r.eta_samples = static_cast<std::size_t>(c.number("eta.samples", double(r.eta_samples)));
        r.eta_safety = c.number("eta.safety", r.eta_safety);

        r.experiment = c.text("experiment.kind", r.experiment);
        r.err0 = c.array("experiment.err0", r.err0);
        r.t0 = c.number("experiment.t0", r.t0);
        r.radii = c.array("experiment.radii", r.radii);
        r.phases = static_cast<std::size_t>(c.number("experiment.phases", double(r.phases)));
        r.directions =
            static_cast<std::size_t>(c.number("experiment.directions", double(r.directions)));
        r.period = c.number("experiment.period", r.period);
        r.sigma = c.number("experiment.sigma", r.sigma);
        r.envelope_tol = c.number("experiment.envelope_tol", r.envelope_tol);
        r.fit_radius = c.number("experiment.fit_radius", r.fit_radius);
        r.eq_tol = c.number("experiment.eq_tol", r.eq_tol);

        r.h = c.number("numerics.h", r.h);
        r.horizon = c.number("numerics.horizon", r.horizon);
        r.divergence_cap = c.number("numerics.divergence_cap", r.divergence_cap);

        r.out_dir = c.text("output.dir", r.out_dir);
        r.prefix = c.text("output.prefix", r.prefix);

        r.seed = static_cast<std::uint64_t>(c.number("seed", double(r.seed)));
        return r;
    }

    std::string to_toml() const {
        std::ostringstream os;
        auto arr = [](const std::vector<double>& v) {
            std::string s = "[";
            for (std::size_t i = 0; i < v.size(); ++i)
                s += (i ? ", " : "") + fmt_g17(v[i]);
            return s + "]";
        };
        os << "seed = " << seed << "\n\n";
        os << "[model]\n";
        os << "name = \"" << model << "\"\n";
        os << "friction = " << fmt_g17(friction) << "\n";
        os << "joint_stiffness = " << arr(joint_stiffness) << "\n";
        os << "rotor_inertia = " << arr(rotor_inertia) << "\n\n";
        os << "[reference]\n";
        os << "kind = \"" << reference << "\"\n";
        os << "amp = " << arr(amp) << "\n";
        os << "freq = " << arr(freq) << "\n";
        os << "phase = " << arr(phase) << "\n";
        os << "q0 = " << arr(q0) << "\n";
        os << "v0 = " << arr(v0) << "\n";
        os << "horizon = " << fmt_g17(ref_horizon) << "\n\n";
        os << "[controller]\n";
        os << "type = \"" << controller << "\"\n";
        os << "m = " << m << "\n";
        os << "allow_forced_reference = " << (allow_forced_reference ? "true" : "false") << "\n\n";
        os << "[gains]\n";
        os << "mode = \"" << gains_mode << "\"\n";
        os << "kp0 = " << fmt_g17(kp0) << "\n";
        os << "kd0 = " << fmt_g17(kd0) << "\n";
        os << "a0 = " << fmt_g17(a0) << "\n";
        os << "b0 = " << fmt_g17(b0) << "\n";
        os << "kp = " << arr(kp) << "\n";
        os << "kd = " << arr(kd) << "\n";
        os << "a = " << arr(a) << "\n";
        os << "b = " << arr(b) << "\n";
        os << "budget = " << budget << "\n\n";
        os << "[eta]\n";
        os << "method = \"" << eta_method << "\"\n";
        os << "eta1 = " << fmt_g17(eta1) << "\n";
        os << "eta2 = " << fmt_g17(eta2) << "\n";
        os << "eta3 = " << fmt_g17(eta3) << "\n";
        os << "samples = " << eta_samples << "\n";
        os << "safety = " << fmt_g17(eta_safety) << "\n\n";
        os << "[experiment]\n";
        os << "kind = \"" << experiment << "\"\n";
        os << "err0 = " << arr(err0) << "\n";
        os << "t0 = " << fmt_g17(t0) << "\n";
        os << "radii = " << arr(radii) << "\n";
        os << "phases = " << phases << "\n";
        os << "directions = " << directions << "\n";
        os << "period = " << fmt_g17(period) << "\n";
        os << "sigma = " << fmt_g17(sigma) << "\n";
        os << "envelope_tol = " << fmt_g17(envelope_tol) << "\n";
        os << "fit_radius = " << fmt_g17(fit_radius) << "\n";
        os << "eq_tol = " << fmt_g17(eq_tol) << "\n\n";
        os << "[numerics]\n";
        os << "h = " << fmt_g17(h) << "\n";
        os << "horizon = " << fmt_g17(horizon) << "\n";
        os << "divergence_cap = " << fmt_g17(divergence_cap) << "\n\n";
        os << "[output]\n";
        os << "dir = \"" << out_dir << "\"\n";
        os << "prefix = \"" << prefix << "\"\n";
        return os.str();
    }

    GainSet gains() const {
        GainSet g;
        g.kp0 = kp0;
        g.kd0 = kd0;
        g.a0 = a0;
        g.b0 = b0;
        g.kp = kp;
        g.kd = kd;
        g.a = a;
        g.b = b;
        return g;
    }

    void set_gains(const GainSet& g) {
        kp0 = g.kp0;
        kd0 = g.kd0;
        a0 = g.a0;
        b0 = g.b0;
        kp = g.kp;
        kd = g.kd;
        a = g.a;
        b = g.b;
    }
};

inline void write_text_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write '" + path.string() + "'");
    out << body;
}

}  // namespace eltrack

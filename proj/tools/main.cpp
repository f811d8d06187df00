// eltrack: simulation and certification front end.
//
// Subcommands: certify, simulate, gain-search, ugas, equivalence. Every run
// is driven by a TOML-style config (see --print-config for the full key set
// with defaults); a handful of flags override the common numeric knobs.
// Exit codes: 0 success, 1 failed condition or divergence, 2 bad config.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "eltrack/io.hpp"

#include "CLI11.hpp"

namespace fs = std::filesystem;
using namespace eltrack;

namespace {

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<double> h, horizon;
    bool print_config = false;
};

RunConfig load_config(const Overrides& ov) {
    RunConfig cfg;
    if (!ov.config_path.empty()) cfg = RunConfig::from_map(parse_config_file(ov.config_path));
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.out_dir) cfg.out_dir = *ov.out_dir;
    if (ov.h) cfg.h = *ov.h;
    if (ov.horizon) cfg.horizon = *ov.horizon;
    return cfg;
}

/// Rigid-body part of the configured system, friction included.
ELModel build_rigid_model(const RunConfig& cfg) {
    ELModel model;
    if (cfg.model == "pendulum")
        model = make_pendulum();
    else if (cfg.model == "two_link")
        model = make_two_link();
    else
        throw config_error("model.name '" + cfg.model + "' is not in the catalog "
                           "(pendulum, two_link, flexjoint)");
    if (cfg.friction > 0)
        model = with_friction(std::move(model), cfg.friction * Mat::identity(model.n));
    return model;
}

FlexJointChain build_flexjoint(const RunConfig& cfg) {
    if (cfg.joint_stiffness.size() != 1 || cfg.rotor_inertia.size() != 1)
        throw config_error("flexjoint uses the pendulum link: joint_stiffness and rotor_inertia "
                           "must have one entry each");
    const FlexJointModel fj =
        make_flexjoint(make_pendulum(), cfg.joint_stiffness, cfg.rotor_inertia);
    return flexjoint_to_chain(fj);
}

bool is_flexjoint(const RunConfig& cfg) { return cfg.model == "flexjoint"; }

Reference build_reference(const RunConfig& cfg, const ELModel& model) {
    if (cfg.reference == "sinusoid") {
        if (cfg.amp.size() != model.n || cfg.freq.size() != model.n || cfg.phase.size() != model.n)
            throw config_error("reference arrays must have one entry per joint (n = " +
                               std::to_string(model.n) + ")");
        return make_sinusoid_ref(cfg.amp, cfg.freq, cfg.phase);
    }
    if (cfg.reference == "unforced") {
        const Vec q0 = cfg.q0.empty() ? Vec(model.n, 0.0) : cfg.q0;
        const Vec v0 = cfg.v0.empty() ? Vec(model.n, 0.0) : cfg.v0;
        return make_unforced_ref(model, q0, v0, cfg.ref_horizon);
    }
    throw config_error("reference.kind '" + cfg.reference + "' is not supported "
                       "(sinusoid, unforced)");
}

std::size_t stage_count(const RunConfig& cfg) {
    if (cfg.controller == "rd2") return 0;
    if (cfg.controller == "cascade") {
        const std::size_t m = cfg.m ? cfg.m : cfg.kp.size();
        if (m == 0) throw config_error("cascade controller needs controller.m >= 1");
        return m;
    }
    throw config_error("controller.type '" + cfg.controller + "' is not supported (rd2, cascade)");
}

/// The cascade analysis needs the first-stage target derivative, which uses
/// the reference jerk and is only certified against sampled bounds on the
/// configured reference; a forced (sinusoid) reference makes those bounds
/// trajectory-dependent. Refuse unless the config opts in explicitly.
void guard_cascade_reference(const RunConfig& cfg, std::size_t m) {
    if (m >= 1 && cfg.reference == "sinusoid" && !cfg.allow_forced_reference)
        throw config_error("cascade + sinusoid reference: the stage bounds are only sampled, not "
                           "proven; set controller.allow_forced_reference = true to proceed");
}

EtaBounds eta_for_config(const RunConfig& cfg, const ELModel& model, const Reference& ref,
                         const GainSet& g) {
    if (cfg.eta_method == "explicit") {
        EtaBounds e;
        e.eta1 = cfg.eta1;
        e.eta2 = cfg.eta2;
        e.eta3 = cfg.eta3;
        e.method = "explicit";
        return e;
    }
    if (cfg.eta_method == "analytic") return estimate_eta_analytic(model, ref, g);
    if (cfg.eta_method == "sampled") {
        EtaSampleOptions opt;
        opt.samples = cfg.eta_samples;
        opt.safety = cfg.eta_safety;
        opt.seed = cfg.seed;
        return estimate_eta(model, ref, g, opt);
    }
    throw config_error("eta.method '" + cfg.eta_method + "' is not supported "
                       "(sampled, analytic, explicit)");
}

CertReport certify_config(const RunConfig& cfg) {
    const GainSet g = cfg.gains();
    if (is_flexjoint(cfg)) {
        const FlexJointChain chain = build_flexjoint(cfg);
        const Reference ref = build_reference(cfg, chain.chain.base);
        const EtaBounds eta = eta_for_config(cfg, chain.chain.base, ref, g);
        return check_corollary(g, eta, chain.chain.base.bounds, ref.k_delta);
    }
    const ELModel model = build_rigid_model(cfg);
    const Reference ref = build_reference(cfg, model);
    const std::size_t m = stage_count(cfg);
    if (m == 0) {
        CertReport rep;
        rep.entries.push_back(check_thm1(g, model.bounds, ref.k_delta));
        return rep;
    }
    const EtaBounds eta = eta_for_config(cfg, model, ref, g);
    if (m == 1) return check_thm2(g, eta, model.bounds, ref.k_delta);
    return check_prop1(g, eta, model.bounds, ref.k_delta, model.n);
}

fs::path out_path(const RunConfig& cfg, const std::string& suffix) {
    fs::create_directories(cfg.out_dir);
    return fs::path(cfg.out_dir) / (cfg.prefix + suffix);
}

void print_cert(const CertReport& rep) {
    for (const CertEntry& e : rep.entries)
        std::cout << (e.pass ? "  pass  " : "  FAIL  ") << "Eq." << e.id
                  << "  margin " << fmt_g17(e.margin) << "  (" << e.detail << ")\n";
    std::cout << (rep.overall() ? "certificate: PASS" : "certificate: FAIL") << "\n";
}

int cmd_certify(const RunConfig& cfg) {
    const CertReport rep = certify_config(cfg);
    write_text_file(out_path(cfg, "_cert.json"), cert_report_json(rep).dump(2) + "\n");
    print_cert(rep);
    return rep.overall() ? 0 : 1;
}

struct LoopSetup {
    ChainPlant plant;
    GainSet g;
    Reference ref;
    bool friction_ff = false;
};

LoopSetup loop_setup(const RunConfig& cfg) {
    const std::size_t m = stage_count(cfg);
    guard_cascade_reference(cfg, m);
    if (is_flexjoint(cfg)) {
        if (m != 2) throw config_error("flexjoint closed loop is the m = 2 cascade");
        const FlexJointChain chain = build_flexjoint(cfg);
        return {chain.chain, cfg.gains(), build_reference(cfg, chain.chain.base), false};
    }
    const ELModel model = build_rigid_model(cfg);
    const bool friction_ff = cfg.friction > 0 && m == 0;
    return {ChainPlant{model, m}, cfg.gains(), build_reference(cfg, model), friction_ff};
}

int cmd_simulate(const RunConfig& cfg) {
    const LoopSetup s = loop_setup(cfg);
    const std::size_t dim = (3 + 2 * s.plant.m) * s.plant.base.n;
    Vec err0 = cfg.err0.empty() ? Vec(dim, 0.0) : cfg.err0;
    if (err0.size() != dim)
        throw config_error("experiment.err0 needs " + std::to_string(dim) +
                           " entries (qtilde, dqtilde, theta0, xi~_i, theta_i per joint)");
    const Vec x0 = assemble_initial_state(s.plant, s.g, s.ref, cfg.t0, err0);
    const ClosedLoopTraj traj =
        run_closed_loop(s.plant, s.g, s.ref, x0, cfg.t0, cfg.horizon, cfg.h, {}, s.friction_ff,
                        cfg.divergence_cap);

    std::ofstream csv(out_path(cfg, "_traj.csv"), std::ios::binary);
    write_traj_csv(csv, traj);
    nlohmann::ordered_json summary = {
        {"model", s.plant.base.name},
        {"m", s.plant.m},
        {"samples", traj.t.size()},
        {"diverged", traj.diverged},
        {"blowup_time", traj.blowup_time},
        {"sup_err", traj.sup_err()},
        {"final_err", traj.err.empty() ? 0.0 : norm(traj.err.back())},
    };
    write_text_file(out_path(cfg, "_summary.json"), summary.dump(2) + "\n");
    std::cout << (traj.diverged ? "simulate: DIVERGED at t = " + fmt_g17(traj.blowup_time)
                                : "simulate: completed, sup ||err|| = " + fmt_g17(traj.sup_err()))
              << "\n";
    return traj.diverged ? 1 : 0;
}

int cmd_ugas(const RunConfig& cfg) {
    const LoopSetup s = loop_setup(cfg);
    UgasConfig uc;
    uc.radii = cfg.radii;
    uc.phases = cfg.phases;
    uc.directions = cfg.directions;
    uc.period = cfg.period;
    uc.sigma = cfg.sigma;
    uc.horizon = cfg.horizon;
    uc.h = cfg.h;
    uc.envelope_tol = cfg.envelope_tol;
    uc.fit_radius = cfg.fit_radius;
    uc.seed = cfg.seed;
    const UgasReport rep = empirical_ugas(s.plant, s.g, s.ref, uc);
    write_text_file(out_path(cfg, "_ugas.json"), ugas_report_json(rep).dump(2) + "\n");
    std::cout << "ugas: " << rep.verdict << "\n"
              << "  max phase variation " << fmt_g17(rep.max_phase_variation)
              << ", local rate " << fmt_g17(rep.lambda_fit) << " (R^2 " << fmt_g17(rep.r2_fit)
              << ")\n";
    return rep.overall() ? 0 : 1;
}

int cmd_gain_search(const RunConfig& cfg) {
    ModelBounds bounds;
    Reference ref;
    ELModel sample_model;
    SearchTarget target;
    std::size_t m = 0;
    if (is_flexjoint(cfg)) {
        const FlexJointChain chain = build_flexjoint(cfg);
        sample_model = chain.chain.base;
        bounds = sample_model.bounds;
        ref = build_reference(cfg, sample_model);
        target = SearchTarget::flexjoint;
        m = 2;
    } else {
        sample_model = build_rigid_model(cfg);
        bounds = sample_model.bounds;
        ref = build_reference(cfg, sample_model);
        m = stage_count(cfg);
        target = m == 0 ? SearchTarget::rd2
                        : (m == 1 ? SearchTarget::single_stage : SearchTarget::general);
    }
    auto eta_for = [&](const GainSet& g) { return eta_for_config(cfg, sample_model, ref, g); };
    const GainSearchResult res =
        gain_search(bounds, ref.k_delta, m, cfg.budget, eta_for, target, cfg.seed);

    // Emit a config that re-certifies to the stored margins bit-exactly:
    // gains and the eta actually used are frozen as explicit values.
    RunConfig emitted = cfg;
    emitted.set_gains(res.gains);
    emitted.gains_mode = "explicit";
    emitted.experiment = "certify";
    if (m >= 1 && !is_flexjoint(cfg)) {
        const EtaBounds eta = eta_for(res.gains);
        emitted.eta_method = "explicit";
        emitted.eta1 = eta.eta1;
        emitted.eta2 = eta.eta2;
        emitted.eta3 = eta.eta3;
    } else if (is_flexjoint(cfg)) {
        const EtaBounds eta = eta_for(res.gains);
        emitted.eta_method = "explicit";
        emitted.eta1 = eta.eta1;
        emitted.eta2 = eta.eta2;
        emitted.eta3 = eta.eta3;
    }
    write_text_file(out_path(cfg, "_gains.toml"), emitted.to_toml());
    write_text_file(out_path(cfg, "_cert.json"), cert_report_json(res.report).dump(2) + "\n");
    std::cout << "gain-search: " << (res.feasible ? "feasible" : "no certificate") << " after "
              << res.evaluations << " evaluations\n";
    print_cert(res.report);
    return res.feasible ? 0 : 1;
}

int cmd_equivalence(const RunConfig& cfg) {
    const LoopSetup s = loop_setup(cfg);
    if (s.plant.m < 1) throw config_error("equivalence needs the cascade controller (m >= 1)");
    const std::size_t dim = (3 + 2 * s.plant.m) * s.plant.base.n;
    Vec err0 = cfg.err0.empty() ? Vec(dim, 0.0) : cfg.err0;
    if (err0.size() != dim)
        throw config_error("experiment.err0 needs " + std::to_string(dim) + " entries");
    const FormEquivalenceResult res =
        form_equivalence(s.g, s.plant, s.ref, err0, cfg.t0, cfg.horizon, cfg.h);
    const bool pass = !res.diverged && res.gap <= cfg.eq_tol;
    nlohmann::ordered_json report = {{"gap", res.gap},
                                     {"tol", cfg.eq_tol},
                                     {"diverged", res.diverged},
                                     {"pass", pass}};
    write_text_file(out_path(cfg, "_equiv.json"), report.dump(2) + "\n");
    std::cout << "equivalence: gap " << fmt_g17(res.gap) << (pass ? " (pass)" : " (FAIL)") << "\n";
    return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"eltrack: tracking-control simulation and gain certification"};
    app.set_help_flag("--help", "print usage");  // frees -h / --h for the step size
    app.require_subcommand(0, 1);

    Overrides ov;
    app.add_flag("--print-config", ov.print_config,
                 "print the effective configuration (all keys, all defaults) and exit");

    std::string cmd;
    for (const char* name : {"certify", "simulate", "gain-search", "ugas", "equivalence"}) {
        CLI::App* sub = app.add_subcommand(name, "");
        sub->set_help_flag("--help", "print usage");
        sub->add_option("--config", ov.config_path, "TOML-style config file");
        sub->add_option("--seed", ov.seed, "override the config seed");
        sub->add_option("--out", ov.out_dir, "override the output directory");
        sub->add_option("--h", ov.h, "override the integration step");
        sub->add_option("--horizon", ov.horizon, "override the simulation horizon");
        sub->callback([&cmd, name] { cmd = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const RunConfig cfg = load_config(ov);
        if (ov.print_config) {
            std::cout << cfg.to_toml();
            return 0;
        }
        if (cmd.empty()) {
            std::cerr << "eltrack: a subcommand is required (certify, simulate, gain-search, "
                         "ugas, equivalence)\n";
            return 2;
        }
        if (cmd == "certify") return cmd_certify(cfg);
        if (cmd == "simulate") return cmd_simulate(cfg);
        if (cmd == "gain-search") return cmd_gain_search(cfg);
        if (cmd == "ugas") return cmd_ugas(cfg);
        return cmd_equivalence(cfg);
    } catch (const config_error& e) {
        std::cerr << "eltrack: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "eltrack: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "eltrack: " << e.what() << "\n";
        return 1;
    }
}

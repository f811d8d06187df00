#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "certify.hpp"
#include "controller.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "ode.hpp"
#include "reference.hpp"
#include "rng.hpp"

namespace eltrack {

/// Scaling of the cross-term monitor; negative entries select the defaults
/// eps1 = sqrt(kp0/(4 d_M)), eps2 = sqrt(kd0/(4 b0 d_M)), both clipped
/// below 1. Monitors never gate the simulation.
struct MonitorOptions {
    double eps1 = -1, eps2 = -1;

    void resolve(const GainSet& g, const ModelBounds& b) {
        if (eps1 < 0) eps1 = std::min(0.99, std::sqrt(g.kp0 / (4.0 * b.d_M)));
        if (eps2 < 0) eps2 = std::min(0.99, std::sqrt(g.kd0 / (4.0 * g.b0 * b.d_M)));
    }
};

/// Closed-loop trajectory on a uniform grid. `x` holds the augmented
/// plant+controller state, `err` the error coordinates
/// (qtilde, qtilde', theta_0[, xi~_1..m, theta_1..m]). On divergence the
/// recorded samples stop at blowup_time and `diverged` is set; no exception.
struct ClosedLoopTraj {
    std::size_t n = 0, m = 0;
    double h = 0, t0 = 0;
    std::vector<double> t;
    std::vector<Vec> x;
    std::vector<Vec> u;
    std::vector<Vec> err;
    std::vector<double> V1, V2, W1, W;
    bool diverged = false;
    double blowup_time = 0;

    double err_norm(std::size_t i) const { return norm(err[i]); }
    double sup_err() const {
        double s = 0;
        for (const Vec& e : err) s = std::max(s, norm(e));
        return s;
    }
};

/// Stage-0 energy-like monitor
///   V1 = (qtilde'^T D qtilde' + kp0 ||qtilde||^2 + (kd0/b0) ||theta_0||^2)/2.
inline double lyapunov_V1(const GainSet& g, const ELModel& model, const Vec& q, const Vec& qtilde,
                          const Vec& qtilde_dot, const Vec& theta0) {
    return 0.5 * (dot(qtilde_dot, model.inertia(q) * qtilde_dot) +
                  g.kp0 * dot(qtilde, qtilde) + g.kd0 / g.b0 * dot(theta0, theta0));
}

/// Cross-term monitor V2 = (eps1 qtilde - eps2 theta_0)^T D qtilde'.
inline double lyapunov_V2(const GainSet& g, const ELModel& model, const Vec& q, const Vec& qtilde,
                          const Vec& qtilde_dot, const Vec& theta0, const MonitorOptions& mo) {
    (void)g;
    return dot(mo.eps1 * qtilde - mo.eps2 * theta0, model.inertia(q) * qtilde_dot);
}

namespace detail {

struct LoopLayout {
    std::size_t n = 0, m = 0;
    std::size_t plant_dim() const { return (2 + m) * n; }
    std::size_t full_dim() const { return plant_dim() + (1 + 2 * m) * n; }
    Vec q(const Vec& x) const { return Vec(x.begin(), x.begin() + n); }
    Vec qdot(const Vec& x) const { return Vec(x.begin() + n, x.begin() + 2 * n); }
    std::vector<Vec> xi(const Vec& x) const {
        std::vector<Vec> out;
        for (std::size_t i = 0; i < m; ++i)
            out.emplace_back(x.begin() + (2 + i) * n, x.begin() + (3 + i) * n);
        return out;
    }
    ControllerState ctrl(const Vec& x) const {
        return ControllerState::unpack(Vec(x.begin() + plant_dim(), x.end()), n, m);
    }
};

inline ControlOutput eval_control(const ChainPlant& plant, const GainSet& g, const LoopLayout& lay,
                                  const Vec& x, const RefPoint& rp, bool friction_ff) {
    const ControllerState cs = lay.ctrl(x);
    if (lay.m == 0)
        return friction_ff ? rd2_friction_feedforward(g, cs, lay.q(x), rp, plant.base)
                           : rd2_control(g, cs, lay.q(x), rp, plant.base);
    return cascade_control(g, cs, lay.q(x), lay.xi(x), rp, plant.base);
}

}  // namespace detail

/// Builds the augmented initial state from error coordinates at time t0.
/// err0 layout: (qtilde, qtilde', theta_0) for m = 0, plus (xi~_1..m,
/// theta_1..m) for chains. The redesign integrators start at zero; the
/// filter states absorb the requested theta values.
inline Vec assemble_initial_state(const ChainPlant& plant, const GainSet& g, const Reference& ref,
                                  double t0, const Vec& err0) {
    const std::size_t n = plant.base.n, m = plant.m;
    if (g.m() != m) throw config_error("assemble_initial_state: gain/plant stage mismatch");
    if (err0.size() != (3 + 2 * m) * n)
        throw dimension_error("assemble_initial_state: error-coordinate length mismatch");
    const RefPoint rp = ref.eval(t0);
    auto seg = [&](std::size_t k) { return Vec(err0.begin() + k * n, err0.begin() + (k + 1) * n); };
    const Vec qtilde = seg(0), qtilde_dot = seg(1), theta0 = seg(2);
    const Vec q = rp.q + qtilde;

    Vec x((2 + m) * n + (1 + 2 * m) * n, 0.0);
    std::copy(q.begin(), q.end(), x.begin());
    const Vec qdot = rp.v + qtilde_dot;
    std::copy(qdot.begin(), qdot.end(), x.begin() + n);

    ControllerState cs;
    cs.qc0 = theta0 - g.b0 * qtilde;
    cs.qc.assign(m, Vec(n, 0.0));
    cs.zeta.assign(m, Vec(n, 0.0));
    Vec xs = (m > 0) ? xi1_star(g, theta0, q, rp, plant.base) : Vec();
    for (std::size_t i = 1; i <= m; ++i) {
        const Vec xt = seg(2 + i);
        const Vec th = seg(2 + m + i);
        const Vec xi_i = xt + xs;
        std::copy(xi_i.begin(), xi_i.end(), x.begin() + (1 + i) * n);
        cs.qc[i - 1] = th - g.b[i - 1] * xs;
        if (i < m) xs = (-g.kp[i - 1]) * xt + g.kd[i - 1] * th;
    }
    const Vec cpack = cs.pack();
    std::copy(cpack.begin(), cpack.end(), x.begin() + (2 + m) * n);
    return x;
}

/// Integrates plant and controller as one augmented RK4 state and records
/// control and monitor samples each step. Stops early with a divergence
/// marker once the state norm exceeds the cap.
inline ClosedLoopTraj run_closed_loop(const ChainPlant& plant, const GainSet& g, const Reference& ref,
                                      const Vec& x0, double t0, double horizon, double h,
                                      MonitorOptions mopt = {}, bool friction_ff = false,
                                      double divergence_cap = 1e9) {
    const detail::LoopLayout lay{plant.base.n, plant.m};
    if (g.m() != plant.m) throw config_error("run_closed_loop: gain/plant stage mismatch");
    if (x0.size() != lay.full_dim()) throw dimension_error("run_closed_loop: initial state length");
    if (h <= 0 || horizon < 0) throw config_error("run_closed_loop: nonpositive step or horizon");
    if (friction_ff && plant.m != 0)
        throw config_error("run_closed_loop: friction feedforward is a relative-degree-2 law");
    mopt.resolve(g, plant.base.bounds);

    ClosedLoopTraj traj;
    traj.n = lay.n;
    traj.m = lay.m;
    traj.h = h;
    traj.t0 = t0;

    auto rhs = [&](double t, const Vec& x) -> Vec {
        const RefPoint rp = ref.eval(t);
        const ControlOutput c = detail::eval_control(plant, g, lay, x, rp, friction_ff);
        Vec dx(lay.full_dim());
        const Vec pd = chain_rhs(plant, Vec(x.begin(), x.begin() + lay.plant_dim()), c.u);
        std::copy(pd.begin(), pd.end(), dx.begin());
        const Vec cd = c.state_dot.pack();
        std::copy(cd.begin(), cd.end(), dx.begin() + lay.plant_dim());
        return dx;
    };

    auto record = [&](double t, const Vec& x) {
        const RefPoint rp = ref.eval(t);
        const ControlOutput c = detail::eval_control(plant, g, lay, x, rp, friction_ff);
        const Vec q = lay.q(x);
        const Vec qtd = lay.qdot(x) - rp.v;
        Vec e = c.qtilde;
        e.insert(e.end(), qtd.begin(), qtd.end());
        e.insert(e.end(), c.theta0.begin(), c.theta0.end());
        for (const Vec& v : c.xi_tilde) e.insert(e.end(), v.begin(), v.end());
        for (const Vec& v : c.theta) e.insert(e.end(), v.begin(), v.end());
        traj.t.push_back(t);
        traj.x.push_back(x);
        traj.u.push_back(c.u);
        traj.err.push_back(e);
        traj.V1.push_back(lyapunov_V1(g, plant.base, q, c.qtilde, qtd, c.theta0));
        traj.V2.push_back(lyapunov_V2(g, plant.base, q, c.qtilde, qtd, c.theta0, mopt));
        double w1 = 0, w = 0;
        for (std::size_t i = 0; i < lay.m; ++i) {
            const double s = 0.5 * (dot(c.xi_tilde[i], c.xi_tilde[i]) + dot(c.theta[i], c.theta[i]));
            if (i == 0) w1 = s;
            w += s;
        }
        traj.W1.push_back(w1);
        traj.W.push_back(w);
    };

    Vec x = x0;
    double t = t0;
    const std::size_t steps = static_cast<std::size_t>(std::ceil(horizon / h - 1e-12));
    record(t, x);
    for (std::size_t k = 0; k < steps; ++k) {
        const double step = std::min(h, t0 + horizon - t);
        Vec xn;
        bool bad = false;
        try {
            xn = rk4_step(rhs, t, x, step);
        } catch (const model_integrity_error&) {
            bad = true;
        }
        if (bad || !all_finite(xn) || norm(xn) > divergence_cap) {
            traj.diverged = true;
            traj.blowup_time = t + step;
            return traj;
        }
        x = std::move(xn);
        t += step;
        record(t, x);
    }
    return traj;
}

// ---------------------------------------------------------------------------
// Dissipation monitors

struct Violation {
    double t = 0;
    double amount = 0;
};

struct VdotReport {
    std::vector<Violation> v1_violations;   // stage-0 dissipation inequality
    std::vector<Violation> w1_violations;   // first-stage balance residual
    double max_w1_residual = 0;
    bool ok() const { return v1_violations.empty() && w1_violations.empty(); }
};

/// Central-differences the stored V1 (and W1 for chains) and checks the
/// dissipation inequality V1' <= -(kd0 a0/b0)||theta_0||^2
/// + k_c k_delta ||qtilde'||^2 within tol = 1e-4 (1 + ||err||^2) at every
/// interior sample, and the first-stage balance
/// W1' = -kp1 ||xi~_1||^2 - a1 ||theta_1||^2 + xi*_1'^T (b1 theta_1 - xi~_1)
/// within the same tolerance.
inline VdotReport check_vdot_bound(const ClosedLoopTraj& traj, const ChainPlant& plant,
                                   const GainSet& g, const Reference& ref) {
    VdotReport rep;
    const std::size_t n = traj.n;
    const double kck = plant.base.bounds.k_c * ref.k_delta;
    // 5-point central stencil: the balance residual is pure differentiation
    // error, so the 4th-order stencil buys the headroom the fixed tolerance
    // needs at practical step sizes
    auto d5 = [&](const std::vector<double>& f, std::size_t i) {
        return (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * traj.h);
    };
    if (traj.t.size() < 5) return rep;
    for (std::size_t i = 2; i + 2 < traj.t.size(); ++i) {
        if (std::abs((traj.t[i + 2] - traj.t[i - 2]) - 4.0 * traj.h) > 1e-9) continue;
        const Vec& e = traj.err[i];
        const double tol = 1e-4 * (1.0 + dot(e, e));
        const Vec theta0(e.begin() + 2 * n, e.begin() + 3 * n);
        const Vec qtd(e.begin() + n, e.begin() + 2 * n);

        const double v1dot = d5(traj.V1, i);
        const double bound = -(g.kd0 * g.a0 / g.b0) * dot(theta0, theta0) + kck * dot(qtd, qtd);
        if (v1dot > bound + tol) rep.v1_violations.push_back({traj.t[i], v1dot - bound});

        if (traj.m >= 1) {
            const RefPoint rp = ref.eval(traj.t[i]);
            const Vec q(traj.x[i].begin(), traj.x[i].begin() + n);
            const Vec qdot(traj.x[i].begin() + n, traj.x[i].begin() + 2 * n);
            const Vec xt1(e.begin() + 3 * n, e.begin() + 4 * n);
            const Vec th1(e.begin() + (3 + traj.m) * n, e.begin() + (4 + traj.m) * n);
            const Vec xsd = xi1_star_dot(g, theta0, q, qdot, rp, plant.base);
            const double w1dot = d5(traj.W1, i);
            const double rhs = -g.kp[0] * dot(xt1, xt1) - g.a[0] * dot(th1, th1) +
                               dot(xsd, g.b[0] * th1 - xt1);
            const double res = std::abs(w1dot - rhs);
            rep.max_w1_residual = std::max(rep.max_w1_residual, res);
            if (res > tol) rep.w1_violations.push_back({traj.t[i], res});
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Matrix-form equivalence

struct FormEquivalenceResult {
    double gap = std::numeric_limits<double>::infinity();
    bool diverged = false;
};

/// Integrates the componentwise chain-error dynamics and the stacked linear
/// form X' = A X + B xi*_1' side by side, driven by the same plant
/// subsystem, and returns the sup-norm gap between the two representations
/// of (xi~, theta).
inline FormEquivalenceResult form_equivalence(const GainSet& g, const ChainPlant& plant,
                                              const Reference& ref, const Vec& err0, double t0,
                                              double horizon, double h) {
    const std::size_t n = plant.base.n, m = plant.m;
    if (m < 1) throw config_error("form_equivalence: m >= 1 required");
    const detail::LoopLayout lay{n, m};
    const ABMatrices ab = build_AB(g, n);
    const Vec x0 = assemble_initial_state(plant, g, ref, t0, err0);

    // combined state: augmented closed loop followed by the linear copy of
    // (xi~_1..m, theta_1..m)
    Vec z0 = x0;
    z0.insert(z0.end(), err0.begin() + 3 * n, err0.end());

    auto err_of = [&](double t, const Vec& x) -> Vec {
        const RefPoint rp = ref.eval(t);
        const ControlOutput c = detail::eval_control(plant, g, lay, x, rp, false);
        Vec e;
        for (const Vec& v : c.xi_tilde) e.insert(e.end(), v.begin(), v.end());
        for (const Vec& v : c.theta) e.insert(e.end(), v.begin(), v.end());
        return e;
    };

    auto rhs = [&](double t, const Vec& z) -> Vec {
        const Vec x(z.begin(), z.begin() + lay.full_dim());
        const Vec xl(z.begin() + lay.full_dim(), z.end());
        const RefPoint rp = ref.eval(t);
        const ControlOutput c = detail::eval_control(plant, g, lay, x, rp, false);
        Vec dz(z.size());
        const Vec pd = chain_rhs(plant, Vec(x.begin(), x.begin() + lay.plant_dim()), c.u);
        std::copy(pd.begin(), pd.end(), dz.begin());
        const Vec cd = c.state_dot.pack();
        std::copy(cd.begin(), cd.end(), dz.begin() + lay.plant_dim());
        const Vec qdot = lay.qdot(x);
        const Vec xsd = xi1_star_dot(g, c.theta0, lay.q(x), qdot, rp, plant.base);
        const Vec ld = ab.A * xl + ab.B * xsd;
        std::copy(ld.begin(), ld.end(), dz.begin() + lay.full_dim());
        return dz;
    };

    FormEquivalenceResult res;
    res.gap = 0;
    Vec z = z0;
    double t = t0;
    const std::size_t steps = static_cast<std::size_t>(std::ceil(horizon / h - 1e-12));
    for (std::size_t k = 0; k < steps; ++k) {
        const double step = std::min(h, t0 + horizon - t);
        try {
            z = rk4_step(rhs, t, z, step);
        } catch (const std::exception&) {
            res.diverged = true;
            return res;
        }
        if (!all_finite(z) || norm(z) > 1e9) {
            res.diverged = true;
            return res;
        }
        t += step;
        const Vec e = err_of(t, Vec(z.begin(), z.begin() + lay.full_dim()));
        const Vec xl(z.begin() + lay.full_dim(), z.end());
        res.gap = std::max(res.gap, norm(e - xl));
    }
    return res;
}

// ---------------------------------------------------------------------------
// Empirical uniform-stability testing

struct UgasConfig {
    std::vector<double> radii{0.1, 1.0, 10.0};
    std::size_t phases = 8;
    std::size_t directions = 8;
    double period = 0;        // phase spread; 0 uses the horizon
    double sigma = 1e-3;
    double horizon = 60.0;
    double h = 1e-3;
    double envelope_tol = 0.10;
    double fit_radius = 0.01;
    std::uint64_t seed = 1;
};

struct UgasRun {
    double r = 0, t0 = 0;
    double envelope = 0;          // sup_t ||err(t)||
    double entry_time = -1;       // first time ||err|| <= sigma, -1 if never
    double integral_excess = 0;   // integral of max(||err||^2 - sigma^2, 0)
    bool diverged = false;
};

struct UgasReport {
    std::vector<UgasRun> runs;
    bool all_converged = true;
    bool none_diverged = true;
    bool envelopes_monotone = true;
    bool uniform_across_phases = true;
    double max_phase_variation = 0;
    double lambda_fit = 0, r2_fit = 0;
    std::string verdict;

    bool overall() const {
        return all_converged && none_diverged && envelopes_monotone && uniform_across_phases;
    }
};

namespace detail {
inline void exp_fit(const std::vector<double>& t, const std::vector<double>& lognorm, double& lambda,
                    double& r2) {
    const std::size_t k = t.size();
    if (k < 3) {
        lambda = 0;
        r2 = 0;
        return;
    }
    double st = 0, sy = 0, stt = 0, sty = 0;
    for (std::size_t i = 0; i < k; ++i) {
        st += t[i];
        sy += lognorm[i];
        stt += t[i] * t[i];
        sty += t[i] * lognorm[i];
    }
    const double denom = k * stt - st * st;
    const double slope = (k * sty - st * sy) / denom;
    const double icept = (sy - slope * st) / k;
    double ss_res = 0, ss_tot = 0;
    const double mean = sy / k;
    for (std::size_t i = 0; i < k; ++i) {
        const double fit = icept + slope * t[i];
        ss_res += (lognorm[i] - fit) * (lognorm[i] - fit);
        ss_tot += (lognorm[i] - mean) * (lognorm[i] - mean);
    }
    lambda = -slope;
    r2 = (ss_tot > 0) ? 1.0 - ss_res / ss_tot : 0.0;
}
}  // namespace detail

/// Batch experiment over initial spheres and reference phases. Reports the
/// boundedness envelope per (radius, phase), its monotonicity in the radius
/// and variation across phases, the entry time into the sigma-ball, the
/// integral excess, and a near-origin exponential fit. A finite grid cannot
/// prove the uniform global property; the verdict says so explicitly.
inline UgasReport empirical_ugas(const ChainPlant& plant, const GainSet& g, const Reference& ref,
                                 const UgasConfig& cfg) {
    const std::size_t n = plant.base.n, m = plant.m;
    const std::size_t edim = (3 + 2 * m) * n;
    UgasReport rep;
    Rng rng(cfg.seed);
    const double spread = (cfg.period > 0) ? cfg.period : cfg.horizon;

    std::vector<std::vector<double>> phase_env(cfg.radii.size(),
                                               std::vector<double>(cfg.phases, 0.0));
    for (std::size_t ri = 0; ri < cfg.radii.size(); ++ri) {
        const double r = cfg.radii[ri];
        // one direction set per radius, shared across phases: the phase
        // comparison must vary only the initial time
        std::vector<Vec> dirs;
        for (std::size_t di = 0; di < cfg.directions; ++di) dirs.push_back(rng.unit_vector(edim));
        for (std::size_t pi = 0; pi < cfg.phases; ++pi) {
            const double t0 = spread * double(pi) / double(cfg.phases);
            UgasRun run;
            run.r = r;
            run.t0 = t0;
            for (std::size_t di = 0; di < cfg.directions; ++di) {
                const Vec& dir = dirs[di];
                const Vec err0 = (r == 0.0) ? Vec(edim, 0.0) : r * dir;
                const Vec x0 = assemble_initial_state(plant, g, ref, t0, err0);
                const ClosedLoopTraj traj =
                    run_closed_loop(plant, g, ref, x0, t0, cfg.horizon, cfg.h);
                if (traj.diverged) {
                    run.diverged = true;
                    rep.none_diverged = false;
                    continue;
                }
                double entry = -1;
                for (std::size_t i = 0; i < traj.t.size(); ++i) {
                    const double en = traj.err_norm(i);
                    run.envelope = std::max(run.envelope, en);
                    if (entry < 0 && en <= cfg.sigma) entry = traj.t[i] - t0;
                    run.integral_excess += std::max(en * en - cfg.sigma * cfg.sigma, 0.0) * cfg.h;
                }
                if (r == 0.0) entry = 0.0;
                if (entry < 0)
                    rep.all_converged = false;
                else
                    run.entry_time = std::max(run.entry_time, entry);
            }
            phase_env[ri][pi] = run.envelope;
            rep.runs.push_back(run);
        }
    }

    double prev_env = -1;
    for (std::size_t ri = 0; ri < cfg.radii.size(); ++ri) {
        const double env = *std::max_element(phase_env[ri].begin(), phase_env[ri].end());
        const double lo = *std::min_element(phase_env[ri].begin(), phase_env[ri].end());
        if (env < prev_env) rep.envelopes_monotone = false;
        prev_env = env;
        // envelopes inside the sigma-ball are measurement noise, not a
        // uniformity signal
        if (env > cfg.sigma) {
            const double var = (env - lo) / env;
            rep.max_phase_variation = std::max(rep.max_phase_variation, var);
            if (var > cfg.envelope_tol) rep.uniform_across_phases = false;
        }
    }

    // near-origin exponential decay fit on one run per phase
    {
        std::vector<double> ts, ys;
        const Vec dir = rng.unit_vector(edim);
        const Vec x0 = assemble_initial_state(plant, g, ref, 0.0, cfg.fit_radius * dir);
        const ClosedLoopTraj traj = run_closed_loop(plant, g, ref, x0, 0.0, cfg.horizon, cfg.h);
        if (!traj.diverged) {
            for (std::size_t i = 0; i < traj.t.size(); ++i) {
                const double en = traj.err_norm(i);
                if (en < 1e-12 || en <= 0.02 * cfg.sigma) break;
                ts.push_back(traj.t[i]);
                ys.push_back(std::log(en));
            }
            detail::exp_fit(ts, ys, rep.lambda_fit, rep.r2_fit);
        }
    }

    rep.verdict = rep.overall() ? "consistent with uniform global asymptotic stability on the "
                                  "tested grid (not a proof)"
                                : "uniformity not supported by the tested grid";
    return rep;
}

// ---------------------------------------------------------------------------
// Passivity interpretation of the relative-degree-2 law

/// Closed loop of the set-point-plus-feedforward form of the controller:
///   u = -kp q - kd theta + g(q) + v,  v = D(q) qd'' + C(q, qd') qd' + kp qd,
/// with the filter driven by qtilde. With `friction_comp` the law adds
/// F qd' and the plant friction stays active. State layout (q, q', qc).
struct PassivityTraj {
    double h = 0;
    std::vector<double> t;
    std::vector<Vec> x;
    std::vector<double> V;  // storage samples
    bool diverged = false;
    double blowup_time = 0;
};

inline PassivityTraj run_passivity_loop(const ELModel& model, const GainSet& g, const Reference& ref,
                                        const Vec& x0, double t0, double horizon, double h,
                                        bool friction_comp = false) {
    const std::size_t n = model.n;
    if (x0.size() != 3 * n) throw dimension_error("run_passivity_loop: state is (q, q', qc)");
    if (friction_comp && !model.friction)
        throw config_error("run_passivity_loop: model has no friction matrix");

    auto control = [&](double t, const Vec& x) -> Vec {
        const RefPoint rp = ref.eval(t);
        const Vec q(x.begin(), x.begin() + n);
        const Vec qc(x.begin() + 2 * n, x.end());
        const Vec theta = qc + g.b0 * (q - rp.q);
        Vec v = model.inertia(q) * rp.a + model.coriolis(q, rp.v) * rp.v + g.kp0 * rp.q;
        Vec u = (-g.kp0) * q - g.kd0 * theta + model.gravity(q) + v;
        if (friction_comp) u += (*model.friction) * rp.v;
        return u;
    };
    auto rhs = [&](double t, const Vec& x) -> Vec {
        const RefPoint rp = ref.eval(t);
        const Vec q(x.begin(), x.begin() + n);
        const Vec qdot(x.begin() + n, x.begin() + 2 * n);
        const Vec qc(x.begin() + 2 * n, x.end());
        const Vec theta = qc + g.b0 * (q - rp.q);
        Vec dx(3 * n);
        std::copy(qdot.begin(), qdot.end(), dx.begin());
        const Vec acc = el_accel(model, q, qdot, control(t, x));
        std::copy(acc.begin(), acc.end(), dx.begin() + n);
        // theta = qc + b qtilde and qc' = -a theta give theta' = -a theta + b qtilde'
        for (std::size_t i = 0; i < n; ++i) dx[2 * n + i] = -g.a0 * theta[i];
        return dx;
    };
    auto storage = [&](double t, const Vec& x) -> double {
        const RefPoint rp = ref.eval(t);
        const Vec q(x.begin(), x.begin() + n);
        const Vec qdot(x.begin() + n, x.begin() + 2 * n);
        const Vec theta = Vec(x.begin() + 2 * n, x.end()) + g.b0 * (q - rp.q);
        return 0.5 * (dot(qdot, model.inertia(q) * qdot) + g.kp0 * dot(q, q) +
                      g.kd0 / g.b0 * dot(theta, theta));
    };

    PassivityTraj traj;
    traj.h = h;
    Vec x = x0;
    double t = t0;
    traj.t.push_back(t);
    traj.x.push_back(x);
    traj.V.push_back(storage(t, x));
    const std::size_t steps = static_cast<std::size_t>(std::ceil(horizon / h - 1e-12));
    for (std::size_t k = 0; k < steps; ++k) {
        const double step = std::min(h, t0 + horizon - t);
        Vec xn;
        try {
            xn = rk4_step(rhs, t, x, step);
        } catch (const std::exception&) {
            traj.diverged = true;
            traj.blowup_time = t + step;
            return traj;
        }
        if (!all_finite(xn) || norm(xn) > 1e9) {
            traj.diverged = true;
            traj.blowup_time = t + step;
            return traj;
        }
        x = std::move(xn);
        t += step;
        traj.t.push_back(t);
        traj.x.push_back(x);
        traj.V.push_back(storage(t, x));
    }
    return traj;
}

struct PassivityReport {
    double max_residual = 0;       // friction-free exact balance
    double max_inequality_gap = 0; // friction dissipation inequality slack
    bool inequality_ok = true;
};

/// Checks the storage balance along a passivity-loop run by central
/// differences. Friction-free the balance is exact:
///   V' = -(kd a/b)||theta||^2 - kd theta^T qd' + q'^T v.
/// With friction the structured dissipation inequality
///   V' <= -(kd a/b)||theta||^2 - (f_min - k_c k_delta)||qtilde'||^2
///         + qtilde'^T v + qd'^T (v - F qtilde') - kd theta^T qd'
/// must hold at every interior sample.
inline PassivityReport passivity_balance(const PassivityTraj& traj, const ELModel& model,
                                         const GainSet& g, const Reference& ref,
                                         bool friction_mode = false) {
    const std::size_t n = model.n;
    PassivityReport rep;
    double fmin = 0;
    if (friction_mode) {
        if (!model.friction) throw config_error("passivity_balance: model has no friction matrix");
        fmin = min_eig_sym(*model.friction);
    }
    const double kck = model.bounds.k_c * ref.k_delta;
    if (traj.t.size() < 5) return rep;
    for (std::size_t i = 2; i + 2 < traj.t.size(); ++i) {
        if (std::abs((traj.t[i + 2] - traj.t[i - 2]) - 4.0 * traj.h) > 1e-9) continue;
        const double vdot =
            (traj.V[i - 2] - 8.0 * traj.V[i - 1] + 8.0 * traj.V[i + 1] - traj.V[i + 2]) /
            (12.0 * traj.h);
        const RefPoint rp = ref.eval(traj.t[i]);
        const Vec& x = traj.x[i];
        const Vec q(x.begin(), x.begin() + n);
        const Vec qdot(x.begin() + n, x.begin() + 2 * n);
        const Vec theta = Vec(x.begin() + 2 * n, x.end()) + g.b0 * (q - rp.q);
        const Vec v = model.inertia(q) * rp.a + model.coriolis(q, rp.v) * rp.v + g.kp0 * rp.q;
        const double damp = -(g.kd0 * g.a0 / g.b0) * dot(theta, theta);
        if (!friction_mode) {
            const double rhs = damp - g.kd0 * dot(theta, rp.v) + dot(qdot, v);
            rep.max_residual = std::max(rep.max_residual, std::abs(vdot - rhs));
        } else {
            const Vec qtd = qdot - rp.v;
            const Vec fq = (*model.friction) * qtd;
            const double rhs = damp - (fmin - kck) * dot(qtd, qtd) + dot(qtd, v) +
                               dot(rp.v, v - fq) - g.kd0 * dot(theta, rp.v);
            const double tol = 1e-5 * (1.0 + dot(x, x));
            if (vdot > rhs + tol) {
                rep.inequality_ok = false;
                rep.max_inequality_gap = std::max(rep.max_inequality_gap, vdot - rhs);
            }
        }
    }
    return rep;
}

/// Forward-completeness envelope from the comparison-lemma constants:
/// ||err(t)|| <= c1 ||err(t0)|| exp(c2 (t - t0)) with c1 = sqrt(alpha1/alpha2)
/// and c2 = k_c k_delta / d_m. Returns the worst signed slack (>= 0 means
/// the envelope holds everywhere).
inline double growth_envelope_margin(const ClosedLoopTraj& traj, const ELModel& model,
                                     const GainSet& g, double k_delta) {
    const double a1 = 0.5 * std::max({model.bounds.d_M, g.kp0, g.kd0 / g.b0});
    const double a2 = 0.5 * std::min({model.bounds.d_m, g.kp0, g.kd0 / g.b0});
    const double c1 = std::sqrt(a1 / a2);
    const double c2 = model.bounds.k_c * k_delta / model.bounds.d_m;
    const double e0 = traj.err_norm(0);
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < traj.t.size(); ++i) {
        const double cap = c1 * e0 * std::exp(c2 * (traj.t[i] - traj.t0)) + 1e-12;
        margin = std::min(margin, cap - traj.err_norm(i));
    }
    return margin;
}

}  // namespace eltrack

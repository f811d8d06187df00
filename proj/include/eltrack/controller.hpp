#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "linalg.hpp"
#include "model.hpp"
#include "reference.hpp"

namespace eltrack {

struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Controller gains. Stage 0 is the position filter; stages 1..m drive the
/// integrator chain. Vectors kp, kd, a, b are indexed stage-1-first, so
/// kp[i-1] holds k_p_i. sigma_1 = 0 and sigma_i = b_i k_p_{i-1} are derived.
struct GainSet {
    double kp0 = 0, kd0 = 0, a0 = 0, b0 = 0;
    std::vector<double> kp, kd, a, b;

    std::size_t m() const { return kp.size(); }

    double sigma(std::size_t i) const {  // i in [1, m]
        if (i < 1 || i > m()) throw dimension_error("sigma: stage index out of range");
        if (i == 1) return 0.0;
        return b[i - 1] * kp[i - 2];
    }

    void validate() const {
        if (kp0 <= 0 || kd0 <= 0 || a0 <= 0 || b0 <= 0)
            throw config_error("GainSet: stage-0 gains must be strictly positive");
        if (kd.size() != m() || a.size() != m() || b.size() != m())
            throw config_error("GainSet: per-stage gain lists must have equal length");
        for (std::size_t i = 0; i < m(); ++i)
            if (kp[i] <= 0 || kd[i] <= 0 || a[i] <= 0 || b[i] <= 0)
                throw config_error("GainSet: per-stage gains must be strictly positive");
    }
};

/// Dynamic state of the controller: the stage-0 filter plus, per chain
/// stage, a filter state and the redesign integrator.
struct ControllerState {
    Vec qc0;
    std::vector<Vec> qc;    // stages 1..m
    std::vector<Vec> zeta;  // stages 1..m

    /// Default initialization: qc0 = -b0 qtilde so theta_0(0) = 0; all other
    /// states zero. Any initial state is admissible.
    static ControllerState zero_start(const GainSet& g, std::size_t n, const Vec& qtilde0) {
        ControllerState s;
        s.qc0 = (-g.b0) * qtilde0;
        s.qc.assign(g.m(), Vec(n, 0.0));
        s.zeta.assign(g.m(), Vec(n, 0.0));
        return s;
    }

    Vec pack() const {
        Vec out = qc0;
        for (const Vec& v : qc) out.insert(out.end(), v.begin(), v.end());
        for (const Vec& v : zeta) out.insert(out.end(), v.begin(), v.end());
        return out;
    }
    static ControllerState unpack(const Vec& flat, std::size_t n, std::size_t m) {
        if (flat.size() != (1 + 2 * m) * n) throw dimension_error("ControllerState::unpack: size mismatch");
        ControllerState s;
        s.qc0.assign(flat.begin(), flat.begin() + n);
        for (std::size_t i = 0; i < m; ++i)
            s.qc.emplace_back(flat.begin() + (1 + i) * n, flat.begin() + (2 + i) * n);
        for (std::size_t i = 0; i < m; ++i)
            s.zeta.emplace_back(flat.begin() + (1 + m + i) * n, flat.begin() + (2 + m + i) * n);
        return s;
    }
};

/// Control value plus the internal signals useful for certification and
/// Lyapunov monitoring.
struct ControlOutput {
    Vec u;
    Vec qtilde;
    Vec theta0;
    std::vector<Vec> xi_star;   // xi*_1 .. xi*_m
    std::vector<Vec> theta;     // theta_1 .. theta_m
    std::vector<Vec> xi_tilde;  // xi~_1 .. xi~_m
    ControllerState state_dot;
};

/// Position-feedback tracking controller for the relative-degree-2 plant:
///   theta_0 = qc0 + b0 qtilde,  qc0' = -a0 theta_0,
///   u = -kp0 qtilde - kd0 theta_0 + D(q) qd'' + C(q, qd') qd' + g(q).
/// Reads positions only; velocity enters through the filter state.
inline ControlOutput rd2_control(const GainSet& g, const ControllerState& s, const Vec& q,
                                 const RefPoint& ref, const ELModel& model) {
    const std::size_t n = model.n;
    if (q.size() != n || s.qc0.size() != n) throw dimension_error("rd2_control: length mismatch");
    ControlOutput out;
    out.qtilde = q - ref.q;
    out.theta0 = s.qc0 + g.b0 * out.qtilde;
    out.u = (-g.kp0) * out.qtilde - g.kd0 * out.theta0 + model.inertia(q) * ref.a +
            model.coriolis(q, ref.v) * ref.v + model.gravity(q);
    out.state_dot.qc0 = (-g.a0) * out.theta0;
    return out;
}

/// Friction variant written as in the passivity section:
///   u = -kp q - kd theta + g(q) + F qd' + v,
///   v = D(q) qd'' + C(q, qd') qd' + kp q_d,
/// which equals the rd2 law plus the feedforward F qd'.
inline ControlOutput rd2_friction_feedforward(const GainSet& g, const ControllerState& s, const Vec& q,
                                              const RefPoint& ref, const ELModel& model) {
    if (!model.friction) throw config_error("rd2_friction_feedforward: model has no friction matrix");
    ControlOutput out = rd2_control(g, s, q, ref, model);
    out.u += (*model.friction) * ref.v;
    return out;
}

/// Virtual control for the first chain stage:
///   xi*_1 = -kp0 qtilde - kd0 theta_0 + D(q) qd'' + C(q, qd') qd' + g(q).
inline Vec xi1_star(const GainSet& g, const Vec& theta0, const Vec& q, const RefPoint& ref,
                    const ELModel& model) {
    const Vec qtilde = q - ref.q;
    return (-g.kp0) * qtilde - g.kd0 * theta0 + model.inertia(q) * ref.a +
           model.coriolis(q, ref.v) * ref.v + model.gravity(q);
}

/// Analytic time derivative of xi*_1 along the closed loop. Velocity-
/// dependent: used only for certification and residual monitors, never inside
/// the controller. The Coriolis partial-derivative term is evaluated as a
/// directional finite difference (tolerance on the order of 1e-6).
inline Vec xi1_star_dot(const GainSet& g, const Vec& theta0, const Vec& q, const Vec& qdot,
                        const RefPoint& ref, const ELModel& model) {
    if (!ref.has_jerk) throw config_error("xi1_star_dot: reference provides no jerk");
    const std::size_t n = model.n;
    const Vec qtilde_dot = qdot - ref.v;
    const Mat c_d = model.coriolis(q, ref.v);
    const Mat c_q = model.coriolis(q, qdot);
    // M qd' = d/dt[C(q, qd')] qd' along (q' = qdot, qd'' = ref.a)
    const double eps = 1e-6;
    Vec qp = q, qm = q, vp = ref.v, vm = ref.v;
    for (std::size_t i = 0; i < n; ++i) {
        qp[i] += eps * qdot[i];
        qm[i] -= eps * qdot[i];
        vp[i] += eps * ref.a[i];
        vm[i] -= eps * ref.a[i];
    }
    const Mat cdot_d = (1.0 / (2 * eps)) * (model.coriolis(qp, vp) - model.coriolis(qm, vm));
    Vec out = (c_d + c_q + transpose(c_q)) * ref.a + model.inertia(q) * ref.j + cdot_d * ref.v +
              transpose(model.gravity_jacobian(q)) * qdot;
    out = out - g.kp0 * qtilde_dot - g.kd0 * ((-g.a0) * theta0 + g.b0 * qtilde_dot);
    return out;
}

/// Cascaded controller for the plant with m integrators:
///   theta_0 = qc0 + b0 qtilde,          qc0'  = -a0 theta_0
///   theta_i = qc_i + b_i xi*_i + zeta_i, qc_i' = -a_i theta_i
///   zeta_i' = -(kd_i - sigma_i) xi~_i,   xi~_i = xi_i - xi*_i
///   xi*_{i+1} = -kp_i xi~_i + kd_i theta_i   (i < m)
///   u = -kp_m xi~_m + kd_m theta_m.
inline ControlOutput cascade_control(const GainSet& g, const ControllerState& s, const Vec& q,
                                     const std::vector<Vec>& xi, const RefPoint& ref,
                                     const ELModel& model) {
    const std::size_t n = model.n, m = g.m();
    if (m < 1) throw config_error("cascade_control: m = 0, use rd2_control");
    if (xi.size() != m || s.qc.size() != m || s.zeta.size() != m)
        throw dimension_error("cascade_control: stage count mismatch");
    ControlOutput out;
    out.qtilde = q - ref.q;
    out.theta0 = s.qc0 + g.b0 * out.qtilde;
    out.state_dot.qc0 = (-g.a0) * out.theta0;
    out.xi_star.resize(m);
    out.theta.resize(m);
    out.xi_tilde.resize(m);
    out.state_dot.qc.resize(m);
    out.state_dot.zeta.resize(m);

    out.xi_star[0] = xi1_star(g, out.theta0, q, ref, model);
    for (std::size_t i = 1; i <= m; ++i) {
        const std::size_t k = i - 1;
        out.theta[k] = s.qc[k] + g.b[k] * out.xi_star[k] + s.zeta[k];
        out.xi_tilde[k] = xi[k] - out.xi_star[k];
        out.state_dot.qc[k] = (-g.a[k]) * out.theta[k];
        out.state_dot.zeta[k] = (-(g.kd[k] - g.sigma(i))) * out.xi_tilde[k];
        if (i < m)
            out.xi_star[k + 1] = (-g.kp[k]) * out.xi_tilde[k] + g.kd[k] * out.theta[k];
    }
    out.u = (-g.kp[m - 1]) * out.xi_tilde[m - 1] + g.kd[m - 1] * out.theta[m - 1];
    return out;
}

}  // namespace eltrack

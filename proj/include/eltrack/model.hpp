#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "linalg.hpp"

namespace eltrack {

struct parameter_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct model_integrity_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Saturation sat(s) = delta1 * min(delta2, s).
inline double sat(double s, double delta1 = 1.0, double delta2 = 1.0) {
    return delta1 * std::min(delta2, s);
}

/// Structural constants of an Euler-Lagrange model:
///   d_m <= ||D(q)|| <= d_M,   ||C(x,y)|| <= k_c ||y||,
///   ||dg/dq|| <= k_v,         ||C(w,y)-C(z,y)|| <= lambda sat(||w-z||) ||y||.
struct ModelBounds {
    double d_m = 0.0;
    double d_M = 0.0;
    double k_c = 0.0;
    double k_v = 0.0;
    double lambda = 0.0;
    double sat_delta1 = 1.0;
    double sat_delta2 = 1.0;
    std::string method = "analytic";  // how the bounds were obtained

    double sat(double s) const { return eltrack::sat(s, sat_delta1, sat_delta2); }
};

/// Rigid Euler-Lagrange plant  D(q) q" + C(q,q') q' + g(q) [+ F q'] = u.
struct ELModel {
    std::string name;
    std::size_t n = 0;
    std::function<Mat(const Vec&)> inertia;                 // D(q)
    std::function<Mat(const Vec&, const Vec&)> coriolis;    // C(q, v)
    std::function<Vec(const Vec&)> gravity;                 // g(q)
    std::function<Mat(const Vec&)> gravity_jacobian;        // dg/dq
    std::function<double(const Vec&)> potential;            // U(q), g = dU/dq
    std::optional<Mat> friction;                            // F, viscous
    ModelBounds bounds;
};

/// Forward dynamics: q" = D(q)^-1 (u - C(q,v) v - g(q) - F v).
inline Vec el_accel(const ELModel& model, const Vec& q, const Vec& v, const Vec& u) {
    if (q.size() != model.n || v.size() != model.n || u.size() != model.n)
        throw dimension_error("el_accel: vector length mismatch");
    const Mat d = model.inertia(q);
    Vec rhs = u - model.coriolis(q, v) * v - model.gravity(q);
    if (model.friction) rhs = rhs - (*model.friction) * v;
    try {
        return solve_spd(d, rhs);
    } catch (const numerical_error&) {
        throw model_integrity_error("el_accel: inertia matrix not positive definite at query point");
    }
}

/// Total mechanical energy (kinetic + potential).
inline double el_energy(const ELModel& model, const Vec& q, const Vec& v) {
    return 0.5 * dot(v, model.inertia(q) * v) + model.potential(q);
}

/// Point-mass pendulum: D = m l^2, C = 0, g = m g0 l sin q.
inline ELModel make_pendulum(double mass = 1.0, double length = 1.0, double g0 = 9.81) {
    if (mass <= 0 || length <= 0 || g0 <= 0) throw parameter_error("make_pendulum: parameters must be positive");
    ELModel m;
    m.name = "pendulum";
    m.n = 1;
    const double inertia = mass * length * length;
    const double grav = mass * g0 * length;
    m.inertia = [inertia](const Vec&) { return Mat{{inertia}}; };
    m.coriolis = [](const Vec&, const Vec&) { return Mat(1, 1, 0.0); };
    m.gravity = [grav](const Vec& q) { return Vec{grav * std::sin(q[0])}; };
    m.gravity_jacobian = [grav](const Vec& q) { return Mat{{grav * std::cos(q[0])}}; };
    m.potential = [grav](const Vec& q) { return -grav * std::cos(q[0]); };
    m.bounds = {inertia, inertia, 0.0, grav, 0.0, 1.0, 1.0, "analytic"};
    return m;
}

struct TwoLinkParams {
    double a1 = 3.3;   // inertia: m1 lc1^2 + m2 (l1^2 + lc2^2) + I1 + I2
    double a2 = 0.97;  // inertia: m2 lc2^2 + I2
    double a3 = 1.04;  // inertia coupling: m2 l1 lc2
    double b1 = 4.4;   // gravity: (m1 lc1 + m2 l1) g0
    double b2 = 1.2;   // gravity: m2 lc2 g0
};

/// Planar two-revolute-joint arm with the standard inertia matrix
/// D(q) = [[a1 + 2 a3 cos q2, a2 + a3 cos q2], [a2 + a3 cos q2, a2]] and
/// C built from its Christoffel symbols.
inline ELModel make_two_link(const TwoLinkParams& p = {}) {
    if (p.a1 <= 0 || p.a2 <= 0 || p.a3 <= 0 || p.b1 <= 0 || p.b2 <= 0)
        throw parameter_error("make_two_link: parameters must be positive");
    ELModel m;
    m.name = "two_link";
    m.n = 2;
    m.inertia = [p](const Vec& q) {
        const double c2 = std::cos(q[1]);
        return Mat{{p.a1 + 2 * p.a3 * c2, p.a2 + p.a3 * c2}, {p.a2 + p.a3 * c2, p.a2}};
    };
    m.coriolis = [p](const Vec& q, const Vec& v) {
        const double h = p.a3 * std::sin(q[1]);
        return Mat{{-h * v[1], -h * (v[0] + v[1])}, {h * v[0], 0.0}};
    };
    m.gravity = [p](const Vec& q) {
        return Vec{p.b1 * std::cos(q[0]) + p.b2 * std::cos(q[0] + q[1]),
                   p.b2 * std::cos(q[0] + q[1])};
    };
    m.gravity_jacobian = [p](const Vec& q) {
        const double s1 = std::sin(q[0]), s12 = std::sin(q[0] + q[1]);
        return Mat{{-p.b1 * s1 - p.b2 * s12, -p.b2 * s12}, {-p.b2 * s12, -p.b2 * s12}};
    };
    m.potential = [p](const Vec& q) {
        return p.b1 * std::sin(q[0]) + p.b2 * std::sin(q[0] + q[1]);
    };

    // Inertia eigenvalue extremes depend on q2 only; sample a dense grid and
    // widen by the 1.1 safety factor. The remaining constants are analytic:
    //   ||C(q,v)||_2 <= ||C||_F <= sqrt(3) a3 ||v||
    //   |sin w2 - sin z2| <= min(2, ||w - z||)  =>  lambda = 2 sqrt(3) a3
    //   ||dg/dq||_F <= sqrt((b1 + b2)^2 + 3 b2^2)
    double dmin = std::numeric_limits<double>::infinity(), dmax = 0.0;
    for (int i = 0; i <= 720; ++i) {
        const double q2 = 2.0 * M_PI * i / 720.0;
        const Mat d = m.inertia({0.0, q2});
        const double tr = d(0, 0) + d(1, 1);
        const double det = d(0, 0) * d(1, 1) - d(0, 1) * d(1, 0);
        const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
        dmin = std::min(dmin, tr / 2.0 - disc);
        dmax = std::max(dmax, tr / 2.0 + disc);
    }
    if (dmin <= 0.0) throw parameter_error("make_two_link: inertia matrix not positive definite for these parameters");
    m.bounds.d_m = dmin / 1.1;
    m.bounds.d_M = dmax * 1.1;
    m.bounds.k_c = std::sqrt(3.0) * p.a3;
    m.bounds.lambda = 2.0 * std::sqrt(3.0) * p.a3;
    m.bounds.k_v = std::sqrt((p.b1 + p.b2) * (p.b1 + p.b2) + 3.0 * p.b2 * p.b2);
    m.bounds.method = "inertia extremes sampled (1.1 safety), rest analytic";
    return m;
}

/// Add viscous friction F (symmetric positive definite) to a model.
inline ELModel with_friction(ELModel model, Mat f) {
    if (f.rows != model.n || f.cols != model.n || !chol_pd(f, 1e-12))
        throw parameter_error("with_friction: F must be symmetric positive definite n x n");
    model.friction = std::move(f);
    model.name += "+friction";
    return model;
}

/// Flexible-joint manipulator
///   D(q1) q1" + C(q1,q1') q1' + gbar(q1) = K (q2 - q1)
///   J q2" + K (q2 - q1) = tau
struct FlexJointModel {
    ELModel link;     // rigid link dynamics with gravity gbar
    Mat stiffness;    // K, positive diagonal
    Mat rotor_inertia;  // J, positive diagonal

    std::size_t n() const { return link.n; }
};

inline FlexJointModel make_flexjoint(ELModel link, const Vec& k_diag, const Vec& j_diag) {
    if (k_diag.size() != link.n || j_diag.size() != link.n)
        throw parameter_error("make_flexjoint: diagonal length mismatch");
    for (double v : k_diag)
        if (v <= 0) throw parameter_error("make_flexjoint: stiffness entries must be positive");
    for (double v : j_diag)
        if (v <= 0) throw parameter_error("make_flexjoint: rotor inertia entries must be positive");
    return {std::move(link), Mat::diagonal(k_diag), Mat::diagonal(j_diag)};
}

/// Euler-Lagrange plant driven through a chain of m integrators:
///   D(q) q" + C(q,q') q' + g(q) = xi_1,  xi_i' = xi_{i+1},  xi_m' = u.
/// State layout: (q, q', xi_1, ..., xi_m), total (2+m) n entries.
struct ChainPlant {
    ELModel base;
    std::size_t m = 0;

    std::size_t state_dim() const { return (2 + m) * base.n; }
};

/// Right-hand side of the chain plant in the layout above. For m = 0 the
/// input drives the rigid model directly.
inline Vec chain_rhs(const ChainPlant& plant, const Vec& state, const Vec& u) {
    const std::size_t n = plant.base.n;
    if (state.size() != plant.state_dim() || u.size() != n)
        throw dimension_error("chain_rhs: state or input length mismatch");
    const Vec q(state.begin(), state.begin() + n);
    const Vec v(state.begin() + n, state.begin() + 2 * n);
    Vec out(state.size());
    std::copy(v.begin(), v.end(), out.begin());
    const Vec force = plant.m == 0 ? u : Vec(state.begin() + 2 * n, state.begin() + 3 * n);
    const Vec acc = el_accel(plant.base, q, v, force);
    std::copy(acc.begin(), acc.end(), out.begin() + n);
    for (std::size_t i = 1; i < plant.m; ++i)
        std::copy(state.begin() + (2 + i) * n, state.begin() + (3 + i) * n, out.begin() + (1 + i) * n);
    if (plant.m > 0) std::copy(u.begin(), u.end(), out.begin() + (1 + plant.m) * n);
    return out;
}

/// Result of rewriting a flexible-joint model as an m = 2 integrator chain
/// via xi_1 = K q2, xi_2 = K q2'. The chain's gravity absorbs the joint
/// coupling: g(q1) = gbar(q1) + K q1. `input_map` converts the chain input u
/// into the motor torque tau = xi_1 - K q1 + J K^-1 u.
struct FlexJointChain {
    ChainPlant chain;
    std::function<Vec(const Vec& q1, const Vec& xi1, const Vec& u)> input_map;
};

inline FlexJointChain flexjoint_to_chain(const FlexJointModel& fj) {
    const std::size_t n = fj.n();
    const Mat k = fj.stiffness, j = fj.rotor_inertia;
    ELModel base = fj.link;
    base.name = fj.link.name + "+joint_stiffness";
    const auto gbar = fj.link.gravity;
    const auto gbar_jac = fj.link.gravity_jacobian;
    const auto pot = fj.link.potential;
    base.gravity = [gbar, k](const Vec& q) { return gbar(q) + k * q; };
    base.gravity_jacobian = [gbar_jac, k](const Vec& q) { return gbar_jac(q) + k; };
    base.potential = [pot, k](const Vec& q) { return pot(q) + 0.5 * dot(q, k * q); };
    // dg/dq gains the constant K term
    base.bounds.k_v = fj.link.bounds.k_v + norm2(k);
    ChainPlant chain{std::move(base), 2};
    auto input_map = [k, j, n](const Vec& q1, const Vec& xi1, const Vec& u) {
        if (q1.size() != n || xi1.size() != n || u.size() != n)
            throw dimension_error("flexjoint input map: length mismatch");
        Vec tau(n);
        for (std::size_t i = 0; i < n; ++i)
            tau[i] = xi1[i] - k(i, i) * q1[i] + j(i, i) / k(i, i) * u[i];
        return tau;
    };
    return {std::move(chain), std::move(input_map)};
}

/// Right-hand side of the flexible-joint model in state (q1, q1', q2, q2')
/// under motor torque tau.
inline Vec flexjoint_rhs(const FlexJointModel& fj, const Vec& state, const Vec& tau) {
    const std::size_t n = fj.n();
    if (state.size() != 4 * n || tau.size() != n)
        throw dimension_error("flexjoint_rhs: state or input length mismatch");
    const Vec q1(state.begin(), state.begin() + n);
    const Vec v1(state.begin() + n, state.begin() + 2 * n);
    const Vec q2(state.begin() + 2 * n, state.begin() + 3 * n);
    const Vec v2(state.begin() + 3 * n, state.begin() + 4 * n);
    const Vec spring = fj.stiffness * (q2 - q1);
    const Vec acc1 = el_accel(fj.link, q1, v1, spring);
    Vec out(4 * n);
    std::copy(v1.begin(), v1.end(), out.begin());
    std::copy(acc1.begin(), acc1.end(), out.begin() + n);
    std::copy(v2.begin(), v2.end(), out.begin() + 2 * n);
    for (std::size_t i = 0; i < n; ++i)
        out[3 * n + i] = (tau[i] - spring[i]) / fj.rotor_inertia(i, i);
    return out;
}

}  // namespace eltrack

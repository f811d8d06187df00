#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "linalg.hpp"
#include "model.hpp"
#include "ode.hpp"

namespace eltrack {

struct reference_invalid_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Reference sample: position, velocity, acceleration and (when available)
/// jerk of the desired trajectory.
struct RefPoint {
    Vec q, v, a, j;
    bool has_jerk = false;
};

/// Desired trajectory t -> (q_d, q_d', q_d'', q_d''') with a bound k_delta on
/// sup_t max(||q_d||, ||q_d'||, ||q_d''||).
struct Reference {
    std::size_t n = 0;
    std::function<RefPoint(double)> eval;
    double k_delta = 0.0;
    std::string kind;      // "sinusoid" or "unforced"
    double horizon = std::numeric_limits<double>::infinity();
};

/// Component-wise sinusoid q_d,i(t) = A_i sin(w_i t + phi_i). All derivatives
/// are exact; k_delta = max_i A_i max(1, w_i, w_i^2) sqrt(n).
inline Reference make_sinusoid_ref(const Vec& amplitudes, const Vec& frequencies, const Vec& phases) {
    const std::size_t n = amplitudes.size();
    if (frequencies.size() != n || phases.size() != n)
        throw dimension_error("make_sinusoid_ref: parameter length mismatch");
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(amplitudes[i]) || !std::isfinite(frequencies[i]) || !std::isfinite(phases[i]))
            throw parameter_error("make_sinusoid_ref: parameters must be finite");
    Reference ref;
    ref.n = n;
    ref.kind = "sinusoid";
    for (std::size_t i = 0; i < n; ++i) {
        const double w = std::abs(frequencies[i]);
        ref.k_delta = std::max(ref.k_delta,
                               std::abs(amplitudes[i]) * std::max({1.0, w, w * w}) * std::sqrt(double(n)));
    }
    ref.eval = [amplitudes, frequencies, phases, n](double t) {
        RefPoint p;
        p.q.resize(n); p.v.resize(n); p.a.resize(n); p.j.resize(n);
        p.has_jerk = true;
        for (std::size_t i = 0; i < n; ++i) {
            const double w = frequencies[i], ph = w * t + phases[i];
            p.q[i] = amplitudes[i] * std::sin(ph);
            p.v[i] = amplitudes[i] * w * std::cos(ph);
            p.a[i] = -amplitudes[i] * w * w * std::sin(ph);
            p.j[i] = -amplitudes[i] * w * w * w * std::cos(ph);
        }
        return p;
    };
    return ref;
}

namespace detail {
/// Cubic Hermite value on a uniform grid, interpolating samples `val` with
/// derivative samples `der`.
inline Vec hermite(const std::vector<Vec>& val, const std::vector<Vec>& der, double h, double t,
                   std::size_t n) {
    const double pos = t / h;
    std::size_t k = std::min<std::size_t>(val.size() - 2, std::max(0.0, std::floor(pos)));
    const double s = pos - double(k);
    const double h00 = (1 + 2 * s) * (1 - s) * (1 - s);
    const double h10 = s * (1 - s) * (1 - s);
    const double h01 = s * s * (3 - 2 * s);
    const double h11 = s * s * (s - 1);
    Vec out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = h00 * val[k][i] + h * h10 * der[k][i] + h01 * val[k + 1][i] + h * h11 * der[k + 1][i];
    return out;
}
}  // namespace detail

/// Solution of the unforced dynamics D(q)q" + C(q,q')q' + g(q) = 0 from
/// (q0, v0), integrated densely at h = 1e-4 and evaluated by cubic Hermite
/// interpolation. Acceleration is recomputed from the dynamics at query time;
/// jerk comes from differentiating the dynamics once (finite-differenced C
/// partials, tolerance on the order of 1e-5).
inline Reference make_unforced_ref(const ELModel& model, const Vec& q0, const Vec& v0, double horizon,
                                   double h = 1e-4) {
    const std::size_t n = model.n;
    if (q0.size() != n || v0.size() != n) throw dimension_error("make_unforced_ref: length mismatch");
    const double cap = 1e6;
    const Vec zero_u(n, 0.0);

    auto store = std::make_shared<std::pair<std::vector<Vec>, std::vector<Vec>>>();
    auto& qs = store->first;
    auto& vs = store->second;
    const std::size_t steps = std::size_t(std::ceil(horizon / h - 1e-9));
    qs.reserve(steps + 1);
    vs.reserve(steps + 1);

    const OdeRhs rhs = [&model, n, &zero_u](double, const Vec& s) {
        const Vec q(s.begin(), s.begin() + n);
        const Vec v(s.begin() + n, s.end());
        const Vec a = el_accel(model, q, v, zero_u);
        Vec out(2 * n);
        std::copy(v.begin(), v.end(), out.begin());
        std::copy(a.begin(), a.end(), out.begin() + n);
        return out;
    };
    Vec s(2 * n);
    std::copy(q0.begin(), q0.end(), s.begin());
    std::copy(v0.begin(), v0.end(), s.begin() + n);
    double measured = 0.0;
    for (std::size_t k = 0; k <= steps; ++k) {
        Vec q(s.begin(), s.begin() + n), v(s.begin() + n, s.end());
        const double mag = std::max(norm(q), norm(v));
        if (!std::isfinite(mag) || mag > cap)
            throw reference_invalid_error("make_unforced_ref: unforced solution exceeded the bound cap at t = " +
                                          std::to_string(k * h));
        measured = std::max({measured, norm(q), norm(v), norm(el_accel(model, q, v, zero_u))});
        qs.push_back(std::move(q));
        vs.push_back(std::move(v));
        if (k < steps) s = rk4_step(rhs, k * h, s, h);
    }

    Reference ref;
    ref.n = n;
    ref.kind = "unforced";
    ref.horizon = steps * h;
    ref.k_delta = measured * 1.05;
    ELModel model_copy = model;
    ref.eval = [store, model_copy, n, h, horizon = ref.horizon, zero_u](double t) {
        if (t < -1e-9 || t > horizon + 1e-9)
            throw reference_invalid_error("reference queried outside its horizon");
        t = std::min(std::max(t, 0.0), horizon);
        RefPoint p;
        p.q = detail::hermite(store->first, store->second, h, t, n);
        // v interpolated with its own derivative (the acceleration at samples)
        const double pos = t / h;
        std::size_t k = std::min<std::size_t>(store->first.size() - 2,
                                              std::size_t(std::max(0.0, std::floor(pos))));
        const double s01 = pos - double(k);
        // acceleration samples on the fly (cheap: two forward-dynamics calls)
        const Vec a0 = el_accel(model_copy, store->first[k], store->second[k], zero_u);
        const Vec a1 = el_accel(model_copy, store->first[k + 1], store->second[k + 1], zero_u);
        const double h00 = (1 + 2 * s01) * (1 - s01) * (1 - s01);
        const double h10 = s01 * (1 - s01) * (1 - s01);
        const double h01v = s01 * s01 * (3 - 2 * s01);
        const double h11 = s01 * s01 * (s01 - 1);
        p.v.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            p.v[i] = h00 * store->second[k][i] + h * h10 * a0[i] + h01v * store->second[k + 1][i] +
                     h * h11 * a1[i];
        p.a = el_accel(model_copy, p.q, p.v, zero_u);
        // jerk: D q''' = -(Dd a + Cd v + C a + g' v), Dd = C + C'
        const Mat c = model_copy.coriolis(p.q, p.v);
        const Mat dd = c + transpose(c);
        const double eps = 1e-6;
        Vec qp = p.q, qm = p.q, vp = p.v, vm = p.v;
        for (std::size_t i = 0; i < n; ++i) {
            qp[i] += eps * p.v[i]; qm[i] -= eps * p.v[i];
            vp[i] += eps * p.a[i]; vm[i] -= eps * p.a[i];
        }
        const Mat cd = (1.0 / (2 * eps)) * (model_copy.coriolis(qp, vp) - model_copy.coriolis(qm, vm));
        const Vec rhsj = -(dd * p.a) - (cd * p.v) - (c * p.a) - (model_copy.gravity_jacobian(p.q) * p.v);
        p.j = solve_spd(model_copy.inertia(p.q), rhsj);
        p.has_jerk = true;
        return p;
    };
    return ref;
}

}  // namespace eltrack

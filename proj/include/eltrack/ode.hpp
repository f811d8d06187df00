#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "linalg.hpp"

namespace eltrack {

/// Error thrown when an integration produces a non-finite state.
struct divergence_error : numerical_error {
    double blowup_time;
    explicit divergence_error(double t)
        : numerical_error("integration diverged at t = " + std::to_string(t)), blowup_time(t) {}
};

using OdeRhs = std::function<Vec(double, const Vec&)>;

/// One classical fourth-order Runge-Kutta step of size h.
inline Vec rk4_step(const OdeRhs& f, double t, const Vec& x, double h) {
    const Vec k1 = f(t, x);
    const Vec k2 = f(t + 0.5 * h, x + (0.5 * h) * k1);
    const Vec k3 = f(t + 0.5 * h, x + (0.5 * h) * k2);
    const Vec k4 = f(t + h, x + h * k3);
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    return out;
}

struct Trajectory {
    std::vector<double> t;
    std::vector<Vec> x;
};

/// Fixed-step RK4 over [t0, t1]. The final step is shortened so the grid ends
/// exactly at t1. Throws divergence_error if the state stops being finite.
inline Trajectory rk4_integrate(const OdeRhs& f, const Vec& x0, double t0, double t1, double h) {
    if (h <= 0.0) throw dimension_error("rk4_integrate: step size must be positive");
    Trajectory traj;
    double t = t0;
    Vec x = x0;
    traj.t.push_back(t);
    traj.x.push_back(x);
    while (t < t1 - 1e-12 * std::max(1.0, std::abs(t1))) {
        const double step = std::min(h, t1 - t);
        x = rk4_step(f, t, x, step);
        t += step;
        if (!all_finite(x)) throw divergence_error(t);
        traj.t.push_back(t);
        traj.x.push_back(x);
    }
    return traj;
}

}  // namespace eltrack

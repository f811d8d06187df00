#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "controller.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "reference.hpp"
#include "rng.hpp"

namespace eltrack {

/// Lipschitz constants of the first virtual-control derivative:
///   ||xi*_1'|| <= eta1 sat(||qtilde||) + eta2 ||qtilde'|| + eta3 ||theta_0||.
struct EtaBounds {
    double eta1 = 0, eta2 = 0, eta3 = 0;
    std::string method;  // "analytic" or "sampled"
};

struct CertEntry {
    std::string id;      // condition identifier, stable across runs
    bool pass = false;
    double margin = 0;   // > 0 means satisfied with room to spare
    std::string detail;
};

struct CertReport {
    std::vector<CertEntry> entries;

    bool overall() const {
        for (const auto& e : entries)
            if (!e.pass) return false;
        return true;
    }
    void add(std::string id, bool pass, double margin, std::string detail) {
        entries.push_back({std::move(id), pass, margin, std::move(detail)});
    }
    void add_margin(std::string id, double margin, std::string detail) {
        add(std::move(id), margin > 0, margin, std::move(detail));
    }
    const CertEntry* find(const std::string& id) const {
        for (const auto& e : entries)
            if (e.id == id) return &e;
        return nullptr;
    }
};

// ---------------------------------------------------------------------------
// Relative-degree-2 condition

/// Scalar-gain condition (kd0/2)(b0/a0) > k_c k_delta.
inline CertEntry check_thm1(const GainSet& g, const ModelBounds& b, double k_delta) {
    const double margin = g.kd0 * g.b0 / (2.0 * g.a0) - b.k_c * k_delta;
    std::ostringstream d;
    d << "(kd0 b0)/(2 a0) = " << g.kd0 * g.b0 / (2.0 * g.a0) << " vs k_c k_delta = "
      << b.k_c * k_delta;
    return {"11", margin > 0, margin, d.str()};
}

/// Diagonal-matrix gain variant: (kd_min/2)(b_min/a_max) > k_c k_delta.
inline CertEntry check_thm1_diag(const Vec& kd, const Vec& bf, const Vec& af, const ModelBounds& b,
                                 double k_delta) {
    double kdm = kd[0], bm = bf[0], aM = af[0];
    for (double v : kd) kdm = std::min(kdm, v);
    for (double v : bf) bm = std::min(bm, v);
    for (double v : af) aM = std::max(aM, v);
    const double margin = kdm * bm / (2.0 * aM) - b.k_c * k_delta;
    return {"11-diag", margin > 0, margin, "min/max diagonal variant"};
}

// ---------------------------------------------------------------------------
// Single added integrator

namespace detail {
inline void append_632(CertReport& rep, const GainSet& g, const EtaBounds& eta, const ModelBounds& b,
                       double k_delta) {
    const double kck = b.k_c * k_delta;
    const double lhs_a = g.kd0 * (g.a0 / (4.0 * g.b0) - 1.0);
    const double rhs_a = 1.5 + (kck + 1.5) * g.a0 * g.a0 / (g.b0 * g.b0);
    rep.add_margin("632a", lhs_a - rhs_a, "kd0 [a0/(4 b0) - 1] vs 3/2 + (k_c k_delta + 3/2) a0^2/b0^2");
    const double e23 = eta.eta2 * eta.eta2 + eta.eta3 * eta.eta3;
    rep.add_margin("632b", g.kp[0] - (0.5 * e23 + 2.0), "kp1 vs (eta2^2 + eta3^2)/2 + 2");
    rep.add_margin("632c",
                   g.a[0] - 0.5 * (eta.eta2 * eta.eta2 + eta.eta3 * eta.eta3 * g.b[0] * g.b[0] + 1.0),
                   "a1 vs (eta2^2 + eta3^2 b1^2 + 1)/2");
}
}  // namespace detail

/// The three sufficient conditions for the m = 1 cascade.
inline CertReport check_thm2(const GainSet& g, const EtaBounds& eta, const ModelBounds& b,
                             double k_delta) {
    if (g.m() != 1) throw config_error("check_thm2: requires an m = 1 gain set");
    g.validate();
    CertReport rep;
    detail::append_632(rep, g, eta, b, k_delta);
    return rep;
}

// ---------------------------------------------------------------------------
// Recursion constants and the linear error-dynamics matrices

/// beta_j, eta_{i,k}, mu_{i,k} of the expanded virtual-control derivatives.
/// Entries are 1-based: eta(i,k) and mu(i,k) are valid for i in [2,m] and
/// k in [1,i-1]; beta[j-1] holds beta_j for j in [1,m-1].
struct RecursionConstants {
    std::size_t m = 0;
    std::vector<double> beta;
    Mat eta, mu;

    /// prod_{j=a}^{b} beta_j (empty product = 1)
    double beta_prod(std::size_t a, std::size_t b) const {
        double p = 1.0;
        for (std::size_t j = a; j <= b && j >= 1; ++j) p *= beta[j - 1];
        return p;
    }
};

inline RecursionConstants recursion_constants(const GainSet& g) {
    const std::size_t m = g.m();
    if (m < 1) throw parameter_error("recursion_constants: m >= 1 required");
    RecursionConstants rc;
    rc.m = m;
    for (std::size_t j = 1; j + 1 <= m; ++j) rc.beta.push_back(g.kp[j - 1] + g.b[j - 1] * g.kd[j - 1]);
    rc.eta = Mat(m + 1, m + 1);
    rc.mu = Mat(m + 1, m + 1);
    for (std::size_t i = 2; i <= m; ++i)
        for (std::size_t k = 1; k < i; ++k) {
            // the j = i factor carries exponent sgn(i-j) = 0, so the product
            // runs through j = i-1; at k = 1 the kp_{k-1} correction drops
            // (sgn(k-1) = 0)
            const double prod = rc.beta_prod(k + 1, i - 1);
            const double kp_km1 = (k >= 2) ? g.kp[k - 2] : 0.0;
            rc.eta(i, k) = prod * (g.kp[k - 1] * g.kp[k - 1] - g.kd[k - 1] * g.kd[k - 1] -
                                   g.kp[k - 1] * kp_km1 * (k >= 2 ? 1.0 : 0.0));
            rc.mu(i, k) = prod * g.kd[k - 1] * (g.kp[k - 1] + g.a[k - 1]);
        }
    return rc;
}

/// Error dynamics of the chain stages in stacked coordinates
/// X = (xi~_1..xi~_m, theta_1..theta_m):  X' = A X + B xi*_1'.
/// Reduced forms are the 2m x 2m and 2m x 1 coefficient matrices; the full
/// forms are their Kronecker products with the n x n identity.
struct ABMatrices {
    Mat A_red, B_red;
    Mat A, B;
    Mat Gamma1, Gamma2, Gamma3;  // reduced m x m, m x m, m x 1
};

inline ABMatrices build_AB(const GainSet& g, std::size_t n) {
    const std::size_t m = g.m();
    if (m < 1) throw parameter_error("build_AB: m >= 1 required");
    const RecursionConstants rc = recursion_constants(g);
    ABMatrices ab;
    ab.Gamma1 = Mat(m, m);
    ab.Gamma2 = Mat(m, m);
    ab.Gamma3 = Mat(m, 1);
    for (std::size_t i = 1; i <= m; ++i) {
        ab.Gamma3(i - 1, 0) = rc.beta_prod(1, i - 1);
        if (i >= 2) ab.Gamma1(i - 1, i - 1) = -g.kp[i - 2];
        for (std::size_t k = 1; k < i; ++k) {
            ab.Gamma1(i - 1, k - 1) = rc.eta(i, k);
            ab.Gamma2(i - 1, k - 1) = -rc.mu(i, k);
        }
    }
    ab.A_red = Mat(2 * m, 2 * m);
    ab.B_red = Mat(2 * m, 1);
    for (std::size_t i = 1; i <= m; ++i) {
        const double kp_prev = (i >= 2) ? g.kp[i - 2] : 0.0;
        // xi~_i row
        ab.A_red(i - 1, i - 1) = -(g.kp[i - 1] - kp_prev);
        if (i < m) ab.A_red(i - 1, i) = 1.0;
        ab.A_red(i - 1, m + i - 1) = g.kd[i - 1];
        // theta_i row
        ab.A_red(m + i - 1, i - 1) = -g.kd[i - 1];
        ab.A_red(m + i - 1, m + i - 1) = -g.a[i - 1];
        for (std::size_t k = 1; k < i; ++k) {
            ab.A_red(i - 1, k - 1) = -rc.eta(i, k);
            ab.A_red(i - 1, m + k - 1) = rc.mu(i, k);
            ab.A_red(m + i - 1, k - 1) = g.b[i - 1] * rc.eta(i, k);
            ab.A_red(m + i - 1, m + k - 1) = -g.b[i - 1] * rc.mu(i, k);
        }
        const double prod = rc.beta_prod(1, i - 1);
        ab.B_red(i - 1, 0) = -prod;
        ab.B_red(m + i - 1, 0) = g.b[i - 1] * prod;
    }
    ab.A = kron(ab.A_red, Mat::identity(n));
    ab.B = kron(ab.B_red, Mat::identity(n));
    return ab;
}

// ---------------------------------------------------------------------------
// General m conditions

/// Hurwitz test, the stage-0 condition for general m, and the quadratic-form
/// dominance condition. P defaults to the identity; with `lyapunov_mode` the
/// pair (P, Q) comes from A'P + PA = -I instead.
inline CertReport check_thm3(const GainSet& g, const EtaBounds& eta, const ModelBounds& b,
                             double k_delta, std::size_t n, bool lyapunov_mode = false) {
    g.validate();
    const std::size_t m = g.m();
    const ABMatrices ab = build_AB(g, 1);
    CertReport rep;

    const double hmargin = -max_real_eig(ab.A_red);
    rep.add("hurwitz", hmargin > 0, hmargin, "-max Re(eig(A))");

    const double kck = b.k_c * k_delta;
    const double lhs = g.kd0 * (g.a0 / (4.0 * g.b0) - double(m));
    const double rhs = 0.5 * (m + 2.0) + (kck + 0.5 * (m + 2.0)) * g.a0 * g.a0 / (g.b0 * g.b0);
    rep.add_margin("lego", lhs - rhs,
                   "kd0 [a0/(4 b0) - m] vs (m+2)/2 + (k_c k_delta + (m+2)/2) a0^2/b0^2");

    if (hmargin <= 0) {
        rep.add("786", false, -1.0, "skipped: A is not Hurwitz");
        return rep;
    }
    Mat p = Mat::identity(2 * m), q;
    if (lyapunov_mode) {
        p = lyapunov_solve(ab.A_red, Mat::identity(2 * m));
        q = Mat::identity(2 * m);
    } else {
        q = -1.0 * (transpose(ab.A_red) + ab.A_red);
    }
    // [P B]_i is the scalar (P B_red)_i times the n x n identity, so its
    // induced norm is just the absolute value; n does not enter.
    (void)n;
    const Mat pb = p * ab.B_red;
    const double e23 = eta.eta2 * eta.eta2 + eta.eta3 * eta.eta3;
    Mat diff = q;
    for (std::size_t i = 0; i < 2 * m; ++i) diff(i, i) -= e23 * pb(i, 0) * pb(i, 0);
    const double qmargin = min_eig_sym(diff);
    rep.add("786", qmargin > 0, qmargin,
            std::string("min eig of Q - (eta2^2+eta3^2) diag{|[P B]_i|^2}") +
                (lyapunov_mode ? " (Lyapunov-equation P)" : " (P = I)"));
    return rep;
}

/// Explicit gain recipe sufficient for the general-m conditions (P = I).
/// The equality constraints are structural: violating them beyond 1e-9
/// relative is reported as a failing "structural" entry.
inline CertReport check_prop1(const GainSet& g, const EtaBounds& eta, const ModelBounds& b,
                              double k_delta, std::size_t n, bool include_stage0 = true) {
    g.validate();
    const std::size_t m = g.m();
    const double e23 = eta.eta2 * eta.eta2 + eta.eta3 * eta.eta3;
    CertReport rep;

    if (include_stage0) {
        detail::append_632(rep, g, eta, b, k_delta);
        const double lhs = g.kd0 * (g.a0 / (4.0 * g.b0) - double(m));
        const double rhs = 0.5 * (m + 2.0) +
                           (b.k_c * k_delta + 0.5 * (m + 2.0)) * g.a0 * g.a0 / (g.b0 * g.b0);
        rep.add_margin("lego", lhs - rhs, "stage-0 condition for general m");
    }

    // equality constraints
    const double r794a = std::abs(g.kp[0] - g.kd[0]) / std::max(1.0, std::abs(g.kp[0]));
    rep.add("794a", r794a <= 1e-9, -r794a, "kp1 = kd1 (relative residual)");
    rep.add_margin("794b", std::min(g.a[0], g.kp[0]) - e23, "min{a1, kp1} vs eta2^2 + eta3^2");

    const RecursionConstants rc = recursion_constants(g);
    for (std::size_t i = 2; i <= m; ++i) {
        const double kp_prev = g.kp[i - 2], kpi = g.kp[i - 1];
        const double res = std::abs(kpi * kpi - kp_prev * kpi - g.kd[i - 1]) /
                           std::max(1.0, kpi * kpi);
        const std::string suff = "-" + std::to_string(i);
        rep.add("795a" + suff, res <= 1e-9, -res,
                "kp_i = [kp_{i-1} + sqrt(kp_{i-1}^2 + 4 kd_i)]/2 (relative residual)");
        const double prod = rc.beta_prod(1, i - 1);  // beta_0 := 1
        rep.add_margin("795b" + suff, kpi - (e23 * prod * prod + kp_prev),
                       "kp_i vs (eta2^2+eta3^2) (prod beta_j)^2 + kp_{i-1}");
        const double bp = g.b[i - 1] * prod;
        rep.add_margin("795c" + suff, g.a[i - 1] - e23 * bp * bp,
                       "a_i vs (eta2^2+eta3^2) (b_i prod beta_j)^2");
    }

    // the recipe is supposed to zero every eta_{i,k}; treat leftovers as a
    // structural failure rather than silently passing
    double eta_res = 0.0;
    for (std::size_t i = 2; i <= m; ++i)
        for (std::size_t k = 1; k < i; ++k)
            eta_res = std::max(eta_res, std::abs(rc.eta(i, k)) /
                                            std::max(1.0, g.kp[k - 1] * g.kp[k - 1]));
    if (m >= 2)
        rep.add("eta-zero", eta_res <= 1e-9, -eta_res, "all eta_{i,k} vanish under the recipe");

    // Q - diag{Q}/2 positive semidefinite with P = I
    const ABMatrices ab = build_AB(g, 1);
    const Mat q = -1.0 * (transpose(ab.A_red) + ab.A_red);
    Mat half = q;
    for (std::size_t i = 0; i < 2 * m; ++i) half(i, i) -= 0.5 * q(i, i);
    const double qmin = min_eig_sym(half);
    rep.add("Q-half-diag", qmin >= -1e-9, qmin, "min eig of Q - diag{Q}/2 (P = I)");

    // half-diagonal dominance over the input gains, the P = I form of the
    // quadratic condition
    const Mat pb = ab.B_red;
    double dom = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < 2 * m; ++i)
        dom = std::min(dom, 0.5 * q(i, i) - e23 * pb(i, 0) * pb(i, 0));
    rep.add_margin("half-diag-dom", dom, "diag{Q}/2 vs (eta2^2+eta3^2) diag{|B_i|^2}");
    (void)n;
    return rep;
}

/// Flexible-joint specialization (m = 2): the explicit recipe plus the
/// stage-0 filter condition kd0 b0/a0 > 2 k_c k_delta and the three scalar
/// inequalities from its proof.
inline CertReport check_corollary(const GainSet& g, const EtaBounds& eta, const ModelBounds& b,
                                  double k_delta) {
    if (g.m() != 2) throw config_error("check_corollary: requires an m = 2 gain set");
    CertReport rep = check_prop1(g, eta, b, k_delta, 1, /*include_stage0=*/false);
    rep.add_margin("cor-filter", g.kd0 * g.b0 / g.a0 - 2.0 * b.k_c * k_delta,
                   "kd0 b0/a0 vs 2 k_c k_delta");
    const double mu = g.kd[0] * (g.kp[0] + g.a[0]);
    rep.add_margin("cor-s1", g.kp[0] * (g.kp[1] - g.kp[0]) - 2.0, "kp1 [kp2 - kp1] vs 2");
    rep.add_margin("cor-s2", g.a[0] * (g.kp[1] - g.kp[0]) - 4.0 * mu * mu, "a1 [kp2 - kp1] vs 4 mu^2");
    rep.add_margin("cor-s3", g.a[0] * g.a[1] - 2.0 * g.b[1] * g.b[1] * mu * mu,
                   "a1 a2 vs 2 b2^2 mu^2");
    return rep;
}

// ---------------------------------------------------------------------------
// Lipschitz-constant estimation

/// Analytic bounds, valid when the model has no Coriolis forces (k_c = 0):
///   eta1 = 2 k_v k_delta (0 for a constant reference), eta2 = k_v + kp0 +
///   kd0 b0, eta3 = kd0 a0.
inline EtaBounds estimate_eta_analytic(const ELModel& model, const Reference& ref, const GainSet& g) {
    if (model.bounds.k_c != 0.0)
        throw config_error("estimate_eta_analytic: only valid for k_c = 0 models");
    EtaBounds e;
    e.method = "analytic";
    e.eta1 = (ref.k_delta == 0.0) ? 0.0 : 2.0 * model.bounds.k_v * ref.k_delta;
    e.eta2 = model.bounds.k_v + g.kp0 + g.kd0 * g.b0;
    e.eta3 = g.kd0 * g.a0;
    return e;
}

struct EtaSampleOptions {
    std::size_t samples = 20000;
    std::size_t validation = 100000;
    double safety = 1.2;
    double err_scale = 3.0;   // radius of sampled (qtilde, qtilde', theta0)
    std::uint64_t seed = 2024;
};

/// Sampling-based fit of (eta1, eta2, eta3): evaluates xi*_1' on random
/// states around the reference and takes the smallest coefficients covering
/// every sample, then widens by the safety factor and validates on fresh
/// samples.
inline EtaBounds estimate_eta(const ELModel& model, const Reference& ref, const GainSet& g,
                              const EtaSampleOptions& opt = {}) {
    const std::size_t n = model.n;
    const double tmax = std::isfinite(ref.horizon) ? ref.horizon : 50.0;
    Rng rng(opt.seed);
    EtaBounds e;
    e.method = "sampled";

    auto draw = [&](double& v, double s[3]) {
        const double t = rng.uniform(0.0, tmax);
        const RefPoint p = ref.eval(t);
        const double scale = opt.err_scale * std::pow(10.0, rng.uniform(-2.0, 0.0));
        Vec qt(n), qtd(n), th0(n);
        for (std::size_t i = 0; i < n; ++i) {
            qt[i] = rng.uniform(-scale, scale);
            qtd[i] = rng.uniform(-scale, scale);
            th0[i] = rng.uniform(-scale, scale);
        }
        const Vec q = p.q + qt;
        const Vec qdot = p.v + qtd;
        v = norm(xi1_star_dot(g, th0, q, qdot, p, model));
        s[0] = model.bounds.sat(norm(qt));
        s[1] = norm(qtd);
        s[2] = norm(th0);
    };

    double eta[3] = {0, 0, 0};
    for (std::size_t it = 0; it < opt.samples; ++it) {
        double v, s[3];
        draw(v, s);
        const double ss = s[0] * s[0] + s[1] * s[1] + s[2] * s[2];
        if (ss <= 0.0) continue;
        for (int j = 0; j < 3; ++j) eta[j] = std::max(eta[j], v * s[j] / ss);
    }
    e.eta1 = opt.safety * eta[0];
    e.eta2 = opt.safety * eta[1];
    e.eta3 = opt.safety * eta[2];

    for (std::size_t it = 0; it < opt.validation; ++it) {
        double v, s[3];
        draw(v, s);
        const double bound = e.eta1 * s[0] + e.eta2 * s[1] + e.eta3 * s[2];
        if (v > bound + 1e-9)
            throw numerical_error("estimate_eta: validation sample violates the fitted bound");
    }
    return e;
}

// ---------------------------------------------------------------------------
// Gain search

enum class SearchTarget { rd2, single_stage, general, flexjoint };

struct GainSearchResult {
    GainSet gains;
    CertReport report;
    bool feasible = false;
    std::size_t evaluations = 0;
};

/// Coordinate ascent on the minimum certification margin. The equality
/// constraints (kp1 = kd1 and the stage-i quadratic recipe) are enforced by
/// construction, so the search moves only the free gains.
inline GainSearchResult gain_search(const ModelBounds& bounds, double k_delta, std::size_t m,
                                    std::size_t budget,
                                    const std::function<EtaBounds(const GainSet&)>& eta_for,
                                    SearchTarget target, std::uint64_t seed = 7) {
    auto enforce = [&](GainSet& g) {
        if (m >= 1) g.kp[0] = g.kd[0];
        for (std::size_t i = 2; i <= m; ++i)
            g.kp[i - 1] = 0.5 * (g.kp[i - 2] +
                                 std::sqrt(g.kp[i - 2] * g.kp[i - 2] + 4.0 * g.kd[i - 1]));
    };
    auto evaluate = [&](const GainSet& g) -> CertReport {
        const EtaBounds eta = eta_for(g);
        switch (target) {
            case SearchTarget::rd2: {
                CertReport r;
                r.entries.push_back(check_thm1(g, bounds, k_delta));
                return r;
            }
            case SearchTarget::single_stage:
                return check_thm2(g, eta, bounds, k_delta);
            case SearchTarget::general:
                return check_prop1(g, eta, bounds, k_delta, 1);
            case SearchTarget::flexjoint:
                return check_corollary(g, eta, bounds, k_delta);
        }
        throw config_error("gain_search: unknown target");
    };
    auto min_margin = [](const CertReport& r) {
        double mm = std::numeric_limits<double>::infinity();
        for (const auto& e : r.entries) mm = std::min(mm, e.margin);
        return mm;
    };

    // heuristic seed
    GainSet g;
    g.kp0 = 2.0;
    if (target == SearchTarget::flexjoint) {
        // the filter condition constrains only the ratio kd0 b0/a0, so stage 0
        // is free to (a) match kp0 + kd0 b0 to the gravity-stiffness bound,
        // which cancels the velocity coefficient of xi*_1' near the origin and
        // keeps eta2 small, and (b) split that budget evenly so the filter
        // contributes real damping. Small eta matters here: the stage-2 gains
        // grow like eta^8 through the mu^2 coupling
        const double stiff = std::max(0.2, bounds.k_v);
        g.kp0 = 0.3 * stiff;
        g.b0 = 2.0;
        g.kd0 = std::max(0.7 * stiff / g.b0,
                         1.1 * 2.0 * bounds.k_c * k_delta / g.b0);
        // filter pole near the plant oscillation frequency sqrt(kp0 / d_m),
        // where the position filter actually damps the slow mode
        g.a0 = std::max(1.0, std::sqrt(g.kp0 / bounds.d_m));
    } else {
        // stage-0 condition: pick the ratio rho = a0/b0 minimizing the
        // required kd0, then a small scale to keep eta2, eta3 moderate
        const double kck = bounds.k_c * k_delta;
        double best_rho = 8.0, best_need = std::numeric_limits<double>::infinity();
        for (double rho = 4.2; rho < 40.0; rho += 0.05) {
            const double need =
                (0.5 * (m + 2.0) + (kck + 0.5 * (m + 2.0)) * rho * rho) / (rho / 4.0 - m);
            if (rho / 4.0 > m && need < best_need) { best_need = need; best_rho = rho; }
        }
        // the filter scale only shifts a0, b0 together; keep kd0 a0 (hence
        // eta3) near 1 so the per-stage gains stay numerically tame
        const double need = 1.1 * best_need;
        const double scale = std::min(0.05, 1.0 / (best_rho * need));
        g.b0 = scale;
        g.a0 = scale * best_rho;
        g.kd0 = need;
    }
    g.kp.assign(m, 1.0);
    g.kd.assign(m, 1.0);
    g.a.assign(m, 1.0);
    g.b.assign(m, 0.05);
    enforce(g);
    {   // bootstrap the per-stage gains from the current eta estimate; the
        // half-diagonal dominance couples stage i to mu_{i,i-1}^2 / a_{i-1},
        // so the growth targets carry that term with a safety factor
        const EtaBounds eta = eta_for(g);
        const double e23 = eta.eta2 * eta.eta2 + eta.eta3 * eta.eta3;
        for (std::size_t i = 1; i <= m; ++i) {
            if (i == 1) {
                g.kd[0] = std::max(1.0, 1.3 * e23 + 1.0);
                enforce(g);
                g.a[0] = g.kp[0];
                continue;
            }
            const RecursionConstants rc = recursion_constants(g);
            const double prod = rc.beta_prod(1, i - 1);
            const double mu = g.kd[i - 2] * (g.kp[i - 2] + g.a[i - 2]);
            const double target_kp =
                g.kp[i - 2] +
                std::max({1.5 * e23 * prod * prod, 6.0 * mu * mu / g.a[i - 2], 1.0});
            g.kd[i - 1] = target_kp * (target_kp - g.kp[i - 2]);
            enforce(g);
            const double bp = g.b[i - 1] * prod;
            g.a[i - 1] =
                std::max({1.5 * e23 * bp * bp,
                          4.0 * g.b[i - 1] * g.b[i - 1] * mu * mu / g.a[i - 2], 1.0});
        }
        enforce(g);
    }

    GainSearchResult res;
    res.gains = g;
    res.report = evaluate(g);
    res.evaluations = 1;
    double best = min_margin(res.report);

    Rng rng(seed);
    std::vector<double*> free_gains;
    while (res.evaluations < budget && best <= 0) {
        GainSet cand = res.gains;
        // perturb one free coordinate multiplicatively
        double* slots[16];
        std::size_t ns = 0;
        slots[ns++] = &cand.kp0;
        slots[ns++] = &cand.kd0;
        slots[ns++] = &cand.a0;
        slots[ns++] = &cand.b0;
        for (std::size_t i = 0; i < m; ++i) {
            slots[ns++] = &cand.kd[i];
            slots[ns++] = &cand.a[i];
            slots[ns++] = &cand.b[i];
            if (ns >= 15) break;
        }
        const std::size_t pick = rng.index(ns);
        *slots[pick] *= std::exp(rng.uniform(-0.5, 0.5));
        enforce(cand);
        CertReport crep;
        try {
            crep = evaluate(cand);
        } catch (const std::exception&) {
            ++res.evaluations;
            continue;
        }
        ++res.evaluations;
        const double mm = min_margin(crep);
        if (mm > best) {
            best = mm;
            res.gains = cand;
            res.report = crep;
        }
    }
    (void)free_gains;
    res.feasible = res.report.overall();
    return res;
}

}  // namespace eltrack

// General-purpose derivative-free optimizers: a Nelder-Mead simplex search
// with restart polishing, a 1-D Brent minimizer, and a bisection root
// finder for strictly monotone functions.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "enscal/error.hpp"

namespace enscal {

struct NelderMeadOptions {
    int max_iterations = 4000;
    double tolerance = 1e-12;   // simplex size plus value spread
    int polish_restarts = 2;    // rebuild a small simplex at the incumbent
    double initial_step = 0.25; // relative to max(|x0_i|, 1)
};

struct NelderMeadResult {
    std::vector<double> x;
    double value = std::numeric_limits<double>::infinity();
    int evaluations = 0;
    bool converged = false;
};

namespace detail {

inline NelderMeadResult nelder_mead_once(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& x0, double step_scale,
    const NelderMeadOptions& opt) {
    const std::size_t n = x0.size();
    NelderMeadResult res;
    std::vector<std::vector<double>> simplex(n + 1, x0);
    std::vector<double> values(n + 1);
    for (std::size_t i = 0; i < n; ++i) {
        double step = step_scale * std::max(std::abs(x0[i]), 1.0);
        simplex[i + 1][i] += step;
    }
    for (std::size_t i = 0; i <= n; ++i) values[i] = f(simplex[i]);
    res.evaluations = static_cast<int>(n + 1);

    auto order = [&] {
        std::vector<std::size_t> idx(n + 1);
        for (std::size_t i = 0; i <= n; ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
        std::vector<std::vector<double>> s2;
        std::vector<double> v2;
        s2.reserve(n + 1);
        v2.reserve(n + 1);
        for (std::size_t i : idx) {
            s2.push_back(simplex[i]);
            v2.push_back(values[i]);
        }
        simplex.swap(s2);
        values.swap(v2);
    };

    for (int it = 0; it < opt.max_iterations; ++it) {
        order();
        double spread = values[n] - values[0];
        double size = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            size = std::max(size, std::abs(simplex[n][i] - simplex[0][i]));
        if (spread < opt.tolerance && size < opt.tolerance) {
            res.converged = true;
            break;
        }
        std::vector<double> centroid(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) centroid[j] += simplex[i][j] / double(n);

        auto blend = [&](double t) {
            std::vector<double> p(n);
            for (std::size_t j = 0; j < n; ++j)
                p[j] = centroid[j] + t * (simplex[n][j] - centroid[j]);
            return p;
        };

        std::vector<double> xr = blend(-1.0);
        double fr = f(xr);
        ++res.evaluations;
        if (fr < values[0]) {
            std::vector<double> xe = blend(-2.0);
            double fe = f(xe);
            ++res.evaluations;
            if (fe < fr) {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if (fr < values[n - 1]) {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            std::vector<double> xc = blend(fr < values[n] ? -0.5 : 0.5);
            double fc = f(xc);
            ++res.evaluations;
            if (fc < std::min(fr, values[n])) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for (std::size_t i = 1; i <= n; ++i) {
                    for (std::size_t j = 0; j < n; ++j)
                        simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
                    values[i] = f(simplex[i]);
                }
                res.evaluations += static_cast<int>(n);
            }
        }
    }
    order();
    res.x = simplex[0];
    res.value = values[0];
    return res;
}

}  // namespace detail

// Minimize f starting from x0. Restarts a shrunken simplex at the incumbent
// a few times, which reliably polishes the last digits.
inline NelderMeadResult nelder_mead(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x0, NelderMeadOptions opt = {}) {
    require(!x0.empty(), errc::validation, "optimizer needs at least one variable");
    NelderMeadResult best = detail::nelder_mead_once(f, x0, opt.initial_step, opt);
    double step = opt.initial_step;
    for (int r = 0; r < opt.polish_restarts; ++r) {
        step *= 0.01;
        NelderMeadResult next = detail::nelder_mead_once(f, best.x, step, opt);
        next.evaluations += best.evaluations;
        if (next.value <= best.value) {
            best = next;
        } else {
            best.evaluations = next.evaluations;
        }
    }
    return best;
}

// Golden-section/parabolic 1-D minimization on [lo, hi] (Brent's method).
inline double brent_minimize(const std::function<double(double)>& f, double lo,
                             double hi, double tol = 1e-12, int max_iter = 300) {
    const double gold = 0.3819660112501051;
    double a = lo, b = hi;
    double x = a + gold * (b - a), w = x, v = x;
    double fx = f(x), fw = fx, fv = fx;
    double d = 0.0, e = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        double m = 0.5 * (a + b);
        double tol1 = tol * std::abs(x) + 1e-15;
        double tol2 = 2.0 * tol1;
        if (std::abs(x - m) <= tol2 - 0.5 * (b - a)) break;
        double p = 0, q = 0, r = 0;
        bool parabolic = false;
        if (std::abs(e) > tol1) {
            r = (x - w) * (fx - fv);
            q = (x - v) * (fx - fw);
            p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if (q > 0) p = -p;
            q = std::abs(q);
            if (std::abs(p) < std::abs(0.5 * q * e) && p > q * (a - x) && p < q * (b - x)) {
                e = d;
                d = p / q;
                parabolic = true;
            }
        }
        if (!parabolic) {
            e = (x < m) ? b - x : a - x;
            d = gold * e;
        }
        double u = (std::abs(d) >= tol1) ? x + d : x + (d > 0 ? tol1 : -tol1);
        double fu = f(u);
        if (fu <= fx) {
            if (u < x) b = x; else a = x;
            v = w; fv = fw; w = x; fw = fx; x = u; fx = fu;
        } else {
            if (u < x) a = u; else b = u;
            if (fu <= fw || w == x) {
                v = w; fv = fw; w = u; fw = fu;
            } else if (fu <= fv || v == x || v == w) {
                v = u; fv = fu;
            }
        }
    }
    return x;
}

// Root of a strictly decreasing function g on [lo, hi] with |g(root)| <= tol.
inline double bisect_decreasing(const std::function<double(double)>& g, double lo,
                                double hi, double tol, int max_iter = 300) {
    double glo = g(lo), ghi = g(hi);
    require(glo >= 0.0 && ghi <= 0.0, errc::solver,
            "root not bracketed by the search interval");
    double mid = 0.5 * (lo + hi);
    for (int it = 0; it < max_iter; ++it) {
        mid = 0.5 * (lo + hi);
        double gm = g(mid);
        if (std::abs(gm) < tol) return mid;
        if (gm > 0.0) lo = mid; else hi = mid;
    }
    return mid;
}

}  // namespace enscal

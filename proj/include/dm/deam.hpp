#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dm/marinit.hpp"
#include "dm/physics.hpp"
#include "dm/projector.hpp"
#include "dm/types.hpp"

namespace dm {

/**
 * Edge-preserving penalty
 *   R(c) = lambda sum_i sum_x sum_{x~ in N_x} w(x,x~) phi(c_i(x) - c_i(x~))
 * over the 8-connected neighborhood with weights 1/(physical distance);
 * every unordered pair is counted twice. phi is the Lange potential
 *   phi(t) = delta^2 (|t/delta| - ln(1 + |t/delta|)).
 */
struct PenaltyConfig {
    double lambda = 50.0;
    double delta = 0.01;

    void validate() const {
        if (!(lambda >= 0.0)) throw std::invalid_argument("PenaltyConfig: lambda must be >= 0");
        if (!(delta > 0.0)) throw std::invalid_argument("PenaltyConfig: delta must be > 0");
    }
};

namespace detail {

inline double phi(double t, double delta) {
    const double a = std::abs(t) / delta;
    return delta * delta * (a - std::log1p(a));
}

inline double phi_prime(double t, double delta) { return t / (1.0 + std::abs(t) / delta); }

inline double phi_second(double t, double delta) {
    const double u = 1.0 + std::abs(t) / delta;
    return 1.0 / (u * u);
}

struct NeighborOffset {
    int ox, oy;
    double w;
};

inline std::array<NeighborOffset, 8> neighborhood(double dx, double dy) {
    const double wd = 1.0 / std::hypot(dx, dy);
    return {{{-1, -1, wd},
             {0, -1, 1.0 / dy},
             {1, -1, wd},
             {-1, 0, 1.0 / dx},
             {1, 0, 1.0 / dx},
             {-1, 1, wd},
             {0, 1, 1.0 / dy},
             {1, 1, wd}}};
}

}  // namespace detail

inline double penalty_component(const ImageGrid& c, const PenaltyConfig& cfg) {
    cfg.validate();
    if (cfg.lambda == 0.0) return 0.0;
    const auto nbr = detail::neighborhood(c.dx, c.dy);
    long double sum = 0.0L;
    for (int iy = 0; iy < c.ny; ++iy)
        for (int ix = 0; ix < c.nx; ++ix) {
            const double v = c.at(ix, iy);
            for (const auto& n : nbr) {
                const int jx = ix + n.ox;
                const int jy = iy + n.oy;
                if (jx < 0 || jx >= c.nx || jy < 0 || jy >= c.ny) continue;
                sum += n.w * detail::phi(v - c.at(jx, jy), cfg.delta);
            }
        }
    return cfg.lambda * static_cast<double>(sum);
}

inline double penalty(const ImageGrid& c1, const ImageGrid& c2, const PenaltyConfig& cfg) {
    return penalty_component(c1, cfg) + penalty_component(c2, cfg);
}

/// Exact gradient of penalty_component with respect to each pixel.
inline ImageGrid penalty_gradient(const ImageGrid& c, const PenaltyConfig& cfg) {
    cfg.validate();
    ImageGrid g = ImageGrid::zeros(c.nx, c.ny, c.dx, c.dy, c.origin_x, c.origin_y);
    if (cfg.lambda == 0.0) return g;
    const auto nbr = detail::neighborhood(c.dx, c.dy);
    for (int iy = 0; iy < c.ny; ++iy)
        for (int ix = 0; ix < c.nx; ++ix) {
            const double v = c.at(ix, iy);
            double acc = 0.0;
            for (const auto& n : nbr) {
                const int jx = ix + n.ox;
                const int jy = iy + n.oy;
                if (jx < 0 || jx >= c.nx || jy < 0 || jy >= c.ny) continue;
                acc += n.w * detail::phi_prime(v - c.at(jx, jy), cfg.delta);
            }
            g.at(ix, iy) = 2.0 * cfg.lambda * acc;
        }
    return g;
}

/// Csiszar I-divergence sum_y d ln(d/g) - d + g; bins with d = 0
/// contribute g. Accumulated in extended precision.
inline double idivergence(const Sinogram& d, const Sinogram& g) {
    if (d.data.size() != g.data.size())
        throw std::invalid_argument("idivergence: size mismatch");
    long double sum = 0.0L;
    for (size_t i = 0; i < d.data.size(); ++i) {
        const double di = d.data[i];
        const double gi = g.data[i];
        if (!(gi > 0.0)) throw std::invalid_argument("idivergence: g must be > 0 everywhere");
        if (di < 0.0) throw std::invalid_argument("idivergence: d must be >= 0");
        if (di > 0.0)
            sum += di * std::log(di / gi) - di + gi;
        else
            sum += gi;
    }
    return static_cast<double>(sum);
}

struct ObjectiveRow {
    double data_low = 0.0;
    double data_high = 0.0;
    double penalty = 0.0;
    double total = 0.0;
};

/// Basis image pair plus iteration bookkeeping.
struct ReconState {
    ImageGrid c1;
    ImageGrid c2;
    int iteration = 0;
    std::vector<ObjectiveRow> history;
    double step_constant = 0.0;  // cached Z; computed on first use
};

struct DeamConfig {
    PenaltyConfig penalty;
    int newton_steps = 5;
    double bracket_width = 10.0;  // in units of 1/Z around the unpenalized step
};

namespace detail {

/// Minimizes the per-pixel convex surrogate
///   psi(u) = bt*u + (bh/Z) exp(-Z(u - c)) + lambda sum_n w phi(2u - c - c_n)
/// over u >= 0 with a safeguarded Newton iteration, never returning a
/// point worse than staying at c.
class PixelSolver {
  public:
    PixelSolver(double z, const DeamConfig& cfg) : z_(z), cfg_(cfg) {}

    double solve(double c, double bt, double bh, const double* nvals, const double* nw,
                 int nn) const {
        const double bts = std::max(bt, 1e-30);
        const double bhs = std::max(bh, 1e-30);
        const double step = std::log(bhs / bts) / z_;
        if (cfg_.penalty.lambda == 0.0 || nn == 0) return std::max(0.0, c + step);

        double lo = std::min(c + step - cfg_.bracket_width / z_, c);
        double hi = std::max(c + step + cfg_.bracket_width / z_, c);
        double cand;
        if (dpsi(lo, c, bt, bh, nvals, nw, nn) >= 0.0)
            cand = lo;
        else if (dpsi(hi, c, bt, bh, nvals, nw, nn) <= 0.0)
            cand = hi;
        else {
            double u = std::clamp(std::max(0.0, c + step), lo, hi);
            for (int it = 0; it < cfg_.newton_steps; ++it) {
                const double f = dpsi(u, c, bt, bh, nvals, nw, nn);
                if (f > 0.0)
                    hi = u;
                else
                    lo = u;
                const double fp = ddpsi(u, c, bt, bh, nvals, nw, nn);
                double un = u - f / fp;
                if (!(un > lo && un < hi)) un = 0.5 * (lo + hi);
                u = un;
            }
            cand = u;
        }
        cand = std::max(cand, 0.0);
        if (psi(cand, c, bt, bh, nvals, nw, nn) > psi(c, c, bt, bh, nvals, nw, nn)) cand = c;
        return cand;
    }

  private:
    double psi(double u, double c, double bt, double bh, const double* nvals, const double* nw,
               int nn) const {
        double v = bt * u + bh / z_ * std::exp(-z_ * (u - c));
        double pen = 0.0;
        for (int i = 0; i < nn; ++i) pen += nw[i] * phi(2.0 * u - c - nvals[i], cfg_.penalty.delta);
        return v + cfg_.penalty.lambda * pen;
    }

    double dpsi(double u, double c, double bt, double bh, const double* nvals, const double* nw,
                int nn) const {
        double v = bt - bh * std::exp(-z_ * (u - c));
        double pen = 0.0;
        for (int i = 0; i < nn; ++i)
            pen += nw[i] * phi_prime(2.0 * u - c - nvals[i], cfg_.penalty.delta);
        return v + 2.0 * cfg_.penalty.lambda * pen;
    }

    double ddpsi(double u, double c, double bt, double bh, const double* nvals, const double* nw,
                 int nn) const {
        double v = z_ * bh * std::exp(-z_ * (u - c));
        double pen = 0.0;
        for (int i = 0; i < nn; ++i)
            pen += nw[i] * phi_second(2.0 * u - c - nvals[i], cfg_.penalty.delta);
        return v + 4.0 * cfg_.penalty.lambda * pen;
    }

    double z_;
    const DeamConfig& cfg_;
};

}  // namespace detail

/// Conservative step constant: max_y sum_x h(x,y) * sum_i max_E mu_i(E).
inline double deam_step_constant(const ImageGrid& like, const AcquisitionModel& model) {
    double mu1max = 0.0, mu2max = 0.0;
    for (double m : model.basis1.mu) mu1max = std::max(mu1max, m);
    for (double m : model.basis2.mu) mu2max = std::max(mu2max, m);
    return max_row_sum(like, model.geometry) * (mu1max + mu2max);
}

/**
 * One full alternating-minimization update of (c1, c2).
 *
 * Per tube and ray the single-energy estimates
 *   q_j(y,E) = I0_j(E) exp(-sum_i L_i(y) mu_i(E))
 * are reduced to g_j(y) = sum_E q and the component moments
 * m_ij(y) = sum_E mu_i(E) q. The I-projection of the measured counts onto
 * the linear family {sum_E p = d} scales q by d/g, so the data and model
 * backprojections are
 *   bt_i = sum_j back_project((d_j/g_j) m_ij),
 *   bh_i = sum_j back_project(m_ij);
 * on rays with a flagged metal trace p = q is substituted instead, which
 * makes the two contributions identical and removes any data force there.
 * The measured value on a flagged ray is never read.
 *
 * Pixels then move by the penalized surrogate solve; with lambda = 0 the
 * update is c_i <- max(0, c_i + ln(bh_i/bt_i)/Z).
 *
 * The objective row appended to the history is evaluated at the state
 * entering the iteration (its g values fall out of the same pass); the
 * data terms cover unflagged rays only.
 */
inline void deam_iteration(ReconState& state, const Sinogram& d_low, const Sinogram& d_high,
                           const AcquisitionModel& model, const MetalModel* metal,
                           const DeamConfig& cfg) {
    cfg.penalty.validate();
    d_low.require_kind(SinogramKind::counts, "deam_iteration");
    d_high.require_kind(SinogramKind::counts, "deam_iteration");
    const FanGeometry& geom = model.geometry;
    if (!(d_low.geometry == geom) || !(d_high.geometry == geom))
        throw std::invalid_argument("deam_iteration: data geometry mismatch");
    if (metal && !(metal->flags.geometry == geom))
        throw std::invalid_argument("deam_iteration: metal trace geometry mismatch");
    if (state.step_constant <= 0.0) state.step_constant = deam_step_constant(state.c1, model);
    const double z = state.step_constant;

    const size_t nrays = geom.n_rays();
    const size_t nbins = model.energies().size();
    Sinogram l1 = forward_project(state.c1, geom);
    Sinogram l2 = forward_project(state.c2, geom);

    Sinogram bt1 = Sinogram::zeros(geom, SinogramKind::line_integral);
    Sinogram bt2 = bt1, bh1 = bt1, bh2 = bt1;
    std::vector<double> obj(nrays);
    ObjectiveRow row;

    const double* mu1 = model.basis1.mu.data();
    const double* mu2 = model.basis2.mu.data();
    const double* flags = metal ? metal->flags.data.data() : nullptr;

    for (int tube = 0; tube < 2; ++tube) {
        const SpectrumTable& spec = tube == 0 ? model.spectrum_low : model.spectrum_high;
        const Sinogram& d = tube == 0 ? d_low : d_high;
        const double* i0 = spec.counts.data();
        detail::parallel_for(nrays, [&](size_t y) {
            const double a = l1.data[y];
            const double b = l2.data[y];
            double g = 0.0, m1 = 0.0, m2 = 0.0;
            for (size_t e = 0; e < nbins; ++e) {
                if (i0[e] == 0.0) continue;
                const double q = i0[e] * std::exp(-(a * mu1[e] + b * mu2[e]));
                g += q;
                m1 += mu1[e] * q;
                m2 += mu2[e] * q;
            }
            const bool flagged = flags && flags[y] != 0.0;
            const double gs = std::max(g, 1e-300);
            double ratio;
            if (flagged) {
                ratio = 1.0;  // p = q on the metal trace
                obj[y] = 0.0;
            } else {
                const double dy = d.data[y];
                ratio = dy / gs;
                obj[y] = dy > 0.0 ? dy * std::log(dy / gs) - dy + g : g;
            }
            bt1.data[y] += ratio * m1;
            bt2.data[y] += ratio * m2;
            bh1.data[y] += m1;
            bh2.data[y] += m2;
        });
        long double sum = 0.0L;
        for (size_t y = 0; y < nrays; ++y) sum += obj[y];
        (tube == 0 ? row.data_low : row.data_high) = static_cast<double>(sum);
    }

    ImageGrid b_data1 = back_project(bt1, geom, state.c1);
    ImageGrid b_data2 = back_project(bt2, geom, state.c1);
    ImageGrid b_model1 = back_project(bh1, geom, state.c1);
    ImageGrid b_model2 = back_project(bh2, geom, state.c1);

    row.penalty = penalty(state.c1, state.c2, cfg.penalty);
    row.total = row.data_low + row.data_high + row.penalty;
    if (!std::isfinite(row.total))
        throw std::runtime_error("deam_iteration: objective is not finite");
    state.history.push_back(row);

    const auto nbr = detail::neighborhood(state.c1.dx, state.c1.dy);
    const detail::PixelSolver solver(z, cfg);
    const int nx = state.c1.nx;
    const int ny = state.c1.ny;
    ImageGrid new1 = state.c1;
    ImageGrid new2 = state.c2;
    detail::parallel_for(static_cast<size_t>(ny), [&](size_t iy) {
        double nvals[8], nw[8];
        for (int ix = 0; ix < nx; ++ix) {
            const size_t p = iy * static_cast<size_t>(nx) + ix;
            for (int comp = 0; comp < 2; ++comp) {
                const ImageGrid& cur = comp == 0 ? state.c1 : state.c2;
                int nn = 0;
                if (cfg.penalty.lambda > 0.0) {
                    for (const auto& n : nbr) {
                        const int jx = ix + n.ox;
                        const int jy = static_cast<int>(iy) + n.oy;
                        if (jx < 0 || jx >= nx || jy < 0 || jy >= ny) continue;
                        nvals[nn] = cur.at(jx, jy);
                        nw[nn] = n.w;
                        ++nn;
                    }
                }
                const double bt = comp == 0 ? b_data1.values[p] : b_data2.values[p];
                const double bh = comp == 0 ? b_model1.values[p] : b_model2.values[p];
                double& dst = comp == 0 ? new1.values[p] : new2.values[p];
                dst = solver.solve(cur.values[p], bt, bh, nvals, nw, nn);
            }
        }
    });
    state.c1 = std::move(new1);
    state.c2 = std::move(new2);
    ++state.iteration;
}

struct DeamResult {
    ImageGrid c1;
    ImageGrid c2;
    std::vector<ObjectiveRow> history;
};

/**
 * Runs deam_iteration until n_iters or until the relative objective
 * change over 5 iterations drops below stop_tol. Passing metal = nullptr
 * reproduces the original algorithm; with a metal model the flagged rays
 * are replaced by the model estimate in every iteration.
 */
inline DeamResult run_deam(const Sinogram& d_low, const Sinogram& d_high,
                           const AcquisitionModel& model, const MetalModel* metal,
                           const ImageGrid& init_c1, const ImageGrid& init_c2,
                           const DeamConfig& cfg, int n_iters, double stop_tol = 0.0) {
    model.validate();
    if (!init_c1.same_shape(init_c2))
        throw std::invalid_argument("run_deam: init images must share one grid");
    for (size_t i = 0; i < init_c1.values.size(); ++i)
        if (init_c1.values[i] < 0.0 || init_c2.values[i] < 0.0)
            throw std::invalid_argument("run_deam: init images must be nonnegative");
    ReconState state;
    state.c1 = init_c1;
    state.c2 = init_c2;
    for (int k = 0; k < n_iters; ++k) {
        deam_iteration(state, d_low, d_high, model, metal, cfg);
        const size_t n = state.history.size();
        if (stop_tol > 0.0 && n >= 6) {
            const double now = state.history[n - 1].total;
            const double then = state.history[n - 6].total;
            if (std::abs(now - then) < stop_tol * std::max(std::abs(then), 1e-300)) break;
        }
    }
    return {std::move(state.c1), std::move(state.c2), std::move(state.history)};
}

}  // namespace dm

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dm/detail/parallel.hpp"
#include "dm/types.hpp"

namespace dm {

/// Ray as origin point plus unit direction, in mm.
struct Ray {
    double px = 0.0, py = 0.0;
    double dx = 0.0, dy = 0.0;
};

inline Ray ray_for(const FanGeometry& g, int view, int channel) {
    const double beta = g.view_angle(view);
    if (g.mode == GeometryMode::fan_equiangular) {
        const double theta = beta + g.channel_gamma(channel);
        return {g.source_radius * std::cos(beta), g.source_radius * std::sin(beta),
                -std::cos(theta), -std::sin(theta)};
    }
    const double s = g.channel_offset(channel);
    return {-s * std::sin(beta), s * std::cos(beta), -std::cos(beta), -std::sin(beta)};
}

/// One (pixel, intersection length) pair of a ray path.
struct RayHit {
    int pixel = 0;
    double length = 0.0;
};

namespace detail {

struct GridFrame {
    double x0, y0, dx, dy;
    int nx, ny;

    explicit GridFrame(const ImageGrid& g)
        : x0(g.min_x()), y0(g.min_y()), dx(g.dx), dy(g.dy), nx(g.nx), ny(g.ny) {}
};

/// Exact ray-grid traversal: emits (pixel index, intersection length) for
/// every pixel the ray crosses, in ray order. Lengths are exact chord
/// lengths through the pixel squares.
template <typename Emit>
void trace_ray(const GridFrame& g, const Ray& ray, Emit&& emit) {
    const double inf = std::numeric_limits<double>::infinity();
    const double gx1 = g.x0 + g.nx * g.dx;
    const double gy1 = g.y0 + g.ny * g.dy;

    double t_lo = -inf, t_hi = inf;
    if (ray.dx != 0.0) {
        double ta = (g.x0 - ray.px) / ray.dx;
        double tb = (gx1 - ray.px) / ray.dx;
        if (ta > tb) std::swap(ta, tb);
        t_lo = std::max(t_lo, ta);
        t_hi = std::min(t_hi, tb);
    } else if (ray.px <= g.x0 || ray.px >= gx1) {
        return;
    }
    if (ray.dy != 0.0) {
        double ta = (g.y0 - ray.py) / ray.dy;
        double tb = (gy1 - ray.py) / ray.dy;
        if (ta > tb) std::swap(ta, tb);
        t_lo = std::max(t_lo, ta);
        t_hi = std::min(t_hi, tb);
    } else if (ray.py <= g.y0 || ray.py >= gy1) {
        return;
    }
    if (!(t_hi > t_lo)) return;

    int ix = static_cast<int>(std::floor((ray.px + t_lo * ray.dx - g.x0) / g.dx));
    int iy = static_cast<int>(std::floor((ray.py + t_lo * ray.dy - g.y0) / g.dy));
    ix = std::clamp(ix, 0, g.nx - 1);
    iy = std::clamp(iy, 0, g.ny - 1);

    const int step_x = ray.dx > 0.0 ? 1 : (ray.dx < 0.0 ? -1 : 0);
    const int step_y = ray.dy > 0.0 ? 1 : (ray.dy < 0.0 ? -1 : 0);
    const double inv_dx = step_x != 0 ? 1.0 / ray.dx : 0.0;
    const double inv_dy = step_y != 0 ? 1.0 / ray.dy : 0.0;

    // Boundaries are recomputed from cell indices each step; no
    // incremental drift.
    auto next_tx = [&](int i) {
        return step_x == 0 ? inf : (g.x0 + (i + (step_x > 0 ? 1 : 0)) * g.dx - ray.px) * inv_dx;
    };
    auto next_ty = [&](int j) {
        return step_y == 0 ? inf : (g.y0 + (j + (step_y > 0 ? 1 : 0)) * g.dy - ray.py) * inv_dy;
    };

    double t = t_lo;
    const int max_steps = g.nx + g.ny + 8;
    for (int k = 0; k < max_steps; ++k) {
        const double tx = next_tx(ix);
        const double ty = next_ty(iy);
        const double tn = std::min(std::min(tx, ty), t_hi);
        const double len = tn - t;
        if (len > 0.0) emit(iy * g.nx + ix, len);
        t = tn;
        if (tn >= t_hi) return;
        if (tx <= tn) ix += step_x;
        if (ty <= tn) iy += step_y;
        if (ix < 0 || ix >= g.nx || iy < 0 || iy >= g.ny) return;
    }
}

inline void check_projector_inputs(const ImageGrid& img, const FanGeometry& geom) {
    if (!(img.dx > 0.0) || !(img.dy > 0.0))
        throw std::invalid_argument("projector: pixel spacing must be > 0");
    geom.validate();
    const double center_dist = std::hypot(img.origin_x, img.origin_y);
    const double inscribed = 0.5 * std::min(img.width(), img.height());
    if (geom.mode == GeometryMode::fan_equiangular) {
        const double circum = 0.5 * std::hypot(img.width(), img.height());
        if (geom.source_radius < center_dist + circum)
            throw std::invalid_argument("projector: source orbit intersects the image grid");
    }
    if (geom.fov_radius() + 1e-9 < center_dist + inscribed)
        throw std::invalid_argument(
            "projector: detector coverage does not contain the reconstruction circle");
}

}  // namespace detail

/// Path of one measurement ray through the grid.
inline std::vector<RayHit> ray_path(const ImageGrid& grid, const FanGeometry& geom, int view,
                                    int channel) {
    detail::GridFrame frame(grid);
    std::vector<RayHit> path;
    detail::trace_ray(frame, ray_for(geom, view, channel),
                      [&](int pixel, double len) { path.push_back({pixel, len}); });
    return path;
}

/// Line integrals of the image along every geometry ray:
/// out(y) = sum_x h(x,y) * image(x).
inline Sinogram forward_project(const ImageGrid& image, const FanGeometry& geom) {
    detail::check_projector_inputs(image, geom);
    Sinogram out = Sinogram::zeros(geom, SinogramKind::line_integral);
    detail::GridFrame frame(image);
    const double* img = image.values.data();
    double* sino = out.data.data();
    const int nch = geom.n_channels;
    detail::parallel_for(static_cast<size_t>(geom.n_views), [&](size_t v) {
        for (int c = 0; c < nch; ++c) {
            double sum = 0.0;
            detail::trace_ray(frame, ray_for(geom, static_cast<int>(v), c),
                              [&](int pixel, double len) { sum += img[pixel] * len; });
            sino[v * nch + c] = sum;
        }
    });
    return out;
}

/// Exact transpose of forward_project:
/// out(x) = sum_y h(x,y) * sino(y).
///
/// Views accumulate into private images that are merged in view order, so
/// the result is bit-identical for every thread count.
inline ImageGrid back_project(const Sinogram& sino, const FanGeometry& geom,
                              const ImageGrid& like) {
    if (!(sino.geometry == geom))
        throw std::invalid_argument("back_project: sinogram geometry mismatch");
    detail::check_projector_inputs(like, geom);
    ImageGrid out = ImageGrid::zeros(like.nx, like.ny, like.dx, like.dy, like.origin_x,
                                     like.origin_y);
    detail::GridFrame frame(like);
    const int nch = geom.n_channels;
    const size_t npix = out.size();

    const int batch = 64;
    std::vector<std::vector<double>> partials(
        static_cast<size_t>(std::min(batch, geom.n_views)));
    for (auto& p : partials) p.assign(npix, 0.0);

    for (int base = 0; base < geom.n_views; base += batch) {
        const int nv = std::min(batch, geom.n_views - base);
        detail::parallel_for(static_cast<size_t>(nv), [&](size_t i) {
            std::vector<double>& acc = partials[i];
            std::fill(acc.begin(), acc.end(), 0.0);
            const int v = base + static_cast<int>(i);
            const double* row = sino.data.data() + static_cast<size_t>(v) * nch;
            for (int c = 0; c < nch; ++c) {
                const double s = row[c];
                if (s == 0.0) continue;
                detail::trace_ray(frame, ray_for(geom, v, c),
                                  [&](int pixel, double len) { acc[pixel] += s * len; });
            }
        });
        for (int i = 0; i < nv; ++i) {
            const double* acc = partials[static_cast<size_t>(i)].data();
            double* dst = out.values.data();
            for (size_t p = 0; p < npix; ++p) dst[p] += acc[p];
        }
    }
    return out;
}

/// max_y sum_x h(x,y); feeds the reconstruction step constant.
inline double max_row_sum(const ImageGrid& like, const FanGeometry& geom) {
    ImageGrid ones = ImageGrid::zeros(like.nx, like.ny, like.dx, like.dy, like.origin_x,
                                      like.origin_y);
    std::fill(ones.values.begin(), ones.values.end(), 1.0);
    Sinogram sums = forward_project(ones, geom);
    double m = 0.0;
    for (double v : sums.data) m = std::max(m, v);
    return m;
}

}  // namespace dm

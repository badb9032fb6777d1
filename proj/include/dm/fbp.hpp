#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "dm/detail/fft.hpp"
#include "dm/detail/parallel.hpp"
#include "dm/types.hpp"

namespace dm {

/// Log preprocessing with a photon-starvation guard:
/// out(y) = -ln(max(d(y), eps) / I0_total).
inline Sinogram counts_to_lineintegral(const Sinogram& d, double i0_total, double eps = 0.1) {
    d.require_kind(SinogramKind::counts, "counts_to_lineintegral");
    if (!(i0_total > 0.0))
        throw std::invalid_argument("counts_to_lineintegral: I0_total must be > 0");
    Sinogram out = d;
    out.kind = SinogramKind::line_integral;
    const double log_i0 = std::log(i0_total);
    for (double& v : out.data) v = log_i0 - std::log(std::max(v, eps));
    return out;
}

enum class FbpFilter { ramp, hann };

inline FbpFilter fbp_filter_from_string(const std::string& s) {
    if (s == "ramp") return FbpFilter::ramp;
    if (s == "hann") return FbpFilter::hann;
    throw std::runtime_error("unknown FBP filter '" + s + "'");
}

namespace detail {

/// Band-limited ramp kernel sample at integer offset n for sample
/// spacing `step`: 1/(4 step^2) at 0, zero at even n, -1/(pi n step)^2
/// at odd n.
inline double ramp_kernel(int n, double step) {
    if (n == 0) return 0.25 / (step * step);
    if (n % 2 == 0) return 0.0;
    const double d = pi * n * step;
    return -1.0 / (d * d);
}

/// Equiangular fan modification of the ramp kernel:
/// g(n dg) = (1/2) (n dg / sin(n dg))^2 h(n dg).
inline double fan_kernel(int n, double dgamma) {
    if (n == 0) return 0.5 * ramp_kernel(0, dgamma);
    const double a = n * dgamma;
    const double r = a / std::sin(a);
    return 0.5 * r * r * ramp_kernel(n, dgamma);
}

/// Real transfer function of the chosen spatial kernel on an FFT grid of
/// size m (power of two, m >= 2*n_channels), optionally Hann-apodized.
inline std::vector<double> filter_transfer(int n_channels, double step, bool fan,
                                           FbpFilter filter) {
    const size_t m = next_pow2(static_cast<size_t>(2 * n_channels));
    std::vector<std::complex<double>> kernel(m, 0.0);
    kernel[0] = fan ? fan_kernel(0, step) : ramp_kernel(0, step);
    for (size_t k = 1; k <= m / 2; ++k) {
        const double v = fan ? fan_kernel(static_cast<int>(k), step)
                             : ramp_kernel(static_cast<int>(k), step);
        kernel[k] = v;
        kernel[m - k] = v;
    }
    fft_radix2(kernel, false);
    std::vector<double> transfer(m);
    for (size_t k = 0; k < m; ++k) transfer[k] = kernel[k].real();
    if (filter == FbpFilter::hann) {
        for (size_t k = 0; k < m; ++k) {
            const size_t f = std::min(k, m - k);
            transfer[k] *= 0.5 * (1.0 + std::cos(2.0 * pi * static_cast<double>(f) /
                                                 static_cast<double>(m)));
        }
    }
    return transfer;
}

/// Filters one detector row by FFT convolution; `out` receives n values.
inline void filter_row(const double* in, int n, const std::vector<double>& transfer,
                       double scale, double* out) {
    const size_t m = transfer.size();
    std::vector<std::complex<double>> buf(m, 0.0);
    for (int i = 0; i < n; ++i) buf[static_cast<size_t>(i)] = in[i];
    fft_radix2(buf, false);
    for (size_t k = 0; k < m; ++k) buf[k] *= transfer[k];
    fft_radix2(buf, true);
    for (int i = 0; i < n; ++i) out[i] = buf[static_cast<size_t>(i)].real() * scale;
}

inline double interp_channel(const double* row, int n, double pos) {
    if (pos < 0.0 || pos > n - 1) return 0.0;  // outside the detector
    const int i = std::min(static_cast<int>(pos), n - 2);
    const double w = pos - i;
    return (1.0 - w) * row[i] + w * row[i + 1];
}

}  // namespace detail

/**
 * Filtered backprojection for the sinogram's own geometry.
 *
 * parallel: classic ramp-filtered backprojection; requires angular
 * coverage of at least pi and averages repeated coverage.
 *
 * fan_equiangular: equiangular weighting (cos-gamma pre-weight, modified
 * ramp kernel, inverse squared source distance backprojection weight)
 * over a full 2 pi rotation.
 */
inline ImageGrid fbp_reconstruct(const Sinogram& sino, const FanGeometry& geom, int nx, int ny,
                                 double dx, double dy, FbpFilter filter = FbpFilter::ramp,
                                 double ox = 0.0, double oy = 0.0) {
    sino.require_kind(SinogramKind::line_integral, "fbp_reconstruct");
    if (!(sino.geometry == geom))
        throw std::invalid_argument("fbp_reconstruct: sinogram geometry mismatch");
    geom.validate();
    const bool fan = geom.mode == GeometryMode::fan_equiangular;
    if (fan && geom.angular_range < 2.0 * pi - 1e-9)
        throw std::invalid_argument("fbp_reconstruct: fan mode requires a full 2*pi rotation");
    if (!fan && geom.angular_range < pi - 1e-9)
        throw std::invalid_argument("fbp_reconstruct: parallel mode requires coverage >= pi");
    if (geom.n_channels < 2)
        throw std::invalid_argument("fbp_reconstruct: need at least 2 channels");

    const int nch = geom.n_channels;
    const int nv = geom.n_views;
    const double step = fan ? geom.delta_gamma() : geom.delta_s();
    const std::vector<double> transfer = detail::filter_transfer(nch, step, fan, filter);

    // Filter all views. The fan pre-weight D*cos(gamma) is applied before
    // convolution; `step` converts the discrete convolution to an integral.
    std::vector<double> filtered(static_cast<size_t>(nv) * nch);
    detail::parallel_for(static_cast<size_t>(nv), [&](size_t v) {
        const double* in = sino.data.data() + v * nch;
        double* out = filtered.data() + v * nch;
        if (fan) {
            std::vector<double> weighted(static_cast<size_t>(nch));
            for (int c = 0; c < nch; ++c)
                weighted[static_cast<size_t>(c)] =
                    in[c] * geom.source_radius * std::cos(geom.channel_gamma(c));
            detail::filter_row(weighted.data(), nch, transfer, step, out);
        } else {
            detail::filter_row(in, nch, transfer, step, out);
        }
    });

    ImageGrid out = ImageGrid::zeros(nx, ny, dx, dy, ox, oy);
    const double dbeta = geom.delta_beta();
    // parallel coverage repeats every pi
    const double weight = fan ? dbeta : dbeta * pi / geom.angular_range;
    const double center = 0.5 * (nch - 1);

    std::vector<double> cos_b(static_cast<size_t>(nv)), sin_b(static_cast<size_t>(nv));
    for (int v = 0; v < nv; ++v) {
        cos_b[static_cast<size_t>(v)] = std::cos(geom.view_angle(v));
        sin_b[static_cast<size_t>(v)] = std::sin(geom.view_angle(v));
    }

    detail::parallel_for(static_cast<size_t>(ny), [&](size_t iy) {
        const double y = out.pixel_y(static_cast<int>(iy));
        for (int ix = 0; ix < nx; ++ix) {
            const double x = out.pixel_x(ix);
            double sum = 0.0;
            for (int v = 0; v < nv; ++v) {
                const double* row = filtered.data() + static_cast<size_t>(v) * nch;
                if (fan) {
                    const double sx = geom.source_radius * cos_b[static_cast<size_t>(v)];
                    const double sy = geom.source_radius * sin_b[static_cast<size_t>(v)];
                    const double vx = x - sx;
                    const double vy = y - sy;
                    const double l2 = vx * vx + vy * vy;
                    // signed fan angle of the ray through (x, y)
                    const double d0x = -cos_b[static_cast<size_t>(v)];
                    const double d0y = -sin_b[static_cast<size_t>(v)];
                    const double gamma = std::atan2(d0x * vy - d0y * vx, d0x * vx + d0y * vy);
                    const double pos = gamma / geom.delta_gamma() + center;
                    sum += detail::interp_channel(row, nch, pos) / l2;
                } else {
                    const double s = -x * sin_b[static_cast<size_t>(v)] +
                                     y * cos_b[static_cast<size_t>(v)];
                    const double pos = s / geom.delta_s() + center;
                    sum += detail::interp_channel(row, nch, pos);
                }
            }
            out.at(ix, static_cast<int>(iy)) = sum * weight;
        }
    });
    return out;
}

}  // namespace dm

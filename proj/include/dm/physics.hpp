#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dm/detail/parallel.hpp"
#include "dm/detail/rng.hpp"
#include "dm/projector.hpp"
#include "dm/types.hpp"

namespace dm {

enum class Tube { low, high };

/**
 * Polychromatic dual-energy forward model: two incident spectra and the
 * linear attenuation tables of the two basis materials, all sharing one
 * energy grid.
 */
struct AcquisitionModel {
    SpectrumTable spectrum_low;
    SpectrumTable spectrum_high;
    MaterialTable basis1;
    MaterialTable basis2;
    FanGeometry geometry;

    const SpectrumTable& spectrum(Tube j) const {
        return j == Tube::low ? spectrum_low : spectrum_high;
    }

    const std::vector<double>& energies() const { return spectrum_low.energies; }

    void validate() const {
        spectrum_low.validate();
        spectrum_high.validate();
        basis1.validate();
        basis2.validate();
        geometry.validate();
        if (!same_energy_grid(spectrum_low.energies, spectrum_high.energies) ||
            !same_energy_grid(spectrum_low.energies, basis1.energies) ||
            !same_energy_grid(spectrum_low.energies, basis2.energies))
            throw std::runtime_error(
                "AcquisitionModel: spectra and basis tables must share one energy grid");
    }
};

/**
 * Expected transmitted counts under the polychromatic model:
 *   g_j(y) = sum_E I0_j(E) exp(-[L1(y) mu1(E) + L2(y) mu2(E)])
 * with L_i the forward projection of basis image c_i.
 */
inline Sinogram expected_counts(const ImageGrid& c1, const ImageGrid& c2,
                                const AcquisitionModel& model, Tube j) {
    model.validate();
    if (!c1.same_shape(c2))
        throw std::invalid_argument("expected_counts: c1 and c2 must share one grid");
    Sinogram l1 = forward_project(c1, model.geometry);
    Sinogram l2 = forward_project(c2, model.geometry);
    const SpectrumTable& spec = model.spectrum(j);
    const size_t nbins = spec.energies.size();
    Sinogram out = Sinogram::zeros(model.geometry, SinogramKind::counts);
    const double* mu1 = model.basis1.mu.data();
    const double* mu2 = model.basis2.mu.data();
    const double* i0 = spec.counts.data();
    detail::parallel_for(out.size(), [&](size_t y) {
        const double a = l1.data[y];
        const double b = l2.data[y];
        double g = 0.0;
        for (size_t e = 0; e < nbins; ++e) {
            if (i0[e] == 0.0) continue;
            g += i0[e] * std::exp(-(a * mu1[e] + b * mu2[e]));
        }
        out.data[y] = g;
    });
    return out;
}

/// Rasterizes a phantom onto basis-coefficient images. Pixel centers
/// decide disc membership; overlapping inserts are rejected.
inline std::pair<ImageGrid, ImageGrid> rasterize_phantom(const PhantomSpec& spec, int nx, int ny,
                                                         double dx, double dy, double ox = 0.0,
                                                         double oy = 0.0) {
    spec.validate();
    for (size_t i = 0; i < spec.inserts.size(); ++i)
        for (size_t k = i + 1; k < spec.inserts.size(); ++k) {
            const auto& a = spec.inserts[i];
            const auto& b = spec.inserts[k];
            if (std::hypot(a.center_x - b.center_x, a.center_y - b.center_y) <
                a.radius + b.radius)
                throw std::invalid_argument("rasterize_phantom: inserts '" + a.name + "' and '" +
                                            b.name + "' overlap");
        }
    ImageGrid c1 = ImageGrid::zeros(nx, ny, dx, dy, ox, oy);
    ImageGrid c2 = ImageGrid::zeros(nx, ny, dx, dy, ox, oy);
    for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix) {
            const double x = c1.pixel_x(ix);
            const double y = c1.pixel_y(iy);
            const PhantomMaterial* mat = nullptr;
            for (const auto& in : spec.inserts)
                if (std::hypot(x - in.center_x, y - in.center_y) <= in.radius) {
                    mat = &spec.material(in.material);
                    break;
                }
            if (!mat && std::hypot(x - spec.background.center_x, y - spec.background.center_y) <=
                            spec.background.radius)
                mat = &spec.material(spec.background.material);
            if (mat) {
                c1.at(ix, iy) = mat->c1;
                c2.at(ix, iy) = mat->c2;
            }
        }
    return {std::move(c1), std::move(c2)};
}

/// One simulated dual-energy acquisition with its ground truth.
struct SimulatedScan {
    Sinogram d_low;
    Sinogram d_high;
    ImageGrid truth_c1;
    ImageGrid truth_c2;
    uint64_t seed = 0;
    double counts_per_ray = 0.0;
};

namespace detail {

inline Sinogram poissonize(const Sinogram& mean, uint64_t seed, uint64_t tube) {
    Sinogram out = mean;
    parallel_for(out.size(), [&](size_t y) {
        RayRng rng(seed, tube, y);
        out.data[y] = static_cast<double>(poisson_draw(rng, mean.data[y]));
    });
    return out;
}

}  // namespace detail

/**
 * Simulates the dual-energy scan of a phantom. The spectra are scaled so
 * that a ray through air accumulates counts_per_ray expected counts.
 * With noise enabled each ray draws from Poisson(g_j(y)) using a
 * counter-based stream keyed by (seed, tube, ray), so results do not
 * depend on the parallel schedule.
 */
inline AcquisitionModel scaled_model(const AcquisitionModel& model, double counts_per_ray);

inline SimulatedScan simulate_scan(const PhantomSpec& spec, const AcquisitionModel& model, int nx,
                                   int ny, double dx, double dy, double counts_per_ray,
                                   uint64_t seed, bool noise) {
    if (!(counts_per_ray > 0.0))
        throw std::invalid_argument("simulate_scan: counts_per_ray must be > 0");
    AcquisitionModel scaled = scaled_model(model, counts_per_ray);

    SimulatedScan scan;
    auto [c1, c2] = rasterize_phantom(spec, nx, ny, dx, dy);
    scan.truth_c1 = std::move(c1);
    scan.truth_c2 = std::move(c2);
    scan.seed = seed;
    scan.counts_per_ray = counts_per_ray;
    scan.d_low = expected_counts(scan.truth_c1, scan.truth_c2, scaled, Tube::low);
    scan.d_high = expected_counts(scan.truth_c1, scan.truth_c2, scaled, Tube::high);
    if (noise) {
        scan.d_low = detail::poissonize(scan.d_low, seed, 0);
        scan.d_high = detail::poissonize(scan.d_high, seed, 1);
    }
    return scan;
}

/// The spectra of `model` scaled so each tube totals counts_per_ray, as
/// used inside simulate_scan; reconstruction needs the same I0.
inline AcquisitionModel scaled_model(const AcquisitionModel& model, double counts_per_ray) {
    AcquisitionModel scaled = model;
    const double s_low = counts_per_ray / model.spectrum_low.total();
    const double s_high = counts_per_ray / model.spectrum_high.total();
    for (auto& c : scaled.spectrum_low.counts) c *= s_low;
    for (auto& c : scaled.spectrum_high.counts) c *= s_high;
    return scaled;
}

}  // namespace dm

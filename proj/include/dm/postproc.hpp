#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dm/types.hpp"

namespace dm {

namespace detail {

inline size_t energy_bin(const std::vector<double>& energies, double e, const std::string& where) {
    for (size_t i = 0; i < energies.size(); ++i)
        if (energies[i] == e) return i;
    throw std::invalid_argument(where + ": energy " + std::to_string(e) +
                                " keV is not on the table grid");
}

}  // namespace detail

/// mu(E, x) = mu1(E) c1(x) + mu2(E) c2(x); E must be a grid energy.
inline ImageGrid virtual_mono(const ImageGrid& c1, const ImageGrid& c2,
                              const MaterialTable& basis1, const MaterialTable& basis2,
                              double energy_kev) {
    if (!c1.same_shape(c2))
        throw std::invalid_argument("virtual_mono: c1 and c2 must share one grid");
    if (!same_energy_grid(basis1.energies, basis2.energies))
        throw std::invalid_argument("virtual_mono: basis tables must share one energy grid");
    const size_t e = detail::energy_bin(basis1.energies, energy_kev, "virtual_mono");
    const double m1 = basis1.mu[e];
    const double m2 = basis2.mu[e];
    ImageGrid out = c1;
    for (size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = m1 * c1.values[i] + m2 * c2.values[i];
    return out;
}

/// Monoenergetic images of one basis pair across energies.
struct MonoStack {
    std::vector<double> energies;
    std::vector<ImageGrid> images;
};

inline MonoStack mono_stack(const ImageGrid& c1, const ImageGrid& c2, const MaterialTable& basis1,
                            const MaterialTable& basis2, const std::vector<double>& energies) {
    MonoStack s;
    s.energies = energies;
    for (double e : energies) s.images.push_back(virtual_mono(c1, c2, basis1, basis2, e));
    return s;
}

/// Spectrum-weighted average of monoenergetic images,
/// sum_E I0(E)/sum(I0) * mu(E, x).
inline ImageGrid kvp_image(const ImageGrid& c1, const ImageGrid& c2, const MaterialTable& basis1,
                           const MaterialTable& basis2, const SpectrumTable& spectrum) {
    spectrum.validate();
    if (!same_energy_grid(spectrum.energies, basis1.energies) ||
        !same_energy_grid(spectrum.energies, basis2.energies))
        throw std::invalid_argument("kvp_image: spectrum and basis tables must share one grid");
    const double total = spectrum.total();
    ImageGrid out = ImageGrid::zeros(c1.nx, c1.ny, c1.dx, c1.dy, c1.origin_x, c1.origin_y);
    for (size_t e = 0; e < spectrum.energies.size(); ++e) {
        const double w = spectrum.counts[e] / total;
        if (w == 0.0) continue;
        const double m1 = basis1.mu[e];
        const double m2 = basis2.mu[e];
        for (size_t i = 0; i < out.values.size(); ++i)
            out.values[i] += w * (m1 * c1.values[i] + m2 * c2.values[i]);
    }
    return out;
}

/// One ROI/energy row of the quantitative report.
struct RoiReportRow {
    std::string roi;
    double energy_kev = 0.0;
    double bias_pct = 0.0;
    double mae_pct = 0.0;
    std::string truth_source;
};

/// Percentage bias and MAE of a ROI against per-energy reference values:
/// bias% = 100 mean(v - truth)/truth, MAE% = 100 mean|v - truth|/truth.
inline std::vector<RoiReportRow> roi_stats(const MonoStack& stack, const RoiSpec& roi,
                                           const std::vector<double>& truth,
                                           const std::string& truth_source = "") {
    if (truth.size() != stack.energies.size())
        throw std::invalid_argument("roi_stats: truth must cover the stack energies");
    std::vector<RoiReportRow> rows;
    for (size_t k = 0; k < stack.energies.size(); ++k) {
        if (truth[k] == 0.0)
            throw std::invalid_argument("roi_stats: truth value is 0 at " +
                                        std::to_string(stack.energies[k]) + " keV");
        const ImageGrid& img = stack.images[k];
        roi.validate_inside(img);
        double sum = 0.0, abs_sum = 0.0;
        long n = 0;
        for (int iy = 0; iy < img.ny; ++iy)
            for (int ix = 0; ix < img.nx; ++ix)
                if (roi.contains(img.pixel_x(ix), img.pixel_y(iy))) {
                    const double dv = img.at(ix, iy) - truth[k];
                    sum += dv;
                    abs_sum += std::abs(dv);
                    ++n;
                }
        if (n == 0)
            throw std::invalid_argument("roi_stats: ROI '" + roi.name + "' contains no pixels");
        RoiReportRow row;
        row.roi = roi.name;
        row.energy_kev = stack.energies[k];
        row.bias_pct = 100.0 * (sum / n) / truth[k];
        row.mae_pct = 100.0 * (abs_sum / n) / truth[k];
        row.truth_source = truth_source;
        rows.push_back(std::move(row));
    }
    return rows;
}

enum class ProfileAxis { horizontal, vertical };

/// Nearest-pixel samples along an axis-aligned segment.
struct ProfileSpec {
    ProfileAxis axis = ProfileAxis::horizontal;
    double fixed_mm = 0.0;  // y for horizontal, x for vertical
    double start_mm = 0.0;
    double end_mm = 0.0;
    int samples = 0;
};

struct ProfilePoint {
    double s_mm = 0.0;
    double value = 0.0;
};

inline std::vector<ProfilePoint> profile(const ImageGrid& img, const ProfileSpec& spec) {
    if (spec.samples < 1) throw std::invalid_argument("profile: need at least 1 sample");
    std::vector<ProfilePoint> out;
    out.reserve(static_cast<size_t>(spec.samples));
    for (int k = 0; k < spec.samples; ++k) {
        const double t = spec.samples == 1
                             ? 0.5
                             : static_cast<double>(k) / static_cast<double>(spec.samples - 1);
        const double s = spec.start_mm + t * (spec.end_mm - spec.start_mm);
        const double x = spec.axis == ProfileAxis::horizontal ? s : spec.fixed_mm;
        const double y = spec.axis == ProfileAxis::horizontal ? spec.fixed_mm : s;
        const int ix = static_cast<int>(std::lround((x - img.origin_x) / img.dx + 0.5 * (img.nx - 1)));
        const int iy = static_cast<int>(std::lround((y - img.origin_y) / img.dy + 0.5 * (img.ny - 1)));
        if (ix < 0 || ix >= img.nx || iy < 0 || iy >= img.ny)
            throw std::invalid_argument("profile: segment leaves the image extent");
        out.push_back({s, img.at(ix, iy)});
    }
    return out;
}

}  // namespace dm

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "dm/fbp.hpp"
#include "dm/physics.hpp"
#include "dm/projector.hpp"
#include "dm/types.hpp"

namespace dm {

/**
 * Metal model shared by both tubes: binary metal mask M(x), its trace
 * T(y) = sum_x h(x,y) M(x) in mm of metal path, and the flag sinogram
 * flag(y) = 1 iff T(y) >= t.
 */
struct MetalModel {
    ImageGrid mask;
    Sinogram trace;
    Sinogram flags;
    double threshold_mm = 0.5;

    bool any_flagged() const {
        for (double f : flags.data)
            if (f != 0.0) return true;
        return false;
    }
};

/// 2x2 weight matrix [mu1_low, mu2_low; mu1_high, mu2_high] mapping basis
/// coefficients to effective attenuation per tube.
struct CalibrationWeights {
    double m11 = 0.0, m12 = 0.0;  // low row
    double m21 = 0.0, m22 = 0.0;  // high row

    double det() const { return m11 * m22 - m12 * m21; }

    void validate() const {
        if (std::abs(det()) < 1e-8)
            throw std::invalid_argument(
                "CalibrationWeights: matrix is near-singular (|det| < 1e-8)");
    }
};

inline ImageGrid segment_metal(const ImageGrid& img, double threshold) {
    ImageGrid mask = ImageGrid::zeros(img.nx, img.ny, img.dx, img.dy, img.origin_x, img.origin_y);
    for (size_t i = 0; i < img.values.size(); ++i)
        mask.values[i] = img.values[i] >= threshold ? 1.0 : 0.0;
    return mask;
}

inline MetalModel build_metal_model(const ImageGrid& mask, const FanGeometry& geom,
                                    double threshold_mm) {
    for (double v : mask.values)
        if (v != 0.0 && v != 1.0)
            throw std::invalid_argument("build_metal_model: mask must be binary");
    MetalModel m;
    m.mask = mask;
    m.threshold_mm = threshold_mm;
    m.trace = forward_project(mask, geom);
    m.trace.kind = SinogramKind::trace;
    m.flags = Sinogram::zeros(geom, SinogramKind::mask);
    for (size_t i = 0; i < m.trace.data.size(); ++i)
        m.flags.data[i] = m.trace.data[i] >= threshold_mm ? 1.0 : 0.0;
    return m;
}

/// Classification thresholds and values for the NMAR prior image.
struct PriorConfig {
    double soft_threshold = 0.010;   // 1/mm, below: air
    double bone_threshold = 0.028;   // 1/mm, above: bone
    double metal_threshold = 0.100;  // 1/mm, above: metal (mapped to soft)
    double air_value = 0.0;
    double soft_value = 0.020;  // 1/mm
    double bone_value = 0.032;  // 1/mm
    int smooth_radius = 2;      // pixels

    void validate() const {
        if (!(soft_threshold < bone_threshold && bone_threshold < metal_threshold))
            throw std::invalid_argument("PriorConfig: thresholds must be strictly increasing");
        if (smooth_radius < 0)
            throw std::invalid_argument("PriorConfig: smooth_radius must be >= 0");
    }
};

namespace detail {

inline ImageGrid box_smooth(const ImageGrid& img, int radius) {
    if (radius <= 0) return img;
    ImageGrid out = img;
    for (int iy = 0; iy < img.ny; ++iy)
        for (int ix = 0; ix < img.nx; ++ix) {
            double sum = 0.0;
            int n = 0;
            for (int jy = std::max(0, iy - radius); jy <= std::min(img.ny - 1, iy + radius); ++jy)
                for (int jx = std::max(0, ix - radius); jx <= std::min(img.nx - 1, ix + radius);
                     ++jx) {
                    sum += img.at(jx, jy);
                    ++n;
                }
            out.at(ix, iy) = sum / n;
        }
    return out;
}

}  // namespace detail

/// Piecewise-constant prior: air/soft/bone by thresholding, metal mapped
/// to the soft-tissue class, then box smoothing.
inline ImageGrid build_prior(const ImageGrid& fbp_img, const PriorConfig& cfg) {
    cfg.validate();
    ImageGrid cls = fbp_img;
    for (double& v : cls.values) {
        if (v >= cfg.metal_threshold)
            v = cfg.soft_value;
        else if (v >= cfg.bone_threshold)
            v = cfg.bone_value;
        else if (v >= cfg.soft_threshold)
            v = cfg.soft_value;
        else
            v = cfg.air_value;
    }
    return detail::box_smooth(cls, cfg.smooth_radius);
}

namespace detail {

/// Replaces flagged entries of one detector row by linear interpolation
/// between the nearest unflagged channels; nearest-value extrapolation at
/// the row ends. Returns false when the whole row is flagged.
inline bool interpolate_row(double* row, const double* flags, int n) {
    int c = 0;
    bool any_clean = false;
    for (int i = 0; i < n; ++i)
        if (flags[i] == 0.0) any_clean = true;
    if (!any_clean) return false;
    while (c < n) {
        if (flags[c] == 0.0) {
            ++c;
            continue;
        }
        int lo = c - 1;  // last clean channel before the gap, -1 if none
        int hi = c;
        while (hi < n && flags[hi] != 0.0) ++hi;  // first clean channel after
        for (int i = c; i < hi; ++i) {
            if (lo < 0)
                row[i] = row[hi];
            else if (hi >= n)
                row[i] = row[lo];
            else {
                const double w = static_cast<double>(i - lo) / static_cast<double>(hi - lo);
                row[i] = (1.0 - w) * row[lo] + w * row[hi];
            }
        }
        c = hi;
    }
    return true;
}

}  // namespace detail

/**
 * NMAR sinogram completion on line integrals: normalize by the forward
 * projection of the prior, interpolate flagged channels within each view,
 * denormalize. Unflagged entries are returned bit-exact. Views that are
 * flagged end to end fall back to interpolation along the view axis.
 */
inline Sinogram nmar_complete(const Sinogram& d, const ImageGrid& prior, const MetalModel& metal,
                              const FanGeometry& geom, double projection_floor = 1e-6) {
    d.require_kind(SinogramKind::line_integral, "nmar_complete");
    if (!(d.geometry == geom) || !(metal.flags.geometry == geom))
        throw std::invalid_argument("nmar_complete: geometry mismatch");

    Sinogram projected = forward_project(prior, geom);
    for (double& p : projected.data) p = std::max(p, projection_floor);

    const int nv = geom.n_views;
    const int nch = geom.n_channels;
    Sinogram norm = d;
    for (size_t i = 0; i < norm.data.size(); ++i) norm.data[i] /= projected.data[i];

    std::vector<int> whole_view_flagged;
    for (int v = 0; v < nv; ++v) {
        double* row = norm.data.data() + static_cast<size_t>(v) * nch;
        const double* flags = metal.flags.data.data() + static_cast<size_t>(v) * nch;
        if (!detail::interpolate_row(row, flags, nch)) whole_view_flagged.push_back(v);
    }
    if (static_cast<int>(whole_view_flagged.size()) == nv)
        throw std::runtime_error("nmar_complete: every ray is flagged, nothing to interpolate from");

    // fallback axis: interpolate fully flagged views channel by channel
    if (!whole_view_flagged.empty()) {
        std::vector<char> is_whole(static_cast<size_t>(nv), 0);
        for (int v : whole_view_flagged) is_whole[static_cast<size_t>(v)] = 1;
        for (int v : whole_view_flagged) {
            int lo = v - 1;
            while (lo >= 0 && is_whole[static_cast<size_t>(lo)]) --lo;
            int hi = v + 1;
            while (hi < nv && is_whole[static_cast<size_t>(hi)]) ++hi;
            for (int c = 0; c < nch; ++c) {
                double& dst = norm.data[static_cast<size_t>(v) * nch + c];
                if (lo < 0)
                    dst = norm.data[static_cast<size_t>(hi) * nch + c];
                else if (hi >= nv)
                    dst = norm.data[static_cast<size_t>(lo) * nch + c];
                else {
                    const double w = static_cast<double>(v - lo) / static_cast<double>(hi - lo);
                    dst = (1.0 - w) * norm.data[static_cast<size_t>(lo) * nch + c] +
                          w * norm.data[static_cast<size_t>(hi) * nch + c];
                }
            }
        }
    }

    Sinogram out = d;
    for (size_t i = 0; i < out.data.size(); ++i)
        if (metal.flags.data[i] != 0.0) out.data[i] = norm.data[i] * projected.data[i];
    return out;
}

/// Per-pixel 2x2 solve of [c1; c2] = W^-1 [mu_low; mu_high].
inline std::pair<ImageGrid, ImageGrid> image_domain_decompose(const ImageGrid& mu_low,
                                                              const ImageGrid& mu_high,
                                                              const CalibrationWeights& w) {
    w.validate();
    if (!mu_low.same_shape(mu_high))
        throw std::invalid_argument("image_domain_decompose: images must share one grid");
    ImageGrid c1 = mu_low;
    ImageGrid c2 = mu_low;
    const double inv_det = 1.0 / w.det();
    for (size_t i = 0; i < mu_low.values.size(); ++i) {
        const double a = mu_low.values[i];
        const double b = mu_high.values[i];
        c1.values[i] = (w.m22 * a - w.m12 * b) * inv_det;
        c2.values[i] = (-w.m21 * a + w.m11 * b) * inv_det;
    }
    return {std::move(c1), std::move(c2)};
}

/// One calibration observation: a ROI with known basis coefficients.
struct CalibrationRoi {
    RoiSpec roi;
    double c1 = 0.0;
    double c2 = 0.0;
};

/**
 * Least-squares fit of the 2x2 weight matrix mapping known (c1, c2) to
 * observed ROI means of the low/high FBP attenuation images.
 */
inline CalibrationWeights calibrate_weights(const ImageGrid& fbp_low, const ImageGrid& fbp_high,
                                            const std::vector<CalibrationRoi>& rois) {
    if (rois.size() < 2)
        throw std::invalid_argument("calibrate_weights: need at least 2 ROIs");
    // normal equations sum[c c^T] a_row = sum[c * mu_row]
    double s11 = 0.0, s12 = 0.0, s22 = 0.0;
    double bl1 = 0.0, bl2 = 0.0, bh1 = 0.0, bh2 = 0.0;
    double scale = 0.0;
    for (const auto& r : rois) {
        const double ml = roi_mean(fbp_low, r.roi);
        const double mh = roi_mean(fbp_high, r.roi);
        s11 += r.c1 * r.c1;
        s12 += r.c1 * r.c2;
        s22 += r.c2 * r.c2;
        bl1 += r.c1 * ml;
        bl2 += r.c2 * ml;
        bh1 += r.c1 * mh;
        bh2 += r.c2 * mh;
        scale = std::max(scale, std::max(r.c1 * r.c1, r.c2 * r.c2));
    }
    const double det = s11 * s22 - s12 * s12;
    if (!(det > 1e-10 * scale * scale))
        throw std::invalid_argument(
            "calibrate_weights: ROI coefficients are rank-deficient, add an independent material");
    const double inv = 1.0 / det;
    CalibrationWeights w;
    w.m11 = (s22 * bl1 - s12 * bl2) * inv;
    w.m12 = (-s12 * bl1 + s11 * bl2) * inv;
    w.m21 = (s22 * bh1 - s12 * bh2) * inv;
    w.m22 = (-s12 * bh1 + s11 * bh2) * inv;
    return w;
}

/// Spectrum-weighted effective attenuation of both basis materials; the
/// calibration-free default for image-domain decomposition.
inline CalibrationWeights effective_energy_weights(const AcquisitionModel& model) {
    model.validate();
    CalibrationWeights w;
    const double tl = model.spectrum_low.total();
    const double th = model.spectrum_high.total();
    for (size_t e = 0; e < model.energies().size(); ++e) {
        w.m11 += model.spectrum_low.counts[e] / tl * model.basis1.mu[e];
        w.m12 += model.spectrum_low.counts[e] / tl * model.basis2.mu[e];
        w.m21 += model.spectrum_high.counts[e] / th * model.basis1.mu[e];
        w.m22 += model.spectrum_high.counts[e] / th * model.basis2.mu[e];
    }
    return w;
}

enum class SegmentSource { low, high };

/// Everything mar_initialize needs besides the data.
struct MarInitConfig {
    double counts_floor = 0.1;           // photon-starvation clamp (counts)
    FbpFilter filter = FbpFilter::ramp;
    SegmentSource segment_source = SegmentSource::low;
    double segment_threshold = 0.1;      // 1/mm on the FBP image
    double trace_threshold_mm = 0.5;     // t, mm of metal path
    PriorConfig prior;
    CalibrationWeights weights;
    double projection_floor = 1e-6;
    bool use_nmar = true;                // false: plain FBP decomposition
    int nx = 0, ny = 0;
    double dx = 1.0, dy = 1.0;
};

struct MarInitResult {
    ImageGrid c1;
    ImageGrid c2;
    MetalModel metal;
    ImageGrid fbp_low;
    ImageGrid fbp_high;
    ImageGrid prior;
};

/**
 * MAR initialization pipeline: log preprocessing, low/high FBP, metal
 * segmentation and trace, prior construction, NMAR completion of both
 * sinograms, FBP of the completed data and image-domain decomposition.
 * The completed sinograms exist only inside this routine; the iterative
 * reconstruction later sees the measured counts plus the trace flags.
 */
inline MarInitResult mar_initialize(const Sinogram& d_low, const Sinogram& d_high,
                                    const AcquisitionModel& model, const MarInitConfig& cfg) {
    d_low.require_kind(SinogramKind::counts, "mar_initialize");
    d_high.require_kind(SinogramKind::counts, "mar_initialize");
    const FanGeometry& geom = model.geometry;

    Sinogram l_low = counts_to_lineintegral(d_low, model.spectrum_low.total(), cfg.counts_floor);
    Sinogram l_high =
        counts_to_lineintegral(d_high, model.spectrum_high.total(), cfg.counts_floor);

    MarInitResult r;
    r.fbp_low = fbp_reconstruct(l_low, geom, cfg.nx, cfg.ny, cfg.dx, cfg.dy, cfg.filter);
    r.fbp_high = fbp_reconstruct(l_high, geom, cfg.nx, cfg.ny, cfg.dx, cfg.dy, cfg.filter);

    const ImageGrid& seg_src =
        cfg.segment_source == SegmentSource::low ? r.fbp_low : r.fbp_high;
    ImageGrid mask = segment_metal(seg_src, cfg.segment_threshold);
    r.metal = build_metal_model(mask, geom, cfg.trace_threshold_mm);

    ImageGrid mu_low, mu_high;
    if (cfg.use_nmar && r.metal.any_flagged()) {
        r.prior = build_prior(seg_src, cfg.prior);
        Sinogram comp_low = nmar_complete(l_low, r.prior, r.metal, geom, cfg.projection_floor);
        Sinogram comp_high = nmar_complete(l_high, r.prior, r.metal, geom, cfg.projection_floor);
        mu_low = fbp_reconstruct(comp_low, geom, cfg.nx, cfg.ny, cfg.dx, cfg.dy, cfg.filter);
        mu_high = fbp_reconstruct(comp_high, geom, cfg.nx, cfg.ny, cfg.dx, cfg.dy, cfg.filter);
    } else {
        mu_low = r.fbp_low;
        mu_high = r.fbp_high;
    }

    auto [c1, c2] = image_domain_decompose(mu_low, mu_high, cfg.weights);
    for (double& v : c1.values) v = std::max(v, 0.0);
    for (double& v : c2.values) v = std::max(v, 0.0);
    r.c1 = std::move(c1);
    r.c2 = std::move(c2);
    return r;
}

}  // namespace dm

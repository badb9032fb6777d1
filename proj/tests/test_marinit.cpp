#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "dm/io.hpp"
#include "dm/marinit.hpp"
#include "dm/postproc.hpp"

namespace {

const std::string kData = DM_DATA_DIR;

dm::FanGeometry rods_geom() {
    dm::FanGeometry g;
    g.mode = dm::GeometryMode::fan_equiangular;
    g.n_views = 180;
    g.n_channels = 256;
    g.source_radius = 300.0;
    g.detector_radius = 300.0;
    g.fan_angle = 0.5;
    g.angular_range = 2.0 * dm::pi;
    return g;
}

dm::AcquisitionModel project_model(const dm::FanGeometry& g) {
    dm::AcquisitionModel m;
    m.spectrum_low = dm::read_spectrum(kData + "/spectrum_90kvp.csv");
    m.spectrum_high = dm::read_spectrum(kData + "/spectrum_140kvp.csv");
    m.basis1 = dm::read_material(kData + "/mu_polystyrene.csv");
    m.basis2 = dm::read_material(kData + "/mu_cacl2_23.csv");
    m.geometry = g;
    return m;
}

dm::FanGeometry small_parallel(int views, int channels, double half_width) {
    dm::FanGeometry g;
    g.mode = dm::GeometryMode::parallel;
    g.n_views = views;
    g.n_channels = channels;
    g.detector_radius = half_width;
    g.angular_range = dm::pi;
    return g;
}

double box_chord(const dm::Ray& r, double x0, double y0, double x1, double y1) {
    double t0 = -1e30, t1 = 1e30;
    auto clip = [&](double p, double d, double lo, double hi) {
        if (d == 0.0) return p > lo && p < hi;
        double ta = (lo - p) / d, tb = (hi - p) / d;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        return true;
    };
    if (!clip(r.px, r.dx, x0, x1)) return 0.0;
    if (!clip(r.py, r.dy, y0, y1)) return 0.0;
    return std::max(0.0, t1 - t0);
}

}  // namespace

TEST_CASE("segmentation thresholds single pixels exactly") {
    dm::ImageGrid img = dm::ImageGrid::zeros(8, 8);
    dm::ImageGrid empty = dm::segment_metal(img, 0.1);
    for (double v : empty.values) CHECK(v == 0.0);

    img.at(3, 5) = 1.0;
    dm::ImageGrid one = dm::segment_metal(img, 0.1);
    for (int iy = 0; iy < 8; ++iy)
        for (int ix = 0; ix < 8; ++ix) CHECK(one.at(ix, iy) == ((ix == 3 && iy == 5) ? 1.0 : 0.0));
}

TEST_CASE("empty mask gives an empty metal model") {
    dm::ImageGrid mask = dm::ImageGrid::zeros(16, 16);
    auto g = small_parallel(12, 24, 12.0);
    dm::MetalModel m = dm::build_metal_model(mask, g, 0.5);
    CHECK_FALSE(m.any_flagged());
    for (double v : m.trace.data) CHECK(v == 0.0);
    CHECK(m.trace.kind == dm::SinogramKind::trace);
    CHECK(m.flags.kind == dm::SinogramKind::mask);
}

TEST_CASE("trace equals the forward projection of the mask") {
    dm::ImageGrid mask = dm::ImageGrid::zeros(16, 16);
    mask.at(4, 7) = 1.0;
    mask.at(5, 7) = 1.0;
    auto g = small_parallel(12, 24, 12.0);
    dm::MetalModel m = dm::build_metal_model(mask, g, 0.5);
    dm::Sinogram t = dm::forward_project(mask, g);
    CHECK(m.trace.data == t.data);
}

TEST_CASE("single metal pixel flags exactly the rays meeting the threshold") {
    dm::ImageGrid mask = dm::ImageGrid::zeros(16, 16, 2.0, 2.0);
    const int px = 9, py = 6;
    mask.at(px, py) = 1.0;
    auto g = small_parallel(24, 32, 17.0);
    const double t = 0.5;
    dm::MetalModel m = dm::build_metal_model(mask, g, t);

    const double x0 = mask.min_x() + px * mask.dx;
    const double y0 = mask.min_y() + py * mask.dy;
    for (int v = 0; v < g.n_views; ++v)
        for (int c = 0; c < g.n_channels; ++c) {
            const double chord =
                box_chord(dm::ray_for(g, v, c), x0, y0, x0 + mask.dx, y0 + mask.dy);
            CHECK(m.flags.at(v, c) == (chord >= t ? 1.0 : 0.0));
        }
}

TEST_CASE("flag set shrinks as the threshold grows") {
    dm::ImageGrid mask = dm::ImageGrid::zeros(16, 16, 2.0, 2.0);
    mask.at(8, 8) = 1.0;
    mask.at(9, 8) = 1.0;
    auto g = small_parallel(24, 32, 17.0);
    dm::MetalModel loose = dm::build_metal_model(mask, g, 0.5);
    dm::MetalModel tight = dm::build_metal_model(mask, g, 2.0);
    for (size_t i = 0; i < loose.flags.data.size(); ++i)
        if (tight.flags.data[i] != 0.0) CHECK(loose.flags.data[i] != 0.0);
}

TEST_CASE("build_metal_model rejects non-binary masks") {
    dm::ImageGrid mask = dm::ImageGrid::zeros(8, 8);
    mask.at(1, 1) = 0.7;
    CHECK_THROWS_WITH(dm::build_metal_model(mask, small_parallel(4, 8, 5.0), 0.5),
                      Catch::Matchers::ContainsSubstring("binary"));
}

TEST_CASE("prior classification maps the three classes") {
    dm::PriorConfig cfg;
    cfg.soft_threshold = 0.01;
    cfg.bone_threshold = 0.03;
    cfg.metal_threshold = 0.10;
    cfg.soft_value = 0.02;
    cfg.bone_value = 0.032;
    cfg.smooth_radius = 0;

    dm::ImageGrid img = dm::ImageGrid::zeros(2, 2);
    img.values = {0.002, 0.02, 0.05, 0.5};  // air, soft, bone, metal
    dm::ImageGrid prior = dm::build_prior(img, cfg);
    CHECK(prior.values[0] == 0.0);
    CHECK(prior.values[1] == 0.02);
    CHECK(prior.values[2] == 0.032);
    CHECK(prior.values[3] == 0.02);  // metal maps to soft tissue

    dm::ImageGrid uniform = dm::ImageGrid::zeros(6, 6);
    for (double& v : uniform.values) v = 0.02;
    cfg.smooth_radius = 2;
    dm::ImageGrid sp = dm::build_prior(uniform, cfg);
    for (double v : sp.values) CHECK_THAT(v, Catch::Matchers::WithinAbs(0.02, 1e-15));

    dm::ImageGrid air = dm::ImageGrid::zeros(6, 6);
    dm::ImageGrid ap = dm::build_prior(air, cfg);
    for (double v : ap.values) CHECK(v == 0.0);

    cfg.bone_threshold = 0.005;
    CHECK_THROWS_WITH(dm::build_prior(img, cfg),
                      Catch::Matchers::ContainsSubstring("strictly increasing"));
}

TEST_CASE("nmar with no flags returns the input bit-exact") {
    auto g = small_parallel(16, 24, 12.0);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> uni(0.1, 2.0);
    dm::Sinogram d = dm::Sinogram::zeros(g, dm::SinogramKind::line_integral);
    for (double& v : d.data) v = uni(rng);
    dm::ImageGrid prior = dm::ImageGrid::zeros(16, 16);
    for (double& v : prior.values) v = 0.02;
    dm::MetalModel metal = dm::build_metal_model(dm::ImageGrid::zeros(16, 16), g, 0.5);
    dm::Sinogram out = dm::nmar_complete(d, prior, metal, g);
    CHECK(out.data == d.data);
}

TEST_CASE("nmar is exact when the prior projections match the truth") {
    auto g = small_parallel(24, 32, 17.0);
    // object: smooth blob; prior equals the object itself
    dm::ImageGrid obj = dm::ImageGrid::zeros(16, 16, 2.0, 2.0);
    for (int iy = 0; iy < 16; ++iy)
        for (int ix = 0; ix < 16; ++ix) {
            double r2 = std::pow(obj.pixel_x(ix) / 14.0, 2) + std::pow(obj.pixel_y(iy) / 14.0, 2);
            obj.at(ix, iy) = 0.03 * std::exp(-2.0 * r2);
        }
    dm::Sinogram truth = dm::forward_project(obj, g);
    truth.kind = dm::SinogramKind::line_integral;

    dm::ImageGrid mask = dm::ImageGrid::zeros(16, 16, 2.0, 2.0);
    mask.at(8, 8) = 1.0;
    dm::MetalModel metal = dm::build_metal_model(mask, g, 0.5);
    REQUIRE(metal.any_flagged());

    dm::Sinogram corrupted = truth;
    for (size_t i = 0; i < corrupted.data.size(); ++i)
        if (metal.flags.data[i] != 0.0) corrupted.data[i] += 5.0;  // metal shadow

    dm::Sinogram out = dm::nmar_complete(corrupted, obj, metal, g);
    for (size_t i = 0; i < out.data.size(); ++i) {
        if (metal.flags.data[i] != 0.0)
            CHECK_THAT(out.data[i], Catch::Matchers::WithinAbs(truth.data[i], 1e-9));
        else
            CHECK(out.data[i] == corrupted.data[i]);  // untouched off the trace
    }
}

TEST_CASE("constant prior reduces nmar to plain linear interpolation") {
    // axis-aligned views: every interior ray has the same chord through
    // the grid, so the projected prior is one constant per view
    auto g = small_parallel(2, 32, 16.5);
    g.angular_range = dm::pi;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> uni(0.5, 3.0);
    dm::Sinogram d = dm::Sinogram::zeros(g, dm::SinogramKind::line_integral);
    for (double& v : d.data) v = uni(rng);

    dm::ImageGrid mask = dm::ImageGrid::zeros(16, 16, 2.0, 2.0);
    mask.at(7, 9) = 1.0;
    dm::MetalModel metal = dm::build_metal_model(mask, g, 0.5);

    dm::ImageGrid flat = dm::ImageGrid::zeros(16, 16, 2.0, 2.0);
    for (double& v : flat.values) v = 0.025;
    dm::Sinogram nmar = dm::nmar_complete(d, flat, metal, g);

    // oracle: within-view linear interpolation of the raw values
    for (int v = 0; v < g.n_views; ++v) {
        for (int c = 0; c < g.n_channels; ++c) {
            if (metal.flags.at(v, c) == 0.0) continue;
            int lo = c;
            while (lo >= 0 && metal.flags.at(v, lo) != 0.0) --lo;
            int hi = c;
            while (hi < g.n_channels && metal.flags.at(v, hi) != 0.0) ++hi;
            double expected;
            if (lo < 0)
                expected = d.at(v, hi);
            else if (hi >= g.n_channels)
                expected = d.at(v, lo);
            else {
                double w = static_cast<double>(c - lo) / static_cast<double>(hi - lo);
                expected = (1.0 - w) * d.at(v, lo) + w * d.at(v, hi);
            }
            CHECK_THAT(nmar.at(v, c), Catch::Matchers::WithinAbs(expected, 1e-9));
        }
    }
}

TEST_CASE("fully flagged sinogram is rejected") {
    auto g = small_parallel(6, 8, 5.0);
    dm::Sinogram d = dm::Sinogram::zeros(g, dm::SinogramKind::line_integral);
    dm::ImageGrid prior = dm::ImageGrid::zeros(8, 8);
    dm::MetalModel metal;
    metal.mask = dm::ImageGrid::zeros(8, 8);
    metal.trace = dm::Sinogram::zeros(g, dm::SinogramKind::trace);
    metal.flags = dm::Sinogram::zeros(g, dm::SinogramKind::mask);
    for (double& f : metal.flags.data) f = 1.0;
    CHECK_THROWS_WITH(dm::nmar_complete(d, prior, metal, g),
                      Catch::Matchers::ContainsSubstring("every ray"));
}

TEST_CASE("decomposition inverts manufactured weight combinations") {
    dm::CalibrationWeights w{0.021, 0.034, 0.017, 0.024};
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> uni(0.0, 1.2);
    dm::ImageGrid c1 = dm::ImageGrid::zeros(12, 12);
    dm::ImageGrid c2 = c1;
    for (double& v : c1.values) v = uni(rng);
    for (double& v : c2.values) v = uni(rng);

    dm::ImageGrid mu_low = c1, mu_high = c1;
    for (size_t i = 0; i < c1.values.size(); ++i) {
        mu_low.values[i] = w.m11 * c1.values[i] + w.m12 * c2.values[i];
        mu_high.values[i] = w.m21 * c1.values[i] + w.m22 * c2.values[i];
    }
    auto [r1, r2] = dm::image_domain_decompose(mu_low, mu_high, w);
    for (size_t i = 0; i < c1.values.size(); ++i) {
        CHECK_THAT(r1.values[i], Catch::Matchers::WithinAbs(c1.values[i], 1e-12));
        CHECK_THAT(r2.values[i], Catch::Matchers::WithinAbs(c2.values[i], 1e-12));
    }

    // zero attenuation pair decomposes to zero
    dm::ImageGrid z = dm::ImageGrid::zeros(12, 12);
    auto [z1, z2] = dm::image_domain_decompose(z, z, w);
    for (double v : z1.values) CHECK(v == 0.0);
    for (double v : z2.values) CHECK(v == 0.0);
}

TEST_CASE("decomposition agrees with an independent per-pixel solver") {
    dm::CalibrationWeights w{0.019, 0.041, 0.015, 0.029};
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> uni(0.0, 0.06);
    dm::ImageGrid mu_low = dm::ImageGrid::zeros(8, 8);
    dm::ImageGrid mu_high = mu_low;
    for (double& v : mu_low.values) v = uni(rng);
    for (double& v : mu_high.values) v = uni(rng);
    auto [c1, c2] = dm::image_domain_decompose(mu_low, mu_high, w);

    // oracle: Gaussian elimination with partial pivoting per pixel
    for (size_t i = 0; i < mu_low.values.size(); ++i) {
        double a0[3] = {w.m11, w.m12, mu_low.values[i]};
        double a1[3] = {w.m21, w.m22, mu_high.values[i]};
        if (std::abs(a1[0]) > std::abs(a0[0]))
            for (int k = 0; k < 3; ++k) std::swap(a0[k], a1[k]);
        const double f = a1[0] / a0[0];
        for (int k = 0; k < 3; ++k) a1[k] -= f * a0[k];
        const double x2 = a1[2] / a1[1];
        const double x1 = (a0[2] - a0[1] * x2) / a0[0];
        CHECK_THAT(c1.values[i], Catch::Matchers::WithinAbs(x1, 1e-10));
        CHECK_THAT(c2.values[i], Catch::Matchers::WithinAbs(x2, 1e-10));
    }
}

TEST_CASE("near-singular weights are rejected") {
    dm::CalibrationWeights w{0.02, 0.03, 0.02, 0.03};
    dm::ImageGrid z = dm::ImageGrid::zeros(4, 4);
    CHECK_THROWS_WITH(dm::image_domain_decompose(z, z, w),
                      Catch::Matchers::ContainsSubstring("near-singular"));
}

TEST_CASE("calibration recovers exact synthetic weights") {
    dm::CalibrationWeights w_true{0.022, 0.035, 0.018, 0.026};
    // piecewise-constant images: three patches with known coefficients
    dm::ImageGrid fbp_low = dm::ImageGrid::zeros(30, 10);
    dm::ImageGrid fbp_high = fbp_low;
    const double cs[3][2] = {{0.9, 0.13}, {0.2, 0.83}, {0.56, 0.46}};
    std::vector<dm::CalibrationRoi> rois;
    for (int k = 0; k < 3; ++k) {
        for (int iy = 0; iy < 10; ++iy)
            for (int ix = 10 * k; ix < 10 * (k + 1); ++ix) {
                fbp_low.at(ix, iy) = w_true.m11 * cs[k][0] + w_true.m12 * cs[k][1];
                fbp_high.at(ix, iy) = w_true.m21 * cs[k][0] + w_true.m22 * cs[k][1];
            }
        dm::CalibrationRoi roi;
        roi.roi = {"patch" + std::to_string(k), -15.0 + 10.0 * k + 5.0, 0.0, 3.0, 3.0};
        roi.c1 = cs[k][0];
        roi.c2 = cs[k][1];
        rois.push_back(roi);
    }
    dm::CalibrationWeights w = dm::calibrate_weights(fbp_low, fbp_high, rois);
    CHECK_THAT(w.m11, Catch::Matchers::WithinAbs(w_true.m11, 1e-10));
    CHECK_THAT(w.m12, Catch::Matchers::WithinAbs(w_true.m12, 1e-10));
    CHECK_THAT(w.m21, Catch::Matchers::WithinAbs(w_true.m21, 1e-10));
    CHECK_THAT(w.m22, Catch::Matchers::WithinAbs(w_true.m22, 1e-10));

    std::vector<dm::CalibrationRoi> one{rois[0]};
    CHECK_THROWS_WITH(dm::calibrate_weights(fbp_low, fbp_high, one),
                      Catch::Matchers::ContainsSubstring("2 ROIs"));
    std::vector<dm::CalibrationRoi> collinear{rois[0], rois[0]};
    CHECK_THROWS_WITH(dm::calibrate_weights(fbp_low, fbp_high, collinear),
                      Catch::Matchers::ContainsSubstring("rank"));
}

TEST_CASE("metal-free initialization reduces to the plain FBP decomposition") {
    auto g = rods_geom();
    auto model = project_model(g);
    dm::PhantomSpec spec = dm::read_phantom(kData + "/phantoms/inserts.ini");
    dm::SimulatedScan scan = dm::simulate_scan(spec, model, 96, 96, 1.0, 1.0, 1e5, 3, false);
    dm::AcquisitionModel scaled = dm::scaled_model(model, 1e5);

    dm::MarInitConfig cfg;
    cfg.nx = 96;
    cfg.ny = 96;
    cfg.weights = dm::effective_energy_weights(model);
    cfg.segment_threshold = 0.5;  // nothing in a metal-free scan reaches this

    dm::MarInitResult with_nmar = dm::mar_initialize(scan.d_low, scan.d_high, scaled, cfg);
    CHECK_FALSE(with_nmar.metal.any_flagged());

    cfg.use_nmar = false;
    dm::MarInitResult plain = dm::mar_initialize(scan.d_low, scan.d_high, scaled, cfg);
    CHECK(with_nmar.c1.values == plain.c1.values);
    CHECK(with_nmar.c2.values == plain.c2.values);
}

TEST_CASE("rod phantom: segmentation, trace and streak reduction") {
    auto g = rods_geom();
    auto model = project_model(g);
    dm::PhantomSpec spec = dm::read_phantom(kData + "/phantoms/rods.ini");
    dm::AcquisitionModel scaled = dm::scaled_model(model, 1e5);

    // water reference: incident-spectrum-weighted attenuation
    dm::MaterialTable water = dm::read_material(kData + "/mu_water.csv");
    double water_level = 0.0;
    for (size_t e = 0; e < water.mu.size(); ++e)
        water_level += model.spectrum_low.counts[e] / model.spectrum_low.total() * water.mu[e];
    CHECK(water_level > 0.01);

    dm::MarInitConfig cfg;
    cfg.nx = 128;
    cfg.ny = 128;
    cfg.weights = dm::effective_energy_weights(model);
    cfg.segment_threshold = 3.0 * water_level;
    cfg.prior.soft_value = water_level;
    cfg.prior.bone_value = 1.6 * water_level;
    cfg.prior.soft_threshold = 0.5 * water_level;
    cfg.prior.bone_threshold = 1.3 * water_level;
    cfg.prior.metal_threshold = 3.0 * water_level;

    // Segmentation of the noise-free scan at 3x the water level. The
    // photon-starvation clamp blooms the apparent rods by a ~1.3 mm rim,
    // so the mask runs about 30-60% over the true rod area; assert the
    // rods are fully covered and the overshoot stays bounded.
    dm::SimulatedScan clean = dm::simulate_scan(spec, model, 128, 128, 1.0, 1.0, 1e5, 11, false);
    dm::MarInitResult quiet = dm::mar_initialize(clean.d_low, clean.d_high, scaled, cfg);
    REQUIRE(quiet.metal.any_flagged());
    double area = 0.0;
    for (double v : quiet.metal.mask.values) area += v;  // 1 mm^2 pixels
    const double rod_area = 2.0 * dm::pi * 12.0 * 12.0;
    CHECK(area >= 0.8 * rod_area);
    CHECK(area <= 1.7 * rod_area);
    for (int iy = 0; iy < 128; ++iy)
        for (int ix = 0; ix < 128; ++ix) {
            const double x = quiet.metal.mask.pixel_x(ix);
            const double y = quiet.metal.mask.pixel_y(iy);
            const bool deep_inside = std::hypot(x + 30.0, y + 30.0) <= 10.5 ||
                                     std::hypot(x - 30.0, y - 30.0) <= 10.5;
            if (deep_inside) CHECK(quiet.metal.mask.at(ix, iy) == 1.0);
        }

    // streak comparison on one seeded noisy simulation
    dm::SimulatedScan scan = dm::simulate_scan(spec, model, 128, 128, 1.0, 1.0, 1e5, 11, true);
    dm::MarInitResult nmar = dm::mar_initialize(scan.d_low, scan.d_high, scaled, cfg);
    REQUIRE(nmar.metal.any_flagged());

    cfg.use_nmar = false;
    dm::MarInitResult plain = dm::mar_initialize(scan.d_low, scan.d_high, scaled, cfg);

    // streak level between the rods, measured on the 60 keV mono image
    dm::MaterialTable b1 = dm::read_material(kData + "/mu_polystyrene.csv");
    dm::MaterialTable b2 = dm::read_material(kData + "/mu_cacl2_23.csv");
    auto streak = [&](const dm::MarInitResult& r) {
        dm::ImageGrid vmi = dm::virtual_mono(r.c1, r.c2, b1, b2, 60.0);
        dm::RoiSpec roi{"between", 0.0, 0.0, 6.0, 6.0};
        const double mean = dm::roi_mean(vmi, roi);
        double var = 0.0;
        long n = 0;
        for (int iy = 0; iy < vmi.ny; ++iy)
            for (int ix = 0; ix < vmi.nx; ++ix)
                if (roi.contains(vmi.pixel_x(ix), vmi.pixel_y(iy))) {
                    var += (vmi.at(ix, iy) - mean) * (vmi.at(ix, iy) - mean);
                    ++n;
                }
        return std::sqrt(var / n);
    };
    CHECK(streak(nmar) < streak(plain));
}

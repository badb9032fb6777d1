#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dm {

inline constexpr double pi = 3.14159265358979323846;

/// Canonical energy grid shared by all spectrum and attenuation tables:
/// 20..150 keV inclusive, 1 keV bins (131 bins).
inline std::vector<double> project_energy_grid() {
    std::vector<double> e(131);
    for (int i = 0; i < 131; ++i) e[i] = 20.0 + i;
    return e;
}

/**
 * 2D scalar field on a regular grid with physical pixel spacing.
 *
 * Values are stored row-major (index = iy*nx + ix). The grid center sits
 * at (origin_x, origin_y) in mm; pixel (ix, iy) is centered at
 *   x = origin_x + (ix - (nx-1)/2) * dx
 *   y = origin_y + (iy - (ny-1)/2) * dy
 */
struct ImageGrid {
    int nx = 0;
    int ny = 0;
    double dx = 1.0;
    double dy = 1.0;
    double origin_x = 0.0;
    double origin_y = 0.0;
    std::vector<double> values;

    static ImageGrid zeros(int nx, int ny, double dx = 1.0, double dy = 1.0,
                           double ox = 0.0, double oy = 0.0) {
        ImageGrid g;
        g.nx = nx;
        g.ny = ny;
        g.dx = dx;
        g.dy = dy;
        g.origin_x = ox;
        g.origin_y = oy;
        g.values.assign(static_cast<size_t>(nx) * static_cast<size_t>(ny), 0.0);
        return g;
    }

    size_t size() const { return values.size(); }
    double& at(int ix, int iy) { return values[static_cast<size_t>(iy) * nx + ix]; }
    double at(int ix, int iy) const { return values[static_cast<size_t>(iy) * nx + ix]; }

    double pixel_x(int ix) const { return origin_x + (ix - 0.5 * (nx - 1)) * dx; }
    double pixel_y(int iy) const { return origin_y + (iy - 0.5 * (ny - 1)) * dy; }

    /// Physical extent (mm) and bounding box of the pixel area.
    double width() const { return nx * dx; }
    double height() const { return ny * dy; }
    double min_x() const { return origin_x - 0.5 * width(); }
    double min_y() const { return origin_y - 0.5 * height(); }

    bool same_shape(const ImageGrid& o) const {
        return nx == o.nx && ny == o.ny && dx == o.dx && dy == o.dy &&
               origin_x == o.origin_x && origin_y == o.origin_y;
    }

    void validate() const {
        if (nx < 1) throw std::invalid_argument("ImageGrid: nx must be >= 1");
        if (ny < 1) throw std::invalid_argument("ImageGrid: ny must be >= 1");
        if (!(dx > 0.0)) throw std::invalid_argument("ImageGrid: dx must be > 0");
        if (!(dy > 0.0)) throw std::invalid_argument("ImageGrid: dy must be > 0");
        if (values.size() != static_cast<size_t>(nx) * static_cast<size_t>(ny))
            throw std::invalid_argument("ImageGrid: values length != nx*ny");
        for (double v : values)
            if (!std::isfinite(v))
                throw std::invalid_argument("ImageGrid: values contain a non-finite entry");
    }
};

enum class GeometryMode { fan_equiangular, parallel };

inline std::string to_string(GeometryMode m) {
    return m == GeometryMode::fan_equiangular ? "fan_equiangular" : "parallel";
}

inline GeometryMode geometry_mode_from_string(const std::string& s) {
    if (s == "fan_equiangular") return GeometryMode::fan_equiangular;
    if (s == "parallel") return GeometryMode::parallel;
    throw std::runtime_error("unknown geometry mode '" + s + "'");
}

/**
 * 2D acquisition geometry for one rotation.
 *
 * fan_equiangular: the source rotates at source_radius mm from the
 * rotation center; channel k sits at fan angle
 *   gamma_k = (k - (n_channels-1)/2) * fan_angle / n_channels
 * relative to the central ray. detector_radius is the center-to-detector
 * distance (kept for completeness of the container format).
 *
 * parallel: rays of view angle beta are parallel; channel k has signed
 * offset s_k = (k - (n_channels-1)/2) * ds with ds = 2*detector_radius /
 * n_channels, i.e. detector_radius doubles as the detector half-width.
 *
 * View v is at angle start_angle + v * angular_range / n_views.
 */
struct FanGeometry {
    int n_views = 0;
    int n_channels = 0;
    double source_radius = 0.0;
    double detector_radius = 0.0;
    double fan_angle = 0.0;
    double start_angle = 0.0;
    double angular_range = 2.0 * pi;
    GeometryMode mode = GeometryMode::fan_equiangular;

    size_t n_rays() const { return static_cast<size_t>(n_views) * n_channels; }

    double delta_beta() const { return angular_range / n_views; }
    double view_angle(int v) const { return start_angle + v * delta_beta(); }

    double delta_gamma() const { return fan_angle / n_channels; }
    double channel_gamma(int k) const { return (k - 0.5 * (n_channels - 1)) * delta_gamma(); }

    double delta_s() const { return 2.0 * detector_radius / n_channels; }
    double channel_offset(int k) const { return (k - 0.5 * (n_channels - 1)) * delta_s(); }

    /// Radius of the circle every ray set covers.
    double fov_radius() const {
        return mode == GeometryMode::fan_equiangular
                   ? source_radius * std::sin(0.5 * fan_angle)
                   : detector_radius;
    }

    bool operator==(const FanGeometry&) const = default;

    void validate() const {
        if (n_views < 2) throw std::invalid_argument("FanGeometry: n_views must be >= 2");
        if (n_channels < 1) throw std::invalid_argument("FanGeometry: n_channels must be >= 1");
        if (!(angular_range > 0.0))
            throw std::invalid_argument("FanGeometry: angular_range must be > 0");
        if (mode == GeometryMode::fan_equiangular) {
            if (!(source_radius > 0.0))
                throw std::invalid_argument("FanGeometry: source_radius must be > 0 in fan mode");
            if (!(fan_angle > 0.0) || fan_angle >= pi)
                throw std::invalid_argument("FanGeometry: fan_angle must lie in (0, pi)");
        } else {
            if (!(detector_radius > 0.0))
                throw std::invalid_argument(
                    "FanGeometry: detector_radius (half-width) must be > 0 in parallel mode");
        }
    }
};

enum class SinogramKind { counts, line_integral, trace, mask };

inline std::string to_string(SinogramKind k) {
    switch (k) {
        case SinogramKind::counts: return "counts";
        case SinogramKind::line_integral: return "line_integral";
        case SinogramKind::trace: return "trace";
        default: return "mask";
    }
}

inline SinogramKind sinogram_kind_from_string(const std::string& s) {
    if (s == "counts") return SinogramKind::counts;
    if (s == "line_integral") return SinogramKind::line_integral;
    if (s == "trace") return SinogramKind::trace;
    if (s == "mask") return SinogramKind::mask;
    throw std::runtime_error("unknown sinogram kind '" + s + "'");
}

/// views x channels measurement array bound to a geometry; data is
/// view-major (index = view*n_channels + channel).
struct Sinogram {
    FanGeometry geometry;
    SinogramKind kind = SinogramKind::counts;
    std::vector<double> data;

    static Sinogram zeros(const FanGeometry& g, SinogramKind kind) {
        Sinogram s;
        s.geometry = g;
        s.kind = kind;
        s.data.assign(g.n_rays(), 0.0);
        return s;
    }

    size_t size() const { return data.size(); }
    double& at(int v, int c) { return data[static_cast<size_t>(v) * geometry.n_channels + c]; }
    double at(int v, int c) const {
        return data[static_cast<size_t>(v) * geometry.n_channels + c];
    }

    void require_kind(SinogramKind k, const std::string& where) const {
        if (kind != k)
            throw std::invalid_argument(where + ": expected sinogram kind '" + to_string(k) +
                                        "', got '" + to_string(kind) + "'");
    }

    void validate() const {
        geometry.validate();
        if (data.size() != geometry.n_rays())
            throw std::invalid_argument("Sinogram: data length != n_views*n_channels");
        for (double v : data) {
            if (!std::isfinite(v))
                throw std::invalid_argument("Sinogram: data contain a non-finite entry");
            if (kind == SinogramKind::counts && v < 0.0)
                throw std::invalid_argument("Sinogram: counts kind requires values >= 0");
            if (kind == SinogramKind::mask && v != 0.0 && v != 1.0)
                throw std::invalid_argument("Sinogram: mask kind requires values in {0,1}");
        }
    }
};

/// Incident photon counts per energy bin for one tube setting.
struct SpectrumTable {
    std::string label;
    std::vector<double> energies;
    std::vector<double> counts;

    double total() const {
        double t = 0.0;
        for (double c : counts) t += c;
        return t;
    }

    void validate() const {
        if (energies.size() != counts.size())
            throw std::invalid_argument("SpectrumTable '" + label +
                                        "': energies and counts differ in length");
        if (energies.empty())
            throw std::invalid_argument("SpectrumTable '" + label + "': empty table");
        for (size_t i = 1; i < energies.size(); ++i)
            if (!(energies[i] > energies[i - 1]))
                throw std::invalid_argument("SpectrumTable '" + label +
                                            "': energies must be strictly increasing");
        for (double c : counts)
            if (!std::isfinite(c) || c < 0.0)
                throw std::invalid_argument("SpectrumTable '" + label +
                                            "': counts must be finite and >= 0");
        if (!(total() > 0.0))
            throw std::invalid_argument("SpectrumTable '" + label + "': total counts must be > 0");
    }
};

/// Linear attenuation (1/mm) per energy bin for one material.
struct MaterialTable {
    std::string name;
    std::vector<double> energies;
    std::vector<double> mu;

    void validate() const {
        if (energies.size() != mu.size())
            throw std::invalid_argument("MaterialTable '" + name +
                                        "': energies and mu differ in length");
        if (energies.empty())
            throw std::invalid_argument("MaterialTable '" + name + "': empty table");
        for (size_t i = 1; i < energies.size(); ++i)
            if (!(energies[i] > energies[i - 1]))
                throw std::invalid_argument("MaterialTable '" + name +
                                            "': energies must be strictly increasing");
        for (double m : mu)
            if (!std::isfinite(m) || m < 0.0)
                throw std::invalid_argument("MaterialTable '" + name +
                                            "': mu must be finite and >= 0");
    }
};

inline bool same_energy_grid(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

/// One material entry of a phantom with its declared basis coefficients.
struct PhantomMaterial {
    std::string name;
    double c1 = 0.0;
    double c2 = 0.0;
};

struct PhantomDisc {
    std::string name;
    std::string material;
    double center_x = 0.0;
    double center_y = 0.0;
    double radius = 0.0;
};

/// Digital phantom: a background disc plus non-overlapping insert discs.
struct PhantomSpec {
    std::vector<PhantomMaterial> materials;
    PhantomDisc background;
    std::vector<PhantomDisc> inserts;

    const PhantomMaterial& material(const std::string& name) const {
        for (const auto& m : materials)
            if (m.name == name) return m;
        throw std::invalid_argument("PhantomSpec: material '" + name + "' not declared");
    }

    void validate() const {
        if (!(background.radius > 0.0))
            throw std::invalid_argument("PhantomSpec: background radius must be > 0");
        material(background.material);
        for (const auto& in : inserts) {
            if (!(in.radius > 0.0))
                throw std::invalid_argument("PhantomSpec: insert '" + in.name +
                                            "' radius must be > 0");
            material(in.material);
            double d = std::hypot(in.center_x - background.center_x,
                                  in.center_y - background.center_y);
            if (d + in.radius > background.radius + 1e-9)
                throw std::invalid_argument("PhantomSpec: insert '" + in.name +
                                            "' lies outside the background disc");
        }
    }
};

/// Axis-aligned rectangular region of interest in mm.
struct RoiSpec {
    std::string name;
    double center_x = 0.0;
    double center_y = 0.0;
    double half_width_x = 0.0;
    double half_width_y = 0.0;

    bool contains(double x, double y) const {
        return std::abs(x - center_x) <= half_width_x && std::abs(y - center_y) <= half_width_y;
    }

    void validate_inside(const ImageGrid& g) const {
        if (!(half_width_x > 0.0) || !(half_width_y > 0.0))
            throw std::invalid_argument("RoiSpec '" + name + "': half widths must be > 0");
        if (center_x - half_width_x < g.min_x() || center_x + half_width_x > g.min_x() + g.width() ||
            center_y - half_width_y < g.min_y() || center_y + half_width_y > g.min_y() + g.height())
            throw std::invalid_argument("RoiSpec '" + name + "': ROI exceeds the image extent");
    }
};

/// ROI mean over pixel centers contained in the rectangle.
inline double roi_mean(const ImageGrid& img, const RoiSpec& roi) {
    double sum = 0.0;
    long n = 0;
    for (int iy = 0; iy < img.ny; ++iy)
        for (int ix = 0; ix < img.nx; ++ix)
            if (roi.contains(img.pixel_x(ix), img.pixel_y(iy))) {
                sum += img.at(ix, iy);
                ++n;
            }
    if (n == 0) throw std::invalid_argument("RoiSpec '" + roi.name + "': contains no pixel centers");
    return sum / n;
}

}  // namespace dm

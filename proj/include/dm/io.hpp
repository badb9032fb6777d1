#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "dm/types.hpp"

namespace dm {

/// Shortest round-trip decimal representation of a double.
inline std::string fmt_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& what) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw std::runtime_error(what + ": cannot parse number '" + s + "'");
    return v;
}

inline long parse_long(const std::string& s, const std::string& what) {
    long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw std::runtime_error(what + ": cannot parse integer '" + s + "'");
    return v;
}

namespace detail {

inline void append_f32_le(std::string& out, float f) {
    uint32_t u = std::bit_cast<uint32_t>(f);
    out.push_back(static_cast<char>(u & 0xff));
    out.push_back(static_cast<char>((u >> 8) & 0xff));
    out.push_back(static_cast<char>((u >> 16) & 0xff));
    out.push_back(static_cast<char>((u >> 24) & 0xff));
}

inline float read_f32_le(const char* p) {
    uint32_t u = (static_cast<uint32_t>(static_cast<unsigned char>(p[0]))) |
                 (static_cast<uint32_t>(static_cast<unsigned char>(p[1])) << 8) |
                 (static_cast<uint32_t>(static_cast<unsigned char>(p[2])) << 16) |
                 (static_cast<uint32_t>(static_cast<unsigned char>(p[3])) << 24);
    return std::bit_cast<float>(u);
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

/// Header parser for the DMIMG1/DMSIN1 containers: "key value" lines up
/// to a lone "data" line, then the raw payload.
struct BinHeader {
    std::map<std::string, std::string> keys;
    size_t payload_offset = 0;

    const std::string& get(const std::string& key, const std::string& path) const {
        auto it = keys.find(key);
        if (it == keys.end())
            throw std::runtime_error(path + ": missing header field '" + key + "'");
        return it->second;
    }
};

inline BinHeader parse_bin_header(const std::string& bytes, const std::string& magic,
                                  const std::string& path) {
    size_t pos = 0;
    auto next_line = [&](std::string& line) -> bool {
        size_t nl = bytes.find('\n', pos);
        if (nl == std::string::npos) return false;
        line.assign(bytes, pos, nl - pos);
        pos = nl + 1;
        return true;
    };
    std::string line;
    if (!next_line(line) || line != magic)
        throw std::runtime_error(path + ": bad magic, expected '" + magic + "'");
    BinHeader h;
    while (true) {
        if (!next_line(line)) throw std::runtime_error(path + ": header truncated before 'data'");
        if (line == "data") break;
        size_t sp = line.find(' ');
        if (sp == std::string::npos || sp == 0)
            throw std::runtime_error(path + ": malformed header line '" + line + "'");
        h.keys[line.substr(0, sp)] = line.substr(sp + 1);
    }
    h.payload_offset = pos;
    return h;
}

inline std::vector<double> parse_f32_payload(const std::string& bytes, size_t offset, size_t count,
                                             const std::string& path) {
    if (bytes.size() - offset != count * 4)
        throw std::runtime_error(path + ": payload has " + std::to_string(bytes.size() - offset) +
                                 " bytes, expected " + std::to_string(count * 4));
    std::vector<double> out(count);
    for (size_t i = 0; i < count; ++i) {
        float f = read_f32_le(bytes.data() + offset + 4 * i);
        if (!std::isfinite(f))
            throw std::runtime_error(path + ": payload value " + std::to_string(i) +
                                     " is not finite");
        out[i] = f;
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Image container "DMIMG1"

inline std::string encode_image(const ImageGrid& img) {
    img.validate();
    std::string out;
    out += "DMIMG1\n";
    out += "nx " + std::to_string(img.nx) + "\n";
    out += "ny " + std::to_string(img.ny) + "\n";
    out += "dx " + fmt_double(img.dx) + "\n";
    out += "dy " + fmt_double(img.dy) + "\n";
    out += "ox " + fmt_double(img.origin_x) + "\n";
    out += "oy " + fmt_double(img.origin_y) + "\n";
    out += "data\n";
    out.reserve(out.size() + img.values.size() * 4);
    for (double v : img.values) detail::append_f32_le(out, static_cast<float>(v));
    return out;
}

inline void write_image(const std::string& path, const ImageGrid& img) {
    detail::write_file(path, encode_image(img));
}

inline ImageGrid decode_image(const std::string& bytes, const std::string& path = "<memory>") {
    auto h = detail::parse_bin_header(bytes, "DMIMG1", path);
    ImageGrid img;
    img.nx = static_cast<int>(parse_long(h.get("nx", path), path + ": nx"));
    img.ny = static_cast<int>(parse_long(h.get("ny", path), path + ": ny"));
    img.dx = parse_double(h.get("dx", path), path + ": dx");
    img.dy = parse_double(h.get("dy", path), path + ": dy");
    img.origin_x = parse_double(h.get("ox", path), path + ": ox");
    img.origin_y = parse_double(h.get("oy", path), path + ": oy");
    if (img.nx < 1 || img.ny < 1) throw std::runtime_error(path + ": nx/ny must be >= 1");
    img.values = detail::parse_f32_payload(
        bytes, h.payload_offset, static_cast<size_t>(img.nx) * static_cast<size_t>(img.ny), path);
    img.validate();
    return img;
}

inline ImageGrid read_image(const std::string& path) {
    return decode_image(detail::read_file(path), path);
}

// ---------------------------------------------------------------------------
// Sinogram container "DMSIN1"

inline std::string encode_sinogram(const Sinogram& s) {
    s.validate();
    const FanGeometry& g = s.geometry;
    std::string out;
    out += "DMSIN1\n";
    out += "n_views " + std::to_string(g.n_views) + "\n";
    out += "n_channels " + std::to_string(g.n_channels) + "\n";
    out += "source_radius " + fmt_double(g.source_radius) + "\n";
    out += "detector_radius " + fmt_double(g.detector_radius) + "\n";
    out += "fan_angle " + fmt_double(g.fan_angle) + "\n";
    out += "start_angle " + fmt_double(g.start_angle) + "\n";
    out += "angular_range " + fmt_double(g.angular_range) + "\n";
    out += "mode " + to_string(g.mode) + "\n";
    out += "kind " + to_string(s.kind) + "\n";
    out += "data\n";
    out.reserve(out.size() + s.data.size() * 4);
    for (double v : s.data) detail::append_f32_le(out, static_cast<float>(v));
    return out;
}

inline void write_sinogram(const std::string& path, const Sinogram& s) {
    detail::write_file(path, encode_sinogram(s));
}

inline Sinogram decode_sinogram(const std::string& bytes, const std::string& path = "<memory>") {
    auto h = detail::parse_bin_header(bytes, "DMSIN1", path);
    Sinogram s;
    FanGeometry& g = s.geometry;
    g.n_views = static_cast<int>(parse_long(h.get("n_views", path), path + ": n_views"));
    g.n_channels = static_cast<int>(parse_long(h.get("n_channels", path), path + ": n_channels"));
    g.source_radius = parse_double(h.get("source_radius", path), path + ": source_radius");
    g.detector_radius = parse_double(h.get("detector_radius", path), path + ": detector_radius");
    g.fan_angle = parse_double(h.get("fan_angle", path), path + ": fan_angle");
    g.start_angle = parse_double(h.get("start_angle", path), path + ": start_angle");
    g.angular_range = parse_double(h.get("angular_range", path), path + ": angular_range");
    g.mode = geometry_mode_from_string(h.get("mode", path));
    s.kind = sinogram_kind_from_string(h.get("kind", path));
    if (g.n_views < 1 || g.n_channels < 1)
        throw std::runtime_error(path + ": n_views/n_channels must be >= 1");
    s.data = detail::parse_f32_payload(bytes, h.payload_offset, g.n_rays(), path);
    s.validate();
    return s;
}

inline Sinogram read_sinogram(const std::string& path) {
    return decode_sinogram(detail::read_file(path), path);
}

// ---------------------------------------------------------------------------
// CSV tables: "energy_keV,value" with a one-line header

inline void write_table(const std::string& path, const std::vector<double>& energies,
                        const std::vector<double>& values,
                        const std::string& value_header = "value") {
    if (energies.size() != values.size())
        throw std::invalid_argument("write_table: energies and values differ in length");
    std::string out = "energy_keV," + value_header + "\n";
    for (size_t i = 0; i < energies.size(); ++i)
        out += fmt_double(energies[i]) + "," + fmt_double(values[i]) + "\n";
    detail::write_file(path, out);
}

/// Parses a 2-column CSV. The one-line header is optional on read.
inline std::pair<std::vector<double>, std::vector<double>> read_table(const std::string& path) {
    std::string text = detail::read_file(path);
    std::vector<double> energies, values;
    std::istringstream ss(text);
    std::string line;
    bool first = true;
    size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 'energy,value'");
        std::string a = line.substr(0, comma), b = line.substr(comma + 1);
        if (first) {
            first = false;
            double probe = 0.0;
            auto res = std::from_chars(a.data(), a.data() + a.size(), probe);
            if (res.ec != std::errc() || res.ptr != a.data() + a.size()) continue;  // header line
        }
        energies.push_back(parse_double(a, path + ":" + std::to_string(lineno) + " energy"));
        values.push_back(parse_double(b, path + ":" + std::to_string(lineno) + " value"));
    }
    if (energies.empty()) throw std::runtime_error(path + ": table has no rows");
    return {energies, values};
}

inline std::string path_stem(const std::string& path) {
    size_t slash = path.find_last_of("/\\");
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    size_t dot = base.find_last_of('.');
    return dot == std::string::npos ? base : base.substr(0, dot);
}

inline SpectrumTable read_spectrum(const std::string& path, const std::string& label = "") {
    auto [e, v] = read_table(path);
    SpectrumTable t;
    t.label = label.empty() ? path_stem(path) : label;
    t.energies = std::move(e);
    t.counts = std::move(v);
    t.validate();
    return t;
}

inline MaterialTable read_material(const std::string& path, const std::string& name = "") {
    auto [e, v] = read_table(path);
    MaterialTable t;
    t.name = name.empty() ? path_stem(path) : name;
    t.energies = std::move(e);
    t.mu = std::move(v);
    t.validate();
    return t;
}

// ---------------------------------------------------------------------------
// INI-style structured text (configs, phantom specs, ROI specs)

struct IniEntry {
    std::string key;
    std::string value;
    size_t line = 0;
};

struct IniSection {
    std::string name;
    std::vector<IniEntry> entries;
    size_t line = 0;

    const std::string* find(const std::string& key) const {
        for (const auto& e : entries)
            if (e.key == key) return &e.value;
        return nullptr;
    }

    const std::string& get(const std::string& key, const std::string& path) const {
        const std::string* v = find(key);
        if (!v)
            throw std::runtime_error(path + ": section [" + name + "] is missing key '" + key + "'");
        return *v;
    }

    double get_double(const std::string& key, const std::string& path) const {
        return parse_double(get(key, path), path + ": [" + name + "] " + key);
    }

    long get_long(const std::string& key, const std::string& path) const {
        return parse_long(get(key, path), path + ": [" + name + "] " + key);
    }
};

struct IniFile {
    std::vector<IniSection> sections;

    const IniSection* find(const std::string& name) const {
        for (const auto& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }
};

inline IniFile parse_ini(const std::string& text, const std::string& path = "<memory>") {
    IniFile ini;
    std::istringstream ss(text);
    std::string line;
    size_t lineno = 0;
    IniSection* cur = nullptr;
    auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t");
        size_t b = s.find_last_not_of(" \t");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(ss, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        size_t cmt = line.find_first_of("#;");
        if (cmt != std::string::npos) line.erase(cmt);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": unterminated section header");
            IniSection s;
            s.name = trim(line.substr(1, line.size() - 2));
            s.line = lineno;
            ini.sections.push_back(std::move(s));
            cur = &ini.sections.back();
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        if (!cur)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": key outside any [section]");
        IniEntry e;
        e.key = trim(line.substr(0, eq));
        e.value = trim(line.substr(eq + 1));
        e.line = lineno;
        if (e.key.empty())
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty key");
        cur->entries.push_back(std::move(e));
    }
    return ini;
}

inline IniFile read_ini(const std::string& path) {
    return parse_ini(detail::read_file(path), path);
}

/// Phantom spec: [material <name>] sections with c1/c2, a [background]
/// section and any number of [insert <name>] sections.
inline PhantomSpec read_phantom(const std::string& path) {
    IniFile ini = read_ini(path);
    PhantomSpec spec;
    bool have_background = false;
    for (const auto& sec : ini.sections) {
        if (sec.name.rfind("material ", 0) == 0) {
            PhantomMaterial m;
            m.name = sec.name.substr(9);
            m.c1 = sec.get_double("c1", path);
            m.c2 = sec.get_double("c2", path);
            spec.materials.push_back(std::move(m));
        } else if (sec.name == "background") {
            spec.background.name = "background";
            spec.background.material = sec.get("material", path);
            spec.background.radius = sec.get_double("radius_mm", path);
            const std::string* cx = sec.find("center_x_mm");
            const std::string* cy = sec.find("center_y_mm");
            spec.background.center_x = cx ? parse_double(*cx, path + ": center_x_mm") : 0.0;
            spec.background.center_y = cy ? parse_double(*cy, path + ": center_y_mm") : 0.0;
            have_background = true;
        } else if (sec.name.rfind("insert ", 0) == 0) {
            PhantomDisc d;
            d.name = sec.name.substr(7);
            d.material = sec.get("material", path);
            d.center_x = sec.get_double("center_x_mm", path);
            d.center_y = sec.get_double("center_y_mm", path);
            d.radius = sec.get_double("radius_mm", path);
            spec.inserts.push_back(std::move(d));
        } else {
            throw std::runtime_error(path + ": unknown section [" + sec.name + "]");
        }
    }
    if (!have_background) throw std::runtime_error(path + ": missing [background] section");
    spec.validate();
    return spec;
}

/// ROI row as stored on disk: geometry plus an optional material label
/// used by the report command to look up reference values.
struct RoiFileEntry {
    RoiSpec roi;
    std::string material;
};

inline std::vector<RoiFileEntry> read_rois(const std::string& path) {
    IniFile ini = read_ini(path);
    std::vector<RoiFileEntry> out;
    for (const auto& sec : ini.sections) {
        if (sec.name.rfind("roi ", 0) != 0)
            throw std::runtime_error(path + ": unknown section [" + sec.name + "]");
        RoiFileEntry e;
        e.roi.name = sec.name.substr(4);
        e.roi.center_x = sec.get_double("center_x_mm", path);
        e.roi.center_y = sec.get_double("center_y_mm", path);
        e.roi.half_width_x = sec.get_double("half_width_x_mm", path);
        e.roi.half_width_y = sec.get_double("half_width_y_mm", path);
        if (const std::string* m = sec.find("material")) e.material = *m;
        out.push_back(std::move(e));
    }
    if (out.empty()) throw std::runtime_error(path + ": no [roi ...] sections");
    return out;
}

// ---------------------------------------------------------------------------
// 8-bit PGM preview with a linear display window

inline void write_pgm(const std::string& path, const ImageGrid& img, double window_lo,
                      double window_hi) {
    if (!(window_hi > window_lo))
        throw std::invalid_argument("write_pgm: window_hi must exceed window_lo");
    std::string out = "P5\n" + std::to_string(img.nx) + " " + std::to_string(img.ny) + "\n255\n";
    out.reserve(out.size() + img.size());
    double scale = 255.0 / (window_hi - window_lo);
    for (int iy = 0; iy < img.ny; ++iy)
        for (int ix = 0; ix < img.nx; ++ix) {
            double t = (img.at(ix, iy) - window_lo) * scale;
            int v = static_cast<int>(std::lround(std::clamp(t, 0.0, 255.0)));
            out.push_back(static_cast<char>(v));
        }
    detail::write_file(path, out);
}

}  // namespace dm

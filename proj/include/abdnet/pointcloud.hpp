#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "abdnet/rng.hpp"
#include "abdnet/vec3.hpp"

namespace abd {

/// The four basic shapes every point is classified into.
enum class ShapeLabel : std::uint8_t { Plane = 1, Sphere = 2, Cylinder = 3, Cone = 4 };

constexpr std::size_t kNumShapeLabels = 4;

inline ShapeLabel shape_label_from_int(int v) {
    if (v < 1 || v > 4) {
        throw std::invalid_argument("shape label " + std::to_string(v) + " outside {1,2,3,4}");
    }
    return static_cast<ShapeLabel>(v);
}

inline const char* shape_label_name(ShapeLabel l) {
    switch (l) {
        case ShapeLabel::Plane: return "plane";
        case ShapeLabel::Sphere: return "sphere";
        case ShapeLabel::Cylinder: return "cylinder";
        case ShapeLabel::Cone: return "cone";
    }
    return "?";
}

/// Fixed visualization palette: plane black, sphere blue, cylinder green,
/// cone magenta.
inline std::array<std::uint8_t, 3> shape_color(ShapeLabel l) {
    switch (l) {
        case ShapeLabel::Plane: return {0, 0, 0};
        case ShapeLabel::Sphere: return {0, 0, 255};
        case ShapeLabel::Cylinder: return {0, 255, 0};
        case ShapeLabel::Cone: return {255, 0, 255};
    }
    return {0, 0, 0};
}

/// A point set with optional per-point unit normals and shape labels.
/// Arrays, when present, are parallel to `points`.
struct PointCloud {
    std::vector<std::array<float, 3>> points;
    std::vector<std::array<float, 3>> normals;
    std::vector<ShapeLabel> labels;
    int category = -1;

    std::size_t size() const { return points.size(); }
    bool has_normals() const { return !normals.empty(); }
    bool has_labels() const { return !labels.empty(); }

    void validate() const {
        if (points.empty()) throw std::invalid_argument("point cloud: empty");
        if (has_normals() && normals.size() != points.size()) {
            throw std::invalid_argument("point cloud: " + std::to_string(normals.size()) + " normals for " +
                                        std::to_string(points.size()) + " points");
        }
        if (has_labels() && labels.size() != points.size()) {
            throw std::invalid_argument("point cloud: " + std::to_string(labels.size()) + " labels for " +
                                        std::to_string(points.size()) + " points");
        }
        for (const auto& n : normals) {
            const double len = norm(Vec3(n));
            if (std::abs(len - 1.0) > 1e-3) {
                throw std::invalid_argument("point cloud: non-unit normal of length " + std::to_string(len));
            }
        }
    }
};

struct TriMesh {
    std::vector<std::array<float, 3>> vertices;
    std::vector<std::array<std::uint32_t, 3>> faces;
};

enum class FileFormat { Xyz, Ply, Off };

inline FileFormat format_from_path(const std::string& path) {
    auto ext = std::filesystem::path(path).extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".xyz" || ext == ".txt") return FileFormat::Xyz;
    if (ext == ".ply") return FileFormat::Ply;
    if (ext == ".off") return FileFormat::Off;
    throw std::invalid_argument("cannot infer point cloud format from path '" + path + "'");
}

struct ParseError : std::runtime_error {
    ParseError(const std::string& path, std::size_t line, const std::string& what)
        : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_number(line) {}
    std::size_t line_number;
};

namespace detail {

// all text formats serialize floats with 6 decimal places
inline void append_f(std::string& out, double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    out += buf;
}

inline bool parse_fields(const std::string& line, std::vector<double>& out) {
    out.clear();
    std::istringstream is(line);
    double v;
    while (is >> v) out.push_back(v);
    return is.eof();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// XYZ: one point per line, "x y z [nx ny nz] [label]", '#' comments
// ---------------------------------------------------------------------------

inline void save_xyz(const PointCloud& c, const std::string& path) {
    std::string out;
    out.reserve(c.size() * 64);
    for (std::size_t i = 0; i < c.size(); ++i) {
        detail::append_f(out, c.points[i][0]);
        out += ' ';
        detail::append_f(out, c.points[i][1]);
        out += ' ';
        detail::append_f(out, c.points[i][2]);
        if (c.has_normals()) {
            for (int j = 0; j < 3; ++j) {
                out += ' ';
                detail::append_f(out, c.normals[i][j]);
            }
        }
        if (c.has_labels()) {
            out += ' ';
            out += std::to_string(static_cast<int>(c.labels[i]));
        }
        out += '\n';
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << out;
}

inline PointCloud load_xyz(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    PointCloud c;
    std::string line;
    std::vector<double> v;
    std::size_t lineno = 0;
    std::size_t fields = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (!detail::parse_fields(line, v)) throw ParseError(path, lineno, "unparseable field");
        if (v.size() != 3 && v.size() != 4 && v.size() != 6 && v.size() != 7) {
            throw ParseError(path, lineno, "expected 3, 4, 6 or 7 fields, got " + std::to_string(v.size()));
        }
        if (fields == 0) {
            fields = v.size();
        } else if (v.size() != fields) {
            throw ParseError(path, lineno, "inconsistent field count");
        }
        c.points.push_back({static_cast<float>(v[0]), static_cast<float>(v[1]), static_cast<float>(v[2])});
        std::size_t p = 3;
        if (fields == 6 || fields == 7) {
            c.normals.push_back({static_cast<float>(v[3]), static_cast<float>(v[4]), static_cast<float>(v[5])});
            p = 6;
        }
        if (fields == 4 || fields == 7) {
            const double lv = v[p];
            if (lv != std::floor(lv)) throw ParseError(path, lineno, "non-integer label");
            try {
                c.labels.push_back(shape_label_from_int(static_cast<int>(lv)));
            } catch (const std::invalid_argument& e) {
                throw ParseError(path, lineno, e.what());
            }
        }
    }
    if (c.points.empty()) throw ParseError(path, lineno, "no points");
    return c;
}

// ---------------------------------------------------------------------------
// ASCII PLY 1.0 point clouds
// ---------------------------------------------------------------------------

/// Writes vertices with optional normals, per-label colors (ColorMap) and a
/// uchar label property. `color_override`, when given, wins over the palette
/// (used to flag query points in attention exports).
inline void save_ply(const PointCloud& c, const std::string& path, bool colorize,
                     const std::vector<std::array<std::uint8_t, 3>>* color_override = nullptr) {
    if (colorize && !c.has_labels() && !color_override) {
        throw std::invalid_argument("save_ply: colorize requested but cloud has no labels");
    }
    const bool colors = colorize || color_override != nullptr;
    std::string out;
    out += "ply\nformat ascii 1.0\nelement vertex " + std::to_string(c.size()) + "\n";
    out += "property float x\nproperty float y\nproperty float z\n";
    if (c.has_normals()) out += "property float nx\nproperty float ny\nproperty float nz\n";
    if (colors) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    if (c.has_labels()) out += "property uchar label\n";
    out += "end_header\n";
    for (std::size_t i = 0; i < c.size(); ++i) {
        detail::append_f(out, c.points[i][0]);
        out += ' ';
        detail::append_f(out, c.points[i][1]);
        out += ' ';
        detail::append_f(out, c.points[i][2]);
        if (c.has_normals()) {
            for (int j = 0; j < 3; ++j) {
                out += ' ';
                detail::append_f(out, c.normals[i][j]);
            }
        }
        if (colors) {
            std::array<std::uint8_t, 3> rgb{0, 0, 0};
            if (color_override && i < color_override->size()) {
                rgb = (*color_override)[i];
            } else if (c.has_labels()) {
                rgb = shape_color(c.labels[i]);
            }
            for (int j = 0; j < 3; ++j) out += ' ' + std::to_string(int(rgb[j]));
        }
        if (c.has_labels()) out += ' ' + std::to_string(static_cast<int>(c.labels[i]));
        out += '\n';
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << out;
}

inline PointCloud load_ply(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(f, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) return true;
        }
        return false;
    };
    if (!next_line() || line != "ply") throw ParseError(path, lineno, "missing 'ply' magic");
    if (!next_line() || line.rfind("format ascii 1.0", 0) != 0) {
        throw ParseError(path, lineno, "only 'format ascii 1.0' is supported");
    }
    std::size_t n_vertex = 0;
    std::vector<std::string> props;
    bool in_vertex = false;
    while (next_line()) {
        std::istringstream is(line);
        std::string tok;
        is >> tok;
        if (tok == "comment") continue;
        if (tok == "element") {
            std::string name;
            std::size_t count;
            is >> name >> count;
            if (name == "vertex") {
                n_vertex = count;
                in_vertex = true;
            } else {
                in_vertex = false;
            }
        } else if (tok == "property") {
            if (!in_vertex) continue;
            std::string type, name;
            is >> type >> name;
            props.push_back(name);
        } else if (tok == "end_header") {
            break;
        } else {
            throw ParseError(path, lineno, "unexpected header token '" + tok + "'");
        }
    }
    if (n_vertex == 0) throw ParseError(path, lineno, "no vertex element");
    auto index_of = [&](const char* name) -> int {
        for (std::size_t i = 0; i < props.size(); ++i) {
            if (props[i] == name) return static_cast<int>(i);
        }
        return -1;
    };
    const int ix = index_of("x"), iy = index_of("y"), iz = index_of("z");
    if (ix < 0 || iy < 0 || iz < 0) throw ParseError(path, lineno, "vertex element lacks x/y/z");
    const int inx = index_of("nx"), iny = index_of("ny"), inz = index_of("nz");
    const int il = index_of("label");

    PointCloud c;
    c.points.reserve(n_vertex);
    std::vector<double> v;
    for (std::size_t i = 0; i < n_vertex; ++i) {
        if (!next_line()) throw ParseError(path, lineno, "unexpected end of file in vertex data");
        if (!detail::parse_fields(line, v) || v.size() != props.size()) {
            throw ParseError(path, lineno, "expected " + std::to_string(props.size()) + " vertex fields");
        }
        c.points.push_back({static_cast<float>(v[ix]), static_cast<float>(v[iy]), static_cast<float>(v[iz])});
        if (inx >= 0) {
            c.normals.push_back(
                {static_cast<float>(v[inx]), static_cast<float>(v[iny]), static_cast<float>(v[inz])});
        }
        if (il >= 0) {
            try {
                c.labels.push_back(shape_label_from_int(static_cast<int>(v[il])));
            } catch (const std::invalid_argument& e) {
                throw ParseError(path, lineno, e.what());
            }
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// OFF meshes (load + triangle-fan triangulation); point clouds save as
// vertex-only OFF
// ---------------------------------------------------------------------------

inline TriMesh load_off(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(f, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
        }
        return false;
    };
    if (!next_line()) throw ParseError(path, lineno, "empty file");
    std::size_t nv = 0, nf = 0, ne = 0;
    if (line.rfind("OFF", 0) == 0) {
        std::string rest = line.substr(3);
        std::istringstream is(rest);
        if (!(is >> nv >> nf >> ne)) {
            if (!next_line()) throw ParseError(path, lineno, "missing count line");
            std::istringstream is2(line);
            if (!(is2 >> nv >> nf >> ne)) throw ParseError(path, lineno, "bad count line");
        }
    } else {
        throw ParseError(path, lineno, "missing OFF magic");
    }
    TriMesh m;
    m.vertices.reserve(nv);
    for (std::size_t i = 0; i < nv; ++i) {
        if (!next_line()) throw ParseError(path, lineno, "unexpected end of file in vertices");
        std::istringstream is(line);
        double x, y, z;
        if (!(is >> x >> y >> z)) throw ParseError(path, lineno, "bad vertex");
        m.vertices.push_back({static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)});
    }
    for (std::size_t i = 0; i < nf; ++i) {
        if (!next_line()) throw ParseError(path, lineno, "unexpected end of file in faces");
        std::istringstream is(line);
        std::size_t k;
        if (!(is >> k) || k < 3) throw ParseError(path, lineno, "bad face");
        std::vector<std::uint32_t> poly(k);
        for (auto& idx : poly) {
            if (!(is >> idx)) throw ParseError(path, lineno, "bad face index");
            if (idx >= m.vertices.size()) throw ParseError(path, lineno, "face index out of range");
        }
        for (std::size_t t = 1; t + 1 < k; ++t) m.faces.push_back({poly[0], poly[t], poly[t + 1]});
    }
    return m;
}

inline void save_off(const PointCloud& c, const std::string& path) {
    std::string out = "OFF\n" + std::to_string(c.size()) + " 0 0\n";
    for (const auto& p : c.points) {
        detail::append_f(out, p[0]);
        out += ' ';
        detail::append_f(out, p[1]);
        out += ' ';
        detail::append_f(out, p[2]);
        out += '\n';
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << out;
}

// ---------------------------------------------------------------------------
// format dispatch
// ---------------------------------------------------------------------------

inline void save(const PointCloud& c, const std::string& path, FileFormat fmt, bool colorize = false) {
    switch (fmt) {
        case FileFormat::Xyz: save_xyz(c, path); return;
        case FileFormat::Ply: save_ply(c, path, colorize); return;
        case FileFormat::Off: save_off(c, path); return;
    }
}

inline PointCloud load(const std::string& path, FileFormat fmt) {
    switch (fmt) {
        case FileFormat::Xyz: return load_xyz(path);
        case FileFormat::Ply: return load_ply(path);
        case FileFormat::Off: {
            TriMesh m = load_off(path);
            PointCloud c;
            c.points = std::move(m.vertices);
            if (c.points.empty()) throw std::runtime_error("'" + path + "': OFF mesh has no vertices");
            return c;
        }
    }
    throw std::invalid_argument("unknown format");
}

inline PointCloud load(const std::string& path) { return load(path, format_from_path(path)); }

// ---------------------------------------------------------------------------
// normalization / sampling / augmentation
// ---------------------------------------------------------------------------

/// Centers the cloud at the origin and scales so the farthest point sits on
/// the unit sphere. Normals are unaffected.
inline PointCloud normalize_unit_sphere(const PointCloud& c) {
    if (c.points.empty()) throw std::invalid_argument("normalize: empty cloud");
    Vec3 centroid;
    for (const auto& p : c.points) centroid += Vec3(p);
    centroid = centroid * (1.0 / static_cast<double>(c.size()));
    double max_norm = 0;
    for (const auto& p : c.points) max_norm = std::max(max_norm, norm(Vec3(p) - centroid));
    if (max_norm < 1e-12) throw std::invalid_argument("normalize: degenerate cloud (all points coincide)");
    PointCloud out = c;
    const double inv = 1.0 / max_norm;
    for (auto& p : out.points) p = ((Vec3(p) - centroid) * inv).to_f32();
    return out;
}

/// Uniform draw of n points: without replacement when n <= N (n == N gives a
/// permutation), with replacement otherwise. Normals/labels ride along.
inline PointCloud uniform_sample(const PointCloud& c, std::size_t n, Rng& rng) {
    if (c.points.empty()) throw std::invalid_argument("uniform_sample: empty cloud");
    if (n == 0) throw std::invalid_argument("uniform_sample: n must be positive");
    std::vector<std::size_t> pick;
    if (n <= c.size()) {
        pick = rng.sample_without_replacement(c.size(), n);
    } else {
        pick.resize(n);
        for (auto& i : pick) i = rng.below(c.size());
    }
    PointCloud out;
    out.category = c.category;
    out.points.reserve(n);
    for (std::size_t i : pick) {
        out.points.push_back(c.points[i]);
        if (c.has_normals()) out.normals.push_back(c.normals[i]);
        if (c.has_labels()) out.labels.push_back(c.labels[i]);
    }
    return out;
}

struct AugmentSpec {
    bool rotate_z = false;
    bool rotate_so3 = false;  // full random rotation, off by default
    double scale_lo = 1.0;
    double scale_hi = 1.0;
    double dropout_p = 0.0;
    double noise_sigma = 0.0;

    void validate() const {
        if (scale_lo <= 0 || scale_hi < scale_lo) throw std::invalid_argument("augment: bad scale range");
        if (dropout_p < 0 || dropout_p >= 1) throw std::invalid_argument("augment: dropout_p outside [0,1)");
        if (noise_sigma < 0) throw std::invalid_argument("augment: negative noise sigma");
    }
    bool is_identity() const {
        return !rotate_z && !rotate_so3 && scale_lo == 1.0 && scale_hi == 1.0 && dropout_p == 0.0 &&
               noise_sigma == 0.0;
    }
};

namespace detail {

inline void apply_rotation(PointCloud& c, const std::array<Vec3, 3>& rows) {
    for (auto& p : c.points) {
        const Vec3 v(p);
        p = Vec3{dot(rows[0], v), dot(rows[1], v), dot(rows[2], v)}.to_f32();
    }
    for (auto& n : c.normals) {
        const Vec3 v(n);
        n = Vec3{dot(rows[0], v), dot(rows[1], v), dot(rows[2], v)}.to_f32();
    }
}

}  // namespace detail

/// Order of operations: rotation, scaling, point dropout, Gaussian jitter.
/// Dropout replaces a point (with its normal and label) by point 0, keeping
/// N fixed. Disabled stages consume no random draws.
inline PointCloud augment(const PointCloud& c, const AugmentSpec& spec, Rng& rng) {
    spec.validate();
    PointCloud out = c;
    if (spec.rotate_so3) {
        // Shoemake's uniform random rotation from three uniforms
        const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
        const double two_pi = 6.283185307179586476925286766559;
        const double qx = std::sqrt(1 - u1) * std::sin(two_pi * u2);
        const double qy = std::sqrt(1 - u1) * std::cos(two_pi * u2);
        const double qz = std::sqrt(u1) * std::sin(two_pi * u3);
        const double qw = std::sqrt(u1) * std::cos(two_pi * u3);
        detail::apply_rotation(out, {Vec3{1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)},
                                     Vec3{2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)},
                                     Vec3{2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)}});
    } else if (spec.rotate_z) {
        const double a = rng.uniform(0.0, 6.283185307179586476925286766559);
        const double ca = std::cos(a), sa = std::sin(a);
        detail::apply_rotation(out, {Vec3{ca, -sa, 0}, Vec3{sa, ca, 0}, Vec3{0, 0, 1}});
    }
    if (spec.scale_lo != 1.0 || spec.scale_hi != 1.0) {
        const double s = spec.scale_lo == spec.scale_hi ? spec.scale_lo : rng.uniform(spec.scale_lo, spec.scale_hi);
        for (auto& p : out.points) p = (Vec3(p) * s).to_f32();
    }
    if (spec.dropout_p > 0) {
        for (std::size_t i = 1; i < out.size(); ++i) {
            if (rng.uniform() < spec.dropout_p) {
                out.points[i] = out.points[0];
                if (out.has_normals()) out.normals[i] = out.normals[0];
                if (out.has_labels()) out.labels[i] = out.labels[0];
            }
        }
    }
    if (spec.noise_sigma > 0) {
        for (auto& p : out.points) {
            for (int j = 0; j < 3; ++j) p[j] = static_cast<float>(p[j] + rng.normal(0.0, spec.noise_sigma));
        }
    }
    return out;
}

/// Area-weighted triangle selection with uniform barycentric placement;
/// each sample carries the face normal.
inline PointCloud sample_mesh(const TriMesh& mesh, std::size_t n, Rng& rng) {
    if (mesh.faces.empty()) throw std::invalid_argument("sample_mesh: mesh has no faces");
    std::vector<double> cum(mesh.faces.size());
    std::vector<Vec3> face_normal(mesh.faces.size());
    double total = 0;
    for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
        const Vec3 a(mesh.vertices[mesh.faces[i][0]]);
        const Vec3 b(mesh.vertices[mesh.faces[i][1]]);
        const Vec3 c(mesh.vertices[mesh.faces[i][2]]);
        const Vec3 cr = cross(b - a, c - a);
        const double area = 0.5 * norm(cr);
        total += area;
        cum[i] = total;
        face_normal[i] = area > 0 ? normalized(cr) : Vec3{0, 0, 1};
    }
    if (total <= 0) throw std::invalid_argument("sample_mesh: degenerate mesh (zero total area)");
    PointCloud out;
    out.points.reserve(n);
    out.normals.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        const double r = rng.uniform() * total;
        const std::size_t f =
            static_cast<std::size_t>(std::lower_bound(cum.begin(), cum.end(), r) - cum.begin());
        const std::size_t fi = std::min(f, mesh.faces.size() - 1);
        const Vec3 a(mesh.vertices[mesh.faces[fi][0]]);
        const Vec3 b(mesh.vertices[mesh.faces[fi][1]]);
        const Vec3 c(mesh.vertices[mesh.faces[fi][2]]);
        double u = rng.uniform(), v = rng.uniform();
        if (u + v > 1) {
            u = 1 - u;
            v = 1 - v;
        }
        out.points.push_back((a + (b - a) * u + (c - a) * v).to_f32());
        out.normals.push_back(face_normal[fi].to_f32());
    }
    return out;
}

}  // namespace abd

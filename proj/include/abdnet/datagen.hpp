#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "abdnet/pointcloud.hpp"
#include "abdnet/rng.hpp"
#include "abdnet/vec3.hpp"

namespace abd {

enum class PlanarRegion { Rectangle, Disk, Annulus };

/// One parametric surface patch with exact analytic normals and an exact
/// distance to the bounded patch. Planes carry a region (rectangle, disk or
/// annulus); cylinders are lateral surfaces; cones are lateral frusta
/// measured along the axis from the apex.
struct PrimitiveSpec {
    ShapeLabel kind = ShapeLabel::Plane;
    Vec3 center;          // plane center / sphere center / cylinder base / cone apex
    Vec3 axis{0, 0, 1};   // plane normal / cylinder / cone axis (unit)
    Vec3 u_axis{1, 0, 0}; // in-plane reference direction (unit, orthogonal to axis)
    PlanarRegion region = PlanarRegion::Rectangle;
    double half_u = 0, half_v = 0;   // rectangle half extents
    double r_inner = 0, r_outer = 0; // disk(r_inner=0)/annulus radii
    double radius = 0;               // sphere / cylinder
    double height = 0;               // cylinder
    double half_angle = 0;           // cone, radians, in (0, pi/2)
    double t0 = 0, t1 = 0;           // cone frustum range along the axis

    static PrimitiveSpec plane_rect(Vec3 c, Vec3 n, Vec3 u, double hu, double hv) {
        PrimitiveSpec s;
        s.kind = ShapeLabel::Plane;
        s.center = c;
        s.axis = normalized(n);
        s.u_axis = normalized(u - s.axis * dot(u, s.axis));
        s.region = PlanarRegion::Rectangle;
        s.half_u = hu;
        s.half_v = hv;
        s.validate();
        return s;
    }
    static PrimitiveSpec plane_disk(Vec3 c, Vec3 n, double r) { return plane_annulus(c, n, 0.0, r); }
    static PrimitiveSpec plane_annulus(Vec3 c, Vec3 n, double r_in, double r_out) {
        PrimitiveSpec s;
        s.kind = ShapeLabel::Plane;
        s.center = c;
        s.axis = normalized(n);
        s.u_axis = any_orthonormal(s.axis);
        s.region = r_in > 0 ? PlanarRegion::Annulus : PlanarRegion::Disk;
        s.r_inner = r_in;
        s.r_outer = r_out;
        s.validate();
        return s;
    }
    static PrimitiveSpec sphere(Vec3 c, double r) {
        PrimitiveSpec s;
        s.kind = ShapeLabel::Sphere;
        s.center = c;
        s.radius = r;
        s.validate();
        return s;
    }
    static PrimitiveSpec cylinder(Vec3 base, Vec3 ax, double r, double h) {
        PrimitiveSpec s;
        s.kind = ShapeLabel::Cylinder;
        s.center = base;
        s.axis = normalized(ax);
        s.u_axis = any_orthonormal(s.axis);
        s.radius = r;
        s.height = h;
        s.validate();
        return s;
    }
    static PrimitiveSpec cone(Vec3 apex, Vec3 ax, double half_angle, double from_apex, double to_apex) {
        PrimitiveSpec s;
        s.kind = ShapeLabel::Cone;
        s.center = apex;
        s.axis = normalized(ax);
        s.u_axis = any_orthonormal(s.axis);
        s.half_angle = half_angle;
        s.t0 = from_apex;
        s.t1 = to_apex;
        s.validate();
        return s;
    }

    void validate() const {
        switch (kind) {
            case ShapeLabel::Plane:
                if (region == PlanarRegion::Rectangle) {
                    if (half_u <= 0 || half_v <= 0) throw std::invalid_argument("plane: non-positive extent");
                } else if (r_outer <= 0 || r_inner < 0 || r_inner >= r_outer) {
                    throw std::invalid_argument("plane: bad disk/annulus radii");
                }
                break;
            case ShapeLabel::Sphere:
                if (radius <= 0) throw std::invalid_argument("sphere: non-positive radius");
                break;
            case ShapeLabel::Cylinder:
                if (radius <= 0 || height <= 0) throw std::invalid_argument("cylinder: non-positive size");
                break;
            case ShapeLabel::Cone:
                if (half_angle <= 0 || half_angle >= 1.5707963267948966) {
                    throw std::invalid_argument("cone: half-angle outside (0, pi/2)");
                }
                if (t0 < 0 || t1 <= t0) throw std::invalid_argument("cone: bad frustum range");
                break;
        }
    }

    double area() const {
        constexpr double pi = 3.14159265358979323846;
        switch (kind) {
            case ShapeLabel::Plane:
                return region == PlanarRegion::Rectangle ? 4 * half_u * half_v
                                                         : pi * (r_outer * r_outer - r_inner * r_inner);
            case ShapeLabel::Sphere: return 4 * pi * radius * radius;
            case ShapeLabel::Cylinder: return 2 * pi * radius * height;
            case ShapeLabel::Cone:
                return pi * std::tan(half_angle) / std::cos(half_angle) * (t1 * t1 - t0 * t0);
        }
        return 0;
    }

    /// Exact Euclidean distance from p to the bounded surface patch.
    double residual(const Vec3& p) const {
        const Vec3 d = p - center;
        switch (kind) {
            case ShapeLabel::Plane: {
                const double h = dot(d, axis);
                const Vec3 q = d - axis * h;
                if (region == PlanarRegion::Rectangle) {
                    const Vec3 v_axis = cross(axis, u_axis);
                    const double du = std::max(std::abs(dot(q, u_axis)) - half_u, 0.0);
                    const double dv = std::max(std::abs(dot(q, v_axis)) - half_v, 0.0);
                    return std::sqrt(h * h + du * du + dv * dv);
                }
                const double rho = norm(q);
                const double dr = rho < r_inner ? r_inner - rho : (rho > r_outer ? rho - r_outer : 0.0);
                return std::sqrt(h * h + dr * dr);
            }
            case ShapeLabel::Sphere: return std::abs(norm(d) - radius);
            case ShapeLabel::Cylinder: {
                const double t = dot(d, axis);
                const double rho = norm(d - axis * t);
                const double dt = t < 0 ? -t : (t > height ? t - height : 0.0);
                const double dr = rho - radius;
                return std::sqrt(dr * dr + dt * dt);
            }
            case ShapeLabel::Cone: {
                // distance in the (axial, radial) profile plane to the slant segment
                const double t = dot(d, axis);
                const double rho = norm(d - axis * t);
                const double ta = std::tan(half_angle);
                const double ax0 = t0, ay0 = t0 * ta, ax1 = t1, ay1 = t1 * ta;
                const double vx = ax1 - ax0, vy = ay1 - ay0;
                const double s = std::clamp(((t - ax0) * vx + (rho - ay0) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
                const double px = ax0 + s * vx, py = ay0 + s * vy;
                return std::hypot(t - px, rho - py);
            }
        }
        return 0;
    }

    /// Surface normal at a point assumed on (or near) the patch.
    Vec3 normal_at(const Vec3& p) const {
        const Vec3 d = p - center;
        switch (kind) {
            case ShapeLabel::Plane: return axis;
            case ShapeLabel::Sphere: return normalized(d);
            case ShapeLabel::Cylinder: return normalized(d - axis * dot(d, axis));
            case ShapeLabel::Cone: {
                const Vec3 radial = normalized(d - axis * dot(d, axis));
                return radial * std::cos(half_angle) - axis * std::sin(half_angle);
            }
        }
        return {0, 0, 1};
    }

    /// n points uniform by surface area, with analytic normals.
    void sample(std::size_t n, Rng& rng, std::vector<Vec3>& pts, std::vector<Vec3>& nrm) const {
        validate();
        const Vec3 v_axis = cross(axis, u_axis);
        for (std::size_t i = 0; i < n; ++i) {
            Vec3 p, nv;
            switch (kind) {
                case ShapeLabel::Plane: {
                    if (region == PlanarRegion::Rectangle) {
                        p = center + u_axis * rng.uniform(-half_u, half_u) + v_axis * rng.uniform(-half_v, half_v);
                    } else {
                        const double rho = std::sqrt(rng.uniform(r_inner * r_inner, r_outer * r_outer));
                        const double a = rng.uniform(0.0, 6.283185307179586476925286766559);
                        p = center + u_axis * (rho * std::cos(a)) + v_axis * (rho * std::sin(a));
                    }
                    nv = axis;
                    break;
                }
                case ShapeLabel::Sphere: {
                    Vec3 dir;
                    do {
                        dir = {rng.normal(), rng.normal(), rng.normal()};
                    } while (norm(dir) < 1e-9);
                    dir = normalized(dir);
                    p = center + dir * radius;
                    nv = dir;
                    break;
                }
                case ShapeLabel::Cylinder: {
                    const double a = rng.uniform(0.0, 6.283185307179586476925286766559);
                    const Vec3 radial = u_axis * std::cos(a) + v_axis * std::sin(a);
                    p = center + axis * rng.uniform(0.0, height) + radial * radius;
                    nv = radial;
                    break;
                }
                case ShapeLabel::Cone: {
                    // area element grows linearly with distance from the apex
                    const double t = std::sqrt(rng.uniform(t0 * t0, t1 * t1));
                    const double a = rng.uniform(0.0, 6.283185307179586476925286766559);
                    const Vec3 radial = u_axis * std::cos(a) + v_axis * std::sin(a);
                    p = center + axis * t + radial * (t * std::tan(half_angle));
                    nv = radial * std::cos(half_angle) - axis * std::sin(half_angle);
                    break;
                }
            }
            pts.push_back(p);
            nrm.push_back(nv);
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["kind"] = static_cast<int>(kind);
        j["center"] = {center.x, center.y, center.z};
        j["axis"] = {axis.x, axis.y, axis.z};
        j["u_axis"] = {u_axis.x, u_axis.y, u_axis.z};
        j["region"] = static_cast<int>(region);
        j["half_u"] = half_u;
        j["half_v"] = half_v;
        j["r_inner"] = r_inner;
        j["r_outer"] = r_outer;
        j["radius"] = radius;
        j["height"] = height;
        j["half_angle"] = half_angle;
        j["t0"] = t0;
        j["t1"] = t1;
        return j;
    }

    static PrimitiveSpec from_json(const nlohmann::json& j) {
        auto vec = [&](const char* key) {
            const auto& a = j.at(key);
            return Vec3{a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()};
        };
        PrimitiveSpec s;
        s.kind = shape_label_from_int(j.at("kind").get<int>());
        s.center = vec("center");
        s.axis = vec("axis");
        s.u_axis = vec("u_axis");
        s.region = static_cast<PlanarRegion>(j.at("region").get<int>());
        s.half_u = j.at("half_u").get<double>();
        s.half_v = j.at("half_v").get<double>();
        s.r_inner = j.at("r_inner").get<double>();
        s.r_outer = j.at("r_outer").get<double>();
        s.radius = j.at("radius").get<double>();
        s.height = j.at("height").get<double>();
        s.half_angle = j.at("half_angle").get<double>();
        s.t0 = j.at("t0").get<double>();
        s.t1 = j.at("t1").get<double>();
        s.validate();
        return s;
    }
};

/// Labeled cloud from one primitive.
inline PointCloud sample_primitive(const PrimitiveSpec& spec, std::size_t n, Rng& rng) {
    std::vector<Vec3> pts, nrm;
    pts.reserve(n);
    nrm.reserve(n);
    spec.sample(n, rng, pts, nrm);
    PointCloud c;
    for (std::size_t i = 0; i < n; ++i) {
        c.points.push_back(pts[i].to_f32());
        c.normals.push_back(nrm[i].to_f32());
        c.labels.push_back(spec.kind);
    }
    return c;
}

// ---------------------------------------------------------------------------
// composite objects
// ---------------------------------------------------------------------------

/// A multi-primitive object: primitives plus per-primitive point budgets.
struct CompositeSpec {
    std::string category;
    int category_id = -1;
    std::vector<PrimitiveSpec> prims;
    std::vector<std::size_t> budgets;

    std::size_t total_points() const {
        std::size_t t = 0;
        for (auto b : budgets) t += b;
        return t;
    }

    double planar_fraction() const {
        std::size_t planar = 0, total = 0;
        for (std::size_t i = 0; i < prims.size(); ++i) {
            total += budgets[i];
            if (prims[i].kind == ShapeLabel::Plane) planar += budgets[i];
        }
        return total ? static_cast<double>(planar) / static_cast<double>(total) : 0.0;
    }
};

namespace detail {

/// Area-proportional budgets summing exactly to n (largest remainder), with
/// the planar share capped at `planar_cap` of the total.
inline std::vector<std::size_t> allocate_budgets(const std::vector<PrimitiveSpec>& prims, std::size_t n,
                                                 double planar_cap = 0.85) {
    std::vector<double> w(prims.size());
    double total = 0, planar = 0;
    for (std::size_t i = 0; i < prims.size(); ++i) {
        w[i] = prims[i].area();
        total += w[i];
        if (prims[i].kind == ShapeLabel::Plane) planar += w[i];
    }
    if (total <= 0) throw std::invalid_argument("allocate_budgets: zero total area");
    if (planar > planar_cap * total && planar < total) {
        const double scale_p = planar_cap * total / planar;
        const double scale_o = (1 - planar_cap) * total / (total - planar);
        for (std::size_t i = 0; i < prims.size(); ++i) {
            w[i] *= prims[i].kind == ShapeLabel::Plane ? scale_p : scale_o;
        }
    }
    std::vector<std::size_t> budgets(prims.size());
    std::vector<std::pair<double, std::size_t>> rema(prims.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < prims.size(); ++i) {
        const double exact = w[i] / total * static_cast<double>(n);
        budgets[i] = static_cast<std::size_t>(exact);
        rema[i] = {exact - std::floor(exact), i};
        assigned += budgets[i];
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    for (std::size_t j = 0; assigned < n; ++j, ++assigned) budgets[rema[j % rema.size()].second] += 1;
    return budgets;
}

}  // namespace detail

/// Samples a composite object. Each point is labeled by the primitive with
/// the smallest residual at its location (its generator almost always; at
/// exact surface intersections the tie goes to the lower label id).
inline PointCloud sample_composite(const CompositeSpec& spec, Rng& rng) {
    PointCloud c;
    for (std::size_t pi = 0; pi < spec.prims.size(); ++pi) {
        std::vector<Vec3> pts, nrm;
        spec.prims[pi].sample(spec.budgets[pi], rng, pts, nrm);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            ShapeLabel best = spec.prims[pi].kind;
            double best_r = spec.prims[pi].residual(pts[i]);
            for (std::size_t pj = 0; pj < spec.prims.size(); ++pj) {
                if (pj == pi) continue;
                const double r = spec.prims[pj].residual(pts[i]);
                if (r < best_r || (r == best_r && spec.prims[pj].kind < best)) {
                    best_r = r;
                    best = spec.prims[pj].kind;
                }
            }
            c.points.push_back(pts[i].to_f32());
            c.normals.push_back(nrm[i].to_f32());
            c.labels.push_back(best);
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// reference categories
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& reference_categories() {
    static const std::vector<std::string> cats = {"box",            "capped-cylinder", "bolt-like",
                                                  "sphere-on-plane", "frustum-stack",   "washer"};
    return cats;
}

/// Train and test draw the category's shape-ratio parameter from disjoint
/// adjacent ranges whose endpoints sit in different 0.05-quantization bins,
/// which keeps the (category, quantized parameter) pairs of the two splits
/// disjoint while the shift stays learnable.
inline std::pair<double, double> regime_range(int category_id, int split) {
    switch (category_id) {
        case 0: return split == 0 ? std::pair{0.60, 1.18} : std::pair{1.22, 1.70};  // box aspect h/w
        case 1: return split == 0 ? std::pair{1.20, 2.38} : std::pair{2.42, 3.40};  // cylinder h/r
        case 2: return split == 0 ? std::pair{2.50, 3.98} : std::pair{4.02, 5.50};  // bolt shank h/r
        case 3: return split == 0 ? std::pair{0.55, 0.78} : std::pair{0.82, 1.05};  // sphere r / plane half
        case 4: return split == 0 ? std::pair{0.32, 0.58} : std::pair{0.62, 0.82};  // frustum half-angle (rad)
        case 5: return split == 0 ? std::pair{0.30, 0.48} : std::pair{0.52, 0.70};  // washer r_in/r_out
        default: throw std::invalid_argument("unknown category id " + std::to_string(category_id));
    }
}

/// Builds the primitive list for one object of the given category.
/// `ratio` is the split-regime parameter; remaining proportions are drawn
/// from shared ranges.
inline std::vector<PrimitiveSpec> build_category(int category_id, double ratio, Rng& rng) {
    std::vector<PrimitiveSpec> p;
    switch (category_id) {
        case 0: {  // box with a bore through the z faces
            const double hw = rng.uniform(0.35, 0.5);
            const double hd = rng.uniform(0.35, 0.5);
            const double hh = ratio * hw;
            const double rb = rng.uniform(0.45, 0.6) * std::min(hw, hd);
            p.push_back(PrimitiveSpec::plane_rect({0, 0, hh}, {0, 0, 1}, {1, 0, 0}, hw, hd));
            p.push_back(PrimitiveSpec::plane_rect({0, 0, -hh}, {0, 0, -1}, {1, 0, 0}, hw, hd));
            p.push_back(PrimitiveSpec::plane_rect({hw, 0, 0}, {1, 0, 0}, {0, 1, 0}, hd, hh));
            p.push_back(PrimitiveSpec::plane_rect({-hw, 0, 0}, {-1, 0, 0}, {0, 1, 0}, hd, hh));
            p.push_back(PrimitiveSpec::plane_rect({0, hd, 0}, {0, 1, 0}, {1, 0, 0}, hw, hh));
            p.push_back(PrimitiveSpec::plane_rect({0, -hd, 0}, {0, -1, 0}, {1, 0, 0}, hw, hh));
            p.push_back(PrimitiveSpec::cylinder({0, 0, -hh}, {0, 0, 1}, rb, 2 * hh));
            break;
        }
        case 1: {  // capped cylinder
            const double r = rng.uniform(0.3, 0.45);
            const double h = ratio * r;
            p.push_back(PrimitiveSpec::cylinder({0, 0, -h / 2}, {0, 0, 1}, r, h));
            p.push_back(PrimitiveSpec::plane_disk({0, 0, h / 2}, {0, 0, 1}, r));
            p.push_back(PrimitiveSpec::plane_disk({0, 0, -h / 2}, {0, 0, -1}, r));
            break;
        }
        case 2: {  // bolt: hex head, cylindrical shank, conical tip
            const double rs = rng.uniform(0.14, 0.2);    // shank radius
            const double ls = ratio * rs;                // shank length
            const double rh = rs * rng.uniform(1.7, 2.1);  // head radius
            const double lh = rh * rng.uniform(0.5, 0.7);  // head height
            // hex prism sides approximating the head
            const double apothem = rh * 0.8660254037844386;
            for (int i = 0; i < 6; ++i) {
                const double a = (2 * i + 1) * 3.14159265358979323846 / 6.0;
                const Vec3 n{std::cos(a), std::sin(a), 0};
                p.push_back(PrimitiveSpec::plane_rect(Vec3{n.x * apothem, n.y * apothem, ls + lh / 2}, n,
                                                      {-std::sin(a), std::cos(a), 0}, rh / 2, lh / 2));
            }
            p.push_back(PrimitiveSpec::plane_disk({0, 0, ls + lh}, {0, 0, 1}, rh));
            p.push_back(PrimitiveSpec::cylinder({0, 0, 0}, {0, 0, 1}, rs, ls));
            const double tip_angle = rng.uniform(0.5, 0.7);
            const double tip_len = rs / std::tan(tip_angle);
            p.push_back(PrimitiveSpec::cone({0, 0, -tip_len}, {0, 0, 1}, tip_angle, 0.15 * tip_len, tip_len));
            break;
        }
        case 3: {  // sphere resting on a plane
            const double a = rng.uniform(0.4, 0.55);
            const double rsph = ratio * a;
            p.push_back(PrimitiveSpec::plane_rect({0, 0, 0}, {0, 0, 1}, {1, 0, 0}, a, a));
            p.push_back(PrimitiveSpec::sphere({0, 0, rsph}, rsph));
            break;
        }
        case 4: {  // two stacked conical frusta plus a top cap
            const double a1 = ratio;
            const double a2 = std::min(1.2, ratio + rng.uniform(0.15, 0.3));
            const double t1a = rng.uniform(0.25, 0.4), t1b = t1a + rng.uniform(0.3, 0.5);
            p.push_back(PrimitiveSpec::cone({0, 0, 0}, {0, 0, 1}, a1, t1a, t1b));
            const double r_join = t1b * std::tan(a1);
            const double apex2 = t1b - r_join / std::tan(a2);
            const double t2a = t1b - apex2;
            const double t2b = t2a + rng.uniform(0.25, 0.45);
            p.push_back(PrimitiveSpec::cone({0, 0, apex2}, {0, 0, 1}, a2, t2a, t2b));
            p.push_back(PrimitiveSpec::plane_disk({0, 0, apex2 + t2b}, {0, 0, 1}, t2b * std::tan(a2)));
            break;
        }
        case 5: {  // washer: two annuli and two rims
            const double r_out = rng.uniform(0.4, 0.55);
            const double r_in = ratio * r_out;
            const double h = r_out * rng.uniform(0.25, 0.4);
            p.push_back(PrimitiveSpec::plane_annulus({0, 0, h / 2}, {0, 0, 1}, r_in, r_out));
            p.push_back(PrimitiveSpec::plane_annulus({0, 0, -h / 2}, {0, 0, -1}, r_in, r_out));
            p.push_back(PrimitiveSpec::cylinder({0, 0, -h / 2}, {0, 0, 1}, r_out, h));
            p.push_back(PrimitiveSpec::cylinder({0, 0, -h / 2}, {0, 0, 1}, r_in, h));
            break;
        }
        default: throw std::invalid_argument("unknown category id " + std::to_string(category_id));
    }
    return p;
}

// ---------------------------------------------------------------------------
// dataset generation
// ---------------------------------------------------------------------------

struct DatasetObject {
    std::size_t id = 0;
    std::string file;
    std::string category;
    int category_id = -1;
    int split = 0;  // 0 train, 1 test
    std::uint64_t seed = 0;
    double regime_param = 0;
    double planar_fraction = 0;
    CompositeSpec spec;
};

struct DatasetManifest {
    int schema_version = 1;
    std::uint64_t seed = 0;
    std::size_t n_points = 0;
    std::vector<std::string> categories;
    std::vector<DatasetObject> objects;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<PointCloud> clouds;  // parallel to manifest.objects

    std::vector<std::size_t> split_indices(int split) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < manifest.objects.size(); ++i) {
            if (manifest.objects[i].split == split) out.push_back(i);
        }
        return out;
    }
};

constexpr double kMaxPlanarFraction = 0.9;

/// Deterministic generation of one object from its seed; used both at
/// dataset creation time and when ablations resample an object at a new
/// density.
inline DatasetObject generate_object(std::size_t id, int category_id, const std::string& category, int split,
                                     std::size_t n_points, std::uint64_t object_seed) {
    Rng rng(object_seed);
    for (int attempt = 0; attempt < 100; ++attempt) {
        const auto [lo, hi] = regime_range(category_id, split);
        const double ratio = rng.uniform(lo, hi);
        CompositeSpec spec;
        spec.category = category;
        spec.category_id = category_id;
        spec.prims = build_category(category_id, ratio, rng);
        spec.budgets = detail::allocate_budgets(spec.prims, n_points);
        const double planar = spec.planar_fraction();
        if (planar > kMaxPlanarFraction) continue;  // skewness filter
        DatasetObject obj;
        obj.id = id;
        obj.category = category;
        obj.category_id = category_id;
        obj.split = split;
        obj.seed = object_seed;
        obj.regime_param = ratio;
        obj.planar_fraction = planar;
        obj.spec = std::move(spec);
        return obj;
    }
    throw std::runtime_error("generate_object: cannot satisfy planar-skew filter for category " + category);
}

inline PointCloud sample_object(const DatasetObject& obj, std::uint64_t salt = 0x90137) {
    Rng rng(mix_seed(obj.seed, salt, obj.spec.total_points()));
    PointCloud c = sample_composite(obj.spec, rng);
    c.category = obj.category_id;
    return c;
}

/// Deterministic dataset: object i's stream depends only on (seed, i), the
/// first train_frac of each category run goes to train, and each split draws
/// its regime parameter from its own disjoint range.
inline Dataset generate_dataset(std::size_t n_objects, std::size_t n_points,
                                const std::vector<std::string>& categories, std::uint64_t seed,
                                double train_frac = 0.8) {
    if (n_objects == 0 || n_points == 0) throw std::invalid_argument("generate_dataset: empty request");
    const auto& known = reference_categories();
    std::vector<int> ids;
    for (const auto& c : categories) {
        auto it = std::find(known.begin(), known.end(), c);
        if (it == known.end()) throw std::invalid_argument("generate_dataset: unknown category '" + c + "'");
        ids.push_back(static_cast<int>(it - known.begin()));
    }
    if (ids.empty()) throw std::invalid_argument("generate_dataset: no categories");
    const std::size_t n_train = static_cast<std::size_t>(std::llround(train_frac * double(n_objects)));

    Dataset ds;
    ds.manifest.seed = seed;
    ds.manifest.n_points = n_points;
    ds.manifest.categories = categories;
    for (std::size_t i = 0; i < n_objects; ++i) {
        const int cat = ids[i % ids.size()];
        const int split = i < n_train ? 0 : 1;
        DatasetObject obj = generate_object(i, cat, known[cat], split, n_points, mix_seed(seed, i));
        obj.file = "object_" + std::to_string(i) + ".ply";
        ds.clouds.push_back(sample_object(obj));
        ds.manifest.objects.push_back(std::move(obj));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// label verification against the generating primitives
// ---------------------------------------------------------------------------

struct VerifyReport {
    double max_residual = 0;       // distance of each point to its own labeled surface set
    std::size_t n_points = 0;
    std::size_t n_mismatched = 0;  // label differs from the nearest-surface label
    std::size_t n_boundary = 0;    // within 1e-6 of two primitives of different kinds
};

/// Re-checks every point of a labeled cloud against the object's primitives:
/// residual of the best primitive of the assigned label, and whether the
/// nearest-surface rule would pick a different label.
inline VerifyReport verify_labels(const PointCloud& cloud, const CompositeSpec& spec) {
    if (!cloud.has_labels()) throw std::invalid_argument("verify_labels: cloud has no labels");
    VerifyReport rep;
    rep.n_points = cloud.size();
    constexpr double big = 1e300;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 p(cloud.points[i]);
        // best residual per shape kind (1..4)
        double by_kind[5] = {big, big, big, big, big};
        for (const auto& prim : spec.prims) {
            const int k = static_cast<int>(prim.kind);
            by_kind[k] = std::min(by_kind[k], prim.residual(p));
        }
        int nearest = 1;
        for (int k = 2; k <= 4; ++k) {
            if (by_kind[k] < by_kind[nearest]) nearest = k;  // ties keep the lower id
        }
        const int assigned = static_cast<int>(cloud.labels[i]);
        if (by_kind[assigned] < big) rep.max_residual = std::max(rep.max_residual, by_kind[assigned]);
        if (nearest != assigned) rep.n_mismatched += 1;
        int kinds_on_surface = 0;
        for (int k = 1; k <= 4; ++k) kinds_on_surface += by_kind[k] < 1e-6 ? 1 : 0;
        if (kinds_on_surface >= 2) rep.n_boundary += 1;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// on-disk layout: manifest.json + one labeled PLY per object
// ---------------------------------------------------------------------------

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["schema_version"] = m.schema_version;
    j["seed"] = m.seed;
    j["n_points"] = m.n_points;
    j["categories"] = m.categories;
    j["objects"] = nlohmann::json::array();
    for (const auto& o : m.objects) {
        nlohmann::json jo;
        jo["id"] = o.id;
        jo["file"] = o.file;
        jo["category"] = o.category;
        jo["category_id"] = o.category_id;
        jo["split"] = o.split == 0 ? "train" : "test";
        jo["seed"] = o.seed;
        jo["regime_param"] = o.regime_param;
        jo["planar_fraction"] = o.planar_fraction;
        jo["budgets"] = o.spec.budgets;
        jo["primitives"] = nlohmann::json::array();
        for (const auto& p : o.spec.prims) jo["primitives"].push_back(p.to_json());
        j["objects"].push_back(std::move(jo));
    }
    return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != 1) {
        throw std::runtime_error("manifest: unsupported schema version " + std::to_string(m.schema_version));
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n_points = j.at("n_points").get<std::size_t>();
    m.categories = j.at("categories").get<std::vector<std::string>>();
    for (const auto& jo : j.at("objects")) {
        DatasetObject o;
        o.id = jo.at("id").get<std::size_t>();
        o.file = jo.at("file").get<std::string>();
        o.category = jo.at("category").get<std::string>();
        o.category_id = jo.at("category_id").get<int>();
        o.split = jo.at("split").get<std::string>() == "train" ? 0 : 1;
        o.seed = jo.at("seed").get<std::uint64_t>();
        o.regime_param = jo.at("regime_param").get<double>();
        o.planar_fraction = jo.at("planar_fraction").get<double>();
        o.spec.category = o.category;
        o.spec.category_id = o.category_id;
        o.spec.budgets = jo.at("budgets").get<std::vector<std::size_t>>();
        for (const auto& jp : jo.at("primitives")) o.spec.prims.push_back(PrimitiveSpec::from_json(jp));
        m.objects.push_back(std::move(o));
    }
    return m;
}

inline void write_dataset(const Dataset& ds, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream mf(std::filesystem::path(dir) / "manifest.json", std::ios::binary);
    if (!mf) throw std::runtime_error("cannot write manifest in '" + dir + "'");
    mf << manifest_to_json(ds.manifest).dump(2) << '\n';
    for (std::size_t i = 0; i < ds.manifest.objects.size(); ++i) {
        save_ply(ds.clouds[i], (std::filesystem::path(dir) / ds.manifest.objects[i].file).string(), false);
    }
}

inline Dataset load_dataset(const std::string& dir) {
    std::ifstream mf(std::filesystem::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("no manifest.json in '" + dir + "'");
    nlohmann::json j;
    mf >> j;
    Dataset ds;
    ds.manifest = manifest_from_json(j);
    for (const auto& o : ds.manifest.objects) {
        PointCloud c = load_ply((std::filesystem::path(dir) / o.file).string());
        c.category = o.category_id;
        ds.clouds.push_back(std::move(c));
    }
    return ds;
}

}  // namespace abd

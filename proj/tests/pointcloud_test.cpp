#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "abdnet/pointcloud.hpp"

using namespace abd;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static fs::path dir = [] {
        auto p = fs::temp_directory_path() / ("abdnet_pc_" + std::to_string(::getpid()));
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

PointCloud labeled_cloud() {
    PointCloud c;
    c.points = {{0.1f, 0.2f, 0.3f}, {-1.25f, 0.5f, 2.0f}, {3.0f, 0.0f, -0.125f}};
    c.normals = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    c.labels = {ShapeLabel::Plane, ShapeLabel::Cylinder, ShapeLabel::Cone};
    return c;
}

const char* kCubeOff =
    "OFF\n"
    "8 12 0\n"
    "-0.5 -0.5 -0.5\n0.5 -0.5 -0.5\n0.5 0.5 -0.5\n-0.5 0.5 -0.5\n"
    "-0.5 -0.5 0.5\n0.5 -0.5 0.5\n0.5 0.5 0.5\n-0.5 0.5 0.5\n"
    "3 0 2 1\n3 0 3 2\n"
    "3 4 5 6\n3 4 6 7\n"
    "3 0 1 5\n3 0 5 4\n"
    "3 2 3 7\n3 2 7 6\n"
    "3 1 2 6\n3 1 6 5\n"
    "3 3 0 4\n3 3 4 7\n";

}  // namespace

TEST_CASE("xyz and ply round-trips preserve labels exactly, coords to 1e-6") {
    PointCloud c = labeled_cloud();
    for (auto fmt : {FileFormat::Xyz, FileFormat::Ply}) {
        const auto path = temp_dir() / (fmt == FileFormat::Xyz ? "rt.xyz" : "rt.ply");
        save(c, path.string(), fmt);
        PointCloud back = load(path.string(), fmt);
        REQUIRE(back.size() == c.size());
        REQUIRE(back.labels == c.labels);
        for (std::size_t i = 0; i < c.size(); ++i) {
            for (int j = 0; j < 3; ++j) {
                REQUIRE(back.points[i][j] == Approx(c.points[i][j]).margin(1e-6));
                REQUIRE(back.normals[i][j] == Approx(c.normals[i][j]).margin(1e-6));
            }
        }
    }
}

TEST_CASE("colorized PLY of an all-plane cloud writes black vertices") {
    PointCloud c;
    c.points = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    c.labels = {ShapeLabel::Plane, ShapeLabel::Plane, ShapeLabel::Plane};
    const auto path = temp_dir() / "plane.ply";
    save(c, path.string(), FileFormat::Ply, /*colorize=*/true);
    std::ifstream f(path);
    std::string line;
    bool header = true;
    std::size_t colored = 0;
    while (std::getline(f, line)) {
        if (header) {
            if (line == "end_header") header = false;
            continue;
        }
        // x y z red green blue label
        std::istringstream is(line);
        double x, y, z;
        int r, g, b, l;
        REQUIRE((is >> x >> y >> z >> r >> g >> b >> l));
        REQUIRE(r == 0);
        REQUIRE(g == 0);
        REQUIRE(b == 0);
        REQUIRE(l == 1);
        ++colored;
    }
    REQUIRE(colored == 3);
}

TEST_CASE("unit-cube OFF mesh samples onto the cube surface") {
    const auto path = temp_dir() / "cube.off";
    {
        std::ofstream f(path);
        f << kCubeOff;
    }
    TriMesh mesh = load_off(path.string());
    REQUIRE(mesh.vertices.size() == 8);
    REQUIRE(mesh.faces.size() == 12);
    Rng rng(99);
    PointCloud c = sample_mesh(mesh, 800, rng);
    for (const auto& p : c.points) {
        const double infnorm = std::max({std::abs(p[0]), std::abs(p[1]), std::abs(p[2])});
        REQUIRE(infnorm == Approx(0.5).margin(1e-6));
    }
    SECTION("six distinct face normals appear") {
        std::set<std::array<int, 3>> seen;
        for (const auto& n : c.normals) {
            seen.insert({int(std::lround(n[0])), int(std::lround(n[1])), int(std::lround(n[2]))});
        }
        REQUIRE(seen.size() == 6);
    }
}

TEST_CASE("normalize_unit_sphere") {
    Rng rng(41);
    PointCloud c;
    for (int i = 0; i < 200; ++i) {
        c.points.push_back({float(rng.uniform(-3, 9)), float(rng.uniform(2, 4)), float(rng.uniform(-1, 1))});
    }
    PointCloud n = normalize_unit_sphere(c);

    SECTION("centroid at origin, max norm exactly one") {
        Vec3 centroid;
        double max_norm = 0;
        for (const auto& p : n.points) {
            centroid += Vec3(p);
            max_norm = std::max(max_norm, norm(Vec3(p)));
        }
        centroid = centroid * (1.0 / n.size());
        REQUIRE(norm(centroid) == Approx(0.0).margin(1e-6));
        REQUIRE(max_norm == Approx(1.0).margin(1e-6));
    }

    SECTION("idempotent") {
        PointCloud again = normalize_unit_sphere(n);
        for (std::size_t i = 0; i < n.size(); ++i) {
            for (int j = 0; j < 3; ++j) REQUIRE(again.points[i][j] == Approx(n.points[i][j]).margin(1e-6));
        }
    }

    SECTION("invariant to global scaling") {
        PointCloud scaled = c;
        for (auto& p : scaled.points) {
            for (auto& v : p) v *= 7.0f;
        }
        PointCloud ns = normalize_unit_sphere(scaled);
        for (std::size_t i = 0; i < n.size(); ++i) {
            for (int j = 0; j < 3; ++j) REQUIRE(ns.points[i][j] == Approx(n.points[i][j]).margin(1e-5));
        }
    }
}

TEST_CASE("uniform_sample") {
    Rng gen(42);
    PointCloud c;
    for (int i = 0; i < 100; ++i) {
        c.points.push_back({float(i), 0.0f, 0.0f});
        c.labels.push_back(static_cast<ShapeLabel>(1 + i % 4));
    }

    SECTION("n == N is a permutation") {
        Rng rng(1);
        PointCloud s = uniform_sample(c, 100, rng);
        std::set<float> seen;
        for (const auto& p : s.points) seen.insert(p[0]);
        REQUIRE(seen.size() == 100);
    }

    SECTION("1024 from an 8096-point cloud, all drawn from the source") {
        PointCloud big;
        for (int i = 0; i < 8096; ++i) big.points.push_back({float(i), 1.0f, 2.0f});
        Rng rng(2);
        PointCloud s = uniform_sample(big, 1024, rng);
        REQUIRE(s.size() == 1024);
        std::set<float> ids;
        for (const auto& p : s.points) {
            REQUIRE(p[0] >= 0.0f);
            REQUIRE(p[0] < 8096.0f);
            ids.insert(p[0]);
        }
        REQUIRE(ids.size() == 1024);  // without replacement
    }

    SECTION("label histogram of a large sample stays within 3 sigma") {
        Rng rng(3);
        PointCloud s = uniform_sample(c, 60, rng);
        // source has exactly 25% of each label; hypergeometric is tighter
        // than the binomial bound used here
        std::array<int, 4> hist{};
        for (auto l : s.labels) hist[int(l) - 1] += 1;
        const double expect = 60 * 0.25;
        const double sigma = std::sqrt(60 * 0.25 * 0.75);
        for (int k = 0; k < 4; ++k) REQUIRE(std::abs(hist[k] - expect) <= 3 * sigma);
    }
}

TEST_CASE("augment") {
    Rng gen(43);
    PointCloud c;
    for (int i = 0; i < 64; ++i) {
        Vec3 d{gen.normal(), gen.normal(), gen.normal()};
        d = normalized(d);
        c.points.push_back(d.to_f32());
        c.normals.push_back(d.to_f32());
        c.labels.push_back(ShapeLabel::Sphere);
    }

    SECTION("identity spec is the identity map") {
        Rng rng(4);
        PointCloud out = augment(c, AugmentSpec{}, rng);
        for (std::size_t i = 0; i < c.size(); ++i) {
            REQUIRE(out.points[i] == c.points[i]);
            REQUIRE(out.normals[i] == c.normals[i]);
        }
    }

    SECTION("noise sigma is realized per coordinate") {
        PointCloud big;
        for (int i = 0; i < 4000; ++i) big.points.push_back({0, 0, 0});
        AugmentSpec spec;
        spec.noise_sigma = 0.02;
        Rng rng(5);
        PointCloud out = augment(big, spec, rng);
        double var = 0;
        std::size_t n = 0;
        for (const auto& p : out.points) {
            for (int j = 0; j < 3; ++j) {
                var += double(p[j]) * p[j];
                ++n;
            }
        }
        REQUIRE(std::sqrt(var / n) == Approx(0.02).epsilon(0.1));
    }

    SECTION("rotation preserves pairwise distances and rotates normals") {
        AugmentSpec spec;
        spec.rotate_z = true;
        Rng rng(6);
        PointCloud out = augment(c, spec, rng);
        for (std::size_t i = 1; i < 10; ++i) {
            const double before = norm(Vec3(c.points[i]) - Vec3(c.points[0]));
            const double after = norm(Vec3(out.points[i]) - Vec3(out.points[0]));
            REQUIRE(after == Approx(before).margin(1e-5));
            // points sit on the unit sphere with normal == position
            REQUIRE(norm(Vec3(out.normals[i]) - Vec3(out.points[i])) == Approx(0.0).margin(1e-5));
        }
    }

    SECTION("dropout replaces whole records with point zero") {
        AugmentSpec spec;
        spec.dropout_p = 0.5;
        Rng rng(7);
        PointCloud out = augment(c, spec, rng);
        std::size_t dropped = 0;
        for (std::size_t i = 1; i < out.size(); ++i) {
            if (out.points[i] == out.points[0]) {
                REQUIRE(out.normals[i] == out.normals[0]);
                REQUIRE(out.labels[i] == out.labels[0]);
                ++dropped;
            }
        }
        REQUIRE(dropped > 10);
        REQUIRE(dropped < 55);
    }

    SECTION("invalid ranges are rejected") {
        AugmentSpec bad;
        bad.scale_lo = 1.5;
        bad.scale_hi = 0.5;
        Rng rng(8);
        REQUIRE_THROWS_AS(augment(c, bad, rng), std::invalid_argument);
    }
}

TEST_CASE("mesh sampling statistics") {
    SECTION("single triangle: every sample inside it") {
        TriMesh m;
        m.vertices = {{0, 0, 0}, {2, 0, 0}, {0, 3, 0}};
        m.faces = {{0, 1, 2}};
        Rng rng(9);
        PointCloud c = sample_mesh(m, 500, rng);
        for (const auto& p : c.points) {
            REQUIRE(p[2] == Approx(0.0).margin(1e-7));
            const double u = p[0] / 2.0, v = p[1] / 3.0;
            REQUIRE(u >= -1e-7);
            REQUIRE(v >= -1e-7);
            REQUIRE(u + v <= 1.0 + 1e-6);
        }
    }

    SECTION("area 9:1 split drives sample counts") {
        TriMesh m;
        // areas exactly 9 and 1
        m.vertices = {{0, 0, 0}, {9, 0, 0}, {0, 2, 0}, {10, 0, 0}, {10, 2, 0}, {9, 1, 0}};
        m.faces = {{0, 1, 2}, {3, 4, 5}};
        Rng rng(10);
        PointCloud c = sample_mesh(m, 2000, rng);
        std::size_t big = 0;
        for (const auto& p : c.points) big += p[0] < 9.0f ? 1 : 0;
        const double expect = 2000 * 0.9;
        const double sigma = std::sqrt(2000 * 0.9 * 0.1);
        REQUIRE(std::abs(double(big) - expect) <= 3 * sigma);
    }

    SECTION("degenerate mesh is rejected") {
        TriMesh m;
        m.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
        m.faces = {{0, 1, 2}};
        Rng rng(11);
        REQUIRE_THROWS_AS(sample_mesh(m, 10, rng), std::invalid_argument);
    }
}

TEST_CASE("parse errors carry line numbers, bad labels are rejected") {
    const auto bad_xyz = temp_dir() / "bad.xyz";
    {
        std::ofstream f(bad_xyz);
        f << "0 0 0\n1 1\n";
    }
    try {
        load_xyz(bad_xyz.string());
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        REQUIRE(e.line_number == 2);
        REQUIRE(std::string(e.what()).find(":2:") != std::string::npos);
    }

    const auto bad_label = temp_dir() / "badlabel.xyz";
    {
        std::ofstream f(bad_label);
        f << "0 0 0 9\n";
    }
    REQUIRE_THROWS_WITH(load_xyz(bad_label.string()), Catch::Matchers::ContainsSubstring("label"));
}

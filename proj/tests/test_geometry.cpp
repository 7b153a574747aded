#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <sstream>

#include "vpet/geometry.hpp"
#include "vpet/mesh_io.hpp"
#include "vpet/rng.hpp"

using namespace vpet;

namespace {

// independent dense-matrix oracle for rigid transforms
struct Mat4 {
  double m[4][4] = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};

  static Mat4 from(const RigidTransform& g) {
    const UnitQuat& q = g.rotation;
    Mat4 a;
    a.m[0][0] = 1 - 2 * (q.y * q.y + q.z * q.z);
    a.m[0][1] = 2 * (q.x * q.y - q.z * q.w);
    a.m[0][2] = 2 * (q.x * q.z + q.y * q.w);
    a.m[1][0] = 2 * (q.x * q.y + q.z * q.w);
    a.m[1][1] = 1 - 2 * (q.x * q.x + q.z * q.z);
    a.m[1][2] = 2 * (q.y * q.z - q.x * q.w);
    a.m[2][0] = 2 * (q.x * q.z - q.y * q.w);
    a.m[2][1] = 2 * (q.y * q.z + q.x * q.w);
    a.m[2][2] = 1 - 2 * (q.x * q.x + q.y * q.y);
    a.m[0][3] = g.translation.x;
    a.m[1][3] = g.translation.y;
    a.m[2][3] = g.translation.z;
    return a;
  }

  Mat4 operator*(const Mat4& o) const {
    Mat4 r;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double acc = 0;
        for (int k = 0; k < 4; ++k) acc += m[i][k] * o.m[k][j];
        r.m[i][j] = acc;
      }
    return r;
  }

  Vec3 apply(const Vec3& p) const {
    return {m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z + m[0][3],
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z + m[1][3],
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z + m[2][3]};
  }
};

RigidTransform random_transform(Rng& rng) {
  RigidTransform g;
  g.rotation = UnitQuat(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  g.translation = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
  return g;
}

Vec3 random_point(Rng& rng, double s = 2.0) {
  return {rng.uniform(-s, s), rng.uniform(-s, s), rng.uniform(-s, s)};
}

double pose_gap(const RigidTransform& a, const RigidTransform& b) {
  UnitQuat qa = a.rotation.canonical(), qb = b.rotation.canonical();
  return std::fabs(qa.w - qb.w) + std::fabs(qa.x - qb.x) + std::fabs(qa.y - qb.y) +
         std::fabs(qa.z - qb.z) + (a.translation - b.translation).norm();
}

}  // namespace

TEST_CASE("compose basics") {
  Rng rng(7);
  RigidTransform p = random_transform(rng);

  SECTION("identity is neutral") {
    CHECK(pose_gap(compose(RigidTransform::identity(), p), p) < 1e-12);
    CHECK(pose_gap(compose(p, RigidTransform::identity()), p) < 1e-12);
  }

  SECTION("inverse composes to identity") {
    for (int i = 0; i < 20; ++i) {
      RigidTransform g = random_transform(rng);
      CHECK(pose_gap(compose(g, invert(g)), RigidTransform::identity()) < 1e-9);
      CHECK(pose_gap(compose(invert(g), g), RigidTransform::identity()) < 1e-9);
    }
  }

  SECTION("matches dense matrix product oracle") {
    RigidTransform a;
    a.rotation = UnitQuat::from_axis_angle({0, 0, kPi / 2});
    a.translation = {1, 0, 0};
    RigidTransform b;
    b.rotation = UnitQuat::from_axis_angle({0, 0, kPi / 2});
    Vec3 x{1, 0, 0};
    Vec3 got = compose(a, b).apply(x);
    Vec3 want = (Mat4::from(a) * Mat4::from(b)).apply(x);
    CHECK((got - want).norm() < 1e-9);

    for (int i = 0; i < 50; ++i) {
      RigidTransform u = random_transform(rng), v = random_transform(rng);
      Vec3 q = random_point(rng);
      Vec3 g1 = compose(u, v).apply(q);
      Vec3 g2 = (Mat4::from(u) * Mat4::from(v)).apply(q);
      CHECK((g1 - g2).norm() < 1e-9);
    }
  }

  SECTION("associativity within 1e-9") {
    for (int i = 0; i < 20; ++i) {
      RigidTransform a = random_transform(rng), b = random_transform(rng),
                     c = random_transform(rng);
      Vec3 q = random_point(rng);
      Vec3 g1 = compose(compose(a, b), c).apply(q);
      Vec3 g2 = compose(a, compose(b, c)).apply(q);
      CHECK((g1 - g2).norm() < 1e-9);
    }
  }
}

TEST_CASE("relative round-trips") {
  Rng rng(11);
  RigidTransform p = random_transform(rng);
  CHECK(pose_gap(relative(p, p), RigidTransform::identity()) < 1e-9);
  CHECK(pose_gap(relative(RigidTransform::identity(), p), p) < 1e-12);
  for (int i = 0; i < 50; ++i) {
    RigidTransform a = random_transform(rng), b = random_transform(rng);
    RigidTransform d = relative(a, b);
    CHECK(pose_gap(compose(a, d), b) < 1e-9);
  }
}

TEST_CASE("apply_points") {
  Rng rng(13);
  PointCloud cloud;
  for (int i = 0; i < 32; ++i) cloud.points.push_back(random_point(rng));

  SECTION("identity keeps the cloud") {
    PointCloud out = apply_points(RigidTransform::identity(), cloud);
    for (std::size_t i = 0; i < cloud.size(); ++i)
      CHECK((out.points[i] - cloud.points[i]).norm() == 0.0);
  }

  SECTION("pure translation") {
    RigidTransform g;
    g.translation = {0, 0, 1};
    PointCloud one{{Vec3{0, 0, 0}}};
    PointCloud out = apply_points(g, one);
    CHECK((out.points[0] - Vec3{0, 0, 1}).norm() == 0.0);
  }

  SECTION("matches matrix oracle") {
    for (int i = 0; i < 20; ++i) {
      RigidTransform g = random_transform(rng);
      Mat4 m = Mat4::from(g);
      PointCloud out = apply_points(g, cloud);
      for (std::size_t j = 0; j < cloud.size(); ++j)
        CHECK((out.points[j] - m.apply(cloud.points[j])).norm() < 1e-9);
    }
  }

  SECTION("composition of transforms equals sequential application") {
    for (int i = 0; i < 10; ++i) {
      RigidTransform a = random_transform(rng), b = random_transform(rng);
      PointCloud lhs = apply_points(compose(a, b), cloud);
      PointCloud rhs = apply_points(a, apply_points(b, cloud));
      for (std::size_t j = 0; j < cloud.size(); ++j)
        CHECK((lhs.points[j] - rhs.points[j]).norm() < 1e-9);
    }
  }
}

TEST_CASE("quaternion conventions") {
  Rng rng(17);
  SECTION("constructors renormalize") {
    for (int i = 0; i < 50; ++i) {
      UnitQuat q(rng.normal() * 3, rng.normal() * 3, rng.normal() * 3,
                 rng.normal() * 3);
      CHECK(std::fabs(q.norm() - 1.0) < 1e-9);
    }
  }
  SECTION("canonical form has w >= 0 and same rotation") {
    for (int i = 0; i < 20; ++i) {
      UnitQuat q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
      UnitQuat c = q.canonical();
      CHECK(c.w >= 0.0);
      Vec3 p = random_point(rng);
      CHECK((q.rotate(p) - c.rotate(p)).norm() < 1e-12);
    }
  }
  SECTION("axis-angle round trip wraps below pi") {
    for (int i = 0; i < 50; ++i) {
      Vec3 aa = random_point(rng, 2.5);
      UnitQuat q = UnitQuat::from_axis_angle(aa);
      Vec3 back = q.to_axis_angle();
      CHECK(back.norm() <= kPi + 1e-12);
      UnitQuat q2 = UnitQuat::from_axis_angle(back);
      Vec3 p = random_point(rng);
      CHECK((q.rotate(p) - q2.rotate(p)).norm() < 1e-9);
    }
  }
}

TEST_CASE("dual quaternion round trip") {
  Rng rng(19);
  for (int i = 0; i < 50; ++i) {
    RigidTransform g = random_transform(rng);
    DualQuat d = DualQuat::from_rigid(g);
    // real part unit, dual orthogonal to real
    CHECK(std::fabs(d.real.norm() - 1.0) < 1e-9);
    double dot = d.real.w * d.dual[0] + d.real.x * d.dual[1] +
                 d.real.y * d.dual[2] + d.real.z * d.dual[3];
    CHECK(std::fabs(dot) < 1e-7);
    CHECK(pose_gap(d.to_rigid(), g) < 1e-9);
  }
}

TEST_CASE("surface sampling") {
  TriMesh square;
  square.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  square.faces = {{0, 1, 2}, {0, 2, 3}};

  SECTION("unit square mean near centroid") {
    PointCloud pts = sample_surface(square, 10000, 42);
    Vec3 c = centroid(pts);
    CHECK(std::fabs(c.x - 0.5) < 0.02);
    CHECK(std::fabs(c.y - 0.5) < 0.02);
    CHECK(std::fabs(c.z) < 1e-12);
  }

  SECTION("single sample stays inside the triangle") {
    TriMesh tri;
    tri.vertices = {{0, 0, 0}, {2, 0, 0}, {0, 2, 0}};
    tri.faces = {{0, 1, 2}};
    PointCloud p = sample_surface(tri, 1, 7);
    double u = p.points[0].x / 2.0, v = p.points[0].y / 2.0;
    CHECK(u >= 0.0);
    CHECK(v >= 0.0);
    CHECK(u + v <= 1.0 + 1e-12);
  }

  SECTION("deterministic per seed") {
    PointCloud a = sample_surface(square, 100, 5);
    PointCloud b = sample_surface(square, 100, 5);
    for (int i = 0; i < 100; ++i)
      CHECK((a.points[i] - b.points[i]).norm() == 0.0);
    PointCloud c = sample_surface(square, 100, 6);
    double diff = 0;
    for (int i = 0; i < 100; ++i) diff += (a.points[i] - c.points[i]).norm();
    CHECK(diff > 0.0);
  }

  SECTION("points lie on their source face plane") {
    Rng rng(3);
    TriMesh m;
    for (int i = 0; i < 9; ++i) m.vertices.push_back(random_point(rng));
    m.faces = {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}};
    PointCloud p = sample_surface(m, 500, 11);
    for (const Vec3& q : p.points) {
      double best = 1e9;
      for (const auto& f : m.faces) {
        Vec3 n = (m.vertices[f[1]] - m.vertices[f[0]])
                     .cross(m.vertices[f[2]] - m.vertices[f[0]]);
        n = n * (1.0 / n.norm());
        best = std::min(best, std::fabs(n.dot(q - m.vertices[f[0]])));
      }
      CHECK(best < 1e-9);
    }
  }

  SECTION("per-face hit frequency proportional to area within 3 sigma") {
    // two triangles with areas 0.5 and 1.0
    TriMesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 0, 0}, {7, 0, 0}, {5, 1, 0}};
    m.faces = {{0, 1, 2}, {3, 4, 5}};
    const int n = 10000;
    PointCloud p = sample_surface(m, n, 21);
    int hits0 = 0;
    for (const Vec3& q : p.points)
      if (q.x < 3.0) ++hits0;
    double prob = 0.5 / 1.5;
    double sigma = std::sqrt(n * prob * (1 - prob));
    CHECK(std::fabs(hits0 - n * prob) < 3 * sigma);
  }

  SECTION("zero-area mesh is rejected") {
    TriMesh degenerate;
    degenerate.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    degenerate.faces = {{0, 1, 2}};
    CHECK_THROWS_AS(sample_surface(degenerate, 10, 1), std::invalid_argument);
  }
}

TEST_CASE("chamfer distance") {
  SECTION("self distance is zero") {
    Rng rng(23);
    PointCloud a;
    for (int i = 0; i < 40; ++i) a.points.push_back(random_point(rng));
    CHECK(chamfer_one_sided(a, a) == 0.0);
  }

  SECTION("single nearest point") {
    PointCloud src{{Vec3{0, 0, 0}}};
    PointCloud dst{{Vec3{0, 0, 3}, Vec3{0, 4, 0}}};
    CHECK(chamfer_one_sided(src, dst) == Catch::Approx(3.0).margin(1e-12));
  }

  SECTION("matches exhaustive-scan oracle") {
    Rng rng(29);
    PointCloud src, dst;
    for (int i = 0; i < 64; ++i) src.points.push_back(random_point(rng));
    for (int i = 0; i < 128; ++i) dst.points.push_back(random_point(rng));
    double got = chamfer_one_sided(src, dst);
    double want = 0;
    for (const Vec3& p : src.points) {
      double best = 1e300;
      for (const Vec3& q : dst.points) best = std::min(best, distance2(p, q));
      want += std::sqrt(best);
    }
    want /= src.size();
    CHECK(std::fabs(got - want) < 1e-9);
  }

  SECTION("zero iff every source point is present in the target") {
    PointCloud a{{Vec3{0, 0, 0}, Vec3{1, 0, 0}}};
    PointCloud b{{Vec3{1, 0, 0}, Vec3{0, 0, 0}, Vec3{5, 5, 5}}};
    CHECK(chamfer_one_sided(a, b) < 1e-12);
    PointCloud c{{Vec3{0, 0, 0}, Vec3{2, 0, 0}}};
    CHECK(chamfer_one_sided(c, b) > 1e-12);
  }

  SECTION("empty clouds are rejected") {
    PointCloud a{{Vec3{0, 0, 0}}};
    PointCloud empty;
    CHECK_THROWS_AS(chamfer_one_sided(empty, a), std::invalid_argument);
    CHECK_THROWS_AS(chamfer_one_sided(a, empty), std::invalid_argument);
  }
}

TEST_CASE("nearest-neighbor index is exact") {
  Rng rng(31);
  PointCloud cloud;
  for (int i = 0; i < 700; ++i) cloud.points.push_back(random_point(rng));
  NnIndex index(cloud);

  SECTION("singleton cloud") {
    PointCloud one{{Vec3{1, 2, 3}}};
    NnIndex idx(one);
    auto r = idx.nearest({4, 6, 3});
    CHECK(r.index == 0);
    CHECK(r.dist == Catch::Approx(5.0).margin(1e-12));
  }

  SECTION("member query has zero distance") {
    for (int i = 0; i < 50; ++i) {
      int k = static_cast<int>(rng.below(cloud.size()));
      auto r = index.nearest(cloud.points[k]);
      CHECK(r.dist == 0.0);
    }
  }

  SECTION("1000 random queries match exhaustive scan") {
    for (int i = 0; i < 1000; ++i) {
      Vec3 q = random_point(rng, 2.5);
      auto r = index.nearest(q);
      double best = 1e300;
      int arg = -1;
      for (std::size_t j = 0; j < cloud.size(); ++j) {
        double d2 = distance2(q, cloud.points[j]);
        if (d2 < best) { best = d2; arg = static_cast<int>(j); }
      }
      CHECK(r.index == arg);
      CHECK(std::fabs(r.dist - std::sqrt(best)) < 1e-12);
    }
  }
}

TEST_CASE("center distance") {
  SECTION("coincident centroid") {
    TriMesh m;
    m.vertices = {{-1, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, -1, 0}};
    m.faces = {{0, 1, 2}, {0, 1, 3}};
    PointCloud bg{{Vec3{0, 0, 0}}};
    CHECK(center_distance(m, bg) < 1e-12);
  }

  SECTION("unit cube to point") {
    TriMesh cube;
    for (int i = 0; i < 8; ++i)
      cube.vertices.push_back({(i & 1) ? 0.5 : -0.5, (i & 2) ? 0.5 : -0.5,
                               (i & 4) ? 0.5 : -0.5});
    cube.faces = {{0, 1, 2}};
    PointCloud bg{{Vec3{0, 0, 2}}};
    CHECK(center_distance(cube, bg) == Catch::Approx(2.0).margin(1e-12));
  }

  SECTION("matches exhaustive scan") {
    Rng rng(37);
    TriMesh m;
    for (int i = 0; i < 12; ++i) m.vertices.push_back(random_point(rng));
    m.faces = {{0, 1, 2}};
    PointCloud bg;
    for (int i = 0; i < 200; ++i) bg.points.push_back(random_point(rng, 3));
    Vec3 c = centroid(m.vertices);
    double want = 1e300;
    for (const Vec3& p : bg.points) want = std::min(want, distance(c, p));
    CHECK(center_distance(m, bg) == Catch::Approx(want).margin(1e-12));
    CHECK(center_distance(m, NnIndex(bg)) == Catch::Approx(want).margin(1e-12));
  }
}

TEST_CASE("centroid and recenter") {
  PointCloud p{{Vec3{1, 1, 1}, Vec3{-1, -1, -1}}};
  CHECK(centroid(p).norm() < 1e-15);

  PointCloud q{{Vec3{2, 0, 0}, Vec3{4, 0, 0}}};
  PointCloud r = recenter(q);
  CHECK((r.points[0] - Vec3{-1, 0, 0}).norm() < 1e-15);
  CHECK((r.points[1] - Vec3{1, 0, 0}).norm() < 1e-15);

  Rng rng(41);
  for (int i = 0; i < 20; ++i) {
    PointCloud c;
    int n = 1 + static_cast<int>(rng.below(50));
    for (int j = 0; j < n; ++j) c.points.push_back(random_point(rng, 5));
    CHECK(centroid(recenter(c)).norm() < 1e-9);
  }
}

TEST_CASE("obj round trip and fan triangulation") {
  SECTION("quad fan-triangulates") {
    std::istringstream in(
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
        "vn 0 0 1\n"
        "f 1/1/1 2/2/1 3/3/1 4/4/1\n");
    TriMesh m = load_obj(in);
    REQUIRE(m.faces.size() == 2);
    CHECK(m.faces[0] == std::array<int, 3>{0, 1, 2});
    CHECK(m.faces[1] == std::array<int, 3>{0, 2, 3});
  }

  SECTION("write then read") {
    Rng rng(43);
    TriMesh m;
    for (int i = 0; i < 6; ++i) m.vertices.push_back(random_point(rng));
    m.faces = {{0, 1, 2}, {3, 4, 5}, {1, 2, 3}};
    std::ostringstream out;
    save_obj(out, m);
    std::istringstream in(out.str());
    TriMesh back = load_obj(in);
    REQUIRE(back.vertices.size() == m.vertices.size());
    REQUIRE(back.faces == m.faces);
    for (std::size_t i = 0; i < m.vertices.size(); ++i)
      CHECK((back.vertices[i] - m.vertices[i]).norm() == 0.0);
  }

  SECTION("bad face index reports the line") {
    std::istringstream in("v 0 0 0\nv 1 0 0\nf 1 2 9\n");
    CHECK_THROWS_WITH(load_obj(in), Catch::Matchers::ContainsSubstring(":3"));
  }

  SECTION("point cloud text round trip") {
    Rng rng(47);
    PointCloud p;
    for (int i = 0; i < 10; ++i) p.points.push_back(random_point(rng));
    std::ostringstream out;
    save_xyz(out, p);
    std::istringstream in(out.str());
    PointCloud back = load_xyz(in);
    REQUIRE(back.size() == p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
      CHECK((back.points[i] - p.points[i]).norm() == 0.0);
  }
}

TEST_CASE("mesh validation") {
  TriMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  m.faces = {{0, 1, 2}};
  CHECK_NOTHROW(m.validate());

  TriMesh repeated = m;
  repeated.faces = {{0, 1, 1}};
  CHECK_THROWS_AS(repeated.validate(), std::invalid_argument);

  TriMesh empty;
  empty.vertices = m.vertices;
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);

  TriMesh oob = m;
  oob.faces = {{0, 1, 5}};
  CHECK_THROWS_AS(oob.validate(), std::invalid_argument);
}

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "vpet/rng.hpp"

namespace vpet {

inline constexpr double kPi = 3.14159265358979323846;

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3() = default;
  Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm2() const { return x * x + y * y + z * z; }
  double norm() const { return std::sqrt(norm2()); }
  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

inline double distance2(const Vec3& a, const Vec3& b) {
  double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

inline double distance(const Vec3& a, const Vec3& b) {
  return std::sqrt(distance2(a, b));
}

// Unit quaternion; every constructing operation renormalizes.
struct UnitQuat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  UnitQuat() = default;
  UnitQuat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {
    renormalize();
  }

  static UnitQuat identity() { return UnitQuat(); }

  // axis-angle vector, |v| = angle in radians
  static UnitQuat from_axis_angle(const Vec3& v) {
    double angle = v.norm();
    if (angle < 1e-12) {
      // first-order expansion keeps the map smooth through zero
      return UnitQuat(1.0, 0.5 * v.x, 0.5 * v.y, 0.5 * v.z);
    }
    double h = 0.5 * angle;
    double s = std::sin(h) / angle;
    return UnitQuat(std::cos(h), v.x * s, v.y * s, v.z * s);
  }

  // wrapped so the returned magnitude is <= pi
  Vec3 to_axis_angle() const {
    UnitQuat q = canonical();
    double cw = std::clamp(q.w, -1.0, 1.0);
    double angle = 2.0 * std::acos(cw);
    double s2 = q.x * q.x + q.y * q.y + q.z * q.z;
    if (s2 < 1e-24) return {0.0, 0.0, 0.0};
    double k = angle / std::sqrt(s2);
    return {q.x * k, q.y * k, q.z * k};
  }

  void renormalize() {
    double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (n < 1e-300) throw std::invalid_argument("UnitQuat: zero-norm quaternion");
    // already-unit inputs are left untouched so serialization round-trips
    // reproduce the exact bits
    if (std::fabs(n - 1.0) < 1e-13) return;
    w /= n; x /= n; y /= n; z /= n;
  }

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  UnitQuat conjugate() const {
    UnitQuat q;
    q.w = w; q.x = -x; q.y = -y; q.z = -z;
    return q;
  }

  double dot(const UnitQuat& o) const {
    return w * o.w + x * o.x + y * o.y + z * o.z;
  }

  // hemisphere canonicalization (w >= 0) for stable serialization
  UnitQuat canonical() const {
    UnitQuat q = *this;
    if (q.w < 0.0) { q.w = -q.w; q.x = -q.x; q.y = -q.y; q.z = -q.z; }
    return q;
  }

  UnitQuat operator*(const UnitQuat& o) const {
    return UnitQuat(w * o.w - x * o.x - y * o.y - z * o.z,
                    w * o.x + x * o.w + y * o.z - z * o.y,
                    w * o.y - x * o.z + y * o.w + z * o.x,
                    w * o.z + x * o.y - y * o.x + z * o.w);
  }

  Vec3 rotate(const Vec3& p) const {
    Vec3 v{x, y, z};
    Vec3 c1 = v.cross(p);
    Vec3 c2 = v.cross(c1);
    return p + 2.0 * (w * c1 + c2);
  }
};

struct RigidTransform {
  UnitQuat rotation;
  Vec3 translation;

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation.rotate(p) + translation; }
};

// result applies b, then a
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform r;
  r.rotation = a.rotation * b.rotation;  // operator* renormalizes
  r.translation = a.rotation.rotate(b.translation) + a.translation;
  return r;
}

inline RigidTransform invert(const RigidTransform& p) {
  RigidTransform r;
  r.rotation = p.rotation.conjugate();
  r.translation = -r.rotation.rotate(p.translation);
  return r;
}

// dG such that compose(a, dG) = b
inline RigidTransform relative(const RigidTransform& a, const RigidTransform& b) {
  return compose(invert(a), b);
}

// Dual quaternion carrier for rigid transforms; real part unit-norm,
// dual part orthogonal to real after normalization.
struct DualQuat {
  UnitQuat real;
  std::array<double, 4> dual{0.0, 0.0, 0.0, 0.0};

  static DualQuat from_rigid(const RigidTransform& g) {
    DualQuat d;
    d.real = g.rotation;
    const Vec3& t = g.translation;
    const UnitQuat& q = g.rotation;
    // dual = 0.5 * (0, t) * real
    d.dual[0] = 0.5 * (-t.x * q.x - t.y * q.y - t.z * q.z);
    d.dual[1] = 0.5 * (t.x * q.w + t.y * q.z - t.z * q.y);
    d.dual[2] = 0.5 * (-t.x * q.z + t.y * q.w + t.z * q.x);
    d.dual[3] = 0.5 * (t.x * q.y - t.y * q.x + t.z * q.w);
    return d;
  }

  RigidTransform to_rigid() const {
    RigidTransform g;
    g.rotation = real;
    const std::array<double, 4>& d = dual;
    const UnitQuat& q = real;
    // t = 2 * dual * conj(real), vector part
    g.translation.x = 2.0 * (-d[0] * q.x + d[1] * q.w - d[2] * q.z + d[3] * q.y);
    g.translation.y = 2.0 * (-d[0] * q.y + d[1] * q.z + d[2] * q.w - d[3] * q.x);
    g.translation.z = 2.0 * (-d[0] * q.z - d[1] * q.y + d[2] * q.x + d[3] * q.w);
    return g;
  }
};

struct PointCloud {
  std::vector<Vec3> points;

  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> pts) : points(std::move(pts)) {}

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<int> labels;  // optional per-vertex tags; empty or |vertices|

  void validate() const {
    if (faces.empty()) throw std::invalid_argument("TriMesh: no faces");
    const int n = static_cast<int>(vertices.size());
    for (const auto& f : faces) {
      for (int idx : f) {
        if (idx < 0 || idx >= n)
          throw std::invalid_argument("TriMesh: face index out of range");
      }
      if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
        throw std::invalid_argument("TriMesh: degenerate face (repeated index)");
    }
    if (!labels.empty() && labels.size() != vertices.size())
      throw std::invalid_argument("TriMesh: label count mismatch");
  }

  double face_area(std::size_t i) const {
    const auto& f = faces[i];
    Vec3 e1 = vertices[f[1]] - vertices[f[0]];
    Vec3 e2 = vertices[f[2]] - vertices[f[0]];
    return 0.5 * e1.cross(e2).norm();
  }
};

inline PointCloud apply_points(const RigidTransform& p, const PointCloud& pts) {
  PointCloud out;
  out.points.reserve(pts.points.size());
  for (const Vec3& v : pts.points) out.points.push_back(p.apply(v));
  return out;
}

inline Vec3 centroid(const PointCloud& pts) {
  if (pts.empty()) throw std::invalid_argument("centroid: empty cloud");
  Vec3 c;
  for (const Vec3& p : pts.points) c += p;
  return c * (1.0 / static_cast<double>(pts.size()));
}

inline Vec3 centroid(const std::vector<Vec3>& pts) {
  if (pts.empty()) throw std::invalid_argument("centroid: empty vertex set");
  Vec3 c;
  for (const Vec3& p : pts) c += p;
  return c * (1.0 / static_cast<double>(pts.size()));
}

inline PointCloud recenter(const PointCloud& pts) {
  Vec3 c = centroid(pts);
  PointCloud out;
  out.points.reserve(pts.size());
  for (const Vec3& p : pts.points) out.points.push_back(p - c);
  return out;
}

inline TriMesh recenter(const TriMesh& mesh) {
  Vec3 c = centroid(mesh.vertices);
  TriMesh out = mesh;
  for (Vec3& v : out.vertices) v -= c;
  return out;
}

// area-weighted uniform surface sampling, deterministic per seed
inline PointCloud sample_surface(const TriMesh& mesh, std::size_t n,
                                 std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_surface: n must be >= 1");
  mesh.validate();
  std::vector<double> cum(mesh.faces.size());
  double total = 0.0;
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
    total += mesh.face_area(i);
    cum[i] = total;
  }
  if (total <= 0.0)
    throw std::invalid_argument("sample_surface: mesh has zero surface area");

  Rng rng(derive_seed(seed, "surface"));
  PointCloud out;
  out.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    std::size_t fi =
        std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
    if (fi >= mesh.faces.size()) fi = mesh.faces.size() - 1;
    const auto& f = mesh.faces[fi];
    double su = std::sqrt(rng.uniform());
    double v = rng.uniform();
    double b0 = 1.0 - su, b1 = su * (1.0 - v), b2 = su * v;
    out.points.push_back(mesh.vertices[f[0]] * b0 + mesh.vertices[f[1]] * b1 +
                         mesh.vertices[f[2]] * b2);
  }
  return out;
}

// Exact nearest-neighbor index: balanced binary partition cycling x/y/z.
// Immutable after construction, safe to share across threads.
class NnIndex {
 public:
  struct Result {
    Vec3 point;
    double dist = 0.0;
    int index = -1;
  };

  explicit NnIndex(const PointCloud& cloud) : pts_(cloud.points) {
    if (pts_.empty()) throw std::invalid_argument("NnIndex: empty cloud");
    order_.resize(pts_.size());
    std::iota(order_.begin(), order_.end(), 0);
    build(0, static_cast<int>(order_.size()), 0);
  }

  Result nearest(const Vec3& q) const {
    Best best;
    search(q, 0, static_cast<int>(order_.size()), 0, best);
    return {pts_[best.index], std::sqrt(best.dist2), best.index};
  }

  std::size_t size() const { return pts_.size(); }

 private:
  struct Best {
    double dist2 = std::numeric_limits<double>::infinity();
    int index = -1;
  };

  static double coord(const Vec3& v, int axis) {
    return axis == 0 ? v.x : (axis == 1 ? v.y : v.z);
  }

  void build(int lo, int hi, int axis) {
    if (hi - lo <= kLeaf) return;
    int mid = (lo + hi) / 2;
    std::nth_element(order_.begin() + lo, order_.begin() + mid,
                     order_.begin() + hi, [&](int a, int b) {
                       double ca = coord(pts_[a], axis), cb = coord(pts_[b], axis);
                       if (ca != cb) return ca < cb;
                       return a < b;
                     });
    build(lo, mid, (axis + 1) % 3);
    build(mid + 1, hi, (axis + 1) % 3);
  }

  void search(const Vec3& q, int lo, int hi, int axis, Best& best) const {
    if (hi - lo <= kLeaf) {
      for (int i = lo; i < hi; ++i) consider(q, order_[i], best);
      return;
    }
    int mid = (lo + hi) / 2;
    consider(q, order_[mid], best);
    double delta = coord(q, axis) - coord(pts_[order_[mid]], axis);
    int next = (axis + 1) % 3;
    if (delta <= 0.0) {
      search(q, lo, mid, next, best);
      if (delta * delta <= best.dist2) search(q, mid + 1, hi, next, best);
    } else {
      search(q, mid + 1, hi, next, best);
      if (delta * delta <= best.dist2) search(q, lo, mid, next, best);
    }
  }

  void consider(const Vec3& q, int i, Best& best) const {
    double d2 = distance2(q, pts_[i]);
    if (d2 < best.dist2 || (d2 == best.dist2 && i < best.index)) {
      best.dist2 = d2;
      best.index = i;
    }
  }

  static constexpr int kLeaf = 8;
  std::vector<Vec3> pts_;
  std::vector<int> order_;
};

inline NnIndex::Result nearest(const NnIndex& index, const Vec3& q) {
  return index.nearest(q);
}

// mean over src of Euclidean distance to the nearest dst point
inline double chamfer_one_sided(const PointCloud& src, const NnIndex& dst) {
  if (src.empty()) throw std::invalid_argument("chamfer: empty source cloud");
  double acc = 0.0;
  for (const Vec3& p : src.points) acc += dst.nearest(p).dist;
  return acc / static_cast<double>(src.size());
}

inline double chamfer_one_sided(const PointCloud& src, const PointCloud& dst) {
  if (dst.empty()) throw std::invalid_argument("chamfer: empty target cloud");
  return chamfer_one_sided(src, NnIndex(dst));
}

// symmetric variant; unused by the evaluation metrics
inline double chamfer_symmetric(const PointCloud& a, const PointCloud& b) {
  return chamfer_one_sided(a, b) + chamfer_one_sided(b, a);
}

// distance from the fg vertex centroid to the nearest background point
inline double center_distance(const TriMesh& fg, const PointCloud& bg_points) {
  if (fg.vertices.empty()) throw std::invalid_argument("center_distance: empty mesh");
  if (bg_points.empty()) throw std::invalid_argument("center_distance: empty cloud");
  Vec3 c = centroid(fg.vertices);
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& p : bg_points.points) best = std::min(best, distance2(c, p));
  return std::sqrt(best);
}

inline double center_distance(const TriMesh& fg, const NnIndex& bg_index) {
  if (fg.vertices.empty()) throw std::invalid_argument("center_distance: empty mesh");
  return bg_index.nearest(centroid(fg.vertices)).dist;
}

}  // namespace vpet

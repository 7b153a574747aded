#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vpet/clip.hpp"
#include "vpet/geometry.hpp"
#include "vpet/mesh_io.hpp"
#include "vpet/rng.hpp"
#include "vpet/skeleton.hpp"

namespace vpet {

// ---- procedural scenes: a floor plus axis-aligned furniture cuboids ----

struct Cuboid {
  Vec3 center;
  Vec3 half;
};

struct SceneSpec {
  double floor_half_x = 0.55;
  double floor_half_z = 0.55;
  int min_cuboids = 1;
  int max_cuboids = 2;
  double min_half_xz = 0.08;
  double max_half_xz = 0.14;
  double min_height = 0.18;
  double max_height = 0.34;
};

struct Scene {
  TriMesh mesh;
  std::vector<Cuboid> cuboids;
  double floor_half_x = 0.0;
  double floor_half_z = 0.0;
  std::vector<std::string> warnings;

  // support height: floor at 0, else the tallest covering cuboid top
  double height_at(double x, double z) const {
    double h = 0.0;
    for (const Cuboid& c : cuboids)
      if (std::fabs(x - c.center.x) <= c.half.x &&
          std::fabs(z - c.center.z) <= c.half.z)
        h = std::max(h, c.center.y + c.half.y);
    return h;
  }

  bool on_clear_floor(double x, double z, double margin) const {
    if (std::fabs(x) > floor_half_x - margin || std::fabs(z) > floor_half_z - margin)
      return false;
    for (const Cuboid& c : cuboids)
      if (std::fabs(x - c.center.x) <= c.half.x + margin &&
          std::fabs(z - c.center.z) <= c.half.z + margin)
        return false;
    return true;
  }
};

namespace detail {

inline void append_quad(TriMesh& m, const Vec3& a, const Vec3& b, const Vec3& c,
                        const Vec3& d) {
  int base = static_cast<int>(m.vertices.size());
  m.vertices.push_back(a);
  m.vertices.push_back(b);
  m.vertices.push_back(c);
  m.vertices.push_back(d);
  m.faces.push_back({base, base + 1, base + 2});
  m.faces.push_back({base, base + 2, base + 3});
}

inline void append_cuboid(TriMesh& m, const Cuboid& c) {
  const Vec3& o = c.center;
  const Vec3& h = c.half;
  Vec3 v[8];
  for (int i = 0; i < 8; ++i)
    v[i] = {o.x + ((i & 1) ? h.x : -h.x), o.y + ((i & 2) ? h.y : -h.y),
            o.z + ((i & 4) ? h.z : -h.z)};
  append_quad(m, v[0], v[1], v[3], v[2]);  // -z
  append_quad(m, v[5], v[4], v[6], v[7]);  // +z
  append_quad(m, v[4], v[0], v[2], v[6]);  // -x
  append_quad(m, v[1], v[5], v[7], v[3]);  // +x
  append_quad(m, v[2], v[3], v[7], v[6]);  // +y
  append_quad(m, v[4], v[5], v[1], v[0]);  // -y
}

}  // namespace detail

inline Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  if (spec.floor_half_x <= 0 || spec.floor_half_z <= 0)
    throw std::invalid_argument("generate_scene: floor extent must be positive");
  Rng rng(derive_seed(seed, "scene"));
  Scene scene;
  scene.floor_half_x = spec.floor_half_x;
  scene.floor_half_z = spec.floor_half_z;
  detail::append_quad(scene.mesh, {-spec.floor_half_x, 0, -spec.floor_half_z},
                      {spec.floor_half_x, 0, -spec.floor_half_z},
                      {spec.floor_half_x, 0, spec.floor_half_z},
                      {-spec.floor_half_x, 0, spec.floor_half_z});
  int count = spec.min_cuboids +
              static_cast<int>(rng.below(spec.max_cuboids - spec.min_cuboids + 1));
  for (int i = 0; i < count; ++i) {
    Cuboid c;
    c.half = {rng.uniform(spec.min_half_xz, spec.max_half_xz),
              rng.uniform(spec.min_height, spec.max_height) * 0.5,
              rng.uniform(spec.min_half_xz, spec.max_half_xz)};
    c.center = {rng.uniform(-spec.floor_half_x + c.half.x,
                            spec.floor_half_x - c.half.x),
                c.half.y,
                rng.uniform(-spec.floor_half_z + c.half.z,
                            spec.floor_half_z - c.half.z)};
    if (c.center.y - c.half.y < -1e-12 ||
        std::fabs(c.center.x) + c.half.x > spec.floor_half_x + 1e-9 ||
        std::fabs(c.center.z) + c.half.z > spec.floor_half_z + 1e-9)
      throw std::runtime_error("generate_scene: cuboid out of bounds");
    for (const Cuboid& other : scene.cuboids)
      if (std::fabs(c.center.x - other.center.x) < c.half.x + other.half.x &&
          std::fabs(c.center.z - other.center.z) < c.half.z + other.half.z)
        scene.warnings.push_back("overlapping cuboids " +
                                 std::to_string(scene.cuboids.size()));
    detail::append_cuboid(scene.mesh, c);
    scene.cuboids.push_back(c);
  }
  scene.mesh.validate();
  return scene;
}

// ---- parametric quadruped ----

struct QuadrupedSpec {
  double body_length = 0.32;
  double body_radius = 0.065;
  double leg_upper = 0.10;
  double leg_lower = 0.085;
  double foot_radius = 0.011;
  double leg_offset_z = 0.052;  // lateral hip/shoulder offset
  double neck_length = 0.08;
  double head_radius = 0.045;
  double tail_length = 0.13;
  int capsule_segments = 10;
  int capsule_rings = 3;
  int foot_segments = 12;
  int foot_rings = 4;

  // body center to standing surface
  double stand_height() const { return leg_upper + leg_lower + foot_radius; }
};

struct Quadruped {
  TriMesh mesh;
  Skeleton skeleton;
  QuadrupedSpec spec;
};

namespace detail {

// closed capsule (sphere when p0 == p1): two hemispherical caps joined
// directly; `segments` around the axis, `rings` rows per cap
inline void append_capsule(TriMesh& m, const Vec3& p0, const Vec3& p1, double r,
                           int segments, int rings) {
  Vec3 axis = p1 - p0;
  double len = axis.norm();
  Vec3 n = len > 1e-12 ? axis * (1.0 / len) : Vec3{0, 1, 0};
  Vec3 u = std::fabs(n.y) < 0.9 ? n.cross({0, 1, 0}) : n.cross({1, 0, 0});
  u = u * (1.0 / u.norm());
  Vec3 v = n.cross(u);

  int base = static_cast<int>(m.vertices.size());
  std::vector<int> prev_row;
  // bottom pole
  m.vertices.push_back(p0 - n * r);
  prev_row.assign(1, base);
  auto add_ring = [&](const Vec3& c, double ring_r, double axial) {
    std::vector<int> row;
    for (int s = 0; s < segments; ++s) {
      double a = 2.0 * kPi * s / segments;
      m.vertices.push_back(c + n * axial +
                           (u * std::cos(a) + v * std::sin(a)) * ring_r);
      row.push_back(static_cast<int>(m.vertices.size()) - 1);
    }
    return row;
  };
  auto stitch = [&](const std::vector<int>& lo, const std::vector<int>& hi) {
    if (lo.size() == 1) {
      for (int s = 0; s < segments; ++s)
        m.faces.push_back({lo[0], hi[(s + 1) % segments], hi[s]});
      return;
    }
    for (int s = 0; s < segments; ++s) {
      int s2 = (s + 1) % segments;
      m.faces.push_back({lo[s], hi[s2], hi[s]});
      m.faces.push_back({lo[s], lo[s2], hi[s2]});
    }
  };

  for (int k = 1; k <= rings; ++k) {
    double theta = -0.5 * kPi + 0.5 * kPi * k / rings;
    auto row = add_ring(p0, r * std::cos(theta), r * std::sin(theta));
    stitch(prev_row, row);
    prev_row = row;
  }
  for (int k = 0; k <= rings; ++k) {
    double theta = 0.5 * kPi * k / rings;
    auto row = add_ring(p1, r * std::cos(theta), r * std::sin(theta));
    if (k == rings) {
      m.vertices.push_back(p1 + n * r);
      int pole = static_cast<int>(m.vertices.size()) - 1;
      for (int s = 0; s < segments; ++s)
        m.faces.push_back({prev_row[s], prev_row[(s + 1) % segments], pole});
      break;
    }
    stitch(prev_row, row);
    prev_row = row;
  }
}

}  // namespace detail

// Canonical frame: body axis along +x centered at the origin, +y up.
// Feet rest at y = -stand_height(), so a standing pose translates the body
// center to (x, terrain + stand_height, z).
inline Quadruped build_quadruped(const QuadrupedSpec& spec = {}) {
  Quadruped q;
  q.spec = spec;
  const double hx = spec.body_length * 0.5;
  const double lz = spec.leg_offset_z;
  const double knee_y = -spec.leg_upper;
  const double ankle_y = -(spec.leg_upper + spec.leg_lower);

  Skeleton& s = q.skeleton;
  // joints: 2 spine + neck + tail + 4 legs x (hip, knee, ankle) = 16
  auto add_joint = [&](int parent, const Vec3& pos, const Vec3& scale) {
    s.parent.push_back(parent);
    s.rest_joints.push_back(pos);
    s.bone_scale.push_back(scale);  // scale of the bone hanging off this joint
    return static_cast<int>(s.parent.size()) - 1;
  };
  // root bone (the body) comes first in bone_scale
  s.bone_scale.push_back({hx * 0.9, spec.body_radius, spec.body_radius});

  const Vec3 spine_scale{0.06, 0.05, 0.05};
  const Vec3 upper_scale{0.03, spec.leg_upper * 0.55, 0.03};
  const Vec3 lower_scale{0.025, spec.leg_lower * 0.55, 0.025};
  const Vec3 foot_scale{spec.foot_radius * 2.0, spec.foot_radius * 2.0,
                        spec.foot_radius * 2.0};

  int spine_rear = add_joint(-1, {-hx, 0, 0}, spine_scale);
  int spine_front = add_joint(spine_rear, {hx, 0, 0}, spine_scale);
  add_joint(spine_front, {hx + spec.neck_length, 0.05, 0},
            {spec.head_radius, spec.head_radius, spec.head_radius});  // neck
  add_joint(spine_rear, {-hx - spec.tail_length, 0.03, 0},
            {0.02, 0.02, 0.02});  // tail

  std::vector<int> ankle_joints;
  for (int leg = 0; leg < 4; ++leg) {
    bool front = leg < 2;
    double sign_z = (leg % 2 == 0) ? 1.0 : -1.0;
    double x = front ? hx : -hx;
    int attach = front ? spine_front : spine_rear;
    int hip = add_joint(attach, {x, 0, sign_z * lz}, upper_scale);
    int knee = add_joint(hip, {x, knee_y, sign_z * lz}, lower_scale);
    int ankle = add_joint(knee, {x, ankle_y, sign_z * lz}, foot_scale);
    ankle_joints.push_back(ankle);
  }
  for (int a : ankle_joints) s.limb_bones.push_back(a + 1);
  s.validate();

  TriMesh& m = q.mesh;
  detail::append_capsule(m, {-hx, 0, 0}, {hx, 0, 0}, spec.body_radius,
                         spec.capsule_segments, spec.capsule_rings);
  detail::append_capsule(m, {hx, 0, 0}, {hx + spec.neck_length, 0.05, 0}, 0.038,
                         spec.capsule_segments, spec.capsule_rings);
  detail::append_capsule(m, {hx + spec.neck_length, 0.05, 0},
                         {hx + spec.neck_length + 0.02, 0.06, 0},
                         spec.head_radius, spec.capsule_segments,
                         spec.capsule_rings);
  detail::append_capsule(m, {-hx, 0.02, 0},
                         {-hx - spec.tail_length, 0.03, 0}, 0.015,
                         spec.capsule_segments, spec.capsule_rings);
  for (int leg = 0; leg < 4; ++leg) {
    bool front = leg < 2;
    double sign_z = (leg % 2 == 0) ? 1.0 : -1.0;
    double x = front ? hx : -hx;
    Vec3 hip{x, 0, sign_z * lz};
    Vec3 knee{x, knee_y, sign_z * lz};
    Vec3 ankle{x, ankle_y, sign_z * lz};
    Vec3 shin_end{x, ankle_y + 0.03, sign_z * lz};  // foot sphere owns the rest
    detail::append_capsule(m, hip, knee, 0.025, spec.capsule_segments,
                           spec.capsule_rings);
    detail::append_capsule(m, knee, shin_end, 0.02, spec.capsule_segments,
                           spec.capsule_rings);
    detail::append_capsule(m, ankle, ankle, spec.foot_radius,
                           spec.foot_segments, spec.foot_rings);
  }
  m.validate();
  return q;
}

// ---- kinematic motion synthesis ----

struct MotionParams {
  double fps = 30.0;
  double walk_speed = 0.3;
  double gait_hz = 1.6;
  double hip_amp = 0.35;
  double knee_amp = 0.55;
  double breathe_amp = 0.02;   // idle articulation bound
  double jump_flight_time = 0.4;
  double max_jump_gap = 0.8;   // tallest reachable height difference
  double gravity = 9.8;
  double crouch_angle = 0.9;   // knee bend at full crouch
};

struct MotionRecord {
  std::vector<RigidTransform> trajectory;       // one pose per frame
  std::vector<ArticulationFrame> articulations; // aligned with trajectory
  std::vector<Behavior> frame_tags;
  PointCloud bg_points;  // fixed per record
  double fps = 30.0;

  int frames() const { return static_cast<int>(trajectory.size()); }
};

namespace detail {

// joint indices fixed by build_quadruped
inline constexpr int kNeck = 2;
inline constexpr int kTail = 3;
inline int hip_joint(int leg) { return 4 + 3 * leg; }
inline int knee_joint(int leg) { return 5 + 3 * leg; }

inline RigidTransform heading_pose(double x, double y, double z, double yaw) {
  RigidTransform g;
  g.rotation = UnitQuat::from_axis_angle({0, yaw, 0}).canonical();
  g.translation = {x, y, z};
  return g;
}

// legs: diagonal trot pairs; knee flexes only while the hip swings forward
inline ArticulationFrame gait_frame(int joints, double phase,
                                    const MotionParams& p) {
  std::vector<Vec3> rot(joints, Vec3{});
  const double leg_phase[4] = {0.0, kPi, kPi, 0.0};  // FL, FR, RL, RR
  for (int leg = 0; leg < 4; ++leg) {
    double s = std::sin(phase + leg_phase[leg]);
    rot[hip_joint(leg)] = {0, 0, p.hip_amp * s};
    double swing = std::max(0.0, s);
    rot[knee_joint(leg)] = {0, 0, -p.knee_amp * swing * swing};
  }
  rot[kNeck] = {0, 0, 0.3 * p.breathe_amp * std::sin(phase * 0.5)};
  rot[kTail] = {0, 0.5 * p.breathe_amp * std::sin(phase * 0.5 + 1.0), 0};
  return ArticulationFrame(std::move(rot));
}

inline ArticulationFrame idle_frame(int joints, double t_sec,
                                    const MotionParams& p) {
  std::vector<Vec3> rot(joints, Vec3{});
  rot[kNeck] = {0, 0, p.breathe_amp * std::sin(2.0 * kPi * 0.4 * t_sec)};
  rot[kTail] = {0, p.breathe_amp * std::sin(2.0 * kPi * 0.3 * t_sec + 0.7), 0};
  return ArticulationFrame(std::move(rot));
}

// symmetric knee crouch; the body drop keeping feet planted is
// leg_lower * (1 - cos(bend))
inline ArticulationFrame crouch_frame(int joints, double bend,
                                      const MotionParams& p, double t_sec) {
  ArticulationFrame f = idle_frame(joints, t_sec, p);
  for (int leg = 0; leg < 4; ++leg)
    f.joint_rotations[knee_joint(leg)] = {0, 0, -bend};
  return f;
}

}  // namespace detail

inline MotionRecord generate_motion(const Scene& scene, const Quadruped& quad,
                                    Behavior behavior, double duration_s,
                                    std::uint64_t seed,
                                    const MotionParams& params = {}) {
  const int joints = quad.skeleton.joints();
  const double H = quad.spec.stand_height();
  const int n_frames = std::max(2, static_cast<int>(duration_s * params.fps) + 1);
  Rng rng(derive_seed(seed, "motion"));
  MotionRecord rec;
  rec.fps = params.fps;
  rec.trajectory.reserve(n_frames);
  rec.articulations.reserve(n_frames);
  rec.frame_tags.reserve(n_frames);

  auto pick_clear_floor = [&](double margin) -> Vec3 {
    double best_clear = -1e9;
    Vec3 best{0, 0, 0};
    for (int attempt = 0; attempt < 256; ++attempt) {
      double x = rng.uniform(-scene.floor_half_x * 0.95,
                             scene.floor_half_x * 0.95);
      double z = rng.uniform(-scene.floor_half_z * 0.95,
                             scene.floor_half_z * 0.95);
      double clear = std::min(scene.floor_half_x - std::fabs(x),
                              scene.floor_half_z - std::fabs(z));
      for (const Cuboid& c : scene.cuboids)
        clear = std::min(clear,
                         std::max(std::fabs(x - c.center.x) - c.half.x,
                                  std::fabs(z - c.center.z) - c.half.z));
      if (clear >= margin) return {x, 0, z};
      if (clear > best_clear) {
        best_clear = clear;
        best = {x, 0, z};
      }
    }
    return best;  // most open spot seen; motion then simply stays put
  };

  if (behavior == Behavior::kIdle) {
    Vec3 pos = pick_clear_floor(0.3);
    double yaw = rng.uniform(0, 2 * kPi);
    RigidTransform g = detail::heading_pose(pos.x, H, pos.z, yaw);
    for (int f = 0; f < n_frames; ++f) {
      rec.trajectory.push_back(g);
      rec.articulations.push_back(
          detail::idle_frame(joints, f / params.fps, params));
      rec.frame_tags.push_back(Behavior::kIdle);
    }
    return rec;
  }

  if (behavior == Behavior::kWalk) {
    // hard clearance: the farthest foot reach from the body center plus slack,
    // held inductively so every visited position keeps full-density floor
    // under all four feet
    const double margin = 0.25;
    Vec3 pos = pick_clear_floor(margin + 0.02);
    double yaw = rng.uniform(0, 2 * kPi);
    // low-frequency seeded wander
    double a1 = rng.uniform(-0.8, 0.8), f1 = rng.uniform(0.1, 0.3);
    double a2 = rng.uniform(-0.4, 0.4), f2 = rng.uniform(0.3, 0.7);
    double p1 = rng.uniform(0, 2 * kPi), p2 = rng.uniform(0, 2 * kPi);
    const double dt = 1.0 / params.fps;
    for (int f = 0; f < n_frames; ++f) {
      double t = f * dt;
      rec.trajectory.push_back(detail::heading_pose(pos.x, H, pos.z, yaw));
      rec.articulations.push_back(detail::gait_frame(
          joints, 2 * kPi * params.gait_hz * t, params));
      rec.frame_tags.push_back(Behavior::kWalk);
      double desired = a1 * std::cos(2 * kPi * f1 * t + p1) +
                       a2 * std::cos(2 * kPi * f2 * t + p2);
      double new_yaw = yaw + desired * dt * 2.0;
      // steer away from walls and furniture; a candidate heading must keep
      // the lookahead point roomy and the very next position fully clear
      double step = params.walk_speed * dt;
      bool moved = false;
      for (int k = 0; k < 96; ++k) {
        double nx = pos.x + std::cos(new_yaw) * step;
        double nz = pos.z - std::sin(new_yaw) * step;
        double lx = pos.x + std::cos(new_yaw) * (step + margin);
        double lz = pos.z - std::sin(new_yaw) * (step + margin);
        if (scene.on_clear_floor(nx, nz, margin) &&
            scene.on_clear_floor(lx, lz, margin * 0.8)) {
          yaw = new_yaw;
          pos.x = nx;
          pos.z = nz;
          moved = true;
          break;
        }
        new_yaw += (k % 2 == 0 ? 1 : -1) * 0.1 * (k + 1);
      }
      if (!moved) {
        // boxed in: mark time in place rather than stepping somewhere unsafe
        continue;
      }
    }
    return rec;
  }

  // jump: idle lead-in, crouch, ballistic flight, landing absorb, idle out
  if (scene.cuboids.empty())
    throw std::runtime_error("generate_motion: jump needs a cuboid in the scene");
  const Cuboid& box = scene.cuboids[rng.below(scene.cuboids.size())];
  double top = box.center.y + box.half.y;
  if (top > params.max_jump_gap)
    throw std::runtime_error("generate_motion: unreachable jump, height gap " +
                             std::to_string(top));
  bool up = rng.uniform() < 0.5;
  // approach point on the floor next to the box, facing its center
  double side = rng.uniform() < 0.5 ? 1.0 : -1.0;
  bool along_x = rng.uniform() < 0.5;
  Vec3 floor_pt{box.center.x + (along_x ? side * (box.half.x + 0.18) : 0), 0,
                box.center.z + (along_x ? 0 : side * (box.half.z + 0.18))};
  floor_pt.x = std::clamp(floor_pt.x, -scene.floor_half_x + 0.15,
                          scene.floor_half_x - 0.15);
  floor_pt.z = std::clamp(floor_pt.z, -scene.floor_half_z + 0.15,
                          scene.floor_half_z - 0.15);
  Vec3 top_pt{box.center.x, top, box.center.z};
  Vec3 from = up ? floor_pt : top_pt;
  Vec3 to = up ? top_pt : floor_pt;
  double yaw = std::atan2(-(to.z - from.z), to.x - from.x);

  const double dt = 1.0 / params.fps;
  const int lead = static_cast<int>(0.3 * params.fps);
  const int crouch_n = static_cast<int>(0.25 * params.fps);
  const int flight_n =
      std::max(2, static_cast<int>(params.jump_flight_time * params.fps));
  const int absorb_n = static_cast<int>(0.25 * params.fps);
  const double ll = quad.spec.leg_lower;
  const double bend_max = params.crouch_angle;

  auto push = [&](const RigidTransform& g, const ArticulationFrame& a) {
    rec.trajectory.push_back(g);
    rec.articulations.push_back(a);
    rec.frame_tags.push_back(Behavior::kJump);
  };

  int f = 0;
  for (int i = 0; i < lead && f < n_frames; ++i, ++f)
    push(detail::heading_pose(from.x, from.y + H, from.z, yaw),
         detail::idle_frame(joints, f * dt, params));
  for (int i = 0; i < crouch_n && f < n_frames; ++i, ++f) {
    double bend = bend_max * (i + 1) / crouch_n;
    double h = H - ll * (1.0 - std::cos(bend));
    push(detail::heading_pose(from.x, from.y + h, from.z, yaw),
         detail::crouch_frame(joints, bend, params, f * dt));
  }
  // ballistic arc from the crouched takeoff height to a straight-leg landing
  double y_take = from.y + H - ll * (1.0 - std::cos(bend_max));
  double y_land = to.y + H;
  double t_f = flight_n * dt;
  double v0 = (y_land - y_take + 0.5 * params.gravity * t_f * t_f) / t_f;
  for (int i = 1; i <= flight_n && f < n_frames; ++i, ++f) {
    double tau = i * dt;
    double y = y_take + v0 * tau - 0.5 * params.gravity * tau * tau;
    double frac = static_cast<double>(i) / flight_n;
    Vec3 xz = from + (to - from) * frac;  // horizontal interpolation
    double bend = bend_max * std::max(0.0, 1.0 - 3.0 * frac);  // extend quickly
    push(detail::heading_pose(xz.x, y, xz.z, yaw),
         detail::crouch_frame(joints, bend, params, f * dt));
  }
  for (int i = 0; i < absorb_n && f < n_frames; ++i, ++f) {
    double k = static_cast<double>(i + 1) / absorb_n;
    double bend = bend_max * 0.6 * std::sin(kPi * k);
    double h = H - ll * (1.0 - std::cos(bend));
    push(detail::heading_pose(to.x, to.y + h, to.z, yaw),
         detail::crouch_frame(joints, bend, params, f * dt));
  }
  while (f < n_frames) {
    push(detail::heading_pose(to.x, to.y + H, to.z, yaw),
         detail::idle_frame(joints, f * dt, params));
    ++f;
  }
  return rec;
}

// ---- clip extraction, normalization, augmentation ----

inline MotionClip sample_clip(const MotionRecord& record, const Quadruped& quad,
                              const SkinWeights& mesh_weights,
                              const PointCloud& limb_points, int t_frames,
                              std::uint64_t seed) {
  const int n = record.frames();
  if (n < t_frames + 1)
    throw std::invalid_argument("sample_clip: record too short (" +
                                std::to_string(n) + " frames, need " +
                                std::to_string(t_frames + 1) + ")");
  Rng rng(derive_seed(seed, "clip"));
  int start = static_cast<int>(rng.below(n - t_frames));

  MotionClip clip;
  clip.start_pose = record.trajectory[start];
  clip.start_pose.rotation = clip.start_pose.rotation.canonical();
  std::vector<RigidTransform> window(
      record.trajectory.begin() + start,
      record.trajectory.begin() + start + t_frames + 1);
  clip.deltas = extract_deltas(window);
  clip.articulations.assign(record.articulations.begin() + start,
                            record.articulations.begin() + start + t_frames + 1);
  clip.limb_points = limb_points;
  clip.bg_points = record.bg_points;

  // conditioning distance at the window start, posed mesh center to bg
  TriMesh posed = pose_mesh(quad.mesh, quad.skeleton, mesh_weights,
                            record.articulations[start],
                            record.trajectory[start]);
  clip.dist_fg = center_distance(posed, record.bg_points);

  int counts[3] = {0, 0, 0};
  for (int t = start; t <= start + t_frames; ++t)
    counts[static_cast<int>(record.frame_tags[t])]++;
  int best = 0;
  for (int k = 1; k < 3; ++k)
    if (counts[k] > counts[best]) best = k;
  clip.tag = static_cast<Behavior>(best);
  clip.validate();
  return clip;
}

// shift the scene centroid to the origin and the motion by the same vector
inline void normalize_record(MotionRecord& record, Scene& scene) {
  Vec3 c = centroid(scene.mesh.vertices);
  for (Vec3& v : scene.mesh.vertices) v -= c;
  for (Cuboid& cub : scene.cuboids) cub.center -= c;
  for (Vec3& p : record.bg_points.points) p -= c;
  for (RigidTransform& g : record.trajectory) g.translation -= c;
}

struct AugmentParams {
  double max_shift_xz = 0.5;
  double max_shift_y = 0.1;
};

// one rigid transform (yaw rotation + translation) applied coherently to the
// start pose and the background; deltas, articulations, limb cloud and the
// conditioning distance are all relative quantities and stay put
inline MotionClip apply_augment(const MotionClip& clip, const RigidTransform& q) {
  MotionClip out = clip;
  out.start_pose = compose(q, clip.start_pose);
  out.start_pose.rotation = out.start_pose.rotation.canonical();
  out.bg_points = apply_points(q, clip.bg_points);
  return out;
}

inline RigidTransform draw_augment(std::uint64_t seed,
                                   const AugmentParams& params = {}) {
  Rng rng(derive_seed(seed, "augment"));
  RigidTransform q;
  q.rotation = UnitQuat::from_axis_angle({0, rng.uniform(0, 2 * kPi), 0});
  q.translation = {rng.uniform(-params.max_shift_xz, params.max_shift_xz),
                   rng.uniform(-params.max_shift_y, params.max_shift_y),
                   rng.uniform(-params.max_shift_xz, params.max_shift_xz)};
  return q;
}

inline MotionClip augment(const MotionClip& clip, std::uint64_t seed,
                          const AugmentParams& params = {}) {
  return apply_augment(clip, draw_augment(seed, params));
}

// ---- dataset assembly ----

struct DatasetSpec {
  int n_scenes = 6;
  int n_records = 64;
  int n_clips = 512;
  int t_frames = 32;
  int n_fg = 256;
  int n_bg = 1024;
  double record_seconds = 10.0;
  double walk_fraction = 0.55;
  double jump_fraction = 0.25;  // remainder is idle
  SceneSpec scene;
  QuadrupedSpec quadruped;
  MotionParams motion;
};

struct Dataset {
  std::vector<Scene> scenes;
  Quadruped quadruped;
  SkinWeights mesh_weights;
  PointCloud limb_points;
  std::vector<MotionRecord> records;
  std::vector<int> record_scene;
  std::vector<MotionClip> clips;
};

inline Behavior pick_behavior(const DatasetSpec& spec, double u) {
  if (u < spec.walk_fraction) return Behavior::kWalk;
  if (u < spec.walk_fraction + spec.jump_fraction) return Behavior::kJump;
  return Behavior::kIdle;
}

inline Dataset make_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.n_records < 1 || spec.n_clips < 1 || spec.n_scenes < 1)
    throw std::invalid_argument("make_dataset: counts must be positive");
  Dataset ds;
  ds.quadruped = build_quadruped(spec.quadruped);
  ds.mesh_weights = skinning_weights(PointCloud{ds.quadruped.mesh.vertices},
                                     gaussian_bones(ds.quadruped.skeleton));
  ds.limb_points = limb_vertices(ds.quadruped.mesh, ds.quadruped.skeleton,
                                 spec.n_fg);
  for (int i = 0; i < spec.n_scenes; ++i)
    ds.scenes.push_back(generate_scene(spec.scene, derive_seed(seed, "scene", i)));

  // synthesize all records against the raw scenes first
  for (int r = 0; r < spec.n_records; ++r) {
    int scene_idx = r % spec.n_scenes;
    Rng rng(derive_seed(seed, "record", r));
    Behavior behavior = pick_behavior(spec, rng.uniform());
    MotionRecord rec =
        generate_motion(ds.scenes[scene_idx], ds.quadruped, behavior,
                        spec.record_seconds, derive_seed(seed, "traj", r),
                        spec.motion);
    rec.bg_points = sample_surface(ds.scenes[scene_idx].mesh, spec.n_bg,
                                   derive_seed(seed, "bg", r));
    ds.records.push_back(std::move(rec));
    ds.record_scene.push_back(scene_idx);
  }

  // then center every scene once, shifting its records by the same vector
  for (int i = 0; i < spec.n_scenes; ++i) {
    Vec3 c = centroid(ds.scenes[i].mesh.vertices);
    for (Vec3& v : ds.scenes[i].mesh.vertices) v -= c;
    for (Cuboid& cub : ds.scenes[i].cuboids) cub.center -= c;
    for (int r = 0; r < spec.n_records; ++r) {
      if (ds.record_scene[r] != i) continue;
      for (Vec3& p : ds.records[r].bg_points.points) p -= c;
      for (RigidTransform& g : ds.records[r].trajectory) g.translation -= c;
    }
  }

  for (int c = 0; c < spec.n_clips; ++c) {
    int r = c % spec.n_records;
    ds.clips.push_back(sample_clip(ds.records[r], ds.quadruped, ds.mesh_weights,
                                   ds.limb_points, spec.t_frames,
                                   derive_seed(seed, "window", c)));
  }
  return ds;
}

}  // namespace vpet

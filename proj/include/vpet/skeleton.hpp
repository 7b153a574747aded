#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "vpet/geometry.hpp"

namespace vpet {

// B joints driving B+1 bones: bone 0 is the root bone (rigid with the
// global pose), bone j+1 hangs off joint j. parent[j] is the parent joint
// index, -1 when the joint attaches directly to the root bone.
struct Skeleton {
  std::vector<int> parent;
  std::vector<Vec3> rest_joints;
  std::vector<Vec3> bone_scale;  // B+1 Gaussian axis scales, strictly positive
  std::vector<int> limb_bones;   // bone indices treated as feet/lower legs

  int joints() const { return static_cast<int>(parent.size()); }
  int bones() const { return joints() + 1; }

  void validate() const {
    const int b = joints();
    if (static_cast<int>(rest_joints.size()) != b)
      throw std::invalid_argument("Skeleton: joint count mismatch");
    if (static_cast<int>(bone_scale.size()) != b + 1)
      throw std::invalid_argument("Skeleton: expected B+1 bone scales");
    for (const Vec3& s : bone_scale)
      if (!(s.x > 0.0 && s.y > 0.0 && s.z > 0.0))
        throw std::invalid_argument("Skeleton: bone scales must be positive");
    for (int j = 0; j < b; ++j) {
      if (parent[j] < -1 || parent[j] >= b)
        throw std::invalid_argument("Skeleton: parent index out of range");
      // walk to a root; more than B hops means a cycle
      int hops = 0;
      for (int k = j; k != -1; k = parent[k])
        if (++hops > b)
          throw std::invalid_argument("Skeleton: cycle in parent array");
    }
    for (int bone : limb_bones)
      if (bone < 0 || bone > b)
        throw std::invalid_argument("Skeleton: limb bone index out of range");
  }

  std::vector<std::vector<int>> children() const {
    std::vector<std::vector<int>> ch(joints());
    for (int j = 0; j < joints(); ++j)
      if (parent[j] >= 0) ch[parent[j]].push_back(j);
    return ch;
  }
};

// per-joint axis-angle rotations, wrapped to magnitude < pi on construction
struct ArticulationFrame {
  std::vector<Vec3> joint_rotations;

  ArticulationFrame() = default;
  explicit ArticulationFrame(std::vector<Vec3> rot)
      : joint_rotations(std::move(rot)) {
    wrap();
  }

  static ArticulationFrame zeros(int joints) {
    ArticulationFrame f;
    f.joint_rotations.assign(joints, Vec3{});
    return f;
  }

  void wrap() {
    for (Vec3& r : joint_rotations) {
      double a = r.norm();
      if (a >= kPi) {
        // re-extract through the quaternion, which folds into (-pi, pi]
        r = UnitQuat::from_axis_angle(r).to_axis_angle();
      }
    }
  }

  int joints() const { return static_cast<int>(joint_rotations.size()); }
};

// per-bone canonical-to-posed transforms (identity everywhere at zero pose)
struct BonePose {
  std::vector<RigidTransform> bone_transforms;

  int bones() const { return static_cast<int>(bone_transforms.size()); }
};

struct GaussianBone {
  Vec3 center;
  UnitQuat orientation;
  Vec3 scale;
};

// row-major N x (B+1) convex weights
struct SkinWeights {
  int bones = 0;
  std::vector<double> w;

  std::size_t size() const { return bones ? w.size() / bones : 0; }
  std::span<const double> row(std::size_t i) const {
    return {w.data() + i * bones, static_cast<std::size_t>(bones)};
  }
  std::span<double> row(std::size_t i) {
    return {w.data() + i * bones, static_cast<std::size_t>(bones)};
  }
};

// Joint world transforms are chained root-to-leaf: each joint translates to
// its rest offset and applies its articulation rotation. The root bone stays
// identity; the global pose is applied separately.
inline BonePose forward_kinematics(const Skeleton& skel,
                                   const ArticulationFrame& a) {
  skel.validate();
  const int b = skel.joints();
  if (a.joints() != b)
    throw std::invalid_argument("forward_kinematics: articulation size mismatch");

  std::vector<RigidTransform> world(b);
  std::vector<bool> done(b, false);
  // parents may appear after children in the array; resolve recursively
  std::vector<int> stack;
  for (int j0 = 0; j0 < b; ++j0) {
    if (done[j0]) continue;
    stack.clear();
    int j = j0;
    while (j != -1 && !done[j]) {
      stack.push_back(j);
      j = skel.parent[j];
    }
    for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
      int k = *it;
      int p = skel.parent[k];
      Vec3 offset = p == -1 ? skel.rest_joints[k]
                            : skel.rest_joints[k] - skel.rest_joints[p];
      RigidTransform local;
      local.rotation = UnitQuat::from_axis_angle(a.joint_rotations[k]);
      local.translation = offset;
      world[k] = p == -1 ? local : compose(world[p], local);
      done[k] = true;
    }
  }

  BonePose pose;
  pose.bone_transforms.resize(b + 1);
  pose.bone_transforms[0] = RigidTransform::identity();
  for (int j = 0; j < b; ++j) {
    RigidTransform unrest;
    unrest.translation = -skel.rest_joints[j];
    pose.bone_transforms[j + 1] = compose(world[j], unrest);
  }
  return pose;
}

// Anisotropic Gaussian per bone in canonical space. Bone j+1 spans joint j
// to the mean of its child joints (leaf bones collapse onto the joint);
// the root bone sits at joint 0. Orientations are the accumulated rest
// orientation, which is the identity for offset-only rest chains.
inline std::vector<GaussianBone> gaussian_bones(const Skeleton& skel) {
  skel.validate();
  const int b = skel.joints();
  auto ch = skel.children();
  std::vector<GaussianBone> bones(b + 1);
  bones[0].center = b > 0 ? skel.rest_joints[0] : Vec3{};
  bones[0].orientation = UnitQuat::identity();
  bones[0].scale = skel.bone_scale[0];
  for (int j = 0; j < b; ++j) {
    Vec3 tip = skel.rest_joints[j];
    if (!ch[j].empty()) {
      Vec3 m;
      for (int c : ch[j]) m += skel.rest_joints[c];
      tip = m * (1.0 / static_cast<double>(ch[j].size()));
    }
    GaussianBone& g = bones[j + 1];
    g.center = (skel.rest_joints[j] + tip) * 0.5;
    g.orientation = UnitQuat::identity();
    g.scale = skel.bone_scale[j + 1];
  }
  return bones;
}

inline double mahalanobis_sq(const GaussianBone& g, const Vec3& x) {
  Vec3 local = g.orientation.conjugate().rotate(x - g.center);
  double a = local.x / g.scale.x;
  double b = local.y / g.scale.y;
  double c = local.z / g.scale.z;
  return a * a + b * b + c * c;
}

// softmax over bones of -d_M^2 / temperature
inline SkinWeights skinning_weights(const PointCloud& x,
                                    const std::vector<GaussianBone>& bones,
                                    double temperature = 1.0) {
  if (bones.empty()) throw std::invalid_argument("skinning_weights: no bones");
  SkinWeights out;
  out.bones = static_cast<int>(bones.size());
  out.w.resize(x.size() * bones.size());
  std::vector<double> logits(bones.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < bones.size(); ++k) {
      logits[k] = -mahalanobis_sq(bones[k], x.points[i]) / temperature;
      m = std::max(m, logits[k]);
    }
    double denom = 0.0;
    auto row = out.row(i);
    for (std::size_t k = 0; k < bones.size(); ++k) {
      row[k] = std::exp(logits[k] - m);
      denom += row[k];
    }
    for (std::size_t k = 0; k < bones.size(); ++k) row[k] /= denom;
  }
  return out;
}

// Dual-quaternion linear blend of bone transforms. Real parts are flipped
// into the hemisphere of the highest-weight bone before accumulation.
inline RigidTransform blend_bone_transforms(
    const std::vector<RigidTransform>& bones, std::span<const double> weights) {
  if (bones.size() != weights.size())
    throw std::invalid_argument("blend: weight count mismatch");
  std::size_t pivot = 0;
  for (std::size_t k = 1; k < weights.size(); ++k)
    if (weights[k] > weights[pivot]) pivot = k;
  const UnitQuat pivot_real = bones[pivot].rotation;

  std::array<double, 4> real{0, 0, 0, 0}, dual{0, 0, 0, 0};
  for (std::size_t k = 0; k < bones.size(); ++k) {
    if (weights[k] == 0.0) continue;
    DualQuat dq = DualQuat::from_rigid(bones[k]);
    double s = dq.real.dot(pivot_real) < 0.0 ? -weights[k] : weights[k];
    real[0] += s * dq.real.w;
    real[1] += s * dq.real.x;
    real[2] += s * dq.real.y;
    real[3] += s * dq.real.z;
    for (int c = 0; c < 4; ++c) dual[c] += s * dq.dual[c];
  }
  double n = std::sqrt(real[0] * real[0] + real[1] * real[1] +
                       real[2] * real[2] + real[3] * real[3]);
  if (n < 1e-12)
    throw std::runtime_error("blend: zero-norm dual quaternion blend");
  DualQuat blended;
  blended.real = UnitQuat(real[0], real[1], real[2], real[3]);
  for (int c = 0; c < 4; ++c) blended.dual[c] = dual[c] / n;
  return blended.to_rigid();
}

// dense warp field D(x): per-vertex dual-quaternion blend of the bone poses
inline PointCloud qbs_warp(const Skeleton& skel, const SkinWeights& w,
                           const ArticulationFrame& a, const PointCloud& verts) {
  if (w.size() != verts.size())
    throw std::invalid_argument("qbs_warp: weight row count mismatch");
  BonePose pose = forward_kinematics(skel, a);
  if (w.bones != pose.bones())
    throw std::invalid_argument("qbs_warp: bone count mismatch");
  PointCloud out;
  out.points.reserve(verts.size());
  for (std::size_t i = 0; i < verts.size(); ++i) {
    RigidTransform t = blend_bone_transforms(pose.bone_transforms, w.row(i));
    out.points.push_back(t.apply(verts.points[i]));
  }
  return out;
}

// articulate in canonical space, then move to world space with g
inline TriMesh pose_mesh(const TriMesh& mesh, const Skeleton& skel,
                         const SkinWeights& w, const ArticulationFrame& a,
                         const RigidTransform& g) {
  PointCloud canon{mesh.vertices};
  PointCloud warped = qbs_warp(skel, w, a, canon);
  TriMesh out = mesh;
  out.vertices.clear();
  out.vertices.reserve(warped.size());
  for (const Vec3& p : warped.points) out.vertices.push_back(g.apply(p));
  return out;
}

inline TriMesh pose_mesh(const TriMesh& mesh, const Skeleton& skel,
                         const ArticulationFrame& a, const RigidTransform& g,
                         double temperature = 1.0) {
  SkinWeights w = skinning_weights(PointCloud{mesh.vertices},
                                   gaussian_bones(skel), temperature);
  return pose_mesh(mesh, skel, w, a, g);
}

// Canonical vertices whose argmax skin weight lands on a limb bone,
// deterministically resampled to exactly n_fg points.
inline PointCloud limb_vertices(const TriMesh& mesh, const Skeleton& skel,
                                std::size_t n_fg = 256,
                                double temperature = 1.0) {
  if (n_fg < 1) throw std::invalid_argument("limb_vertices: n_fg must be >= 1");
  SkinWeights w = skinning_weights(PointCloud{mesh.vertices},
                                   gaussian_bones(skel), temperature);
  std::vector<bool> is_limb(skel.bones(), false);
  for (int b : skel.limb_bones) is_limb[b] = true;
  std::vector<Vec3> sel;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    auto row = w.row(i);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
      if (row[k] > row[arg]) arg = k;
    if (is_limb[arg]) sel.push_back(mesh.vertices[i]);
  }
  if (sel.empty())
    throw std::runtime_error("limb_vertices: no vertex maps to a limb bone");
  PointCloud out;
  out.points.reserve(n_fg);
  if (sel.size() >= n_fg) {
    for (std::size_t i = 0; i < n_fg; ++i)
      out.points.push_back(sel[i * sel.size() / n_fg]);
  } else {
    for (std::size_t i = 0; i < n_fg; ++i)
      out.points.push_back(sel[i % sel.size()]);
  }
  return out;
}

inline nlohmann::json skeleton_to_json(const Skeleton& skel) {
  nlohmann::json j;
  j["parents"] = skel.parent;
  auto vecs = [](const std::vector<Vec3>& vs) {
    nlohmann::json a = nlohmann::json::array();
    for (const Vec3& v : vs) a.push_back({v.x, v.y, v.z});
    return a;
  };
  j["rest_joints"] = vecs(skel.rest_joints);
  j["bone_scales"] = vecs(skel.bone_scale);
  j["limb_bones"] = skel.limb_bones;
  return j;
}

inline Skeleton skeleton_from_json(const nlohmann::json& j) {
  Skeleton s;
  s.parent = j.at("parents").get<std::vector<int>>();
  auto vecs = [](const nlohmann::json& a) {
    std::vector<Vec3> out;
    for (const auto& v : a) out.push_back({v.at(0), v.at(1), v.at(2)});
    return out;
  };
  s.rest_joints = vecs(j.at("rest_joints"));
  s.bone_scale = vecs(j.at("bone_scales"));
  s.limb_bones = j.at("limb_bones").get<std::vector<int>>();
  s.validate();
  return s;
}

}  // namespace vpet

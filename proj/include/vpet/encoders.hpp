#pragma once

#include <array>
#include <string>
#include <vector>

#include "vpet/autodiff.hpp"
#include "vpet/geometry.hpp"
#include "vpet/nn.hpp"

namespace vpet {

// Widths of the shared per-point network; the embedding is the coordinatewise
// max over per-point features, so it is exactly permutation invariant.
struct PointEncoderConfig {
  std::vector<int> widths = {3, 64, 128, 128};
  int out_dim() const { return widths.back(); }
};

inline constexpr int kPoseDim = 7;        // quaternion (w >= 0) + translation
inline constexpr int kPoseFourierK = 6;   // per-scalar frequencies for poses
inline constexpr int kDistFourierK = 4;   // frequencies for the D_fg scalar
inline constexpr int kEmbedDim = 128;

inline int fourier_dim(int d, int k) { return d * (2 * k + 1); }

inline std::array<double, kPoseDim> pose_to_vec7(const RigidTransform& g) {
  UnitQuat q = g.rotation.canonical();
  return {q.w, q.x, q.y, q.z, g.translation.x, g.translation.y, g.translation.z};
}

inline RigidTransform vec7_to_pose(std::span<const double> v) {
  RigidTransform g;
  g.rotation = UnitQuat(v[0], v[1], v[2], v[3]);
  g.translation = {v[4], v[5], v[6]};
  return g;
}

inline ad::Value cloud_to_tensor(ad::Tape& tape, const PointCloud& cloud) {
  if (cloud.empty()) throw std::invalid_argument("cloud_to_tensor: empty cloud");
  std::vector<double> data;
  data.reserve(cloud.size() * 3);
  for (const Vec3& p : cloud.points) {
    data.push_back(p.x);
    data.push_back(p.y);
    data.push_back(p.z);
  }
  return tape.constant(ad::Shape{static_cast<int>(cloud.size()), 3}, data);
}

inline void create_pointnet(nn::ParamStore& store, const std::string& prefix,
                            Rng& rng, const PointEncoderConfig& cfg = {}) {
  nn::create_mlp(store, prefix, cfg.widths, rng);
}

inline ad::Value pointnet_encode(nn::Binding& params, const std::string& prefix,
                                 const ad::Value& points,
                                 const PointEncoderConfig& cfg = {}) {
  ad::Value h = nn::mlp_forward(params, prefix, points,
                                static_cast<int>(cfg.widths.size()) - 1);
  return ad::max_rows(h);
}

inline ad::Value pointnet_encode(nn::Binding& params, const std::string& prefix,
                                 const PointCloud& cloud,
                                 const PointEncoderConfig& cfg = {}) {
  return pointnet_encode(params, prefix,
                         cloud_to_tensor(params.tape(), cloud), cfg);
}

// ---- pose and sequence embedders ----

inline void create_pose_embedder(nn::ParamStore& store, const std::string& prefix,
                                 Rng& rng) {
  nn::create_mlp(store, prefix,
                 {fourier_dim(kPoseDim, kPoseFourierK), kEmbedDim, kEmbedDim},
                 rng);
}

// rows of 7-number poses -> [M, 128]; one row per pose, shared parameters
inline ad::Value embed_pose_rows(nn::Binding& params, const std::string& prefix,
                                 const ad::Value& pose_rows) {
  ad::Value f = ad::fourier_embed(pose_rows, kPoseFourierK);
  return nn::mlp_forward(params, prefix, f, 2);
}

inline ad::Value embed_pose(nn::Binding& params, const std::string& prefix,
                            const RigidTransform& g) {
  auto v = pose_to_vec7(g);
  ad::Value rows = params.tape().constant(
      ad::Shape{1, kPoseDim}, std::vector<double>(v.begin(), v.end()));
  return ad::row(embed_pose_rows(params, prefix, rows), 0);
}

inline ad::Value poses_to_rows(ad::Tape& tape,
                               const std::vector<RigidTransform>& poses) {
  std::vector<double> data;
  data.reserve(poses.size() * kPoseDim);
  for (const RigidTransform& g : poses) {
    auto v = pose_to_vec7(g);
    data.insert(data.end(), v.begin(), v.end());
  }
  return tape.constant(
      ad::Shape{static_cast<int>(poses.size()), kPoseDim}, data);
}

// per-step embedding of a delta sequence, time-aligned rows
inline ad::Value embed_delta_sequence(nn::Binding& params,
                                      const std::string& prefix,
                                      const ad::Value& delta_rows) {
  return embed_pose_rows(params, prefix, delta_rows);
}

// ---- condition assembly ----

struct ConditionLayout {
  int pose = kEmbedDim;
  int limb = kEmbedDim;
  int bg = kEmbedDim;
  int dist = fourier_dim(1, kDistFourierK);
  int total() const { return pose + limb + bg + dist; }
};

inline ad::Value embed_dfg(ad::Tape& tape, double d_fg) {
  ad::Value raw = tape.constant(ad::Shape{1}, std::vector<double>{d_fg});
  return ad::fourier_embed(raw, kDistFourierK);
}

// fixed-order concatenation [z_G0 | z_limb | z_bg | fourier(D_fg)]
inline ad::Value build_condition_traj(const ad::Value& z_g0,
                                      const ad::Value& z_limb,
                                      const ad::Value& z_bg,
                                      const ad::Value& dfg_embedded,
                                      const ConditionLayout& layout = {}) {
  if (z_g0.size() != layout.pose || z_limb.size() != layout.limb ||
      z_bg.size() != layout.bg || dfg_embedded.size() != layout.dist)
    throw std::invalid_argument("build_condition_traj: component dim mismatch");
  return ad::concat1d({z_g0, z_limb, z_bg, dfg_embedded});
}

}  // namespace vpet

#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vpet/geometry.hpp"
#include "vpet/skeleton.hpp"

namespace vpet {

enum class Behavior { kWalk, kJump, kIdle };

inline const char* to_string(Behavior b) {
  switch (b) {
    case Behavior::kWalk: return "walk";
    case Behavior::kJump: return "jump";
    case Behavior::kIdle: return "idle";
  }
  return "walk";
}

inline Behavior behavior_from_string(const std::string& s) {
  if (s == "walk") return Behavior::kWalk;
  if (s == "jump") return Behavior::kJump;
  if (s == "idle") return Behavior::kIdle;
  throw std::runtime_error("unknown behavior tag: " + s);
}

// One training sample: a start pose, T pose deltas, T+1 articulation frames,
// the canonical limb cloud, the background cloud, and the start-distance
// conditioning scalar.
struct MotionClip {
  RigidTransform start_pose;
  std::vector<RigidTransform> deltas;
  std::vector<ArticulationFrame> articulations;
  PointCloud limb_points;
  PointCloud bg_points;
  double dist_fg = 0.0;
  Behavior tag = Behavior::kWalk;

  int t_frames() const { return static_cast<int>(deltas.size()); }
  int joints() const {
    return articulations.empty() ? 0 : articulations.front().joints();
  }

  void validate() const {
    if (deltas.empty()) throw std::invalid_argument("MotionClip: no deltas");
    if (articulations.size() != deltas.size() + 1)
      throw std::invalid_argument("MotionClip: need T+1 articulation frames");
    if (limb_points.empty() || bg_points.empty())
      throw std::invalid_argument("MotionClip: empty point clouds");
    if (!(dist_fg >= 0.0))
      throw std::invalid_argument("MotionClip: negative start distance");
    for (const auto& a : articulations)
      if (a.joints() != articulations.front().joints())
        throw std::invalid_argument("MotionClip: joint count drift");
  }
};

// G_t = compose(G_{t-1}, dG_t); returns T+1 poses including the start
inline std::vector<RigidTransform> integrate_trajectory(
    const RigidTransform& g0, const std::vector<RigidTransform>& deltas) {
  std::vector<RigidTransform> out;
  out.reserve(deltas.size() + 1);
  out.push_back(g0);
  for (const RigidTransform& d : deltas) out.push_back(compose(out.back(), d));
  return out;
}

// inverse of integrate_trajectory; rotations canonicalized for stable storage
inline std::vector<RigidTransform> extract_deltas(
    const std::vector<RigidTransform>& trajectory) {
  if (trajectory.empty())
    throw std::invalid_argument("extract_deltas: empty trajectory");
  std::vector<RigidTransform> out;
  out.reserve(trajectory.size() - 1);
  for (std::size_t t = 1; t < trajectory.size(); ++t) {
    RigidTransform d = relative(trajectory[t - 1], trajectory[t]);
    d.rotation = d.rotation.canonical();
    out.push_back(d);
  }
  return out;
}

// ---- dataset serialization: JSON lines, one clip per line ----

namespace detail {

inline constexpr char kB64Chars[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const unsigned char* data, std::size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    unsigned int v = data[i] << 16;
    if (i + 1 < len) v |= data[i + 1] << 8;
    if (i + 2 < len) v |= data[i + 2];
    out.push_back(kB64Chars[(v >> 18) & 63]);
    out.push_back(kB64Chars[(v >> 12) & 63]);
    out.push_back(i + 1 < len ? kB64Chars[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < len ? kB64Chars[v & 63] : '=');
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& in) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    if (c == '=') return -1;
    throw std::runtime_error("invalid base64 character");
  };
  std::vector<unsigned char> out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i + 3 < in.size(); i += 4) {
    int a = val(in[i]), b = val(in[i + 1]), c = val(in[i + 2]), d = val(in[i + 3]);
    out.push_back(static_cast<unsigned char>((a << 2) | (b >> 4)));
    if (c >= 0) out.push_back(static_cast<unsigned char>((b << 4) | (c >> 2)));
    if (d >= 0) out.push_back(static_cast<unsigned char>((c << 6) | d));
  }
  return out;
}

inline std::string cloud_to_base64(const PointCloud& c) {
  std::vector<double> flat;
  flat.reserve(c.size() * 3);
  for (const Vec3& p : c.points) {
    flat.push_back(p.x);
    flat.push_back(p.y);
    flat.push_back(p.z);
  }
  return base64_encode(reinterpret_cast<const unsigned char*>(flat.data()),
                       flat.size() * sizeof(double));
}

inline PointCloud cloud_from_base64(const std::string& s) {
  std::vector<unsigned char> raw = base64_decode(s);
  if (raw.size() % (3 * sizeof(double)) != 0)
    throw std::runtime_error("point payload has odd length");
  std::size_t n = raw.size() / (3 * sizeof(double));
  const double* d = reinterpret_cast<const double*>(raw.data());
  PointCloud out;
  out.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.points.push_back({d[3 * i], d[3 * i + 1], d[3 * i + 2]});
  return out;
}

inline nlohmann::json pose_to_array(const RigidTransform& g) {
  UnitQuat q = g.rotation.canonical();
  return {q.w, q.x, q.y, q.z, g.translation.x, g.translation.y, g.translation.z};
}

inline RigidTransform pose_from_array(const nlohmann::json& a) {
  RigidTransform g;
  g.rotation = UnitQuat(a.at(0), a.at(1), a.at(2), a.at(3));
  g.translation = {a.at(4), a.at(5), a.at(6)};
  return g;
}

}  // namespace detail

inline constexpr int kDatasetSchemaVersion = 1;

inline nlohmann::json clip_to_json(const MotionClip& clip) {
  clip.validate();
  nlohmann::json j;
  j["v"] = kDatasetSchemaVersion;
  j["g0"] = detail::pose_to_array(clip.start_pose);
  nlohmann::json dg = nlohmann::json::array();
  for (const RigidTransform& d : clip.deltas) dg.push_back(detail::pose_to_array(d));
  j["dg"] = std::move(dg);
  nlohmann::json a = nlohmann::json::array();
  for (const ArticulationFrame& f : clip.articulations) {
    nlohmann::json row = nlohmann::json::array();
    for (const Vec3& r : f.joint_rotations) {
      row.push_back(r.x);
      row.push_back(r.y);
      row.push_back(r.z);
    }
    a.push_back(std::move(row));
  }
  j["a"] = std::move(a);
  j["p_limb"] = detail::cloud_to_base64(clip.limb_points);
  j["p_bg"] = detail::cloud_to_base64(clip.bg_points);
  j["d_fg"] = clip.dist_fg;
  j["tag"] = to_string(clip.tag);
  return j;
}

inline MotionClip clip_from_json(const nlohmann::json& j) {
  int v = j.at("v").get<int>();
  if (v != kDatasetSchemaVersion)
    throw std::runtime_error("schema version mismatch: file has v" +
                             std::to_string(v) + ", expected v" +
                             std::to_string(kDatasetSchemaVersion));
  MotionClip clip;
  clip.start_pose = detail::pose_from_array(j.at("g0"));
  for (const auto& row : j.at("dg"))
    clip.deltas.push_back(detail::pose_from_array(row));
  for (const auto& row : j.at("a")) {
    if (row.size() % 3 != 0)
      throw std::runtime_error("articulation row is not a multiple of 3");
    std::vector<Vec3> rot(row.size() / 3);
    for (std::size_t k = 0; k < rot.size(); ++k)
      rot[k] = {row.at(3 * k), row.at(3 * k + 1), row.at(3 * k + 2)};
    ArticulationFrame f;
    f.joint_rotations = std::move(rot);  // stored values are already wrapped
    clip.articulations.push_back(std::move(f));
  }
  clip.limb_points = detail::cloud_from_base64(j.at("p_limb"));
  clip.bg_points = detail::cloud_from_base64(j.at("p_bg"));
  clip.dist_fg = j.at("d_fg").get<double>();
  clip.tag = behavior_from_string(j.at("tag").get<std::string>());
  clip.validate();
  return clip;
}

inline void write_dataset(std::ostream& out, const std::vector<MotionClip>& clips) {
  for (std::size_t i = 1; i < clips.size(); ++i)
    if (clips[i].t_frames() != clips[0].t_frames())
      throw std::invalid_argument("write_dataset: clips disagree on T");
  for (const MotionClip& c : clips) out << clip_to_json(c).dump() << "\n";
  if (!out) throw std::runtime_error("write_dataset: stream failure");
}

inline void write_dataset(const std::string& path,
                          const std::vector<MotionClip>& clips) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  write_dataset(out, clips);
}

inline std::vector<MotionClip> read_dataset(std::istream& in,
                                            const std::string& name = "<stream>") {
  std::vector<MotionClip> clips;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      clips.push_back(clip_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(name + ": line " + std::to_string(lineno) + ": " +
                               e.what());
    }
    if (clips.size() > 1 && clips.back().t_frames() != clips[0].t_frames())
      throw std::runtime_error(name + ": line " + std::to_string(lineno) +
                               ": clip length differs from the first clip");
  }
  return clips;
}

inline std::vector<MotionClip> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  return read_dataset(in, path);
}

}  // namespace vpet

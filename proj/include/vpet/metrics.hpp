#pragma once

#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vpet/clip.hpp"
#include "vpet/motion_vae.hpp"

namespace vpet {

// Trajectory-producing model surface; the evaluation metrics only need
// these two behaviors, which keeps stub models trivial to write.
class TrajectoryModel {
 public:
  virtual ~TrajectoryModel() = default;
  // posterior-mean reconstruction, no sampling
  virtual std::vector<RigidTransform> reconstruct(const MotionClip& clip) const = 0;
  // prior-sampled trajectory conditioned on the clip's scene and start pose
  virtual std::vector<RigidTransform> sample(const MotionClip& clip,
                                             std::uint64_t seed) const = 0;
};

class VaeTrajectoryModel : public TrajectoryModel {
 public:
  VaeTrajectoryModel(const VaeConfig& cfg, nn::ParamStore& params)
      : cfg_(&cfg), params_(&params) {}

  std::vector<RigidTransform> reconstruct(const MotionClip& clip) const override {
    return reconstruct_trajectory(*cfg_, *params_, clip);
  }
  std::vector<RigidTransform> sample(const MotionClip& clip,
                                     std::uint64_t seed) const override {
    return sample_trajectory(*cfg_, *params_, clip, seed);
  }

 private:
  const VaeConfig* cfg_;
  nn::ParamStore* params_;
};

// mean per-frame L1 between two pose sequences (7-vector per frame,
// hemisphere-fixed quaternions)
inline double trajectory_l1(const std::vector<RigidTransform>& a,
                            const std::vector<RigidTransform>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("trajectory_l1: length mismatch");
  double acc = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    auto va = pose_to_vec7(a[t]);
    auto vb = pose_to_vec7(b[t]);
    for (int c = 0; c < kPoseDim; ++c) acc += std::fabs(va[c] - vb[c]);
  }
  return acc / static_cast<double>(a.size());
}

inline double recon_error(const TrajectoryModel& model, const MotionClip& clip) {
  auto gt = integrate_trajectory(clip.start_pose, clip.deltas);
  return trajectory_l1(model.reconstruct(clip), gt);
}

struct DiversityResult {
  double mean_to_gt = 0.0;
  double pairwise_spread = 0.0;  // collapse detector
};

inline DiversityResult diversity_detail(const TrajectoryModel& model,
                                        const MotionClip& clip, int n_samples,
                                        std::uint64_t seed) {
  if (n_samples < 2)
    throw std::invalid_argument("diversity: need at least 2 samples");
  auto gt = integrate_trajectory(clip.start_pose, clip.deltas);
  std::vector<std::vector<RigidTransform>> motions;
  motions.reserve(n_samples);
  for (int k = 0; k < n_samples; ++k)
    motions.push_back(model.sample(clip, derive_seed(seed, "sample", k)));
  DiversityResult out;
  for (const auto& m : motions) out.mean_to_gt += trajectory_l1(m, gt);
  out.mean_to_gt /= n_samples;
  int pairs = 0;
  for (int i = 0; i < n_samples; ++i)
    for (int j = i + 1; j < n_samples; ++j) {
      out.pairwise_spread += trajectory_l1(motions[i], motions[j]);
      ++pairs;
    }
  out.pairwise_spread /= pairs;
  return out;
}

inline double diversity(const TrajectoryModel& model, const MotionClip& clip,
                        int n_samples, std::uint64_t seed) {
  return diversity_detail(model, clip, n_samples, seed).mean_to_gt;
}

// mean over frames of the one-sided chamfer from posed limb points into the
// background cloud
inline double floating_error_motion(const std::vector<RigidTransform>& motion,
                                    const MotionClip& clip) {
  if (motion.empty()) throw std::invalid_argument("floating_error: empty motion");
  NnIndex index(clip.bg_points);
  double acc = 0.0;
  for (const RigidTransform& g : motion)
    acc += chamfer_one_sided(apply_points(g, clip.limb_points), index);
  return acc / static_cast<double>(motion.size());
}

struct AllFramesExcluded : std::runtime_error {
  AllFramesExcluded()
      : std::runtime_error("floating_error: every frame was excluded") {}
};

inline double floating_error(const TrajectoryModel& model, const MotionClip& clip,
                             bool exclude_jumps, int n_samples,
                             std::uint64_t seed) {
  if (exclude_jumps && clip.tag == Behavior::kJump) throw AllFramesExcluded();
  double acc = 0.0;
  for (int k = 0; k < n_samples; ++k)
    acc += floating_error_motion(model.sample(clip, derive_seed(seed, "sample", k)),
                                 clip);
  return acc / n_samples;
}

// ---- suite-level aggregation and report emission ----

struct EvalReport {
  double recon = 0.0;
  double diversity = 0.0;
  double floating_err = 0.0;
  int n_samples = 0;
  int clips = 0;
  std::string config_echo;
};

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["recon"] = r.recon;
  j["diversity"] = r.diversity;
  j["floating_err"] = r.floating_err;
  j["n"] = r.n_samples;
  j["clips"] = r.clips;
  j["config"] = r.config_echo;
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.recon = j.at("recon").get<double>();
  r.diversity = j.at("diversity").get<double>();
  r.floating_err = j.at("floating_err").get<double>();
  r.n_samples = j.at("n").get<int>();
  r.clips = j.at("clips").get<int>();
  r.config_echo = j.value("config", "");
  return r;
}

inline std::string report_to_csv(const EvalReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "recon,diversity,floating_err,n,clips\n"
      << r.recon << "," << r.diversity << "," << r.floating_err << ","
      << r.n_samples << "," << r.clips << "\n";
  return out.str();
}

struct SuiteConfig {
  int n_samples = 8;
  std::uint64_t seed = 0;
  bool exclude_jumps = true;
  int workers = 0;  // 0: resolve from VPET_THREADS / hardware
  std::string config_echo;
};

inline EvalReport evaluate_suite(const TrajectoryModel& model,
                                 const std::vector<MotionClip>& dataset,
                                 const SuiteConfig& cfg = {}) {
  if (dataset.empty()) throw std::runtime_error("evaluate_suite: empty dataset");
  const int n = static_cast<int>(dataset.size());
  std::vector<double> recon(n), divers(n);
  std::vector<double> floating(n, -1.0);  // -1 marks excluded clips

  int workers = cfg.workers > 0 ? cfg.workers : worker_count(n);
  auto run = [&](int w) {
    for (int i = w; i < n; i += workers) {
      const MotionClip& clip = dataset[i];
      recon[i] = recon_error(model, clip);
      divers[i] = diversity(model, clip, cfg.n_samples,
                            derive_seed(cfg.seed, "div", i));
      if (!(cfg.exclude_jumps && clip.tag == Behavior::kJump))
        floating[i] = floating_error(model, clip, cfg.exclude_jumps,
                                     cfg.n_samples, derive_seed(cfg.seed, "flt", i));
    }
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& th : pool) th.join();
  }

  EvalReport report;
  report.n_samples = cfg.n_samples;
  report.clips = n;
  report.config_echo = cfg.config_echo;
  int kept = 0;
  for (int i = 0; i < n; ++i) {
    report.recon += recon[i];
    report.diversity += divers[i];
    if (floating[i] >= 0.0) {
      report.floating_err += floating[i];
      ++kept;
    }
  }
  report.recon /= n;
  report.diversity /= n;
  if (kept == 0) throw AllFramesExcluded();
  report.floating_err /= kept;
  return report;
}

}  // namespace vpet

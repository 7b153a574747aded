#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <thread>
#include <vector>

#include "vpet/clip.hpp"
#include "vpet/encoders.hpp"
#include "vpet/geometry.hpp"
#include "vpet/nn.hpp"
#include "vpet/rng.hpp"
#include "vpet/skeleton.hpp"

namespace vpet {

struct VaeConfig {
  int t_frames = 32;
  int latent = 64;
  int joints = 16;
  int n_fg = 256;
  int n_bg = 1024;
  double lambda_kl_g = 1e-2;
  double lambda_kl_a = 1e-4;
  double lambda_cdd = 0.1;
  double w_traj_recon = 1.0;
  double w_artic_recon = 1.0;
  bool use_dfg = true;
  double lr = 5e-4;
  int batch = 16;
  int epochs = 30;
  int checkpoint_every = 10;
  std::uint64_t seed = 0;
  // network widths
  int enc_conv = 128;
  int dec_conv = 192;
  int enc_hidden = 256;
  int head_hidden = 128;
  PointEncoderConfig point_encoder;

  int artic_dim() const { return 3 * joints; }
  ConditionLayout condition_layout() const {
    ConditionLayout layout;
    layout.limb = point_encoder.out_dim();
    layout.bg = point_encoder.out_dim();
    if (!use_dfg) layout.dist = 0;
    return layout;
  }
  int cond_dim() const { return condition_layout().total(); }
};

struct LossBreakdown {
  double traj_recon = 0.0;
  double traj_kl = 0.0;
  double artic_recon = 0.0;
  double artic_kl = 0.0;
  double floating = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    traj_recon += o.traj_recon;
    traj_kl += o.traj_kl;
    artic_recon += o.artic_recon;
    artic_kl += o.artic_kl;
    floating += o.floating;
    total += o.total;
    return *this;
  }
  LossBreakdown& operator*=(double s) {
    traj_recon *= s;
    traj_kl *= s;
    artic_recon *= s;
    artic_kl *= s;
    floating *= s;
    total *= s;
    return *this;
  }
};

inline nn::ParamStore init_vae_params(const VaeConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "init"));
  nn::ParamStore store;
  create_pointnet(store, "pn_bg", rng, cfg.point_encoder);
  create_pointnet(store, "pn_limb", rng, cfg.point_encoder);
  create_pose_embedder(store, "pose", rng);

  const int embed = kEmbedDim;
  const int cond = cfg.cond_dim();

  // trajectory VAE
  create_pose_embedder(store, "traj.delta", rng);
  nn::create_conv(store, "traj.enc.conv0", 3, 2 * embed, cfg.enc_conv, rng);
  nn::create_conv(store, "traj.enc.conv1", 3, cfg.enc_conv, cfg.enc_conv, rng);
  nn::create_layer_norm(store, "traj.enc.ln", cfg.enc_conv);
  nn::create_mlp(store, "traj.enc.mlp",
                 {cfg.enc_conv + cond, cfg.enc_hidden, embed}, rng);
  nn::create_dense(store, "traj.enc.mu", embed, cfg.latent, rng, 0.1);
  nn::create_dense(store, "traj.enc.ls", embed, cfg.latent, rng, 0.1);
  nn::create_conv(store, "traj.dec.conv0", 3, cfg.latent + cond + embed,
                  cfg.dec_conv, rng);
  nn::create_conv(store, "traj.dec.conv1", 3, cfg.dec_conv, cfg.dec_conv, rng);
  nn::create_mlp(store, "traj.dec.head", {cfg.dec_conv, cfg.head_hidden, 7},
                 rng, 0.1);

  // articulation VAE
  const int adim = cfg.artic_dim();
  nn::create_mlp(store, "artic.embed", {adim, embed, embed}, rng);
  nn::create_mlp(store, "artic.a0", {adim, embed, embed}, rng);
  nn::create_conv(store, "artic.enc.conv0", 3, 3 * embed, cfg.enc_conv, rng);
  nn::create_conv(store, "artic.enc.conv1", 3, cfg.enc_conv, cfg.enc_conv, rng);
  nn::create_layer_norm(store, "artic.enc.ln", cfg.enc_conv);
  nn::create_mlp(store, "artic.enc.mlp",
                 {cfg.enc_conv + 2 * embed, cfg.enc_hidden, embed}, rng);
  nn::create_dense(store, "artic.enc.mu", embed, cfg.latent, rng, 0.1);
  nn::create_dense(store, "artic.enc.ls", embed, cfg.latent, rng, 0.1);
  nn::create_conv(store, "artic.dec.conv0", 3, cfg.latent + 3 * embed,
                  cfg.dec_conv, rng);
  nn::create_conv(store, "artic.dec.conv1", 3, cfg.dec_conv, cfg.dec_conv, rng);
  nn::create_mlp(store, "artic.dec.head", {cfg.dec_conv, cfg.head_hidden, adim},
                 rng, 0.1);
  return store;
}

namespace vae_detail {

using ad::Shape;
using ad::Tape;
using ad::Value;

inline Value tau_rows(Tape& tape, int first, int count) {
  auto table = nn::time_embedding_table(first + count, kEmbedDim);
  std::vector<double> rows(table.begin() + static_cast<std::size_t>(first) * kEmbedDim,
                           table.end());
  return tape.constant(Shape{count, kEmbedDim}, rows);
}

inline Value artic_rows(Tape& tape, const std::vector<ArticulationFrame>& frames,
                        int first, int count) {
  const int joints = frames.front().joints();
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(count) * 3 * joints);
  for (int i = first; i < first + count; ++i)
    for (const Vec3& r : frames[i].joint_rotations) {
      data.push_back(r.x);
      data.push_back(r.y);
      data.push_back(r.z);
    }
  return tape.constant(Shape{count, 3 * joints}, data);
}

// normalize each quaternion row, then flip into the w >= 0 hemisphere with a
// constant sign (piecewise-constant through the graph)
inline Value quat_rows_normalized(Tape& tape, const Value& raw4) {
  Value n2 = ad::sum_axis(ad::square(raw4), 1);
  Value qn = ad::scale_rows(raw4, ad::rsqrt(n2));
  auto q = qn.data();
  int rows = qn.shape()[0];
  std::vector<double> sign(rows);
  for (int i = 0; i < rows; ++i) sign[i] = q[4 * i] < 0.0 ? -1.0 : 1.0;
  return ad::scale_rows(qn, tape.constant(Shape{rows}, sign));
}

struct TrajConditions {
  Value z_g0, z_limb, z_bg, cond;
};

inline TrajConditions traj_conditions(const VaeConfig& cfg, nn::Binding& p,
                                      const MotionClip& clip) {
  Tape& tape = p.tape();
  TrajConditions c;
  c.z_bg = pointnet_encode(p, "pn_bg", clip.bg_points, cfg.point_encoder);
  c.z_limb = pointnet_encode(p, "pn_limb", clip.limb_points, cfg.point_encoder);
  c.z_g0 = embed_pose(p, "pose", clip.start_pose);
  if (cfg.use_dfg) {
    c.cond = build_condition_traj(c.z_g0, c.z_limb, c.z_bg,
                                  embed_dfg(tape, clip.dist_fg),
                                  cfg.condition_layout());
  } else {
    c.cond = ad::concat1d({c.z_g0, c.z_limb, c.z_bg});
  }
  return c;
}

inline std::pair<Value, Value> traj_encode(const VaeConfig& cfg, nn::Binding& p,
                                           const MotionClip& clip,
                                           const Value& cond) {
  Tape& tape = p.tape();
  const int T = clip.t_frames();
  Value deltas = poses_to_rows(tape, clip.deltas);
  Value z_dg = embed_delta_sequence(p, "traj.delta", deltas);
  Value x = ad::concat_cols({z_dg, tau_rows(tape, 1, T)});
  Value h = ad::relu(nn::conv1d(p, "traj.enc.conv0", x));
  h = ad::relu(nn::conv1d(p, "traj.enc.conv1", h));
  Value pooled = ad::mul_scalar(ad::sum_axis(h, 0), 1.0 / T);
  pooled = nn::layer_norm(p, "traj.enc.ln", pooled);
  Value e = nn::mlp_forward(p, "traj.enc.mlp", ad::concat1d({pooled, cond}), 2);
  e = ad::relu(e);
  Value mu = nn::dense(p, "traj.enc.mu", e);
  Value ls = ad::clamp(nn::dense(p, "traj.enc.ls", e), -8.0, 4.0);
  return {mu, ls};
}

// decodes T rows of (unit quaternion | translation)
inline Value traj_decode(const VaeConfig& cfg, nn::Binding& p, const Value& z,
                         const Value& cond, int T) {
  Tape& tape = p.tape();
  Value x = ad::concat_cols(
      {ad::repeat_row(z, T), ad::repeat_row(cond, T), tau_rows(tape, 1, T)});
  Value h = ad::relu(nn::conv1d(p, "traj.dec.conv0", x));
  h = ad::relu(nn::conv1d(p, "traj.dec.conv1", h));
  Value y = nn::mlp_forward(p, "traj.dec.head", h, 2);
  Value qraw = ad::add_rowvec(
      ad::slice_cols(y, 0, 4),
      tape.constant(Shape{4}, std::vector<double>{1, 0, 0, 0}));
  Value qs = quat_rows_normalized(tape, qraw);
  return ad::concat_cols({qs, ad::slice_cols(y, 4, 3)});
}

struct GraphPose {
  Value q;  // [4]
  Value s;  // [3]
};

inline std::vector<GraphPose> integrate_in_graph(Tape& tape,
                                                 const RigidTransform& g0,
                                                 const Value& dg7) {
  const int T = dg7.shape()[0];
  auto v0 = pose_to_vec7(g0);
  std::vector<GraphPose> frames;
  frames.reserve(T + 1);
  GraphPose f0;
  f0.q = tape.constant(Shape{4}, std::vector<double>{v0[0], v0[1], v0[2], v0[3]});
  f0.s = tape.constant(Shape{3}, std::vector<double>{v0[4], v0[5], v0[6]});
  frames.push_back(f0);
  for (int t = 0; t < T; ++t) {
    Value row = ad::row(dg7, t);
    Value dq = ad::slice(row, 0, 4);
    Value dt = ad::slice(row, 4, 3);
    GraphPose f;
    f.q = ad::normalize(ad::quat_mul(frames.back().q, dq));
    f.s = ad::add(frames.back().s, ad::quat_rotate(frames.back().q, dt));
    frames.push_back(f);
  }
  return frames;
}

// Per-frame nearest-neighbor assignments; recomputed on every forward unless
// a frozen set is supplied (gradient checks freeze them, since the argmin
// switch is a non-differentiable point).
struct FloatAssignments {
  std::vector<std::vector<int>> per_frame;
};

inline Value floating_loss_graph(Tape& tape,
                                 const std::vector<GraphPose>& frames,
                                 const PointCloud& limb, const NnIndex& bg_index,
                                 const PointCloud& bg,
                                 const std::vector<double>& cd_gt,
                                 FloatAssignments* frozen = nullptr) {
  const int T = static_cast<int>(frames.size()) - 1;
  const int n = static_cast<int>(limb.size());
  Value limb_rows = cloud_to_tensor(tape, limb);
  std::vector<Value> terms;
  terms.reserve(T);
  bool use_frozen = frozen && !frozen->per_frame.empty();
  if (frozen && frozen->per_frame.empty()) frozen->per_frame.resize(T);
  for (int t = 1; t <= T; ++t) {
    Value pts = ad::add_rowvec(ad::quat_rotate(frames[t].q, limb_rows),
                               frames[t].s);
    std::vector<int> assign(n);
    if (use_frozen) {
      assign = frozen->per_frame[t - 1];
    } else {
      auto pv = pts.data();
      for (int i = 0; i < n; ++i)
        assign[i] =
            bg_index.nearest({pv[3 * i], pv[3 * i + 1], pv[3 * i + 2]}).index;
      if (frozen) frozen->per_frame[t - 1] = assign;
    }
    std::vector<double> target;
    target.reserve(3 * n);
    for (int i = 0; i < n; ++i) {
      const Vec3& b = bg.points[assign[i]];
      target.push_back(b.x);
      target.push_back(b.y);
      target.push_back(b.z);
    }
    Value diff = ad::sub(pts, tape.constant(Shape{n, 3}, target));
    Value cd = ad::mean(ad::sqrt(ad::sum_axis(ad::square(diff), 1)));
    terms.push_back(ad::abs(ad::add_scalar(cd, -cd_gt[t])));
  }
  return ad::mul_scalar(ad::sum(ad::concat1d(terms)), 1.0 / T);
}

inline std::pair<Value, Value> artic_encode(const VaeConfig& cfg, nn::Binding& p,
                                            const MotionClip& clip,
                                            const Value& zg_rows,
                                            const Value& z_a0) {
  Tape& tape = p.tape();
  const int T = clip.t_frames();
  Value a_rows = artic_rows(tape, clip.articulations, 1, T);
  Value za = nn::mlp_forward(p, "artic.embed", a_rows, 2);
  Value zg_steps = ad::slice_rows(zg_rows, 1, T);
  Value x = ad::concat_cols({za, zg_steps, tau_rows(tape, 1, T)});
  Value h = ad::relu(nn::conv1d(p, "artic.enc.conv0", x));
  h = ad::relu(nn::conv1d(p, "artic.enc.conv1", h));
  Value pooled = ad::mul_scalar(ad::sum_axis(h, 0), 1.0 / T);
  pooled = nn::layer_norm(p, "artic.enc.ln", pooled);
  Value e = nn::mlp_forward(
      p, "artic.enc.mlp", ad::concat1d({pooled, ad::row(zg_rows, 0), z_a0}), 2);
  e = ad::relu(e);
  Value mu = nn::dense(p, "artic.enc.mu", e);
  Value ls = ad::clamp(nn::dense(p, "artic.enc.ls", e), -8.0, 4.0);
  return {mu, ls};
}

inline Value artic_decode(const VaeConfig& cfg, nn::Binding& p, const Value& z,
                          const Value& z_a0, const Value& zg_rows, int T) {
  Tape& tape = p.tape();
  Value zg_steps = ad::slice_rows(zg_rows, 1, T);
  Value x = ad::concat_cols({ad::repeat_row(z, T), ad::repeat_row(z_a0, T),
                             zg_steps, tau_rows(tape, 1, T)});
  Value h = ad::relu(nn::conv1d(p, "artic.dec.conv0", x));
  h = ad::relu(nn::conv1d(p, "artic.dec.conv1", h));
  return nn::mlp_forward(p, "artic.dec.head", h, 2);
}

struct ClipForward {
  Value total;
  Value traj_mu, traj_ls, artic_mu, artic_ls;
  Value dg_pred, artic_pred;
  LossBreakdown losses;
};

// GT chamfer per frame for the floating loss; depends only on clip data
inline std::vector<double> gt_chamfer_per_frame(const MotionClip& clip,
                                                const NnIndex& bg_index) {
  auto traj = integrate_trajectory(clip.start_pose, clip.deltas);
  std::vector<double> cd(traj.size());
  for (std::size_t t = 0; t < traj.size(); ++t)
    cd[t] = chamfer_one_sided(apply_points(traj[t], clip.limb_points), bg_index);
  return cd;
}

inline ClipForward forward_clip(const VaeConfig& cfg, nn::Binding& p,
                                const MotionClip& clip, const NnIndex& bg_index,
                                const std::vector<double>& cd_gt,
                                std::uint64_t noise_seed,
                                FloatAssignments* frozen = nullptr) {
  Tape& tape = p.tape();
  const int T = clip.t_frames();
  ClipForward out;

  TrajConditions cond = traj_conditions(cfg, p, clip);
  auto [mu_g, ls_g] = traj_encode(cfg, p, clip, cond.cond);
  out.traj_mu = mu_g;
  out.traj_ls = ls_g;
  Value z_g = nn::reparameterize(tape, mu_g, ls_g, derive_seed(noise_seed, "zg"));
  out.dg_pred = traj_decode(cfg, p, z_g, cond.cond, T);

  Value gt_dg = poses_to_rows(tape, clip.deltas);
  Value traj_recon = ad::mean(ad::abs(ad::sub(out.dg_pred, gt_dg)));
  Value traj_kl = nn::kl_diag_gaussian(mu_g, ls_g);

  auto frames = integrate_in_graph(tape, clip.start_pose, out.dg_pred);
  Value floating = floating_loss_graph(tape, frames, clip.limb_points, bg_index,
                                       clip.bg_points, cd_gt, frozen);

  // articulation VAE consumes the ground-truth trajectory while training
  auto gt_traj = integrate_trajectory(clip.start_pose, clip.deltas);
  Value zg_rows = embed_pose_rows(p, "pose", poses_to_rows(tape, gt_traj));
  Value z_a0 = nn::mlp_forward(p, "artic.a0",
                               artic_rows(tape, clip.articulations, 0, 1), 2);
  z_a0 = ad::row(z_a0, 0);
  auto [mu_a, ls_a] = artic_encode(cfg, p, clip, zg_rows, z_a0);
  out.artic_mu = mu_a;
  out.artic_ls = ls_a;
  Value z_a = nn::reparameterize(tape, mu_a, ls_a, derive_seed(noise_seed, "za"));
  out.artic_pred = artic_decode(cfg, p, z_a, z_a0, zg_rows, T);
  Value gt_a = artic_rows(tape, clip.articulations, 1, T);
  Value artic_recon = ad::mean(ad::abs(ad::sub(out.artic_pred, gt_a)));
  Value artic_kl = nn::kl_diag_gaussian(mu_a, ls_a);

  Value total = ad::mul_scalar(traj_recon, cfg.w_traj_recon);
  total = ad::add(total, ad::mul_scalar(traj_kl, cfg.lambda_kl_g));
  total = ad::add(total, ad::mul_scalar(floating, cfg.lambda_cdd));
  total = ad::add(total, ad::mul_scalar(artic_recon, cfg.w_artic_recon));
  total = ad::add(total, ad::mul_scalar(artic_kl, cfg.lambda_kl_a));
  out.total = total;

  out.losses.traj_recon = traj_recon.scalar();
  out.losses.traj_kl = traj_kl.scalar();
  out.losses.artic_recon = artic_recon.scalar();
  out.losses.artic_kl = artic_kl.scalar();
  out.losses.floating = floating.scalar();
  out.losses.total = total.scalar();
  return out;
}

}  // namespace vae_detail

// standalone loss entry points

inline double traj_recon_loss(const std::vector<RigidTransform>& pred,
                              const std::vector<RigidTransform>& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("traj_recon_loss: length mismatch");
  if (pred.empty()) throw std::invalid_argument("traj_recon_loss: empty input");
  double acc = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    auto a = pose_to_vec7(pred[t]);
    auto b = pose_to_vec7(gt[t]);
    for (int c = 0; c < kPoseDim; ++c) acc += std::fabs(a[c] - b[c]);
  }
  return acc / (static_cast<double>(pred.size()) * kPoseDim);
}

// (1/T) sum over frames of | chamfer(gt frame) - chamfer(predicted frame) |;
// the frame-0 term vanishes whenever both trajectories share the start pose
inline double floating_loss(const std::vector<RigidTransform>& gt,
                            const std::vector<RigidTransform>& pred,
                            const PointCloud& limb, const PointCloud& bg) {
  if (gt.size() != pred.size() || gt.size() < 2)
    throw std::invalid_argument("floating_loss: trajectory length mismatch");
  NnIndex index(bg);
  const double T = static_cast<double>(gt.size()) - 1.0;
  double acc = 0.0;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    double cd_gt = chamfer_one_sided(apply_points(gt[t], limb), index);
    double cd_pred = chamfer_one_sided(apply_points(pred[t], limb), index);
    acc += std::fabs(cd_gt - cd_pred);
  }
  return acc / T;
}

inline LossBreakdown total_loss(const LossBreakdown& parts, const VaeConfig& cfg) {
  LossBreakdown out = parts;
  out.total = cfg.w_traj_recon * parts.traj_recon +
              cfg.lambda_kl_g * parts.traj_kl + cfg.lambda_cdd * parts.floating +
              cfg.w_artic_recon * parts.artic_recon +
              cfg.lambda_kl_a * parts.artic_kl;
  return out;
}

// ---- training ----

struct TrainHooks {
  std::function<void(int epoch, const LossBreakdown&)> on_epoch;
  std::function<void(int epoch, const nn::ParamStore&, const nn::AdamState&)>
      on_checkpoint;
};

struct TrainResult {
  nn::ParamStore params;
  nn::AdamState adam;
  std::vector<LossBreakdown> curve;
};

inline int worker_count(int batch) {
  unsigned hw = std::thread::hardware_concurrency();
  if (const char* env = std::getenv("VPET_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v >= 1) hw = static_cast<unsigned>(v);
  }
  if (hw < 1) hw = 1;
  return static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(batch)));
}

inline TrainResult train(const std::vector<MotionClip>& dataset,
                         const VaeConfig& cfg, TrainHooks hooks = {},
                         const nn::TrainingState* resume = nullptr) {
  if (dataset.empty()) throw std::runtime_error("train: empty dataset");
  for (const MotionClip& c : dataset) {
    c.validate();
    if (c.t_frames() != cfg.t_frames)
      throw std::runtime_error("train: dataset clip length " +
                               std::to_string(c.t_frames()) +
                               " does not match configured t_frames " +
                               std::to_string(cfg.t_frames));
    if (3 * c.joints() != cfg.artic_dim())
      throw std::runtime_error("train: dataset joint count mismatch");
  }

  TrainResult result;
  nn::AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  if (resume) {
    result.params = resume->params;
    result.adam = resume->adam;
  } else {
    result.params = init_vae_params(cfg);
    result.adam = nn::AdamState(adam_cfg);
  }

  // per-clip geometry caches shared by every step
  const int n = static_cast<int>(dataset.size());
  std::vector<NnIndex> indices;
  indices.reserve(n);
  std::vector<std::vector<double>> cd_gt(n);
  for (int i = 0; i < n; ++i) {
    indices.emplace_back(dataset[i].bg_points);
    cd_gt[i] = vae_detail::gt_chamfer_per_frame(dataset[i], indices.back());
  }

  const int steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const int workers = worker_count(cfg.batch);
  std::int64_t global_step = result.adam.step_count();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // deterministic per-epoch shuffle
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", epoch));
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.below(i + 1)]);

    LossBreakdown epoch_losses;
    int epoch_clips = 0;

    for (int step = 0; step < steps_per_epoch; ++step) {
      int lo = step * cfg.batch;
      int hi = std::min(n, lo + cfg.batch);
      int count = hi - lo;

      std::vector<std::map<std::string, std::vector<double>>> worker_grads(workers);
      std::vector<LossBreakdown> worker_losses(workers);
      auto run_worker = [&](int w) {
        for (int k = lo + w; k < hi; k += workers) {
          int idx = order[k];
          ad::Tape tape;
          nn::Binding bind(tape, result.params, true);
          auto fwd = vae_detail::forward_clip(
              cfg, bind, dataset[idx], indices[idx], cd_gt[idx],
              derive_seed(cfg.seed, "noise", static_cast<std::uint64_t>(global_step),
                          static_cast<std::uint64_t>(idx)));
          tape.backward(fwd.total);
          bind.export_grads(worker_grads[w]);
          worker_losses[w] += fwd.losses;
        }
      };
      if (workers == 1) {
        run_worker(0);
      } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(run_worker, w);
        for (auto& th : pool) th.join();
      }

      std::map<std::string, std::vector<double>> grads;
      for (int w = 0; w < workers; ++w) {
        for (auto& [name, g] : worker_grads[w]) {
          auto [it, inserted] = grads.try_emplace(name);
          if (inserted) it->second.assign(g.size(), 0.0);
          for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
        }
        epoch_losses += worker_losses[w];
      }
      for (auto& [name, g] : grads)
        for (double& x : g) x /= count;
      result.adam.step(result.params, grads);
      ++global_step;
      epoch_clips += count;
    }

    LossBreakdown mean = epoch_losses;
    mean *= 1.0 / epoch_clips;
    result.curve.push_back(mean);
    if (hooks.on_epoch) hooks.on_epoch(epoch, mean);
    if (hooks.on_checkpoint &&
        ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs))
      hooks.on_checkpoint(epoch, result.params, result.adam);
  }
  return result;
}

// ---- inference ----

struct GeneratedMotion {
  std::vector<RigidTransform> trajectory;        // T+1, starts at the given pose
  std::vector<ArticulationFrame> articulations;  // T+1, starts at the given frame
};

namespace vae_detail {

inline Value decode_latent_trajectory(const VaeConfig& cfg, nn::Binding& p,
                                      const MotionClip& clip,
                                      const std::vector<double>& z_values) {
  Tape& tape = p.tape();
  TrajConditions cond = traj_conditions(cfg, p, clip);
  Value z = tape.constant(Shape{cfg.latent}, z_values);
  return traj_decode(cfg, p, z, cond.cond, clip.t_frames());
}

inline std::vector<RigidTransform> rows_to_trajectory(const RigidTransform& g0,
                                                      const Value& dg7) {
  std::vector<RigidTransform> deltas;
  auto d = dg7.data();
  int T = dg7.shape()[0];
  deltas.reserve(T);
  for (int t = 0; t < T; ++t)
    deltas.push_back(vec7_to_pose(d.subspan(static_cast<std::size_t>(t) * 7, 7)));
  return integrate_trajectory(g0, deltas);
}

}  // namespace vae_detail

// posterior-mean reconstruction of a clip's trajectory (no sampling)
inline std::vector<RigidTransform> reconstruct_trajectory(
    const VaeConfig& cfg, nn::ParamStore& params, const MotionClip& clip) {
  ad::Tape tape;
  nn::Binding bind(tape, params, false);
  vae_detail::TrajConditions cond = vae_detail::traj_conditions(cfg, bind, clip);
  auto [mu, ls] = vae_detail::traj_encode(cfg, bind, clip, cond.cond);
  ad::Value dg = vae_detail::traj_decode(cfg, bind, mu, cond.cond, clip.t_frames());
  return vae_detail::rows_to_trajectory(clip.start_pose, dg);
}

// prior-sampled trajectory conditioned on the clip's scene and start pose
inline std::vector<RigidTransform> sample_trajectory(const VaeConfig& cfg,
                                                     nn::ParamStore& params,
                                                     const MotionClip& clip,
                                                     std::uint64_t seed) {
  ad::Tape tape;
  nn::Binding bind(tape, params, false);
  Rng rng(derive_seed(seed, "zg"));
  std::vector<double> z(cfg.latent);
  for (double& v : z) v = rng.normal();
  ad::Value dg = vae_detail::decode_latent_trajectory(cfg, bind, clip, z);
  return vae_detail::rows_to_trajectory(clip.start_pose, dg);
}

// articulation sequence for a given trajectory (sampled prior latent)
inline std::vector<ArticulationFrame> sample_articulation(
    const VaeConfig& cfg, nn::ParamStore& params,
    const std::vector<RigidTransform>& trajectory,
    const ArticulationFrame& start, std::uint64_t seed) {
  const int T = static_cast<int>(trajectory.size()) - 1;
  ad::Tape tape;
  nn::Binding bind(tape, params, false);
  ad::Value zg_rows =
      embed_pose_rows(bind, "pose", poses_to_rows(tape, trajectory));
  std::vector<ArticulationFrame> a0_only{start};
  ad::Value z_a0 = nn::mlp_forward(
      bind, "artic.a0", vae_detail::artic_rows(tape, a0_only, 0, 1), 2);
  z_a0 = ad::row(z_a0, 0);
  Rng rng(derive_seed(seed, "za"));
  std::vector<double> z(cfg.latent);
  for (double& v : z) v = rng.normal();
  ad::Value zt = tape.constant(ad::Shape{cfg.latent}, z);
  ad::Value rows = vae_detail::artic_decode(cfg, bind, zt, z_a0, zg_rows, T);

  std::vector<ArticulationFrame> out;
  out.reserve(T + 1);
  out.push_back(start);
  auto d = rows.data();
  const int joints = start.joints();
  for (int t = 0; t < T; ++t) {
    std::vector<Vec3> rot(joints);
    for (int j = 0; j < joints; ++j)
      rot[j] = {d[(static_cast<std::size_t>(t) * joints + j) * 3 + 0],
                d[(static_cast<std::size_t>(t) * joints + j) * 3 + 1],
                d[(static_cast<std::size_t>(t) * joints + j) * 3 + 2]};
    out.emplace_back(std::move(rot));  // wraps to magnitude < pi
  }
  return out;
}

// full generation from meshes: builds the conditioning clouds internally
inline GeneratedMotion generate(const VaeConfig& cfg, nn::ParamStore& params,
                                const TriMesh& fg, const Skeleton& skel,
                                const TriMesh& bg, const RigidTransform& g0,
                                const ArticulationFrame& a0, int t_frames,
                                std::uint64_t seed) {
  if (t_frames < 1) throw std::invalid_argument("generate: t_frames must be >= 1");
  // the decoders are temporal convolutions with per-step heads, so any
  // horizon decodes; training length is just the default
  MotionClip probe;
  probe.start_pose = g0;
  probe.start_pose.rotation = probe.start_pose.rotation.canonical();
  probe.deltas.assign(t_frames, RigidTransform::identity());
  probe.articulations.assign(t_frames + 1, a0);
  probe.limb_points = limb_vertices(fg, skel, cfg.n_fg);
  probe.bg_points = sample_surface(bg, cfg.n_bg, derive_seed(seed, "bgcloud"));
  probe.dist_fg =
      center_distance(pose_mesh(fg, skel, a0, g0), probe.bg_points);

  GeneratedMotion out;
  out.trajectory = sample_trajectory(cfg, params, probe, seed);
  out.trajectory[0] = probe.start_pose;  // pinned by construction
  out.articulations =
      sample_articulation(cfg, params, out.trajectory, a0, seed);
  return out;
}

}  // namespace vpet

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <cstring>
#include <map>
#include <sstream>

#include "vpet/data.hpp"
#include "vpet/motion_vae.hpp"

using namespace vpet;
using ad::Shape;
using ad::Tape;
using ad::Value;

namespace {

VaeConfig tiny_config() {
  VaeConfig cfg;
  cfg.t_frames = 6;
  cfg.latent = 4;
  cfg.joints = 2;
  cfg.n_fg = 6;
  cfg.n_bg = 24;
  cfg.enc_conv = 8;
  cfg.dec_conv = 8;
  cfg.enc_hidden = 16;
  cfg.head_hidden = 8;
  cfg.point_encoder.widths = {3, 8, 8};
  cfg.batch = 4;
  return cfg;
}

MotionClip tiny_clip(const VaeConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "tiny_clip"));
  MotionClip clip;
  clip.start_pose.rotation =
      UnitQuat::from_axis_angle({0, rng.uniform(-1, 1), 0}).canonical();
  clip.start_pose.translation = {rng.uniform(-0.3, 0.3), 0.2, rng.uniform(-0.3, 0.3)};
  for (int t = 0; t < cfg.t_frames; ++t) {
    RigidTransform d;
    d.rotation =
        UnitQuat::from_axis_angle({0, rng.uniform(-0.1, 0.1), 0}).canonical();
    d.translation = {rng.uniform(-0.02, 0.02), rng.uniform(-0.005, 0.005),
                     rng.uniform(-0.02, 0.02)};
    clip.deltas.push_back(d);
  }
  for (int t = 0; t <= cfg.t_frames; ++t) {
    std::vector<Vec3> rot(cfg.joints);
    for (Vec3& r : rot)
      r = {rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)};
    clip.articulations.push_back(ArticulationFrame(std::move(rot)));
  }
  for (int i = 0; i < cfg.n_fg; ++i)
    clip.limb_points.points.push_back(
        {rng.uniform(-0.1, 0.1), rng.uniform(-0.2, -0.15), rng.uniform(-0.1, 0.1)});
  for (int i = 0; i < cfg.n_bg; ++i)
    clip.bg_points.points.push_back(
        {rng.uniform(-0.6, 0.6), 0.0, rng.uniform(-0.6, 0.6)});
  clip.dist_fg = 0.21;
  clip.tag = Behavior::kWalk;
  clip.validate();
  return clip;
}

std::vector<MotionClip> tiny_dataset(const VaeConfig& cfg, int n,
                                     std::uint64_t seed) {
  std::vector<MotionClip> out;
  for (int i = 0; i < n; ++i) out.push_back(tiny_clip(cfg, derive_seed(seed, "c", i)));
  return out;
}

double mean_abs(std::span<const double> v) {
  double acc = 0;
  for (double x : v) acc += std::fabs(x);
  return v.empty() ? 0.0 : acc / v.size();
}

}  // namespace

TEST_CASE("trajectory encoder determinism and decoder init convention") {
  VaeConfig cfg = tiny_config();
  cfg.seed = 5;
  nn::ParamStore params = init_vae_params(cfg);
  MotionClip clip = tiny_clip(cfg, 1);
  NnIndex index(clip.bg_points);
  auto cd = vae_detail::gt_chamfer_per_frame(clip, index);

  SECTION("repeat encode gives identical mu and log-sigma") {
    auto run = [&] {
      Tape tape;
      nn::Binding bind(tape, params, false);
      auto cond = vae_detail::traj_conditions(cfg, bind, clip);
      auto [mu, ls] = vae_detail::traj_encode(cfg, bind, clip, cond.cond);
      std::vector<double> out(mu.data().begin(), mu.data().end());
      out.insert(out.end(), ls.data().begin(), ls.data().end());
      return out;
    };
    CHECK(run() == run());
  }

  SECTION("zeroed decoder head emits identity rotations and zero translations") {
    nn::ParamStore zeroed = params;
    for (const char* name : {"traj.dec.head.1.w", "traj.dec.head.1.b"}) {
      auto& v = zeroed.at(name).value;
      std::fill(v.begin(), v.end(), 0.0);
    }
    Tape tape;
    nn::Binding bind(tape, zeroed, false);
    auto cond = vae_detail::traj_conditions(cfg, bind, clip);
    Value z = tape.constant(Shape{cfg.latent},
                            std::vector<double>(cfg.latent, 0.37));
    Value dg = vae_detail::traj_decode(cfg, bind, z, cond.cond, cfg.t_frames);
    auto d = dg.data();
    for (int t = 0; t < cfg.t_frames; ++t) {
      CHECK(d[t * 7 + 0] == 1.0);
      for (int c = 1; c < 7; ++c) CHECK(d[t * 7 + c] == 0.0);
    }
  }

  SECTION("decoded quaternion rows are unit with nonnegative w") {
    Tape tape;
    nn::Binding bind(tape, params, false);
    auto cond = vae_detail::traj_conditions(cfg, bind, clip);
    Value z = tape.constant(Shape{cfg.latent},
                            std::vector<double>(cfg.latent, -0.8));
    Value dg = vae_detail::traj_decode(cfg, bind, z, cond.cond, cfg.t_frames);
    auto d = dg.data();
    for (int t = 0; t < cfg.t_frames; ++t) {
      double n = std::sqrt(d[t * 7] * d[t * 7] + d[t * 7 + 1] * d[t * 7 + 1] +
                           d[t * 7 + 2] * d[t * 7 + 2] + d[t * 7 + 3] * d[t * 7 + 3]);
      CHECK(std::fabs(n - 1.0) < 1e-12);
      CHECK(d[t * 7] >= 0.0);
    }
  }
}

TEST_CASE("trajectory integration") {
  Rng rng(7);
  SECTION("identity deltas stay put") {
    RigidTransform g0;
    g0.translation = {1, 2, 3};
    std::vector<RigidTransform> deltas(5);
    auto traj = integrate_trajectory(g0, deltas);
    REQUIRE(traj.size() == 6);
    for (const auto& g : traj)
      CHECK((g.translation - g0.translation).norm() == 0.0);
  }

  SECTION("extract then integrate reproduces any trajectory") {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<RigidTransform> traj;
      RigidTransform g;
      g.rotation = UnitQuat(rng.normal(), rng.normal(), rng.normal(), rng.normal());
      g.translation = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      traj.push_back(g);
      for (int t = 0; t < 12; ++t) {
        RigidTransform d;
        d.rotation = UnitQuat(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        d.translation = {rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                         rng.uniform(-0.2, 0.2)};
        traj.push_back(compose(traj.back(), d));
      }
      auto again = integrate_trajectory(traj[0], extract_deltas(traj));
      REQUIRE(again.size() == traj.size());
      for (std::size_t t = 0; t < traj.size(); ++t) {
        CHECK((again[t].translation - traj[t].translation).norm() < 1e-9);
        CHECK(std::fabs(std::fabs(again[t].rotation.dot(traj[t].rotation)) - 1.0) <
              1e-9);
      }
    }
  }

  SECTION("pure translation deltas telescope") {
    RigidTransform g0;
    RigidTransform d;
    d.translation = {1, 0, 0};
    std::vector<RigidTransform> deltas(9, d);
    auto traj = integrate_trajectory(g0, deltas);
    CHECK((traj.back().translation - Vec3{9, 0, 0}).norm() < 1e-12);
  }
}

TEST_CASE("trajectory reconstruction loss") {
  Rng rng(9);
  std::vector<RigidTransform> gt;
  for (int t = 0; t < 8; ++t) {
    RigidTransform g;
    g.rotation =
        UnitQuat(rng.normal(), rng.normal(), rng.normal(), rng.normal()).canonical();
    g.translation = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    gt.push_back(g);
  }

  SECTION("identical sequences have zero loss") {
    CHECK(traj_recon_loss(gt, gt) == 0.0);
  }

  SECTION("constant translation offset matches the elementwise oracle") {
    auto pred = gt;
    for (auto& g : pred) g.translation += Vec3{1, 0, 0};
    // oracle: mean over all 7-vector components of |diff|
    double want = 0;
    for (std::size_t t = 0; t < gt.size(); ++t) {
      auto a = pose_to_vec7(pred[t]);
      auto b = pose_to_vec7(gt[t]);
      for (int c = 0; c < 7; ++c) want += std::fabs(a[c] - b[c]);
    }
    want /= gt.size() * 7.0;
    CHECK(traj_recon_loss(pred, gt) == Catch::Approx(want).margin(1e-15));
    CHECK(traj_recon_loss(pred, gt) == Catch::Approx(1.0 / 7.0).margin(1e-12));
  }

  SECTION("L1 is symmetric in the sign of the error") {
    auto plus = gt, minus = gt;
    for (auto& g : plus) g.translation += Vec3{0.4, 0, 0};
    for (auto& g : minus) g.translation -= Vec3{0.4, 0, 0};
    CHECK(traj_recon_loss(plus, gt) == Catch::Approx(traj_recon_loss(minus, gt)));
  }

  SECTION("length mismatch is rejected") {
    auto shorter = gt;
    shorter.pop_back();
    CHECK_THROWS_AS(traj_recon_loss(shorter, gt), std::invalid_argument);
  }
}

TEST_CASE("floating loss") {
  // planar background grid with limb points directly above grid nodes
  PointCloud bg, limb;
  for (int i = -3; i <= 3; ++i)
    for (int j = -3; j <= 3; ++j) bg.points.push_back({1.0 * i, 0, 1.0 * j});
  limb.points = {{0, 0.25, 0}, {1, 0.25, 0}, {0, 0.25, 1}, {-1, 0.25, -1}};

  std::vector<RigidTransform> gt(7);  // all identity

  SECTION("identical trajectories give zero") {
    CHECK(floating_loss(gt, gt, limb, bg) == 0.0);
  }

  SECTION("vertical displacement on every movable frame gives exactly one") {
    auto pred = gt;
    for (std::size_t t = 1; t < pred.size(); ++t)
      pred[t].translation = {0, 1, 0};
    CHECK(floating_loss(gt, pred, limb, bg) == Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("swapping arguments changes nothing") {
    auto pred = gt;
    for (std::size_t t = 1; t < pred.size(); ++t) pred[t].translation = {0, 0.7, 0};
    CHECK(floating_loss(gt, pred, limb, bg) ==
          Catch::Approx(floating_loss(pred, gt, limb, bg)).margin(1e-15));
  }

  SECTION("empty clouds are rejected") {
    PointCloud empty;
    CHECK_THROWS_AS(floating_loss(gt, gt, limb, empty), std::invalid_argument);
  }
}

TEST_CASE("loss breakdown arithmetic") {
  VaeConfig cfg;  // default weights
  LossBreakdown parts;
  parts.traj_recon = 0.2;
  parts.traj_kl = 3.0;
  parts.artic_recon = 0.4;
  parts.artic_kl = 10.0;
  parts.floating = 0.5;

  LossBreakdown out = total_loss(parts, cfg);
  double want = 0.2 + 1e-2 * 3.0 + 0.1 * 0.5 + 0.4 + 1e-4 * 10.0;
  CHECK(out.total == Catch::Approx(want).margin(1e-12));

  SECTION("zero components give zero total") {
    LossBreakdown zero;
    CHECK(total_loss(zero, cfg).total == 0.0);
  }

  SECTION("floating term scales by its weight") {
    LossBreakdown bumped = parts;
    bumped.floating = parts.floating * 2.0;
    double delta = total_loss(bumped, cfg).total - out.total;
    CHECK(delta == Catch::Approx(0.1 * parts.floating).margin(1e-12));
  }
}

TEST_CASE("full objective forward and breakdown invariant") {
  VaeConfig cfg = tiny_config();
  cfg.seed = 11;
  nn::ParamStore params = init_vae_params(cfg);
  MotionClip clip = tiny_clip(cfg, 3);
  NnIndex index(clip.bg_points);
  auto cd = vae_detail::gt_chamfer_per_frame(clip, index);

  Tape tape;
  nn::Binding bind(tape, params, false);
  auto fwd = vae_detail::forward_clip(cfg, bind, clip, index, cd, 99);

  double want = fwd.losses.traj_recon + cfg.lambda_kl_g * fwd.losses.traj_kl +
                cfg.lambda_cdd * fwd.losses.floating + fwd.losses.artic_recon +
                cfg.lambda_kl_a * fwd.losses.artic_kl;
  CHECK(fwd.losses.total == Catch::Approx(want).margin(1e-12));
  CHECK(fwd.losses.floating >= 0.0);
  CHECK(fwd.losses.traj_kl >= 0.0);
  CHECK(fwd.losses.artic_kl >= 0.0);
}

TEST_CASE("end-to-end gradient check through the full objective") {
  VaeConfig cfg = tiny_config();
  cfg.seed = 13;
  MotionClip clip = tiny_clip(cfg, 5);
  NnIndex index(clip.bg_points);
  auto cd = vae_detail::gt_chamfer_per_frame(clip, index);

  for (int trial = 0; trial < 3; ++trial) {
    VaeConfig tc = cfg;
    tc.seed = derive_seed(17, "e2e", trial);
    nn::ParamStore params = init_vae_params(tc);
    const std::uint64_t noise_seed = derive_seed(23, "noise", trial);

    // base pass captures gradients and freezes the NN assignments
    vae_detail::FloatAssignments frozen;
    std::map<std::string, std::vector<double>> grads;
    {
      Tape tape;
      nn::Binding bind(tape, params, true);
      auto fwd = vae_detail::forward_clip(cfg, bind, clip, index, cd, noise_seed,
                                          &frozen);
      tape.backward(fwd.total);
      bind.export_grads(grads);
    }

    auto eval = [&](nn::ParamStore& p) {
      Tape tape;
      nn::Binding bind(tape, p, false);
      auto fwd =
          vae_detail::forward_clip(cfg, bind, clip, index, cd, noise_seed, &frozen);
      return fwd.losses.total;
    };

    Rng pick(derive_seed(29, "coords", trial));
    const double h = 1e-4;
    double worst = 0;
    int checked = 0;
    std::vector<std::string> names;
    for (const auto& [name, g] : grads) names.push_back(name);
    for (int k = 0; k < 40; ++k) {
      const std::string& name = names[pick.below(names.size())];
      auto& value = params.at(name).value;
      std::size_t c = pick.below(value.size());
      double keep = value[c];
      auto probe = [&](double d) {
        value[c] = keep + d;
        double f = eval(params);
        value[c] = keep;
        return f;
      };
      double fd = (probe(h) - probe(-h)) / (2 * h);
      double fd_half = (probe(h / 2) - probe(-h / 2)) / h;
      // skip coordinates whose interval straddles a relu/abs kink; those are
      // non-differentiable points, like the frozen argmin assignments
      if (std::fabs(fd - fd_half) >
          0.01 * std::max({std::fabs(fd), std::fabs(fd_half), 1e-8}))
        continue;
      double an = grads.at(name)[c];
      double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-8});
      worst = std::max(worst, rel);
      ++checked;
    }
    INFO("trial " << trial << " checked " << checked);
    CHECK(worst < 1e-2);
    CHECK(checked >= 30);
  }
}

TEST_CASE("training behaviors") {
  setenv("VPET_THREADS", "1", 1);
  VaeConfig cfg = tiny_config();
  cfg.seed = 31;
  cfg.batch = 4;

  SECTION("same seed, bit-identical checkpoints") {
    auto run = [&] {
      auto data = tiny_dataset(cfg, 4, 41);
      VaeConfig c = cfg;
      c.epochs = 3;
      TrainResult r = train(data, c);
      std::ostringstream out(std::ios::binary);
      nn::save_checkpoint(out, r.params);
      return out.str();
    };
    CHECK(run() == run());
  }

  SECTION("kl-dominated objective shrinks the posterior mean") {
    auto data = tiny_dataset(cfg, 4, 43);
    VaeConfig heavy = cfg;
    heavy.lambda_kl_g = 10.0;
    heavy.lambda_kl_a = 10.0;
    heavy.lambda_cdd = 0.0;
    heavy.epochs = 120;  // 4-clip batches, one step per epoch

    nn::ParamStore init = init_vae_params(heavy);
    auto mu_norm = [&](nn::ParamStore& p) {
      double acc = 0;
      for (const MotionClip& clip : data) {
        Tape tape;
        nn::Binding bind(tape, p, false);
        auto cond = vae_detail::traj_conditions(heavy, bind, clip);
        auto [mu, ls] = vae_detail::traj_encode(heavy, bind, clip, cond.cond);
        acc += mean_abs(mu.data());
      }
      return acc / data.size();
    };
    double before = mu_norm(init);
    TrainResult r = train(data, heavy);
    double after = mu_norm(r.params);
    CHECK(after < 0.5 * before);
  }

  SECTION("kl annihilation with recon weights off") {
    auto data = tiny_dataset(cfg, 4, 47);
    VaeConfig anni = cfg;
    anni.w_traj_recon = 0.0;
    anni.w_artic_recon = 0.0;
    anni.lambda_kl_g = 1.0;
    anni.lambda_kl_a = 1.0;
    anni.lambda_cdd = 0.0;
    anni.epochs = 1200;  // 1200 steps at one batch per epoch, under the
                         // 3000-step budget
    TrainResult r = train(data, anni);
    double mu_acc = 0, ls_acc = 0;
    for (const MotionClip& clip : data) {
      Tape tape;
      nn::Binding bind(tape, r.params, false);
      auto cond = vae_detail::traj_conditions(anni, bind, clip);
      auto [mu, ls] = vae_detail::traj_encode(anni, bind, clip, cond.cond);
      mu_acc += mean_abs(mu.data());
      ls_acc += mean_abs(ls.data());
      auto zg_rows = embed_pose_rows(
          bind, "pose",
          poses_to_rows(tape, integrate_trajectory(clip.start_pose, clip.deltas)));
      auto z_a0 = ad::row(
          nn::mlp_forward(bind, "artic.a0",
                          vae_detail::artic_rows(tape, clip.articulations, 0, 1), 2),
          0);
      auto [mu_a, ls_a] = vae_detail::artic_encode(anni, bind, clip, zg_rows, z_a0);
      mu_acc += mean_abs(mu_a.data());
      ls_acc += mean_abs(ls_a.data());
    }
    mu_acc /= 2 * data.size();
    ls_acc /= 2 * data.size();
    CHECK(mu_acc < 0.05);
    CHECK(ls_acc < 0.05);
  }

  SECTION("single-clip overfit shrinks reconstruction losses") {
    auto data = tiny_dataset(cfg, 1, 53);
    VaeConfig over = cfg;
    over.batch = 1;
    over.epochs = 400;
    TrainResult r = train(data, over);
    CHECK(r.curve.back().traj_recon < 0.5 * r.curve.front().traj_recon);
    CHECK(r.curve.back().artic_recon < 0.5 * r.curve.front().artic_recon);
  }

  SECTION("resume continues the step counter") {
    auto data = tiny_dataset(cfg, 4, 59);
    VaeConfig c = cfg;
    c.epochs = 2;
    TrainResult first = train(data, c);
    CHECK(first.adam.step_count() == 2);
    nn::ParamStore packed = nn::pack_training_state(first.params, first.adam, {});
    nn::TrainingState st = nn::unpack_training_state(packed, {.lr = c.lr});
    CHECK(st.adam.step_count() == 2);
    TrainResult second = train(data, c, {}, &st);
    CHECK(second.adam.step_count() == 4);
  }

  SECTION("mismatched clip length is a dataset error") {
    auto data = tiny_dataset(cfg, 2, 61);
    VaeConfig c = cfg;
    c.t_frames = cfg.t_frames + 1;
    CHECK_THROWS_WITH(train(data, c),
                      Catch::Matchers::ContainsSubstring("t_frames"));
  }
}

TEST_CASE("generation contracts") {
  setenv("VPET_THREADS", "1", 1);
  VaeConfig cfg = tiny_config();
  cfg.joints = 16;  // the procedural quadruped skeleton
  cfg.seed = 67;
  nn::ParamStore params = init_vae_params(cfg);

  Quadruped quad = build_quadruped();
  SceneSpec sspec;
  Scene scene = generate_scene(sspec, 71);
  RigidTransform g0;
  g0.translation = {0.1, quad.spec.stand_height(), -0.05};
  ArticulationFrame a0 = ArticulationFrame::zeros(16);

  SECTION("horizons other than the training length still decode") {
    GeneratedMotion m = generate(cfg, params, quad.mesh, quad.skeleton,
                                 scene.mesh, g0, a0, cfg.t_frames + 3, 3);
    CHECK(m.trajectory.size() == static_cast<std::size_t>(cfg.t_frames + 4));
    CHECK(m.articulations.size() == m.trajectory.size());
    CHECK_THROWS_AS(generate(cfg, params, quad.mesh, quad.skeleton, scene.mesh,
                             g0, a0, 0, 3),
                    std::invalid_argument);
  }

  SECTION("pinned start pose, determinism, and seed diversity") {
    GeneratedMotion a = generate(cfg, params, quad.mesh, quad.skeleton,
                                 scene.mesh, g0, a0, cfg.t_frames, 101);
    GeneratedMotion b = generate(cfg, params, quad.mesh, quad.skeleton,
                                 scene.mesh, g0, a0, cfg.t_frames, 101);
    GeneratedMotion c = generate(cfg, params, quad.mesh, quad.skeleton,
                                 scene.mesh, g0, a0, cfg.t_frames, 102);
    REQUIRE(a.trajectory.size() == static_cast<std::size_t>(cfg.t_frames + 1));
    REQUIRE(a.articulations.size() == a.trajectory.size());
    CHECK((a.trajectory[0].translation - g0.translation).norm() == 0.0);

    double same = 0, diff = 0;
    for (std::size_t t = 0; t < a.trajectory.size(); ++t) {
      same += (a.trajectory[t].translation - b.trajectory[t].translation).norm();
      diff += (a.trajectory[t].translation - c.trajectory[t].translation).norm();
    }
    CHECK(same == 0.0);
    CHECK(diff > 0.0);

    for (const auto& f : a.articulations)
      for (const Vec3& r : f.joint_rotations) CHECK(r.norm() < kPi + 1e-12);
  }
}

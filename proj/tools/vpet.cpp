// vpet command line: dataset synthesis, training, evaluation, and
// animation export over the vpet library.
//
// exit codes: 0 success, 2 usage, 3 data/schema, 4 model/geometry.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vpet/config.hpp"
#include "vpet/data.hpp"
#include "vpet/mesh_io.hpp"
#include "vpet/metrics.hpp"
#include "vpet/motion_vae.hpp"

namespace fs = std::filesystem;
using namespace vpet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitModel = 4;

struct CmdError : std::runtime_error {
  int code;
  CmdError(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

std::string fnv1a_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CmdError(1, "cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
    if (!in) break;
  }
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw CmdError(1, "cannot write " + path.string());
  out << text;
  if (!out) throw CmdError(1, "write failed: " + path.string());
}

void write_config_echo(const fs::path& dir, const KeyValueConfig& cfg) {
  write_text(dir / "config_echo.txt", cfg.dump());
}

double bbox_diagonal(const std::vector<Vec3>& pts) {
  Vec3 lo = pts.front(), hi = pts.front();
  for (const Vec3& p : pts) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  return (hi - lo).norm();
}

double mean_scene_diagonal(const std::vector<MotionClip>& clips) {
  double acc = 0;
  for (const MotionClip& c : clips) acc += bbox_diagonal(c.bg_points.points);
  return acc / clips.size();
}

// serialize the architecture into checkpoint meta so eval/generate can
// rebuild the model without the training config
std::map<std::string, double> config_meta(const VaeConfig& cfg, double scene_diag) {
  return {{"t_frames", double(cfg.t_frames)},
          {"latent", double(cfg.latent)},
          {"joints", double(cfg.joints)},
          {"n_fg", double(cfg.n_fg)},
          {"n_bg", double(cfg.n_bg)},
          {"use_dfg", cfg.use_dfg ? 1.0 : 0.0},
          {"enc_conv", double(cfg.enc_conv)},
          {"dec_conv", double(cfg.dec_conv)},
          {"enc_hidden", double(cfg.enc_hidden)},
          {"head_hidden", double(cfg.head_hidden)},
          {"scene_diag", scene_diag}};
}

VaeConfig config_from_meta(const std::map<std::string, double>& meta) {
  VaeConfig cfg;
  auto get = [&](const char* key, double dflt) {
    auto it = meta.find(key);
    return it == meta.end() ? dflt : it->second;
  };
  cfg.t_frames = int(get("t_frames", cfg.t_frames));
  cfg.latent = int(get("latent", cfg.latent));
  cfg.joints = int(get("joints", cfg.joints));
  cfg.n_fg = int(get("n_fg", cfg.n_fg));
  cfg.n_bg = int(get("n_bg", cfg.n_bg));
  cfg.use_dfg = get("use_dfg", 1.0) != 0.0;
  cfg.enc_conv = int(get("enc_conv", cfg.enc_conv));
  cfg.dec_conv = int(get("dec_conv", cfg.dec_conv));
  cfg.enc_hidden = int(get("enc_hidden", cfg.enc_hidden));
  cfg.head_hidden = int(get("head_hidden", cfg.head_hidden));
  return cfg;
}

nn::TrainingState load_state_or_die(const std::string& path, double lr = 5e-4) {
  try {
    nn::ParamStore packed = nn::load_checkpoint(path);
    return nn::unpack_training_state(packed, {.lr = lr});
  } catch (const std::exception& e) {
    throw CmdError(kExitData, std::string("checkpoint: ") + e.what());
  }
}

std::vector<MotionClip> load_dataset_or_die(const std::string& path) {
  try {
    return read_dataset(path);
  } catch (const std::exception& e) {
    throw CmdError(kExitData, std::string("dataset: ") + e.what());
  }
}

// ---- synth ----

int cmd_synth(int scenes, int records, int clips, int eval_clips,
              std::uint64_t seed, int t_frames, const std::string& out_dir) {
  if (scenes < 1 || records < 1 || clips < 1)
    throw CmdError(kExitUsage, "--scenes/--records/--clips must be positive");
  fs::create_directories(out_dir);
  fs::path dir(out_dir);

  DatasetSpec spec;
  spec.n_scenes = scenes;
  spec.n_records = records;
  spec.n_clips = clips;
  spec.t_frames = t_frames;
  Dataset train_ds = make_dataset(spec, derive_seed(seed, "train-split"));

  DatasetSpec eval_spec = spec;
  eval_spec.n_records = std::max(2, records / 4);
  eval_spec.n_clips = eval_clips;
  Dataset eval_ds = make_dataset(eval_spec, derive_seed(seed, "eval-split"));

  nlohmann::json manifest;
  manifest["files"] = nlohmann::json::array();
  auto add_file = [&](const fs::path& p) {
    manifest["files"].push_back(
        {{"name", p.filename().string()}, {"fnv1a64", fnv1a_file(p)}});
  };

  for (std::size_t i = 0; i < train_ds.scenes.size(); ++i) {
    fs::path p = dir / ("scene_" + std::to_string(i) + ".obj");
    save_obj(p.string(), train_ds.scenes[i].mesh);
    add_file(p);
    for (const std::string& w : train_ds.scenes[i].warnings)
      std::cerr << "warning: scene " << i << ": " << w << "\n";
  }
  {
    fs::path p = dir / "quadruped.obj";
    save_obj(p.string(), train_ds.quadruped.mesh);
    add_file(p);
  }
  {
    fs::path p = dir / "skeleton.json";
    write_text(p, skeleton_to_json(train_ds.quadruped.skeleton).dump(2) + "\n");
    add_file(p);
  }
  {
    fs::path p = dir / "train.jsonl";
    write_dataset(p.string(), train_ds.clips);
    add_file(p);
  }
  {
    fs::path p = dir / "eval.jsonl";
    write_dataset(p.string(), eval_ds.clips);
    add_file(p);
  }
  manifest["stats"] = {
      {"train_clips", train_ds.clips.size()},
      {"eval_clips", eval_ds.clips.size()},
      {"scene_diag_mean", mean_scene_diagonal(train_ds.clips)},
      {"t_frames", t_frames}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  KeyValueConfig echo;
  echo.set("command", "synth");
  echo.set("scenes", std::to_string(scenes));
  echo.set("records", std::to_string(records));
  echo.set("clips", std::to_string(clips));
  echo.set("eval_clips", std::to_string(eval_clips));
  echo.set("t_frames", std::to_string(t_frames));
  echo.set("seed", std::to_string(seed));
  echo.set("out", out_dir);
  write_config_echo(dir, echo);

  std::cout << "wrote " << train_ds.clips.size() << " train clips, "
            << eval_ds.clips.size() << " eval clips to " << out_dir << "\n";
  return kExitOk;
}

// ---- train ----

int cmd_train(const std::string& data_path, const std::string& config_path,
              const std::string& out_dir, const std::string& resume_path,
              double lambda_cdd_override, int epochs_override,
              long long seed_override, int no_dfg) {
  auto clips = load_dataset_or_die(data_path);
  if (clips.empty()) throw CmdError(kExitData, "dataset is empty: " + data_path);

  KeyValueConfig file_cfg;
  if (!config_path.empty()) {
    try {
      file_cfg = KeyValueConfig::load(config_path);
    } catch (const std::exception& e) {
      throw CmdError(kExitData, e.what());
    }
  }

  VaeConfig cfg;
  cfg.t_frames = clips.front().t_frames();
  cfg.joints = clips.front().joints();
  cfg.n_fg = static_cast<int>(clips.front().limb_points.size());
  cfg.n_bg = static_cast<int>(clips.front().bg_points.size());
  cfg.latent = int(file_cfg.get_int("latent", cfg.latent));
  cfg.lambda_kl_g = file_cfg.get_double("lambda_kl_g", cfg.lambda_kl_g);
  cfg.lambda_kl_a = file_cfg.get_double("lambda_kl_a", cfg.lambda_kl_a);
  cfg.lambda_cdd = file_cfg.get_double("lambda_cdd", cfg.lambda_cdd);
  cfg.lr = file_cfg.get_double("lr", cfg.lr);
  cfg.batch = int(file_cfg.get_int("batch", cfg.batch));
  cfg.epochs = int(file_cfg.get_int("epochs", cfg.epochs));
  cfg.seed = std::uint64_t(file_cfg.get_int("seed", 0));
  cfg.use_dfg = file_cfg.get_bool("use_dfg", true);
  cfg.checkpoint_every =
      int(file_cfg.get_int("checkpoint_every", cfg.checkpoint_every));
  cfg.w_traj_recon = file_cfg.get_double("w_traj_recon", cfg.w_traj_recon);
  cfg.w_artic_recon = file_cfg.get_double("w_artic_recon", cfg.w_artic_recon);
  if (file_cfg.has("t_frames") &&
      file_cfg.get_int("t_frames", cfg.t_frames) != cfg.t_frames)
    throw CmdError(kExitData, "config t_frames disagrees with the dataset");
  if (file_cfg.has("n_fg") && file_cfg.get_int("n_fg", cfg.n_fg) != cfg.n_fg)
    throw CmdError(kExitData, "config n_fg disagrees with the dataset");
  if (file_cfg.has("n_bg") && file_cfg.get_int("n_bg", cfg.n_bg) != cfg.n_bg)
    throw CmdError(kExitData, "config n_bg disagrees with the dataset");
  if (lambda_cdd_override >= 0.0) cfg.lambda_cdd = lambda_cdd_override;
  if (epochs_override > 0) cfg.epochs = epochs_override;
  if (seed_override >= 0) cfg.seed = std::uint64_t(seed_override);
  if (no_dfg) cfg.use_dfg = false;

  fs::create_directories(out_dir);
  fs::path dir(out_dir);

  KeyValueConfig echo;
  echo.set("command", "train");
  echo.set("data", data_path);
  echo.set("t_frames", std::to_string(cfg.t_frames));
  echo.set("latent", std::to_string(cfg.latent));
  echo.set("lambda_kl_g", std::to_string(cfg.lambda_kl_g));
  echo.set("lambda_kl_a", std::to_string(cfg.lambda_kl_a));
  echo.set("lambda_cdd", std::to_string(cfg.lambda_cdd));
  echo.set("lr", std::to_string(cfg.lr));
  echo.set("batch", std::to_string(cfg.batch));
  echo.set("epochs", std::to_string(cfg.epochs));
  echo.set("seed", std::to_string(cfg.seed));
  echo.set("n_fg", std::to_string(cfg.n_fg));
  echo.set("n_bg", std::to_string(cfg.n_bg));
  echo.set("use_dfg", cfg.use_dfg ? "1" : "0");
  echo.set("workers", std::to_string(worker_count(cfg.batch)));
  write_config_echo(dir, echo);

  double scene_diag = mean_scene_diagonal(clips);

  std::ofstream csv(dir / "loss.csv");
  if (!csv) throw CmdError(1, "cannot write loss.csv");
  csv << "epoch,traj_recon,traj_kl,artic_recon,artic_kl,floating,total\n";
  csv.precision(17);

  TrainHooks hooks;
  hooks.on_epoch = [&](int epoch, const LossBreakdown& l) {
    csv << epoch << "," << l.traj_recon << "," << l.traj_kl << ","
        << l.artic_recon << "," << l.artic_kl << "," << l.floating << ","
        << l.total << "\n";
    csv.flush();
    std::cout << "epoch " << epoch << " total " << l.total << " traj "
              << l.traj_recon << " artic " << l.artic_recon << " float "
              << l.floating << "\n";
  };
  hooks.on_checkpoint = [&](int epoch, const nn::ParamStore& params,
                            const nn::AdamState& adam) {
    nn::ParamStore packed =
        nn::pack_training_state(params, adam, config_meta(cfg, scene_diag));
    std::ostringstream name;
    name << "checkpoint_" << std::setw(4) << std::setfill('0') << epoch + 1
         << ".vpet";
    nn::save_checkpoint((dir / name.str()).string(), packed);
  };

  nn::TrainingState resume_state;
  const nn::TrainingState* resume = nullptr;
  if (!resume_path.empty()) {
    resume_state = load_state_or_die(resume_path, cfg.lr);
    resume = &resume_state;
  }

  TrainResult result;
  try {
    result = train(clips, cfg, hooks, resume);
  } catch (const std::exception& e) {
    throw CmdError(kExitData, std::string("train: ") + e.what());
  }

  nn::ParamStore packed = nn::pack_training_state(
      result.params, result.adam, config_meta(cfg, scene_diag));
  nn::save_checkpoint((dir / "final.vpet").string(), packed);
  std::cout << "final total " << result.curve.back().total << ", checkpoint at "
            << (dir / "final.vpet") << "\n";
  return kExitOk;
}

// ---- generate ----

std::vector<double> parse_numbers(const std::string& text, std::size_t expect,
                                  const char* what) {
  std::istringstream in(text);
  std::vector<double> out;
  double v;
  while (in >> v) out.push_back(v);
  if (out.size() != expect)
    throw CmdError(kExitUsage, std::string(what) + ": expected " +
                                   std::to_string(expect) + " numbers, got " +
                                   std::to_string(out.size()));
  return out;
}

int cmd_generate(const std::string& ckpt_path, const std::string& fg_path,
                 const std::string& skel_path, const std::string& bg_path,
                 const std::string& start_str, int frames, std::uint64_t seed,
                 const std::string& out_dir) {
  if (frames < 1) throw CmdError(kExitUsage, "--frames must be positive");
  auto start = parse_numbers(start_str, 7, "--start");
  RigidTransform g0;
  try {
    g0.rotation = UnitQuat(start[0], start[1], start[2], start[3]);
  } catch (const std::exception&) {
    throw CmdError(kExitUsage, "--start: zero-norm quaternion");
  }
  g0.translation = {start[4], start[5], start[6]};

  nn::TrainingState state = load_state_or_die(ckpt_path);
  VaeConfig cfg = config_from_meta(state.meta);

  TriMesh fg, bg;
  Skeleton skel;
  try {
    fg = load_obj(fg_path);
    bg = load_obj(bg_path);
    std::ifstream sin(skel_path);
    if (!sin) throw std::runtime_error("cannot open skeleton: " + skel_path);
    skel = skeleton_from_json(nlohmann::json::parse(sin));
  } catch (const std::exception& e) {
    throw CmdError(kExitData, e.what());
  }

  // align the background to the training scene scale: recenter, then match
  // the mean training bounding-box diagonal
  double diag = bbox_diagonal(bg.vertices);
  if (diag <= 0) throw CmdError(kExitData, "background mesh is degenerate");
  double target =
      state.meta.count("scene_diag") ? state.meta.at("scene_diag") : diag;
  double scale = target / diag;
  Vec3 offset = centroid(bg.vertices);
  for (Vec3& v : bg.vertices) v = (v - offset) * scale;

  if (3 * skel.joints() != cfg.artic_dim())
    throw CmdError(kExitModel,
                   "skeleton joint count does not match the checkpoint");

  ArticulationFrame a0 = ArticulationFrame::zeros(skel.joints());
  GeneratedMotion motion;
  SkinWeights weights;
  try {
    weights = skinning_weights(PointCloud{fg.vertices}, gaussian_bones(skel));
    motion = generate(cfg, state.params, fg, skel, bg, g0, a0, frames, seed);
  } catch (const std::exception& e) {
    throw CmdError(kExitModel, std::string("generate: ") + e.what());
  }

  fs::create_directories(out_dir);
  fs::path dir(out_dir);

  nlohmann::json mj;
  mj["frames"] = frames;
  mj["seed"] = seed;
  mj["bg_scale"] = scale;
  mj["bg_offset"] = {offset.x, offset.y, offset.z};
  nlohmann::json gj = nlohmann::json::array();
  for (const RigidTransform& g : motion.trajectory) {
    auto v = pose_to_vec7(g);
    gj.push_back({v[0], v[1], v[2], v[3], v[4], v[5], v[6]});
  }
  mj["g"] = std::move(gj);
  nlohmann::json aj = nlohmann::json::array();
  for (const ArticulationFrame& f : motion.articulations) {
    nlohmann::json row = nlohmann::json::array();
    for (const Vec3& r : f.joint_rotations) {
      row.push_back(r.x);
      row.push_back(r.y);
      row.push_back(r.z);
    }
    aj.push_back(std::move(row));
  }
  mj["a"] = std::move(aj);
  write_text(dir / "motion.json", mj.dump() + "\n");

  // per-frame posed meshes and per-bone world transforms
  nlohmann::json anim;
  anim["fps"] = 30;
  anim["bones"] = skel.bones();
  nlohmann::json frames_json = nlohmann::json::array();
  for (std::size_t t = 0; t < motion.trajectory.size(); ++t) {
    TriMesh posed;
    try {
      posed = pose_mesh(fg, skel, weights, motion.articulations[t],
                        motion.trajectory[t]);
    } catch (const std::exception& e) {
      throw CmdError(kExitModel, std::string("pose: ") + e.what());
    }
    std::ostringstream name;
    name << "frame_" << std::setw(4) << std::setfill('0') << t << ".obj";
    save_obj((dir / name.str()).string(), posed);

    BonePose pose = forward_kinematics(skel, motion.articulations[t]);
    nlohmann::json bones = nlohmann::json::array();
    for (const RigidTransform& s : pose.bone_transforms) {
      auto v = pose_to_vec7(compose(motion.trajectory[t], s));
      bones.push_back({v[0], v[1], v[2], v[3], v[4], v[5], v[6]});
    }
    frames_json.push_back(std::move(bones));
  }
  anim["frames"] = std::move(frames_json);
  write_text(dir / "animation.json", anim.dump() + "\n");

  KeyValueConfig echo;
  echo.set("command", "generate");
  echo.set("ckpt", ckpt_path);
  echo.set("frames", std::to_string(frames));
  echo.set("seed", std::to_string(seed));
  echo.set("bg_scale", std::to_string(scale));
  write_config_echo(dir, echo);

  std::cout << "wrote " << motion.trajectory.size() << " frames to " << out_dir
            << "\n";
  return kExitOk;
}

// ---- eval ----

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, int n,
             std::uint64_t seed, const std::string& out_dir, bool oracle_copy) {
  auto clips = load_dataset_or_die(data_path);
  if (clips.empty()) throw CmdError(kExitData, "dataset is empty");

  class OracleCopy : public TrajectoryModel {
   public:
    std::vector<RigidTransform> reconstruct(const MotionClip& c) const override {
      return integrate_trajectory(c.start_pose, c.deltas);
    }
    std::vector<RigidTransform> sample(const MotionClip& c,
                                       std::uint64_t) const override {
      return integrate_trajectory(c.start_pose, c.deltas);
    }
  };

  SuiteConfig scfg;
  scfg.n_samples = n;
  scfg.seed = seed;
  std::ostringstream echo;
  echo << "n=" << n << " seed=" << seed << " t_frames="
       << clips.front().t_frames() << " data=" << data_path;
  scfg.config_echo = echo.str();

  EvalReport report;
  nn::TrainingState state;
  VaeConfig cfg;
  if (oracle_copy) {
    OracleCopy model;
    report = evaluate_suite(model, clips, scfg);
  } else {
    state = load_state_or_die(ckpt_path);
    cfg = config_from_meta(state.meta);
    if (cfg.t_frames != clips.front().t_frames())
      throw CmdError(kExitData, "dataset clip length does not match checkpoint");
    VaeTrajectoryModel model(cfg, state.params);
    report = evaluate_suite(model, clips, scfg);
  }

  std::cout << report_to_csv(report);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    fs::path dir(out_dir);
    write_text(dir / "report.json", report_to_json(report).dump(2) + "\n");
    write_text(dir / "report.csv", report_to_csv(report));
    KeyValueConfig kvecho;
    kvecho.set("command", "eval");
    kvecho.set("n", std::to_string(n));
    kvecho.set("seed", std::to_string(seed));
    kvecho.set("data", data_path);
    kvecho.set("oracle_copy", oracle_copy ? "1" : "0");
    write_config_echo(dir, kvecho);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"environment-aware quadruped motion synthesis"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  int scenes = 6, records = 64, clips = 512, eval_clips = 64, t_frames = 32;
  std::uint64_t synth_seed = 0;
  std::string synth_out = "out/dataset";
  synth->add_option("--scenes", scenes);
  synth->add_option("--records", records);
  synth->add_option("--clips", clips);
  synth->add_option("--eval-clips", eval_clips);
  synth->add_option("--t-frames", t_frames);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--out", synth_out);

  // train
  auto* train_cmd = app.add_subcommand("train", "train the motion model");
  std::string train_data, train_config, train_out = "out/train", resume;
  double lambda_cdd_override = -1.0;
  int epochs_override = 0, no_dfg = 0;
  long long train_seed = -1;
  train_cmd->add_option("--data", train_data)->required();
  train_cmd->add_option("--config", train_config);
  train_cmd->add_option("--out", train_out);
  train_cmd->add_option("--resume", resume);
  train_cmd->add_option("--lambda-cdd", lambda_cdd_override);
  train_cmd->add_option("--epochs", epochs_override);
  train_cmd->add_option("--seed", train_seed);
  train_cmd->add_flag("--no-dfg", no_dfg);

  // generate
  auto* gen = app.add_subcommand("generate", "sample motion for new meshes");
  std::string ckpt, fg_path, skel_path, bg_path, start_str, gen_out = "out/generate";
  int frames = 32;
  std::uint64_t gen_seed = 0;
  gen->add_option("--ckpt", ckpt)->required();
  gen->add_option("--fg", fg_path)->required();
  gen->add_option("--skel", skel_path)->required();
  gen->add_option("--bg", bg_path)->required();
  gen->add_option("--start", start_str)->required();
  gen->add_option("--frames", frames);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--out", gen_out);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "run the evaluation metrics");
  std::string eval_ckpt, eval_data, eval_out;
  int eval_n = 8;
  std::uint64_t eval_seed = 0;
  bool oracle_copy = false;
  eval_cmd->add_option("--ckpt", eval_ckpt);
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--n", eval_n);
  eval_cmd->add_option("--seed", eval_seed);
  eval_cmd->add_option("--out", eval_out);
  eval_cmd->add_flag("--oracle-copy", oracle_copy);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (synth->parsed())
      return cmd_synth(scenes, records, clips, eval_clips, synth_seed, t_frames,
                       synth_out);
    if (train_cmd->parsed())
      return cmd_train(train_data, train_config, train_out, resume,
                       lambda_cdd_override, epochs_override, train_seed, no_dfg);
    if (gen->parsed())
      return cmd_generate(ckpt, fg_path, skel_path, bg_path, start_str, frames,
                          gen_seed, gen_out);
    if (eval_cmd->parsed()) {
      if (!oracle_copy && eval_ckpt.empty()) {
        std::cerr << "--ckpt is required unless --oracle-copy is set\n";
        return kExitUsage;
      }
      return cmd_eval(eval_ckpt, eval_data, eval_n, eval_seed, eval_out,
                      oracle_copy);
    }
  } catch (const CmdError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}

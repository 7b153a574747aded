#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vpet/clip.hpp"
#include "vpet/mesh_io.hpp"
#include "vpet/metrics.hpp"
#include "vpet/skeleton.hpp"

namespace fs = std::filesystem;
using namespace vpet;

namespace {

struct RunResult {
  int code;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

RunResult run_cli(const std::string& args, const fs::path& dir) {
  fs::create_directories(dir);
  fs::path log = dir / "cli_output.txt";
  std::string cmd = std::string(VPET_CLI_PATH) + " " + args + " > " +
                    log.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  int code = -1;
  if (status != -1) code = WEXITSTATUS(status);
  return {code, slurp(log)};
}

fs::path work_dir() {
  fs::path dir = fs::temp_directory_path() / "vpet_cli_tests";
  return dir;
}

const std::string kSynthFlags =
    "synth --scenes 2 --records 4 --clips 8 --eval-clips 4 --t-frames 8 "
    "--seed 11";

}  // namespace

TEST_CASE("cli synth") {
  fs::path base = work_dir() / "synth";
  fs::remove_all(base);

  SECTION("produces the dataset artifacts and a complete manifest") {
    auto r = run_cli(kSynthFlags + " --out " + (base / "a").string(), base);
    INFO(r.out);
    REQUIRE(r.code == 0);
    for (const char* name :
         {"train.jsonl", "eval.jsonl", "skeleton.json", "quadruped.obj",
          "manifest.json", "config_echo.txt", "scene_0.obj", "scene_1.obj"})
      CHECK(fs::exists(base / "a" / name));

    nlohmann::json manifest =
        nlohmann::json::parse(slurp(base / "a" / "manifest.json"));
    std::vector<std::string> listed;
    for (const auto& f : manifest.at("files"))
      listed.push_back(f.at("name").get<std::string>());
    for (const char* name : {"train.jsonl", "eval.jsonl", "skeleton.json",
                             "quadruped.obj", "scene_0.obj", "scene_1.obj"})
      CHECK(std::find(listed.begin(), listed.end(), name) != listed.end());

    auto clips = read_dataset((base / "a" / "train.jsonl").string());
    CHECK(clips.size() == 8);
    CHECK(clips.front().t_frames() == 8);
  }

  SECTION("same seed gives identical checksums") {
    auto r1 = run_cli(kSynthFlags + " --out " + (base / "s1").string(), base);
    auto r2 = run_cli(kSynthFlags + " --out " + (base / "s2").string(), base);
    REQUIRE(r1.code == 0);
    REQUIRE(r2.code == 0);
    nlohmann::json m1 = nlohmann::json::parse(slurp(base / "s1" / "manifest.json"));
    nlohmann::json m2 = nlohmann::json::parse(slurp(base / "s2" / "manifest.json"));
    CHECK(m1.at("files") == m2.at("files"));
  }

  SECTION("zero records is a usage error") {
    auto r = run_cli("synth --records 0 --out " + (base / "bad").string(), base);
    CHECK(r.code == 2);
  }
}

TEST_CASE("cli train, generate, eval pipeline") {
  fs::path base = work_dir() / "pipeline";
  fs::remove_all(base);
  fs::create_directories(base);
  setenv("VPET_THREADS", "2", 1);

  auto rs = run_cli(kSynthFlags + " --out " + (base / "data").string(), base);
  REQUIRE(rs.code == 0);

  {
    std::ofstream cfg(base / "train.cfg");
    cfg << "# desk-scale smoke configuration\n"
        << "batch=4\nepochs=3\nseed=7\ncheckpoint_every=2\n";
  }

  SECTION("training writes loss curves, checkpoints, and a config echo") {
    auto r = run_cli("train --data " + (base / "data" / "train.jsonl").string() +
                         " --config " + (base / "train.cfg").string() +
                         " --lambda-cdd 0.05 --out " + (base / "run").string(),
                     base);
    INFO(r.out);
    REQUIRE(r.code == 0);
    CHECK(fs::exists(base / "run" / "final.vpet"));
    CHECK(fs::exists(base / "run" / "checkpoint_0002.vpet"));
    CHECK(fs::exists(base / "run" / "checkpoint_0003.vpet"));

    std::string csv = slurp(base / "run" / "loss.csv");
    CHECK(csv.rfind("epoch,traj_recon,traj_kl,artic_recon,artic_kl,floating,total\n",
                    0) == 0);
    int rows = 0;
    for (char c : csv)
      if (c == '\n') ++rows;
    CHECK(rows == 4);  // header + one row per epoch

    std::string echo = slurp(base / "run" / "config_echo.txt");
    CHECK(echo.find("lambda_cdd=0.05") != std::string::npos);
    CHECK(echo.find("seed=7") != std::string::npos);

    SECTION("resume picks up from a checkpoint") {
      auto rr = run_cli(
          "train --data " + (base / "data" / "train.jsonl").string() +
              " --config " + (base / "train.cfg").string() + " --epochs 1" +
              " --resume " + (base / "run" / "final.vpet").string() + " --out " +
              (base / "resumed").string(),
          base);
      INFO(rr.out);
      REQUIRE(rr.code == 0);
      nn::TrainingState st = nn::unpack_training_state(
          nn::load_checkpoint((base / "resumed" / "final.vpet").string()));
      CHECK(st.adam.step_count() == 8);  // 3 epochs x 2 steps, then 1 x 2 more
    }

    SECTION("generation exports meshes, motion, and animation") {
      std::string start = "1 0 0 0 0.05 0.196 -0.02";
      std::string gen_flags =
          "generate --ckpt " + (base / "run" / "final.vpet").string() +
          " --fg " + (base / "data" / "quadruped.obj").string() + " --skel " +
          (base / "data" / "skeleton.json").string() + " --bg " +
          (base / "data" / "scene_0.obj").string() + " --start \"" + start +
          "\" --frames 8";
      auto rg = run_cli(gen_flags + " --seed 5 --out " + (base / "gen").string(),
                        base);
      INFO(rg.out);
      REQUIRE(rg.code == 0);

      nlohmann::json motion =
          nlohmann::json::parse(slurp(base / "gen" / "motion.json"));
      CHECK(motion.at("g").size() == 9);
      CHECK(motion.at("a").size() == 9);
      for (int t = 0; t <= 8; ++t)
        CHECK(fs::exists(base / "gen" /
                         ("frame_000" + std::to_string(t) + ".obj")));
      nlohmann::json anim =
          nlohmann::json::parse(slurp(base / "gen" / "animation.json"));
      CHECK(anim.at("frames").size() == 9);
      CHECK(anim.at("bones").get<int>() == 17);

      // start pose is pinned
      auto g0 = motion.at("g").at(0);
      CHECK(g0.at(4).get<double>() == 0.05);
      CHECK(g0.at(5).get<double>() == 0.196);

      // frame 0 equals the library-side posed mesh on the same inputs
      {
        TriMesh fg = load_obj((base / "data" / "quadruped.obj").string());
        std::ifstream sin(base / "data" / "skeleton.json");
        Skeleton skel = skeleton_from_json(nlohmann::json::parse(sin));
        RigidTransform start_pose;
        start_pose.translation = {0.05, 0.196, -0.02};
        TriMesh want = pose_mesh(fg, skel,
                                 ArticulationFrame::zeros(skel.joints()),
                                 start_pose);
        TriMesh got = load_obj((base / "gen" / "frame_0000.obj").string());
        REQUIRE(got.vertices.size() == want.vertices.size());
        for (std::size_t i = 0; i < want.vertices.size(); ++i)
          CHECK((got.vertices[i] - want.vertices[i]).norm() < 1e-12);
      }

      // a different seed produces different motion
      auto rg2 = run_cli(
          gen_flags + " --seed 6 --out " + (base / "gen2").string(), base);
      REQUIRE(rg2.code == 0);
      CHECK(slurp(base / "gen" / "motion.json") !=
            slurp(base / "gen2" / "motion.json"));

      // malformed start pose is a usage error
      auto rbad = run_cli(
          "generate --ckpt " + (base / "run" / "final.vpet").string() +
              " --fg " + (base / "data" / "quadruped.obj").string() +
              " --skel " + (base / "data" / "skeleton.json").string() +
              " --bg " + (base / "data" / "scene_0.obj").string() +
              " --start \"1 0 0\" --out " + (base / "genbad").string(),
          base);
      CHECK(rbad.code == 2);

      // incompatible skeleton is a model/geometry error
      {
        Skeleton tiny;
        tiny.parent = {-1};
        tiny.rest_joints = {{0, 0, 0}};
        tiny.bone_scale = {{0.1, 0.1, 0.1}, {0.1, 0.1, 0.1}};
        tiny.limb_bones = {1};
        std::ofstream out(base / "tiny_skel.json");
        out << skeleton_to_json(tiny).dump();
      }
      auto rskel = run_cli(
          "generate --ckpt " + (base / "run" / "final.vpet").string() +
              " --fg " + (base / "data" / "quadruped.obj").string() +
              " --skel " + (base / "tiny_skel.json").string() + " --bg " +
              (base / "data" / "scene_0.obj").string() + " --start \"" + start +
              "\" --out " + (base / "genskel").string(),
          base);
      CHECK(rskel.code == 4);
    }

    SECTION("eval emits the three-metric report deterministically") {
      std::string eval_flags =
          "eval --ckpt " + (base / "run" / "final.vpet").string() + " --data " +
          (base / "data" / "eval.jsonl").string() + " --n 2 --seed 3";
      auto re = run_cli(eval_flags + " --out " + (base / "eval1").string(), base);
      INFO(re.out);
      REQUIRE(re.code == 0);
      CHECK(fs::exists(base / "eval1" / "report.json"));
      CHECK(fs::exists(base / "eval1" / "report.csv"));
      nlohmann::json rep =
          nlohmann::json::parse(slurp(base / "eval1" / "report.json"));
      CHECK(rep.contains("recon"));
      CHECK(rep.contains("diversity"));
      CHECK(rep.contains("floating_err"));

      auto re2 = run_cli(eval_flags + " --out " + (base / "eval2").string(), base);
      REQUIRE(re2.code == 0);
      CHECK(slurp(base / "eval1" / "report.json") ==
            slurp(base / "eval2" / "report.json"));
    }

    SECTION("oracle-copy stub reports zero reconstruction error") {
      auto re = run_cli("eval --oracle-copy --data " +
                            (base / "data" / "eval.jsonl").string() +
                            " --n 2 --out " + (base / "evalo").string(),
                        base);
      REQUIRE(re.code == 0);
      nlohmann::json rep =
          nlohmann::json::parse(slurp(base / "evalo" / "report.json"));
      CHECK(rep.at("recon").get<double>() == 0.0);
    }
  }

  SECTION("corrupted dataset fails with the schema exit code") {
    std::string text = slurp(base / "data" / "train.jsonl");
    text.insert(text.find('\n') / 2, "@@@");
    {
      std::ofstream out(base / "corrupt.jsonl");
      out << text;
    }
    auto r = run_cli("train --data " + (base / "corrupt.jsonl").string() +
                         " --out " + (base / "runbad").string(),
                     base);
    CHECK(r.code == 3);
  }
}

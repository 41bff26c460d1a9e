#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "uspg/io.hpp"
#include "uspg/spike.hpp"

using namespace uspg;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "uspg_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

CliResult run_cli(const std::string& args) {
  const fs::path out = work_dir() / "stdout.txt";
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd = std::string(USPG_CLI_PATH) + " " + args + " >" +
                          out.string() + " 2>" + err.string();
  CliResult r;
  const int status = std::system(cmd.c_str());
  r.exit_code = status < 0 ? status : WEXITSTATUS(status);
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

// one shared tiny dataset + run, produced through the CLI itself
const fs::path& dataset_dir() {
  static const fs::path dir = [] {
    const fs::path d = work_dir() / "data";
    const fs::path cfg = work_dir() / "config.json";
    std::ofstream f(cfg);
    f << R"({"scene": {"seed": 5, "views": 2, "recon_count": 5},
             "train": {"iterations": 2, "gaussian_count": 16, "mode": "gs-only",
                       "checkpoint_every": 2, "preview_every": 2}})";
    f.close();
    const CliResult r =
        run_cli("simulate --config " + cfg.string() + " --out " + d.string());
    REQUIRE(r.exit_code == 0);
    return d;
  }();
  return dir;
}

const fs::path& run_dir() {
  static const fs::path dir = [] {
    const fs::path d = work_dir() / "run";
    const CliResult r =
        run_cli("train --dataset " + dataset_dir().string() + " --config " +
                (work_dir() / "config.json").string() + " --out " + d.string());
    REQUIRE(r.exit_code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("cli: simulate writes a loadable dataset and echoes its config") {
  const fs::path& d = dataset_dir();
  CHECK(fs::exists(d / "scene.json"));
  CHECK(fs::exists(d / "view_000.spk"));
  CHECK(fs::exists(d / "view_001.spk"));
  CHECK(fs::exists(d / "config.json"));
  CHECK(slurp(d / "config.json").find("\"views\": 2") != std::string::npos);

  SUBCASE("unknown config fields are rejected with a nonzero exit") {
    const fs::path bad = work_dir() / "bad.json";
    std::ofstream f(bad);
    f << R"({"scene": {"wiews": 2}})";
    f.close();
    const CliResult r = run_cli("simulate --config " + bad.string() + " --out " +
                                (work_dir() / "never").string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("error:") != std::string::npos);
    CHECK(r.err.find("wiews") != std::string::npos);
    CHECK(!fs::exists(work_dir() / "never"));
  }
}

TEST_CASE("cli: reconstruct recovers a constant intensity by rate coding") {
  // 0.3 per tick at threshold 0.5 fires exactly 60 times in 100 ticks
  IntensitySequence seq;
  seq.frames = 100;
  seq.height = seq.width = 4;
  seq.values.assign(100 * 16, 0.3);
  const fs::path spk = work_dir() / "const.spk";
  write_spk(spk.string(), simulate_spikes(seq, SpikeSimConfig{}));

  const fs::path out = work_dir() / "rec.tsr";
  const CliResult r =
      run_cli("reconstruct --spike " + spk.string() + " --out " + out.string());
  CHECK(r.exit_code == 0);
  const Tensor img = read_tsr(out.string());
  REQUIRE(img.shape() == Shape{4, 4});
  for (int i = 0; i < img.size(); ++i) CHECK(img[i] == doctest::Approx(0.3).epsilon(1e-6));

  SUBCASE("inter-spike intervals give the same constant") {
    const fs::path out2 = work_dir() / "rec_tfi.tsr";
    const CliResult r2 = run_cli("reconstruct --spike " + spk.string() +
                                 " --method tfi --out " + out2.string());
    CHECK(r2.exit_code == 0);
    const Tensor img2 = read_tsr(out2.string());
    for (int i = 0; i < img2.size(); ++i) {
      CHECK(img2[i] >= 0.2);
      CHECK(img2[i] <= 0.4);
    }
  }
  SUBCASE("unknown methods fail cleanly") {
    const CliResult r3 = run_cli("reconstruct --spike " + spk.string() +
                                 " --method psychic --out " + out.string());
    CHECK(r3.exit_code == 1);
    CHECK(r3.err.find("error:") != std::string::npos);
  }
}

TEST_CASE("cli: train produces the documented run directory") {
  const fs::path& d = run_dir();
  CHECK(fs::exists(d / "config.json"));
  CHECK(fs::exists(d / "checkpoints" / "step_000002.ckpt"));
  const std::string log = slurp(d / "log.csv");
  CHECK(log.find("step,view,") == 0);
  int rows = -1;  // header
  for (char c : log)
    if (c == '\n') ++rows;
  CHECK(rows == 2);
  int previews = 0;
  for (const auto& e : fs::directory_iterator(d / "previews"))
    if (e.path().extension() == ".pgm") ++previews;
  CHECK(previews > 0);

  SUBCASE("resume continues from a checkpoint") {
    const fs::path d2 = work_dir() / "run_resumed";
    const CliResult r = run_cli(
        "train --dataset " + dataset_dir().string() + " --config " +
        (work_dir() / "config.json").string() + " --iters 3 --resume " +
        (d / "checkpoints" / "step_000002.ckpt").string() + " --out " + d2.string());
    CHECK(r.exit_code == 0);
    const std::string log2 = slurp(d2 / "log.csv");
    int rows2 = -1;
    for (char c : log2)
      if (c == '\n') ++rows2;
    CHECK(rows2 == 1);  // one additional step: 2 -> 3
    CHECK(log2.find("\n2,") != std::string::npos);  // rows carry the pre-step index
  }
}

TEST_CASE("cli: eval and pose-eval read a finished run") {
  const fs::path csv = work_dir() / "eval.csv";
  const CliResult r = run_cli("eval --run " + run_dir().string() + " --dataset " +
                              dataset_dir().string() + " --out " + csv.string());
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("gs_only") != std::string::npos);
  const std::string body = slurp(csv);
  CHECK(body.find("view,psnr_gs,") == 0);

  const CliResult pe = run_cli("pose-eval --run " + run_dir().string() +
                               " --dataset " + dataset_dir().string() + " --level 10");
  CHECK(pe.exit_code == 0);
  CHECK(pe.out.find("improvement") != std::string::npos);
}

TEST_CASE("cli: a trained network reconstructs through its checkpoint") {
  const fs::path out = work_dir() / "net_rec.pgm";
  const CliResult r = run_cli(
      "reconstruct --spike " + (dataset_dir() / "view_000.spk").string() +
      " --method net --checkpoint " +
      (run_dir() / "checkpoints" / "step_000002.ckpt").string() + " --out " +
      out.string());
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(out));
  CHECK(slurp(out).substr(0, 2) == "P5");

  SUBCASE("net without a checkpoint is an error") {
    const CliResult r2 =
        run_cli("reconstruct --spike " + (dataset_dir() / "view_000.spk").string() +
                " --method net --out " + out.string());
    CHECK(r2.exit_code == 1);
  }
}

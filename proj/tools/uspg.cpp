#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "uspg/io.hpp"
#include "uspg/metrics.hpp"
#include "uspg/scene_gen.hpp"
#include "uspg/trainer.hpp"

extern "C" void openblas_set_num_threads(int);

namespace fs = std::filesystem;
using nlohmann::json;
using namespace uspg;

namespace {

struct AppConfig {
  SceneConfig scene;
  TrainConfig train;
};

void reject_unknown(const json& j, const std::string& section,
                    const std::vector<std::string>& allowed) {
  for (const auto& [key, val] : j.items()) {
    (void)val;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw std::runtime_error("config: unknown field \"" + key + "\" in section \"" +
                              section + "\"");
  }
}

template <typename T>
void opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

AppConfig parse_config(const json& doc) {
  reject_unknown(doc, "(top)", {"scene", "spike", "train", "eval"});
  AppConfig c;
  if (doc.contains("scene")) {
    const json& s = doc.at("scene");
    reject_unknown(s, "scene",
                   {"seed", "views", "height", "width", "frames", "exposure",
                    "gaussians", "recon_count", "fx", "fy", "camera_distance"});
    opt(s, "seed", c.scene.seed);
    opt(s, "views", c.scene.views);
    opt(s, "height", c.scene.height);
    opt(s, "width", c.scene.width);
    opt(s, "frames", c.scene.frames);
    opt(s, "exposure", c.scene.exposure);
    opt(s, "gaussians", c.scene.gaussians);
    opt(s, "recon_count", c.scene.recon_count);
    opt(s, "fx", c.scene.fx);
    opt(s, "fy", c.scene.fy);
    opt(s, "camera_distance", c.scene.camera_distance);
  }
  if (doc.contains("spike")) {
    const json& s = doc.at("spike");
    reject_unknown(s, "spike", {"threshold_c"});
    opt(s, "threshold_c", c.scene.threshold_c);
  }
  if (doc.contains("train")) {
    const json& t = doc.at("train");
    reject_unknown(t, "train",
                   {"mode", "iterations", "seed", "pose_level", "gaussian_count",
                    "lr_gaussians", "lr_twists", "lr_theta", "lr_final_scale",
                    "recon_count", "joint_warmup", "checkpoint_every",
                    "preview_every", "lambda_dssim"});
    if (t.contains("mode")) c.train.mode = mode_from_name(t.at("mode").get<std::string>());
    opt(t, "iterations", c.train.iterations);
    opt(t, "seed", c.train.seed);
    opt(t, "pose_level", c.train.pose_level);
    opt(t, "gaussian_count", c.train.gaussian_count);
    opt(t, "lr_gaussians", c.train.lr_gaussians);
    opt(t, "lr_twists", c.train.lr_twists);
    opt(t, "lr_theta", c.train.lr_theta);
    opt(t, "lr_final_scale", c.train.lr_final_scale);
    opt(t, "recon_count", c.train.recon_count);
    opt(t, "joint_warmup", c.train.joint_warmup);
    opt(t, "checkpoint_every", c.train.checkpoint_every);
    opt(t, "preview_every", c.train.preview_every);
    opt(t, "lambda_dssim", c.train.loss.lambda_dssim);
  }
  if (doc.contains("eval")) reject_unknown(doc.at("eval"), "eval", {});
  return c;
}

json resolved_config(const AppConfig& c) {
  json doc;
  doc["scene"] = {{"seed", c.scene.seed},
                  {"views", c.scene.views},
                  {"height", c.scene.height},
                  {"width", c.scene.width},
                  {"frames", c.scene.frames},
                  {"exposure", c.scene.exposure},
                  {"gaussians", c.scene.gaussians},
                  {"recon_count", c.scene.recon_count},
                  {"fx", c.scene.fx},
                  {"fy", c.scene.fy},
                  {"camera_distance", c.scene.camera_distance}};
  doc["spike"] = {{"threshold_c", c.scene.threshold_c}};
  doc["train"] = {{"mode", mode_name(c.train.mode)},
                  {"iterations", c.train.iterations},
                  {"seed", c.train.seed},
                  {"pose_level", c.train.pose_level},
                  {"gaussian_count", c.train.gaussian_count},
                  {"lr_gaussians", c.train.lr_gaussians},
                  {"lr_twists", c.train.lr_twists},
                  {"lr_theta", c.train.lr_theta},
                  {"lr_final_scale", c.train.lr_final_scale},
                  {"recon_count", c.train.recon_count},
                  {"joint_warmup", c.train.joint_warmup},
                  {"checkpoint_every", c.train.checkpoint_every},
                  {"preview_every", c.train.preview_every},
                  {"lambda_dssim", c.train.loss.lambda_dssim}};
  doc["eval"] = json::object();
  return doc;
}

AppConfig load_config_file(const std::string& path) {
  if (path.empty()) return AppConfig{};
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  return parse_config(json::parse(f));
}

void echo_config(const AppConfig& c, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream f(dir + "/config.json");
  if (!f) throw std::runtime_error("cannot write " + dir + "/config.json");
  f << resolved_config(c).dump(1) << "\n";
}

AppConfig read_echoed_config(const std::string& run_dir) {
  std::ifstream f(run_dir + "/config.json");
  if (!f)
    throw std::runtime_error("run directory has no config.json: " + run_dir);
  return parse_config(json::parse(f));
}

std::string latest_checkpoint(const std::string& run_dir) {
  std::string best;
  const std::string dir = run_dir + "/checkpoints";
  if (fs::is_directory(dir))
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string p = e.path().string();
      if (p.size() > 5 && p.substr(p.size() - 5) == ".ckpt" && p > best) best = p;
    }
  if (best.empty())
    throw std::runtime_error("no checkpoints under " + run_dir + "/checkpoints");
  return best;
}

RunState load_run(const std::string& run_dir, const Dataset& data) {
  const AppConfig cfg = read_echoed_config(run_dir);
  RunState s = init_run(data, cfg.train);
  checkpoint_load(latest_checkpoint(run_dir), s);
  return s;
}

void write_image(const std::string& path, const Tensor& img) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".pgm")
    write_pgm(path, img);
  else
    write_tsr(path, img);
}

// Pulls just the network weights out of a checkpoint, shapes inferred from
// the manifest; enough for stand-alone reconstruction.
ReconNetParams net_from_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[4];
  f.read(magic, 4);
  std::uint32_t mlen = 0;
  f.read(reinterpret_cast<char*>(&mlen), 4);
  if (!f || std::string(magic, 4) != "UCK1")
    throw std::runtime_error("bad checkpoint magic in " + path);
  std::string ms(mlen, '\0');
  f.read(ms.data(), mlen);
  json man = json::parse(ms);

  std::map<std::string, Tensor> tensors;
  for (const auto& e : man.at("entries")) {
    std::vector<int> dims = e.at("dims").get<std::vector<int>>();
    Shape shape;
    shape.rank = static_cast<int>(dims.size());
    for (size_t i = 0; i < dims.size(); ++i) shape.dim[i] = dims[i];
    Tensor t{shape};
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(sizeof(double)) * t.size());
    tensors.emplace(e.at("name").get<std::string>(), std::move(t));
  }
  if (!f) throw std::runtime_error("truncated checkpoint " + path);

  auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::runtime_error("checkpoint lacks tensor " + name);
    return it->second;
  };
  ReconNetParams p;
  p.pre_short_w = take("net/pre_short_w");
  p.pre_short_b = take("net/pre_short_b");
  p.pre_long_w = take("net/pre_long_w");
  p.pre_long_b = take("net/pre_long_b");
  p.time_embed = take("net/time_embed");
  for (int i = 0; tensors.count("net/body_w_" + std::to_string(i)); ++i) {
    p.body_w.push_back(take("net/body_w_" + std::to_string(i)));
    p.body_b.push_back(take("net/body_b_" + std::to_string(i)));
  }
  p.head_w = take("net/head_w");
  p.head_b = take("net/head_b");
  p.cfg.features = p.pre_short_w.shape()[0];
  p.cfg.short_channels = p.pre_short_w.shape()[1];
  p.cfg.long_channels = p.pre_long_w.shape()[1];
  p.cfg.blocks = static_cast<int>(p.body_w.size()) / 2;
  return p;
}

int run(int argc, char** argv) {
  CLI::App app{"spike-to-sharp joint splatting lab"};
  app.require_subcommand(1);

  std::string config_path, out, dataset_dir, run_dir, spike_path, method = "tfp";
  std::string checkpoint, mode = "joint", resume;
  int center = -1, iters = -1, pose_level = -1, level = 10;
  long long seed = -1;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic spike dataset");
  sim->add_option("--config", config_path, "JSON config file");
  sim->add_option("--out", out, "output dataset directory")->required();

  auto* rec = app.add_subcommand("reconstruct", "single-image spike reconstruction");
  rec->add_option("--spike", spike_path, "input .spk stream")->required();
  rec->add_option("--method", method, "tfp | tfi | net");
  rec->add_option("--checkpoint", checkpoint, "trained checkpoint (method=net)");
  rec->add_option("--center", center, "center frame (default: stream middle)");
  rec->add_option("--out", out, "output image (.tsr or .pgm)")->required();

  auto* tr = app.add_subcommand("train", "optimize scene, poses and network");
  tr->add_option("--dataset", dataset_dir)->required();
  tr->add_option("--config", config_path, "JSON config file");
  tr->add_option("--mode", mode, "joint | gs-only | rec-only | joint-single-reblur");
  tr->add_option("--pose-level", pose_level, "start from perturbed poses (percent)");
  tr->add_option("--iters", iters);
  tr->add_option("--seed", seed);
  tr->add_option("--resume", resume, "checkpoint to continue from");
  tr->add_option("--out", run_dir, "run directory")->required();

  auto* ev = app.add_subcommand("eval", "metrics + degradation probe for a run");
  ev->add_option("--run", run_dir)->required();
  ev->add_option("--dataset", dataset_dir)->required();
  ev->add_option("--out", out, "CSV report path")->required();

  auto* pe = app.add_subcommand("pose-eval", "pose error report for a run");
  pe->add_option("--run", run_dir)->required();
  pe->add_option("--dataset", dataset_dir)->required();
  pe->add_option("--level", level, "perturbation level in percent");

  auto* ab = app.add_subcommand("ablate", "train and compare all four modes");
  ab->add_option("--dataset", dataset_dir)->required();
  ab->add_option("--config", config_path, "JSON config file");
  ab->add_option("--iters", iters);
  ab->add_option("--seed", seed);
  ab->add_option("--out", out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (sim->parsed()) {
    AppConfig cfg = load_config_file(config_path);
    SceneSpec spec = gen_scene(cfg.scene);
    build_dataset(spec, out);
    echo_config(cfg, out);
    std::cout << "dataset written to " << out << "\n";
    return 0;
  }

  if (rec->parsed()) {
    const SpikeStream stream = read_spk(spike_path);
    if (center < 0) center = stream.frames / 2;
    Tensor img;
    if (method == "tfp") {
      img = tfp(stream, 0, stream.frames - 1, 0.5);
    } else if (method == "tfi") {
      img = tfi(stream, center, 0.5);
    } else if (method == "net") {
      if (checkpoint.empty())
        throw std::runtime_error("reconstruct: method=net requires --checkpoint");
      ReconNetParams p = net_from_checkpoint(checkpoint);
      Tape t;
      ReconNetVars nv = register_recon_params(t, p);
      Var lf = recon_long_feature(t, nv, t.constant(voxel_tensor(voxelize(stream))));
      std::vector<Var> v = recon_sequence(t, nv, stream, lf, {center + 0.5}, 0.0,
                                          static_cast<double>(stream.frames));
      img = t.value(v.front());
    } else {
      throw std::runtime_error("reconstruct: unknown method " + method);
    }
    write_image(out, img);
    std::cout << "wrote " << out << "\n";
    return 0;
  }

  if (tr->parsed()) {
    AppConfig cfg = load_config_file(config_path);
    if (tr->count("--mode")) cfg.train.mode = mode_from_name(mode);
    if (iters >= 0) cfg.train.iterations = iters;
    if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
    if (pose_level >= 0) cfg.train.pose_level = pose_level;
    const Dataset data = load_dataset(dataset_dir);
    echo_config(cfg, run_dir);
    if (resume.empty()) {
      train(data, cfg.train, run_dir);
    } else {
      RunState s = init_run(data, cfg.train);
      checkpoint_load(resume, s);
      train_loop(s, data, run_dir);
    }
    std::cout << "run complete: " << run_dir << "\n";
    return 0;
  }

  if (ev->parsed()) {
    const Dataset data = load_dataset(dataset_dir);
    const RunState s = load_run(run_dir, data);
    const EvalReport rep = evaluate_run(s, data);
    write_eval_csv(out, rep);
    std::cout << eval_text(rep);
    return 0;
  }

  if (pe->parsed()) {
    const Dataset data = load_dataset(dataset_dir);
    const RunState s = load_run(run_dir, data);
    std::cout << pose_text(pose_report(s, data, level), level);
    return 0;
  }

  if (ab->parsed()) {
    AppConfig cfg = load_config_file(config_path);
    if (iters >= 0) cfg.train.iterations = iters;
    if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
    const Dataset data = load_dataset(dataset_dir);
    fs::create_directories(out);
    std::map<std::string, RunState> runs;
    for (TrainMode m : {TrainMode::GsOnly, TrainMode::RecOnly,
                        TrainMode::JointSingleReblur, TrainMode::Joint}) {
      AppConfig rc = cfg;
      rc.train.mode = m;
      const std::string dir = out + "/" + mode_name(m);
      echo_config(rc, dir);
      runs.emplace(mode_name(m), train(data, rc.train, dir));
    }
    std::map<std::string, const RunState*> ptrs;
    for (auto& [name, s] : runs) ptrs.emplace(name, &s);
    const auto rows = ablation_report(ptrs, data);
    const std::string table = ablation_text(rows);
    std::ofstream f(out + "/ablation.txt");
    f << table;
    std::cout << table;
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  int threads = 1;
  if (const char* env = std::getenv("USPG_THREADS")) threads = std::max(1, std::atoi(env));
  openblas_set_num_threads(threads);
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

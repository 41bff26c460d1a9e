#include "uspg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "uspg/io.hpp"
#include "uspg/splat_tape.hpp"

namespace uspg {

namespace {

using nlohmann::json;

constexpr char kCkptMagic[4] = {'U', 'C', 'K', '1'};

double group_sq(const Tape& t, std::initializer_list<Var> vars) {
  double s = 0.0;
  for (Var v : vars) {
    const Tensor& g = t.grad(v);
    for (int i = 0; i < g.size(); ++i) s += g[i] * g[i];
  }
  return s;
}

struct Graph {
  GaussianVars gv;
  Var delta_start, delta_end;
  ReconNetVars nv;
  std::vector<Var> gs_frames, rec_frames;
  Var l_rec, l_gs, l_joint;
  bool flipped = false;
  bool with_rec = false, with_gs = false, with_joint = false;
};

Graph build_graph(Tape& t, const RunState& s, const Dataset& d, int view,
                  bool with_rec, bool with_gs, bool with_joint,
                  const LossConfig& lc) {
  Graph g;
  g.with_rec = with_rec;
  g.with_gs = with_gs;
  g.with_joint = with_joint;
  const DatasetView& dv = d.views[static_cast<size_t>(view)];
  const int m = s.cfg.recon_count;

  if (with_rec) {
    g.nv = register_recon_params(t, s.net);
    Var long_in = t.constant(voxel_tensor(voxelize(dv.stream)));
    Var lf = recon_long_feature(t, g.nv, long_in);
    auto recon_fn = [&](const std::vector<double>& ts) {
      return recon_sequence(t, g.nv, dv.stream, lf, ts, d.exposure_start,
                            d.exposure_frames);
    };
    MultiReblurResult mr =
        multi_reblur_loss(t, recon_fn, dv.stream, d.threshold_c, d.exposure_start,
                          d.exposure_frames, lc);
    g.l_rec = mr.loss;
    g.rec_frames = mr.full_frames;
  }
  if (with_gs) {
    g.gv = register_gaussians(t, s.model);
    g.delta_start = t.param(Tensor{Shape{6}});
    g.delta_end = t.param(Tensor{Shape{6}});
    g.gs_frames = splat_sequence_node(t, g.gv, s.model, g.delta_start, g.delta_end,
                                      s.segments[static_cast<size_t>(view)],
                                      d.camera_intrinsics(), m);
    Var target = t.constant(dv.tfp_reference);
    g.l_gs = l1_dssim(t, t.mean_of(g.gs_frames), target, lc);
  }
  if (with_joint) {
    JointLossResult jr = joint_loss(t, g.gs_frames, g.rec_frames);
    g.l_joint = jr.loss;
    g.flipped = jr.flipped;
  }
  return g;
}

std::uint64_t init_mix(std::uint64_t seed) {
  std::uint64_t h = seed + 0x6a09e667f3bcc909ull;
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return h;
}

void append_named(std::vector<std::pair<std::string, const Tensor*>>& out,
                  std::vector<Tensor>& storage, const RunState& s) {
  // `storage` owns tensors materialized from non-Tensor fields (poses).
  auto add = [&](const std::string& n, const Tensor& t) { out.emplace_back(n, &t); };
  add("gaussians/positions", s.model.positions);
  add("gaussians/log_scales", s.model.log_scales);
  add("gaussians/rotations", s.model.rotations);
  add("gaussians/opacity_logits", s.model.opacity_logits);
  add("gaussians/colors", s.model.colors);
  storage.reserve(storage.size() + 2 * s.segments.size());
  for (size_t v = 0; v < s.segments.size(); ++v) {
    for (int e = 0; e < 2; ++e) {
      const Pose& p = e == 0 ? s.segments[v].start : s.segments[v].end;
      Tensor t{Shape{4, 4}};
      const Eigen::Matrix4d mm = p.matrix();
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) t.at(r, c) = mm(r, c);
      storage.push_back(std::move(t));
      char name[64];
      std::snprintf(name, sizeof(name), "poses/view_%03d/%s", static_cast<int>(v),
                    e == 0 ? "start" : "end");
      out.emplace_back(name, &storage.back());
    }
  }
  const auto net = s.net.all();
  static const char* base[] = {"net/pre_short_w", "net/pre_short_b", "net/pre_long_w",
                               "net/pre_long_b", "net/time_embed"};
  const int blocks2 = static_cast<int>(s.net.body_w.size());
  for (size_t i = 0; i < net.size(); ++i) {
    std::string name;
    const int idx = static_cast<int>(i);
    if (idx < 5) {
      name = base[idx];
    } else if (idx < 5 + blocks2) {
      name = "net/body_w_" + std::to_string(idx - 5);
    } else if (idx < 5 + 2 * blocks2) {
      name = "net/body_b_" + std::to_string(idx - 5 - blocks2);
    } else {
      name = idx == 5 + 2 * blocks2 ? "net/head_w" : "net/head_b";
    }
    out.emplace_back(name, net[i]);
  }
  auto add_adam = [&](const char* group, const AdamState& a) {
    for (size_t i = 0; i < a.m.size(); ++i) {
      out.emplace_back(std::string("adam/") + group + "/m" + std::to_string(i), &a.m[i]);
      out.emplace_back(std::string("adam/") + group + "/v" + std::to_string(i), &a.v[i]);
    }
  };
  add_adam("positions", s.adam_positions);
  add_adam("rest", s.adam_rest);
  add_adam("twists", s.adam_twists);
  add_adam("net", s.adam_net);
}

// Mutable mirror of append_named for loading.
void collect_mutable(std::vector<std::pair<std::string, Tensor*>>& out, RunState& s,
                     std::vector<Tensor>& pose_tensors) {
  std::vector<std::pair<std::string, const Tensor*>> named;
  pose_tensors.clear();
  append_named(named, pose_tensors, s);
  // Everything except the pose tensors aliases state storage; rebuild pointers.
  out.clear();
  size_t pose_i = 0;
  std::vector<Tensor*> net = s.net.all();
  size_t net_i = 0;
  auto adam_ptr = [&](AdamState& a, const std::string& tail) -> Tensor* {
    const bool is_m = tail[0] == 'm';
    const size_t idx = static_cast<size_t>(std::stoi(tail.substr(1)));
    return is_m ? &a.m[idx] : &a.v[idx];
  };
  for (auto& [name, cptr] : named) {
    Tensor* p = nullptr;
    if (name == "gaussians/positions") p = &s.model.positions;
    else if (name == "gaussians/log_scales") p = &s.model.log_scales;
    else if (name == "gaussians/rotations") p = &s.model.rotations;
    else if (name == "gaussians/opacity_logits") p = &s.model.opacity_logits;
    else if (name == "gaussians/colors") p = &s.model.colors;
    else if (name.rfind("poses/", 0) == 0) p = &pose_tensors[pose_i++];
    else if (name.rfind("net/", 0) == 0) p = net[net_i++];
    else if (name.rfind("adam/positions/", 0) == 0) p = adam_ptr(s.adam_positions, name.substr(15));
    else if (name.rfind("adam/rest/", 0) == 0) p = adam_ptr(s.adam_rest, name.substr(10));
    else if (name.rfind("adam/twists/", 0) == 0) p = adam_ptr(s.adam_twists, name.substr(12));
    else if (name.rfind("adam/net/", 0) == 0) p = adam_ptr(s.adam_net, name.substr(9));
    if (!p) throw std::logic_error("checkpoint: unmapped tensor " + name);
    out.emplace_back(name, p);
  }
}

}  // namespace

const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::Joint: return "joint";
    case TrainMode::GsOnly: return "gs_only";
    case TrainMode::RecOnly: return "rec_only";
    case TrainMode::JointSingleReblur: return "joint_single_reblur";
  }
  throw std::logic_error("mode_name: bad mode");
}

TrainMode mode_from_name(const std::string& name) {
  std::string n = name;
  for (char& c : n)
    if (c == '-') c = '_';
  if (n == "joint") return TrainMode::Joint;
  if (n == "gs_only") return TrainMode::GsOnly;
  if (n == "rec_only") return TrainMode::RecOnly;
  if (n == "joint_single_reblur") return TrainMode::JointSingleReblur;
  throw std::invalid_argument("unknown train mode: " + name);
}

RunState init_run(const Dataset& data, const TrainConfig& cfg) {
  if (cfg.iterations < 0 || cfg.gaussian_count < 1 || cfg.recon_count < 1 ||
      cfg.lr_gaussians <= 0 || cfg.lr_twists <= 0 || cfg.lr_theta <= 0)
    throw std::invalid_argument("init_run: bad configuration");
  RunState s;
  s.cfg = cfg;

  std::mt19937_64 rng(init_mix(cfg.seed));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  s.model = GaussianSet::create(cfg.gaussian_count);
  const double diag = data.scene_diag();
  for (int i = 0; i < cfg.gaussian_count; ++i) {
    for (int k = 0; k < 3; ++k) {
      s.model.positions.at(i, k) =
          data.box_min[k] + (data.box_max[k] - data.box_min[k]) * u01(rng);
      s.model.log_scales.at(i, k) = std::log(diag / 50.0);
    }
    s.model.opacity_logits[i] = -2.0;
    s.model.colors[i] = 0.0;
  }

  for (const DatasetView& dv : data.views) {
    auto it = dv.perturbed.find(cfg.pose_level);
    if (it == dv.perturbed.end())
      throw std::invalid_argument("init_run: dataset has no pose level " +
                                  std::to_string(cfg.pose_level));
    s.segments.push_back(it->second);
    s.twist_deltas.emplace_back(Shape{6});
    s.twist_deltas.emplace_back(Shape{6});
  }

  ReconNetConfig ncfg;
  const VoxelGrid vg = voxelize(data.views.front().stream);
  ncfg.long_channels = vg.voxels;
  s.net = init_recon_params(cfg.seed, ncfg);

  std::vector<Tensor*> pos{&s.model.positions};
  s.adam_positions = AdamState::for_params(pos);
  std::vector<Tensor*> rest{&s.model.log_scales, &s.model.rotations,
                            &s.model.opacity_logits, &s.model.colors};
  s.adam_rest = AdamState::for_params(rest);
  std::vector<Tensor*> tw;
  for (Tensor& t : s.twist_deltas) tw.push_back(&t);
  s.adam_twists = AdamState::for_params(tw);
  s.adam_net = AdamState::for_params(s.net.all());
  return s;
}

LossReport train_step(RunState& s, const Dataset& data) {
  const int views = static_cast<int>(data.views.size());
  const int view = static_cast<int>(s.step % views);
  const bool with_rec = s.cfg.mode != TrainMode::GsOnly;
  const bool with_gs = s.cfg.mode != TrainMode::RecOnly;
  const bool with_joint = with_rec && with_gs && s.step >= s.cfg.joint_warmup;
  LossConfig lc = s.cfg.loss;
  if (s.cfg.mode == TrainMode::JointSingleReblur) lc.schedule.resize(1);

  Tape t;
  Graph g = build_graph(t, s, data, view, with_rec, with_gs, with_joint, lc);
  std::vector<Var> parts;
  if (with_rec) parts.push_back(g.l_rec);
  if (with_gs) parts.push_back(g.l_gs);
  if (with_joint) parts.push_back(g.l_joint);
  Var total = t.add_n(parts);
  const double total_v = t.value(total).item();
  if (!std::isfinite(total_v))
    throw std::runtime_error("train_step: non-finite loss at step " +
                             std::to_string(s.step) + " view " + std::to_string(view));
  t.backward(total);

  LossReport rep;
  rep.l_rec = with_rec ? t.value(g.l_rec).item() : 0.0;
  rep.l_gs = with_gs ? t.value(g.l_gs).item() : 0.0;
  rep.l_joint = with_joint ? t.value(g.l_joint).item() : 0.0;
  rep.l_final = total_v;
  rep.flipped = g.flipped;

  if (with_gs) {
    rep.grad_norm_gaussians =
        std::sqrt(group_sq(t, {g.gv.positions, g.gv.log_scales, g.gv.rotations,
                               g.gv.opacity_logits, g.gv.colors}));
    rep.grad_norm_twists = std::sqrt(group_sq(t, {g.delta_start, g.delta_end}));
  }
  if (with_rec) {
    double sq = 0.0;
    for (Var v : g.nv.all) sq += group_sq(t, {v});
    rep.grad_norm_theta = std::sqrt(sq);
  }

  // Exponential decay toward lr_final_scale * lr over the run; without it the
  // coupled optimization oscillates by about a dB near the end and the final
  // state is a poor sample of the trajectory.
  const double lr_scale =
      s.cfg.iterations > 0
          ? std::pow(s.cfg.lr_final_scale,
                     static_cast<double>(s.step) / s.cfg.iterations)
          : 1.0;
  if (with_gs) {
    AdamConfig ac;
    ac.lr = lr_scale * s.cfg.lr_gaussians * data.scene_diag();
    std::vector<Tensor*> pos{&s.model.positions};
    std::vector<const Tensor*> pos_g{&t.grad(g.gv.positions)};
    adam_step(s.adam_positions, pos, pos_g, ac);

    ac.lr = lr_scale * s.cfg.lr_gaussians;
    std::vector<Tensor*> rest{&s.model.log_scales, &s.model.rotations,
                              &s.model.opacity_logits, &s.model.colors};
    std::vector<const Tensor*> rest_g{&t.grad(g.gv.log_scales), &t.grad(g.gv.rotations),
                                      &t.grad(g.gv.opacity_logits),
                                      &t.grad(g.gv.colors)};
    adam_step(s.adam_rest, rest, rest_g, ac);
    s.model.renormalize_rotations();

    ac.lr = lr_scale * s.cfg.lr_twists;
    std::vector<Tensor*> tw;
    std::vector<Tensor> zero_grads(s.twist_deltas.size(), Tensor{Shape{6}});
    std::vector<const Tensor*> tw_g;
    for (size_t i = 0; i < s.twist_deltas.size(); ++i) {
      tw.push_back(&s.twist_deltas[i]);
      tw_g.push_back(&zero_grads[i]);
    }
    zero_grads[static_cast<size_t>(2 * view)] = t.grad(g.delta_start);
    zero_grads[static_cast<size_t>(2 * view + 1)] = t.grad(g.delta_end);
    adam_step(s.adam_twists, tw, tw_g, ac);
    // Fold the deltas back onto the pose manifold and reset them to zero.
    for (size_t v = 0; v < s.segments.size(); ++v) {
      for (int e = 0; e < 2; ++e) {
        Tensor& d = s.twist_deltas[2 * v + static_cast<size_t>(e)];
        Vec6 xi;
        for (int i = 0; i < 6; ++i) xi[i] = d[i];
        Pose& p = e == 0 ? s.segments[v].start : s.segments[v].end;
        p = se3_exp(Twist::from_vec(xi)) * p;
        d.fill(0.0);
      }
    }
  }
  if (with_rec) {
    AdamConfig ac;
    ac.lr = lr_scale * s.cfg.lr_theta;
    std::vector<Tensor*> params = s.net.all();
    std::vector<const Tensor*> grads;
    for (Var v : g.nv.all) grads.push_back(&t.grad(v));
    adam_step(s.adam_net, params, grads, ac);
  }

  ++s.step;
  return rep;
}

namespace {

void write_previews(const RunState& s, const Dataset& data, const std::string& dir) {
  char name[64];
  const Camera cam = [&] {
    Camera c = data.camera_intrinsics();
    c.world_to_cam =
        interpolate_pose(s.segments.front(), s.segments.front().duration / 2.0);
    return c;
  }();
  std::snprintf(name, sizeof(name), "/step_%06d_render.pgm",
                static_cast<int>(s.step));
  write_pgm(dir + name, rasterize(s.model, cam).image);
  if (s.cfg.mode != TrainMode::GsOnly) {
    Tape t;
    ReconNetVars nv = register_recon_params(t, s.net);
    const DatasetView& dv = data.views.front();
    Var lf = recon_long_feature(t, nv, t.constant(voxel_tensor(voxelize(dv.stream))));
    const double mid = data.exposure_start + data.exposure_frames / 2.0;
    std::vector<Var> img =
        recon_sequence(t, nv, dv.stream, lf, {mid}, data.exposure_start,
                       data.exposure_frames);
    std::snprintf(name, sizeof(name), "/step_%06d_recon.pgm",
                  static_cast<int>(s.step));
    write_pgm(dir + name, t.value(img.front()));
  }
}

}  // namespace

RunState train(const Dataset& data, const TrainConfig& cfg, const std::string& run_dir) {
  RunState s = init_run(data, cfg);
  train_loop(s, data, run_dir);
  return s;
}

void train_loop(RunState& s, const Dataset& data, const std::string& run_dir) {
  namespace fs = std::filesystem;
  std::ofstream log;
  if (!run_dir.empty()) {
    fs::create_directories(run_dir);
    fs::create_directories(run_dir + "/checkpoints");
    fs::create_directories(run_dir + "/previews");
    const bool fresh = s.step == 0 || !fs::exists(run_dir + "/log.csv");
    log.open(run_dir + "/log.csv", fresh ? std::ios::out : std::ios::app);
    if (!log) throw std::runtime_error("train: cannot open log.csv");
    if (fresh)
      log << "step,view,l_rec,l_gs,l_joint,flipped,l_final,"
             "grad_gaussians,grad_twists,grad_theta\n";
  }
  const int views = static_cast<int>(data.views.size());
  while (s.step < s.cfg.iterations) {
    const int view = static_cast<int>(s.step % views);
    const std::int64_t logged_step = s.step;
    LossReport r = train_step(s, data);
    if (log) {
      char row[320];
      std::snprintf(row, sizeof(row),
                    "%lld,%d,%.12g,%.12g,%.12g,%d,%.12g,%.6g,%.6g,%.6g\n",
                    static_cast<long long>(logged_step), view, r.l_rec, r.l_gs,
                    r.l_joint, r.flipped ? 1 : 0, r.l_final, r.grad_norm_gaussians,
                    r.grad_norm_twists, r.grad_norm_theta);
      log << row;
    }
    if (!run_dir.empty()) {
      const bool last = s.step == s.cfg.iterations;
      if (s.cfg.checkpoint_every > 0 &&
          (s.step % s.cfg.checkpoint_every == 0 || last)) {
        char name[64];
        std::snprintf(name, sizeof(name), "/checkpoints/step_%06d.ckpt",
                      static_cast<int>(s.step));
        checkpoint_save(run_dir + name, s);
      }
      if (s.cfg.preview_every > 0 && (s.step % s.cfg.preview_every == 0 || last))
        write_previews(s, data, run_dir + "/previews");
    }
  }
}

void checkpoint_save(const std::string& path, const RunState& s) {
  std::vector<std::pair<std::string, const Tensor*>> named;
  std::vector<Tensor> storage;
  append_named(named, storage, s);

  json man;
  man["step"] = s.step;
  man["adam_steps"] = {s.adam_positions.step, s.adam_rest.step, s.adam_twists.step,
                       s.adam_net.step};
  man["gaussians"] = s.model.count();
  man["views"] = s.segments.size();
  json entries = json::array();
  for (auto& [name, t] : named) {
    json e;
    e["name"] = name;
    json dims = json::array();
    for (int d = 0; d < t->shape().rank; ++d) dims.push_back(t->shape()[d]);
    e["dims"] = dims;
    entries.push_back(e);
  }
  man["entries"] = entries;
  const std::string ms = man.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint_save: cannot open " + path);
  f.write(kCkptMagic, 4);
  const std::uint32_t mlen = static_cast<std::uint32_t>(ms.size());
  f.write(reinterpret_cast<const char*>(&mlen), 4);
  f.write(ms.data(), static_cast<std::streamsize>(ms.size()));
  for (auto& [name, t] : named)
    f.write(reinterpret_cast<const char*>(t->data()),
            static_cast<std::streamsize>(sizeof(double)) * t->size());
  if (!f) throw std::runtime_error("checkpoint_save: write failed: " + path);
}

void checkpoint_load(const std::string& path, RunState& s) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint_load: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw std::runtime_error("checkpoint_load: bad magic in " + path);
  std::uint32_t mlen = 0;
  f.read(reinterpret_cast<char*>(&mlen), 4);
  std::string ms(mlen, '\0');
  f.read(ms.data(), mlen);
  if (!f) throw std::runtime_error("checkpoint_load: truncated manifest in " + path);
  json man = json::parse(ms);

  std::vector<std::pair<std::string, Tensor*>> named;
  std::vector<Tensor> pose_tensors;
  collect_mutable(named, s, pose_tensors);

  const auto& entries = man.at("entries");
  if (entries.size() != named.size())
    throw std::runtime_error("checkpoint_load: entry count mismatch (state has " +
                             std::to_string(named.size()) + ", file has " +
                             std::to_string(entries.size()) + ")");
  for (size_t i = 0; i < named.size(); ++i) {
    const auto& e = entries[i];
    Tensor* t = named[i].second;
    if (e.at("name").get<std::string>() != named[i].first)
      throw std::runtime_error("checkpoint_load: tensor name mismatch at " +
                               named[i].first);
    const auto& dims = e.at("dims");
    bool ok = static_cast<int>(dims.size()) == t->shape().rank;
    for (int d = 0; ok && d < t->shape().rank; ++d)
      ok = dims[static_cast<size_t>(d)].get<int>() == t->shape()[d];
    if (!ok)
      throw std::runtime_error("checkpoint_load: shape mismatch at " + named[i].first);
    f.read(reinterpret_cast<char*>(t->data()),
           static_cast<std::streamsize>(sizeof(double)) * t->size());
  }
  if (!f) throw std::runtime_error("checkpoint_load: truncated payload in " + path);

  // Rehydrate the pose fields from their tensor images.
  size_t pi = 0;
  for (size_t v = 0; v < s.segments.size(); ++v) {
    for (int e = 0; e < 2; ++e) {
      Eigen::Matrix4d m;
      const Tensor& t = pose_tensors[pi++];
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) m(r, c) = t.at(r, c);
      (e == 0 ? s.segments[v].start : s.segments[v].end) = Pose::from_matrix(m);
    }
  }
  s.step = man.at("step").get<std::int64_t>();
  const auto& asteps = man.at("adam_steps");
  s.adam_positions.step = asteps[0].get<std::int64_t>();
  s.adam_rest.step = asteps[1].get<std::int64_t>();
  s.adam_twists.step = asteps[2].get<std::int64_t>();
  s.adam_net.step = asteps[3].get<std::int64_t>();
}

bool RoutingAudit::matches_expected() const {
  const bool zero[3][3] = {{true, true, false},   // L_rec: gaussians, twists zero
                           {false, false, true},  // L_gs: net zero
                           {false, false, false}};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      if (zero[r][c] && norms[r][c] != 0.0) return false;
      if (!zero[r][c] && norms[r][c] <= 0.0) return false;
    }
  return true;
}

RoutingAudit grad_routing_audit(const RunState& s, const Dataset& data) {
  RoutingAudit audit;
  for (int row = 0; row < 3; ++row) {
    Tape t;
    Graph g = build_graph(t, s, data, 0, true, true, row == 2, s.cfg.loss);
    Var loss = row == 0 ? g.l_rec : row == 1 ? g.l_gs : g.l_joint;
    t.backward(loss);
    audit.norms[row][0] =
        std::sqrt(group_sq(t, {g.gv.positions, g.gv.log_scales, g.gv.rotations,
                               g.gv.opacity_logits, g.gv.colors}));
    audit.norms[row][1] = std::sqrt(group_sq(t, {g.delta_start, g.delta_end}));
    double sq = 0.0;
    for (Var v : g.nv.all) sq += group_sq(t, {v});
    audit.norms[row][2] = std::sqrt(sq);
  }
  return audit;
}

}  // namespace uspg

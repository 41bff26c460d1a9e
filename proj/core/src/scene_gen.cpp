#include "uspg/scene_gen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "uspg/io.hpp"

namespace uspg {

namespace {

using nlohmann::json;

Pose look_at(const Vec3& center, const Vec3& target) {
  const Vec3 f = (target - center).normalized();
  Vec3 d0 = std::fabs(f.z()) < 0.99 ? Vec3(0, 0, -1) : Vec3(0, -1, 0);
  const Vec3 r = d0.cross(f).normalized();
  const Vec3 d = f.cross(r);
  Pose p;
  p.R.row(0) = r;
  p.R.row(1) = d;
  p.R.row(2) = f;
  p.t = -(p.R * center);
  return p;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = seed * 0x9e3779b97f4a7c15ull + a * 0xbf58476d1ce4e5b9ull + b;
  h ^= h >> 31;
  h *= 0x94d049bb133111ebull;
  h ^= h >> 29;
  return h;
}

json pose_to_json(const Pose& p) {
  json m = json::array();
  const Eigen::Matrix4d mat = p.matrix();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m.push_back(mat(r, c));
  return m;
}

Pose pose_from_json(const json& j) {
  if (!j.is_array() || j.size() != 16) throw std::runtime_error("scene.json: bad pose");
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = j[static_cast<size_t>(r * 4 + c)].get<double>();
  return Pose::from_matrix(m);
}

json tensor_to_json(const Tensor& t) {
  json a = json::array();
  for (int i = 0; i < t.size(); ++i) a.push_back(t[i]);
  return a;
}

void tensor_from_json(const json& j, Tensor& t) {
  if (!j.is_array() || static_cast<int>(j.size()) != t.size())
    throw std::runtime_error("scene.json: tensor size mismatch");
  for (int i = 0; i < t.size(); ++i) t[i] = j[static_cast<size_t>(i)].get<double>();
}

std::string view_name(const char* prefix, int v, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%03d%s", prefix, v, ext);
  return buf;
}

}  // namespace

Camera SceneSpec::camera(int view, double t) const {
  Camera c;
  c.fx = cfg.fx;
  c.fy = cfg.fy;
  c.cx = cx;
  c.cy = cy;
  c.height = cfg.height;
  c.width = cfg.width;
  c.world_to_cam = interpolate_pose_unchecked(segments[static_cast<size_t>(view)], t);
  return c;
}

SceneSpec gen_scene(const SceneConfig& cfg) {
  if (cfg.views < 1 || cfg.gaussians < 1 || cfg.exposure > cfg.frames ||
      cfg.exposure % 2 == 0)
    throw std::invalid_argument("gen_scene: bad configuration");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SceneSpec spec;
  spec.cfg = cfg;
  spec.box_min = Vec3(-0.5, -0.5, -0.5);
  spec.box_max = Vec3(0.5, 0.5, 0.5);
  spec.cx = (cfg.width - 1) / 2.0;
  spec.cy = (cfg.height - 1) / 2.0;
  const double diag = spec.scene_diag();
  const int exposure_start = (cfg.frames - cfg.exposure) / 2;

  for (int attempt = 0; attempt < 100; ++attempt) {
    GaussianSet g = GaussianSet::create(cfg.gaussians);
    for (int i = 0; i < cfg.gaussians; ++i) {
      for (int k = 0; k < 3; ++k) {
        g.positions.at(i, k) = -0.45 + 0.9 * u01(rng);
        g.log_scales.at(i, k) =
            std::log(diag / 100.0) + u01(rng) * std::log(100.0 / 20.0);
      }
      Eigen::Vector4d q;
      for (int k = 0; k < 4; ++k) q[k] = gauss(rng);
      q.normalize();
      for (int k = 0; k < 4; ++k) g.rotations.at(i, k) = q[k];
      const double op = 0.5 + 0.45 * u01(rng);
      g.opacity_logits[i] = std::log(op / (1.0 - op));
      const double col = 0.25 + 0.65 * u01(rng);
      g.colors[i] = std::log(col / (1.0 - col));
    }

    std::vector<TrajectorySegment> segments;
    for (int v = 0; v < cfg.views; ++v) {
      const double theta = 2.0 * M_PI * v / cfg.views + 0.3 * (u01(rng) - 0.5);
      const double phi = (v % 2 == 0 ? 1.0 : -1.0) * (0.2 + 0.25 * u01(rng));
      const double dtheta = cfg.motion_scale * (0.05 + 0.03 * u01(rng));
      const double dphi = cfg.motion_scale * 0.04 * (u01(rng) - 0.5);
      auto cam_pose = [&](double s) {  // s in [-0.5, 0.5] across the exposure
        const double th = theta + s * dtheta;
        const double ph = phi + s * dphi;
        const Vec3 c = cfg.camera_distance *
                       Vec3(std::cos(ph) * std::cos(th), std::cos(ph) * std::sin(th),
                            std::sin(ph));
        return look_at(c, Vec3::Zero());
      };
      TrajectorySegment seg;
      seg.start = cam_pose(-0.5);
      seg.end = cam_pose(0.5);
      seg.duration = static_cast<double>(cfg.exposure);
      segments.push_back(seg);
    }

    spec.gt = g;
    spec.segments = segments;

    // Keep every primitive inside the frustum over the whole 137-tick path,
    // and the exposure-midpoint render at a workable mean intensity.
    bool ok = true;
    for (int v = 0; v < cfg.views && ok; ++v) {
      for (int probe = 0; probe <= 8 && ok; ++probe) {
        const double tick = 0.5 + probe * (cfg.frames - 1.0) / 8.0;
        const Camera cam = spec.camera(v, tick - exposure_start);
        for (int i = 0; i < cfg.gaussians; ++i) {
          const ProjectedGaussian pg = project_gaussian(g, i, cam);
          if (pg.culled || pg.depth < 0.2 || pg.mean.x() < 1.5 ||
              pg.mean.x() > cfg.width - 2.5 || pg.mean.y() < 1.5 ||
              pg.mean.y() > cfg.height - 2.5) {
            ok = false;
            break;
          }
        }
      }
      if (!ok) break;
      const Camera mid = spec.camera(v, cfg.exposure / 2.0);
      const Tensor img = rasterize(g, mid).image;
      double mean = 0.0;
      for (int i = 0; i < img.size(); ++i) mean += img[i];
      mean /= img.size();
      if (mean < 0.1 || mean > 0.7) ok = false;
    }
    if (ok) return spec;
  }
  throw std::runtime_error("gen_scene: no valid scene after 100 attempts");
}

IntensitySequence render_gt_sequence(const SceneSpec& spec, int view) {
  if (view < 0 || view >= spec.cfg.views)
    throw std::invalid_argument("render_gt_sequence: bad view");
  const int exposure_start = (spec.cfg.frames - spec.cfg.exposure) / 2;
  IntensitySequence seq;
  seq.frames = spec.cfg.frames;
  seq.height = spec.cfg.height;
  seq.width = spec.cfg.width;
  seq.values.resize(static_cast<size_t>(seq.frames) * seq.height * seq.width);
  for (int k = 0; k < seq.frames; ++k) {
    const Camera cam = spec.camera(view, k + 0.5 - exposure_start);
    const Tensor img = rasterize(spec.gt, cam).image;
    for (int i = 0; i < img.size(); ++i)
      seq.values[static_cast<size_t>(k) * seq.height * seq.width +
                 static_cast<size_t>(i)] = std::clamp(img[i], 0.0, 1.0);
  }
  return seq;
}

Camera Dataset::camera_intrinsics() const {
  Camera c;
  c.fx = fx;
  c.fy = fy;
  c.cx = cx;
  c.cy = cy;
  c.height = height;
  c.width = width;
  return c;
}

std::vector<double> Dataset::exposure_timestamps(int count) const {
  std::vector<double> ts(static_cast<size_t>(count));
  for (int m = 0; m < count; ++m)
    ts[static_cast<size_t>(m)] =
        exposure_start + (m + 0.5) * static_cast<double>(exposure_frames) / count;
  return ts;
}

void build_dataset(const SceneSpec& spec, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/gt");
  const SceneConfig& cfg = spec.cfg;
  const int exposure_start = (cfg.frames - cfg.exposure) / 2;
  const double diag = spec.scene_diag();

  json doc;
  doc["intrinsics"] = {{"fx", cfg.fx},       {"fy", cfg.fy},   {"cx", spec.cx},
                       {"cy", spec.cy},      {"height", cfg.height},
                       {"width", cfg.width}};
  doc["constants"] = {{"K", cfg.frames},
                      {"exposure", cfg.exposure},
                      {"exposure_start", exposure_start},
                      {"C", cfg.threshold_c},
                      {"M", cfg.recon_count},
                      {"seed", cfg.seed},
                      {"box_min", {spec.box_min.x(), spec.box_min.y(), spec.box_min.z()}},
                      {"box_max", {spec.box_max.x(), spec.box_max.y(), spec.box_max.z()}}};
  doc["gaussians"] = {{"count", cfg.gaussians},
                      {"positions", tensor_to_json(spec.gt.positions)},
                      {"log_scales", tensor_to_json(spec.gt.log_scales)},
                      {"rotations", tensor_to_json(spec.gt.rotations)},
                      {"opacity_logits", tensor_to_json(spec.gt.opacity_logits)},
                      {"colors", tensor_to_json(spec.gt.colors)}};

  json views = json::array();
  for (int v = 0; v < cfg.views; ++v) {
    const TrajectorySegment& seg = spec.segments[static_cast<size_t>(v)];
    const IntensitySequence seq = render_gt_sequence(spec, v);

    SpikeSimConfig sim;
    sim.threshold_c = cfg.threshold_c;
    sim.phase_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(v), 17);
    const SpikeStream stream = simulate_spikes(seq, sim);
    write_spk(out_dir + "/" + view_name("view_", v, ".spk"), stream);

    for (int m = 0; m < cfg.recon_count; ++m) {
      const double t = exposure_start +
                       (m + 0.5) * static_cast<double>(cfg.exposure) / cfg.recon_count -
                       exposure_start;
      const Camera cam = spec.camera(v, t);
      char name[64];
      std::snprintf(name, sizeof(name), "/gt/view_%03d_frame_%02d.tsr", v, m);
      write_tsr(out_dir + name, rasterize(spec.gt, cam).image);
    }

    Tensor blur{Shape{cfg.height, cfg.width}};
    for (int k = exposure_start; k < exposure_start + cfg.exposure; ++k)
      for (int i = 0; i < blur.size(); ++i)
        blur[i] += seq.values[static_cast<size_t>(k) * blur.size() + static_cast<size_t>(i)];
    for (int i = 0; i < blur.size(); ++i) blur[i] /= cfg.exposure;
    write_tsr(out_dir + "/" + view_name("blur_", v, ".tsr"), blur);
    write_tsr(out_dir + "/" + view_name("tfp_", v, ".tsr"),
              tfp(stream, exposure_start, exposure_start + cfg.exposure - 1,
                  cfg.threshold_c));

    json jv;
    jv["start_pose"] = pose_to_json(seg.start);
    jv["end_pose"] = pose_to_json(seg.end);
    json pert;
    for (int level : {0, 10, 20, 30}) {
      std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(v),
                                   100 + static_cast<std::uint64_t>(level)));
      json jp;
      jp["start_pose"] =
          pose_to_json(perturb_pose(seg.start, level / 100.0, diag, rng));
      jp["end_pose"] = pose_to_json(perturb_pose(seg.end, level / 100.0, diag, rng));
      pert[std::to_string(level)] = jp;
    }
    jv["perturbed"] = pert;
    views.push_back(jv);
  }
  doc["views"] = views;

  std::ofstream f(out_dir + "/scene.json");
  if (!f) throw std::runtime_error("build_dataset: cannot write scene.json");
  f << doc.dump(1) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream f(dir + "/scene.json");
  if (!f) throw std::runtime_error("load_dataset: cannot open " + dir + "/scene.json");
  json doc = json::parse(f);

  Dataset d;
  const auto& in = doc.at("intrinsics");
  d.fx = in.at("fx").get<double>();
  d.fy = in.at("fy").get<double>();
  d.cx = in.at("cx").get<double>();
  d.cy = in.at("cy").get<double>();
  d.height = in.at("height").get<int>();
  d.width = in.at("width").get<int>();
  const auto& c = doc.at("constants");
  d.frames = c.at("K").get<int>();
  d.exposure_frames = c.at("exposure").get<int>();
  d.exposure_start = c.at("exposure_start").get<int>();
  d.threshold_c = c.at("C").get<double>();
  d.recon_count = c.at("M").get<int>();
  for (int i = 0; i < 3; ++i) {
    d.box_min[i] = c.at("box_min")[static_cast<size_t>(i)].get<double>();
    d.box_max[i] = c.at("box_max")[static_cast<size_t>(i)].get<double>();
  }

  const auto& views = doc.at("views");
  for (size_t v = 0; v < views.size(); ++v) {
    DatasetView dv;
    dv.stream = read_spk(dir + "/" + view_name("view_", static_cast<int>(v), ".spk"));
    dv.gt_segment.start = pose_from_json(views[v].at("start_pose"));
    dv.gt_segment.end = pose_from_json(views[v].at("end_pose"));
    dv.gt_segment.duration = static_cast<double>(d.exposure_frames);
    for (const auto& [key, val] : views[v].at("perturbed").items()) {
      TrajectorySegment seg;
      seg.start = pose_from_json(val.at("start_pose"));
      seg.end = pose_from_json(val.at("end_pose"));
      seg.duration = static_cast<double>(d.exposure_frames);
      dv.perturbed[std::stoi(key)] = seg;
    }
    for (int m = 0; m < d.recon_count; ++m) {
      char name[64];
      std::snprintf(name, sizeof(name), "/gt/view_%03d_frame_%02d.tsr",
                    static_cast<int>(v), m);
      dv.gt_images.push_back(read_tsr(dir + name));
    }
    dv.blur_reference = read_tsr(dir + "/" + view_name("blur_", static_cast<int>(v), ".tsr"));
    dv.tfp_reference = read_tsr(dir + "/" + view_name("tfp_", static_cast<int>(v), ".tsr"));
    d.views.push_back(std::move(dv));
  }
  return d;
}

}  // namespace uspg

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uspg/se3.hpp"
#include "uspg/spike.hpp"
#include "uspg/splat.hpp"

namespace uspg {

struct SceneConfig {
  std::uint64_t seed = 0;
  int views = 8;
  int height = 32, width = 32;
  int frames = 137;     // K
  int exposure = 97;    // centered
  int gaussians = 64;
  int recon_count = 13;  // M
  double threshold_c = 0.5;
  // Scales the angular sweep of every exposure (1.0 is a couple of pixels of
  // blur at the standard resolution).
  double motion_scale = 1.0;
  double fx = 38.0, fy = 38.0;
  double camera_distance = 2.2;
};

/// Procedural ground truth: a Gaussian scene plus per-view exposure segments.
struct SceneSpec {
  SceneConfig cfg;
  GaussianSet gt;
  std::vector<TrajectorySegment> segments;  // world-to-camera, duration = exposure
  Vec3 box_min, box_max;
  double cx = 0.0, cy = 0.0;

  double scene_diag() const { return (box_max - box_min).norm(); }
  Camera camera(int view, double t) const;  // pose interpolated/extrapolated
};

SceneSpec gen_scene(const SceneConfig& cfg);

/// Dense ground-truth intensity: one render per spike frame, following the
/// view's geodesic (margins extrapolate beyond the exposure).
IntensitySequence render_gt_sequence(const SceneSpec& spec, int view);

struct DatasetView {
  SpikeStream stream;
  TrajectorySegment gt_segment;
  std::map<int, TrajectorySegment> perturbed;  // level in percent -> segment
  std::vector<Tensor> gt_images;               // sharp frames at the M timestamps
  Tensor blur_reference;                       // mean of the exposure frames
  Tensor tfp_reference;                        // TFP over the exposure
};

struct Dataset {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int height = 0, width = 0;
  int frames = 0, exposure_frames = 0, exposure_start = 0;
  int recon_count = 0;
  double threshold_c = 0;
  Vec3 box_min, box_max;
  std::vector<DatasetView> views;

  double scene_diag() const { return (box_max - box_min).norm(); }
  Camera camera_intrinsics() const;
  /// Mid-bin exposure timestamps in stream ticks.
  std::vector<double> exposure_timestamps(int count) const;
};

void build_dataset(const SceneSpec& spec, const std::string& out_dir);
Dataset load_dataset(const std::string& dir);

}  // namespace uspg

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uspg/adam.hpp"
#include "uspg/losses.hpp"
#include "uspg/recon_net.hpp"
#include "uspg/scene_gen.hpp"
#include "uspg/splat.hpp"

namespace uspg {

enum class TrainMode { Joint, GsOnly, RecOnly, JointSingleReblur };

const char* mode_name(TrainMode m);
TrainMode mode_from_name(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::Joint;
  int iterations = 2000;
  std::uint64_t seed = 0;
  int pose_level = 0;  // percent; training starts from these stored poses
  int gaussian_count = 64;
  double lr_gaussians = 1e-2;  // position rate additionally scaled by scene diag
  double lr_twists = 1e-3;
  double lr_theta = 1e-3;
  // Every group's rate decays exponentially to lr * lr_final_scale at the
  // last step; the coupled losses oscillate without an annealed tail.
  double lr_final_scale = 0.1;
  int recon_count = 13;  // M
  // Steps before the splat/recon consistency term joins the total. Until the
  // scene has formed, its renders are mostly background; pulling the network
  // toward them saturates the output sigmoid and the network never recovers.
  int joint_warmup = 200;
  int checkpoint_every = 500;
  int preview_every = 250;
  LossConfig loss;
};

/// Everything the optimizer touches; checkpoints roundtrip this bit-exactly.
struct RunState {
  TrainConfig cfg;
  GaussianSet model;
  std::vector<TrajectorySegment> segments;  // learned, one per view
  std::vector<Tensor> twist_deltas;         // 2 per view (start,end); zero between steps
  ReconNetParams net;
  AdamState adam_positions, adam_rest, adam_twists, adam_net;
  std::int64_t step = 0;
};

RunState init_run(const Dataset& data, const TrainConfig& cfg);

/// One optimization step (one round-robin view). Throws on non-finite loss.
LossReport train_step(RunState& state, const Dataset& data);

/// Full loop; writes log.csv, checkpoints/step_%06d.ckpt and previews/ under
/// run_dir (pass empty run_dir to train without artifacts).
RunState train(const Dataset& data, const TrainConfig& cfg, const std::string& run_dir);

/// Continues an existing state up to cfg.iterations (used for resume).
void train_loop(RunState& state, const Dataset& data, const std::string& run_dir);

void checkpoint_save(const std::string& path, const RunState& state);
/// Restores into a state shaped by init_run with the same config and dataset.
void checkpoint_load(const std::string& path, RunState& state);

/// Zero/nonzero gradient pattern of each loss over the parameter groups.
struct RoutingAudit {
  // Rows: L_rec, L_gs, L_joint. Columns: gaussians, pose twists, net.
  double norms[3][3] = {};
  bool matches_expected() const;
};

RoutingAudit grad_routing_audit(const RunState& state, const Dataset& data);

}  // namespace uspg

#pragma once

#include <cstdint>
#include <vector>

#include "uspg/spike.hpp"
#include "uspg/tape.hpp"

namespace uspg {

struct ReconNetConfig {
  int short_channels = 41;  // short spike window length
  int long_channels = 34;   // voxelized long stream
  int features = 16;
  int blocks = 3;

  bool operator==(const ReconNetConfig& o) const = default;
};

/// Weights of the spike-to-image mapping F(S_long, S_short^t, t; theta).
struct ReconNetParams {
  ReconNetConfig cfg;
  Tensor pre_short_w, pre_short_b;
  Tensor pre_long_w, pre_long_b;
  Tensor time_embed;                  // (features)
  std::vector<Tensor> body_w, body_b;  // 2 convs per residual block
  Tensor head_w, head_b;

  std::vector<Tensor*> all();
  std::vector<const Tensor*> all() const;
};

/// He-style uniform init, zero biases and time embedding. Deterministic.
ReconNetParams init_recon_params(std::uint64_t seed, const ReconNetConfig& cfg = {});

struct ReconNetVars {
  Var pre_short_w, pre_short_b;
  Var pre_long_w, pre_long_b;
  Var time_embed;
  std::vector<Var> body_w, body_b;
  Var head_w, head_b;
  std::vector<Var> all;
};

ReconNetVars register_recon_params(Tape& tape, const ReconNetParams& p);

/// The long branch is shared by every timestamp of one stream; compute once.
Var recon_long_feature(Tape& tape, const ReconNetVars& v, Var long_input);

/// Full forward: (H,W) image in (0,1). t_norm in [0,1].
Var recon_forward(Tape& tape, const ReconNetVars& v, Var short_input,
                  Var long_feature, double t_norm);

/// Frame index whose center is nearest to tick time t.
int frame_at_tick(double t);

/// One reconstruction per timestamp (ticks, absolute within the stream); the
/// 41-frame short window is centered on the nearest frame. The time index fed
/// to the network is (t - interval_start) / interval_duration.
std::vector<Var> recon_sequence(Tape& tape, const ReconNetVars& v,
                                const SpikeStream& stream, Var long_feature,
                                const std::vector<double>& timestamps,
                                double interval_start, double interval_duration);

}  // namespace uspg

#pragma once

#include <functional>
#include <vector>

#include "uspg/spike.hpp"
#include "uspg/tape.hpp"

namespace uspg {

struct LossConfig {
  double lambda_dssim = 0.2;
  int ssim_window = 11;
  double ssim_sigma = 1.5;
  double ssim_c1 = 0.01 * 0.01;
  double ssim_c2 = 0.03 * 0.03;

  struct SubInterval {
    int frames;       // odd, co-centered with the exposure
    int recon_count;  // frames reconstructed inside it
  };
  /// Nested co-centered reblur schedule; the first entry is the full exposure.
  std::vector<SubInterval> schedule = {{97, 13}, {65, 9}, {33, 5}};
};

std::vector<double> gaussian_kernel1d(int size, double sigma);

/// Mean SSIM over fully valid window positions, differentiable.
Var ssim_mean(Tape& tape, Var a, Var b, const LossConfig& cfg);

/// (1-lambda)*mean|a-b| + lambda*(1-SSIM(a,b))/2.
Var l1_dssim(Tape& tape, Var a, Var b, const LossConfig& cfg);

/// l1_dssim(mean(frames), target).
Var reblur_loss(Tape& tape, const std::vector<Var>& frames, Var target,
                const LossConfig& cfg);

using ReconFrameFn =
    std::function<std::vector<Var>(const std::vector<double>& timestamps)>;

struct MultiReblurResult {
  Var loss;
  std::vector<Var> full_frames;          // reconstructions of the first (full) sub-interval
  std::vector<double> full_timestamps;   // their tick timestamps
};

/// Mean of reblur losses over the nested schedule; each sub-interval gets its
/// own TFP long-exposure target from the same stream.
MultiReblurResult multi_reblur_loss(Tape& tape, const ReconFrameFn& recon_fn,
                                    const SpikeStream& stream, double threshold_c,
                                    int exposure_start, int exposure_frames,
                                    const LossConfig& cfg);

struct JointLossResult {
  Var loss;
  bool flipped = false;
};

/// Flip-and-minimum MSE alignment between the rendered and the reconstructed
/// sequences; ties resolve to the unflipped branch.
JointLossResult joint_loss(Tape& tape, const std::vector<Var>& gs_frames,
                           const std::vector<Var>& rec_frames);

struct LossReport {
  double l_rec = 0.0, l_gs = 0.0, l_joint = 0.0, l_final = 0.0;
  bool flipped = false;
  double grad_norm_gaussians = 0.0, grad_norm_twists = 0.0, grad_norm_theta = 0.0;
};

}  // namespace uspg

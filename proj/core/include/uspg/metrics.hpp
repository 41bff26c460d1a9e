#pragma once

#include <map>
#include <string>
#include <vector>

#include "uspg/losses.hpp"
#include "uspg/tensor.hpp"
#include "uspg/trainer.hpp"

namespace uspg {

/// 10*log10(1/MSE) on [0,1] images, capped at 100 dB when MSE < 1e-10.
double psnr(const Tensor& a, const Tensor& b);

/// Scalar mean SSIM over fully valid window positions; independent of the
/// tape implementation in losses.
double ssim(const Tensor& a, const Tensor& b, const LossConfig& cfg = {});

struct DegradationProbe {
  double gain_error = 0.0;  // mean |1 - a| of the per-pair scalar gain
  double noise_var = 0.0;   // mean variance of out - a*gt
};

/// Fits out ~ a*gt per pair and reports how far the model output is from an
/// identity-gain, noise-free copy of the reference.
DegradationProbe degradation_probe(const std::vector<Tensor>& outputs,
                                   const std::vector<Tensor>& gts);

struct ViewMetrics {
  double psnr_gs = 0.0, ssim_gs = 0.0;
  double psnr_rec = 0.0, ssim_rec = 0.0;
};

struct EvalReport {
  std::string mode;
  std::int64_t step = 0;
  std::vector<ViewMetrics> per_view;
  ViewMetrics mean;
  DegradationProbe probe_gs, probe_rec;
};

/// Renders at the ground-truth poses (so metrics measure scene quality, not
/// gauge) and reconstructs at the stored sharp-frame timestamps.
EvalReport evaluate_run(const RunState& run, const Dataset& data);

void write_eval_csv(const std::string& path, const EvalReport& report);
std::string eval_text(const EvalReport& report);

struct AblationRow {
  std::string mode;
  ViewMetrics mean;
};

std::vector<AblationRow> ablation_report(
    const std::map<std::string, const RunState*>& runs, const Dataset& data);
std::string ablation_text(const std::vector<AblationRow>& rows);

struct PoseReport {
  PoseErrors initial, optimized;
  double translation_improvement_pct = 0.0;  // NaN when initial error ~ 0
  double rotation_improvement_pct = 0.0;
};

/// Compares the run's optimized per-view poses against ground truth, next to
/// the stored initial perturbation at `level`.
PoseReport pose_report(const RunState& run, const Dataset& data, int level);
std::string pose_text(const PoseReport& report, int level);

}  // namespace uspg

#include "uspg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace uspg {

double psnr(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= a.size();
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Tensor& a, const Tensor& b, const LossConfig& cfg) {
  if (a.shape() != b.shape() || a.shape().rank != 2)
    throw std::invalid_argument("ssim: expects two equal (H,W) images");
  const int h = a.shape()[0], w = a.shape()[1];
  const auto k = gaussian_kernel1d(cfg.ssim_window, cfg.ssim_sigma);
  const int r = cfg.ssim_window / 2;
  if (h < cfg.ssim_window || w < cfg.ssim_window)
    throw std::invalid_argument("ssim: image smaller than the window");

  double total = 0.0;
  int count = 0;
  for (int y = r; y < h - r; ++y) {
    for (int x = r; x < w - r; ++x) {
      double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
      for (int i = -r; i <= r; ++i) {
        for (int j = -r; j <= r; ++j) {
          const double wgt = k[static_cast<size_t>(i + r)] * k[static_cast<size_t>(j + r)];
          const double va = a.at(y + i, x + j), vb = b.at(y + i, x + j);
          mu_a += wgt * va;
          mu_b += wgt * vb;
          aa += wgt * va * va;
          bb += wgt * vb * vb;
          ab += wgt * va * vb;
        }
      }
      const double var_a = aa - mu_a * mu_a;
      const double var_b = bb - mu_b * mu_b;
      const double cov = ab - mu_a * mu_b;
      const double num = (2 * mu_a * mu_b + cfg.ssim_c1) * (2 * cov + cfg.ssim_c2);
      const double den =
          (mu_a * mu_a + mu_b * mu_b + cfg.ssim_c1) * (var_a + var_b + cfg.ssim_c2);
      total += num / den;
      ++count;
    }
  }
  return total / count;
}

DegradationProbe degradation_probe(const std::vector<Tensor>& outputs,
                                   const std::vector<Tensor>& gts) {
  if (outputs.size() != gts.size() || outputs.empty())
    throw std::invalid_argument("degradation_probe: needs equal nonempty lists");
  DegradationProbe p;
  for (size_t i = 0; i < outputs.size(); ++i) {
    const Tensor& out = outputs[i];
    const Tensor& gt = gts[i];
    if (out.shape() != gt.shape())
      throw std::invalid_argument("degradation_probe: shape mismatch");
    const int n = gt.size();
    double mo = 0, mg = 0;
    for (int j = 0; j < n; ++j) {
      mo += out[j];
      mg += gt[j];
    }
    mo /= n;
    mg /= n;
    double var_g = 0, cov = 0;
    for (int j = 0; j < n; ++j) {
      var_g += (gt[j] - mg) * (gt[j] - mg);
      cov += (out[j] - mo) * (gt[j] - mg);
    }
    if (var_g == 0.0)
      throw std::invalid_argument("degradation_probe: constant reference image");
    const double a = cov / var_g;
    double mn = 0;
    for (int j = 0; j < n; ++j) mn += out[j] - a * gt[j];
    mn /= n;
    double var_n = 0;
    for (int j = 0; j < n; ++j) {
      const double d = out[j] - a * gt[j] - mn;
      var_n += d * d;
    }
    p.gain_error += std::fabs(1.0 - a);
    p.noise_var += var_n / n;
  }
  p.gain_error /= outputs.size();
  p.noise_var /= outputs.size();
  return p;
}

namespace {

std::vector<Tensor> recon_outputs(const RunState& run, const Dataset& data, int view) {
  const DatasetView& dv = data.views[static_cast<size_t>(view)];
  Tape t;
  ReconNetVars nv = register_recon_params(t, run.net);
  Var lf = recon_long_feature(t, nv, t.constant(voxel_tensor(voxelize(dv.stream))));
  std::vector<Var> vars =
      recon_sequence(t, nv, dv.stream, lf, data.exposure_timestamps(data.recon_count),
                     data.exposure_start, data.exposure_frames);
  std::vector<Tensor> out;
  for (Var v : vars) out.push_back(t.value(v));
  return out;
}

}  // namespace

EvalReport evaluate_run(const RunState& run, const Dataset& data) {
  EvalReport rep;
  rep.mode = mode_name(run.cfg.mode);
  rep.step = run.step;
  const Camera intr = data.camera_intrinsics();
  std::vector<Tensor> all_gs, all_rec, all_gt;

  for (size_t v = 0; v < data.views.size(); ++v) {
    const DatasetView& dv = data.views[v];
    const std::vector<Tensor> gs =
        render_sequence(run.model, dv.gt_segment, intr, data.recon_count);
    const std::vector<Tensor> rec = recon_outputs(run, data, static_cast<int>(v));

    ViewMetrics m;
    for (int i = 0; i < data.recon_count; ++i) {
      const Tensor& gt = dv.gt_images[static_cast<size_t>(i)];
      m.psnr_gs += psnr(gs[static_cast<size_t>(i)], gt);
      m.ssim_gs += ssim(gs[static_cast<size_t>(i)], gt);
      m.psnr_rec += psnr(rec[static_cast<size_t>(i)], gt);
      m.ssim_rec += ssim(rec[static_cast<size_t>(i)], gt);
      all_gs.push_back(gs[static_cast<size_t>(i)]);
      all_rec.push_back(rec[static_cast<size_t>(i)]);
      all_gt.push_back(gt);
    }
    m.psnr_gs /= data.recon_count;
    m.ssim_gs /= data.recon_count;
    m.psnr_rec /= data.recon_count;
    m.ssim_rec /= data.recon_count;
    rep.per_view.push_back(m);

    rep.mean.psnr_gs += m.psnr_gs;
    rep.mean.ssim_gs += m.ssim_gs;
    rep.mean.psnr_rec += m.psnr_rec;
    rep.mean.ssim_rec += m.ssim_rec;
  }
  const double nv = static_cast<double>(rep.per_view.size());
  rep.mean.psnr_gs /= nv;
  rep.mean.ssim_gs /= nv;
  rep.mean.psnr_rec /= nv;
  rep.mean.ssim_rec /= nv;
  rep.probe_gs = degradation_probe(all_gs, all_gt);
  rep.probe_rec = degradation_probe(all_rec, all_gt);
  return rep;
}

void write_eval_csv(const std::string& path, const EvalReport& rep) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_eval_csv: cannot open " + path);
  f << "view,psnr_gs,ssim_gs,psnr_rec,ssim_rec,lpips\n";
  char row[256];
  for (size_t v = 0; v < rep.per_view.size(); ++v) {
    const ViewMetrics& m = rep.per_view[v];
    std::snprintf(row, sizeof(row), "%zu,%.6f,%.6f,%.6f,%.6f,\n", v, m.psnr_gs,
                  m.ssim_gs, m.psnr_rec, m.ssim_rec);
    f << row;
  }
  std::snprintf(row, sizeof(row), "mean,%.6f,%.6f,%.6f,%.6f,\n", rep.mean.psnr_gs,
                rep.mean.ssim_gs, rep.mean.psnr_rec, rep.mean.ssim_rec);
  f << row;
}

std::string eval_text(const EvalReport& rep) {
  std::ostringstream os;
  os << "run mode=" << rep.mode << " step=" << rep.step
     << " (renders at GT poses, training views)\n";
  char row[256];
  os << "view   psnr_gs  ssim_gs  psnr_rec ssim_rec lpips\n";
  for (size_t v = 0; v < rep.per_view.size(); ++v) {
    const ViewMetrics& m = rep.per_view[v];
    std::snprintf(row, sizeof(row), "%-6zu %8.3f %8.4f %8.3f %8.4f   n/a\n", v,
                  m.psnr_gs, m.ssim_gs, m.psnr_rec, m.ssim_rec);
    os << row;
  }
  std::snprintf(row, sizeof(row), "mean   %8.3f %8.4f %8.3f %8.4f   n/a\n",
                rep.mean.psnr_gs, rep.mean.ssim_gs, rep.mean.psnr_rec,
                rep.mean.ssim_rec);
  os << row;
  std::snprintf(row, sizeof(row),
                "degradation probe: gs gain_err=%.5f noise_var=%.3g | "
                "rec gain_err=%.5f noise_var=%.3g\n",
                rep.probe_gs.gain_error, rep.probe_gs.noise_var,
                rep.probe_rec.gain_error, rep.probe_rec.noise_var);
  os << row;
  return os.str();
}

std::vector<AblationRow> ablation_report(
    const std::map<std::string, const RunState*>& runs, const Dataset& data) {
  std::vector<AblationRow> rows;
  for (const auto& [mode, run] : runs) {
    AblationRow r;
    r.mode = mode;
    r.mean = evaluate_run(*run, data).mean;
    rows.push_back(r);
  }
  return rows;
}

std::string ablation_text(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "mode                  psnr_gs  ssim_gs  psnr_rec ssim_rec lpips\n";
  char row[256];
  for (const AblationRow& r : rows) {
    std::snprintf(row, sizeof(row), "%-20s %8.3f %8.4f %8.3f %8.4f   n/a\n",
                  r.mode.c_str(), r.mean.psnr_gs, r.mean.ssim_gs, r.mean.psnr_rec,
                  r.mean.ssim_rec);
    os << row;
  }
  return os.str();
}

PoseReport pose_report(const RunState& run, const Dataset& data, int level) {
  std::vector<Pose> reference, initial, optimized;
  for (size_t v = 0; v < data.views.size(); ++v) {
    const DatasetView& dv = data.views[v];
    auto it = dv.perturbed.find(level);
    if (it == dv.perturbed.end())
      throw std::invalid_argument("pose_report: dataset has no level " +
                                  std::to_string(level));
    reference.push_back(dv.gt_segment.start);
    reference.push_back(dv.gt_segment.end);
    initial.push_back(it->second.start);
    initial.push_back(it->second.end);
    optimized.push_back(run.segments[v].start);
    optimized.push_back(run.segments[v].end);
  }
  PoseReport rep;
  rep.initial = pose_errors(initial, reference);
  rep.optimized = pose_errors(optimized, reference);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  rep.translation_improvement_pct =
      rep.initial.translation_mae > 1e-12
          ? 100.0 * (rep.initial.translation_mae - rep.optimized.translation_mae) /
                rep.initial.translation_mae
          : nan;
  rep.rotation_improvement_pct =
      rep.initial.rotation_rad > 1e-12
          ? 100.0 * (rep.initial.rotation_rad - rep.optimized.rotation_rad) /
                rep.initial.rotation_rad
          : nan;
  return rep;
}

std::string pose_text(const PoseReport& rep, int level) {
  std::ostringstream os;
  char row[256];
  os << "pose errors after SE(3) gauge alignment, perturbation level " << level
     << "%\n";
  std::snprintf(row, sizeof(row), "initial:   trans_mae=%.6g rot_rad=%.6g\n",
                rep.initial.translation_mae, rep.initial.rotation_rad);
  os << row;
  std::snprintf(row, sizeof(row), "optimized: trans_mae=%.6g rot_rad=%.6g\n",
                rep.optimized.translation_mae, rep.optimized.rotation_rad);
  os << row;
  auto pct = [&](double v) {
    return std::isnan(v) ? std::string("n/a") : (std::to_string(v) + "%");
  };
  os << "improvement: translation " << pct(rep.translation_improvement_pct)
     << ", rotation " << pct(rep.rotation_improvement_pct) << "\n";
  return os.str();
}

}  // namespace uspg

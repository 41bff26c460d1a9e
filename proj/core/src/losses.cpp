#include "uspg/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace uspg {

std::vector<double> gaussian_kernel1d(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw std::invalid_argument("gaussian_kernel1d: size must be odd");
  std::vector<double> k(static_cast<size_t>(size));
  const int r = size / 2;
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<size_t>(i + r)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

Var ssim_mean(Tape& t, Var a, Var b, const LossConfig& cfg) {
  if (t.value(a).shape() != t.value(b).shape())
    throw std::invalid_argument("ssim: shape mismatch");
  const auto kernel = gaussian_kernel1d(cfg.ssim_window, cfg.ssim_sigma);
  const int m = cfg.ssim_window / 2;

  Var mu_a = t.blur2d(a, kernel);
  Var mu_b = t.blur2d(b, kernel);
  Var mu_aa = t.square(mu_a);
  Var mu_bb = t.square(mu_b);
  Var mu_ab = t.mul(mu_a, mu_b);
  Var var_a = t.sub(t.blur2d(t.square(a), kernel), mu_aa);
  Var var_b = t.sub(t.blur2d(t.square(b), kernel), mu_bb);
  Var cov = t.sub(t.blur2d(t.mul(a, b), kernel), mu_ab);

  Var num = t.mul(t.add_scalar(t.scale(mu_ab, 2.0), cfg.ssim_c1),
                  t.add_scalar(t.scale(cov, 2.0), cfg.ssim_c2));
  Var den = t.mul(t.add_scalar(t.add(mu_aa, mu_bb), cfg.ssim_c1),
                  t.add_scalar(t.add(var_a, var_b), cfg.ssim_c2));
  return t.mean(t.crop(t.divide(num, den), m));
}

Var l1_dssim(Tape& t, Var a, Var b, const LossConfig& cfg) {
  if (t.value(a).shape() != t.value(b).shape())
    throw std::invalid_argument("l1_dssim: shape mismatch");
  Var l1 = t.mean(t.abs(t.sub(a, b)));
  Var dssim = t.scale(t.add_scalar(t.scale(ssim_mean(t, a, b, cfg), -1.0), 1.0), 0.5);
  return t.add(t.scale(l1, 1.0 - cfg.lambda_dssim), t.scale(dssim, cfg.lambda_dssim));
}

Var reblur_loss(Tape& t, const std::vector<Var>& frames, Var target,
                const LossConfig& cfg) {
  if (frames.empty()) throw std::invalid_argument("reblur_loss: empty sequence");
  return l1_dssim(t, t.mean_of(frames), target, cfg);
}

MultiReblurResult multi_reblur_loss(Tape& t, const ReconFrameFn& recon_fn,
                                    const SpikeStream& stream, double threshold_c,
                                    int exposure_start, int exposure_frames,
                                    const LossConfig& cfg) {
  if (cfg.schedule.empty()) throw std::invalid_argument("multi_reblur: empty schedule");
  if (exposure_frames % 2 == 0)
    throw std::invalid_argument("multi_reblur: exposure frame count must be odd");
  const int center = exposure_start + (exposure_frames - 1) / 2;

  MultiReblurResult res;
  std::vector<Var> parts;
  for (size_t n = 0; n < cfg.schedule.size(); ++n) {
    const auto& sub = cfg.schedule[n];
    if (sub.frames % 2 == 0 || sub.frames > exposure_frames)
      throw std::invalid_argument("multi_reblur: sub-interval must be odd and nested");
    const int half = (sub.frames - 1) / 2;
    const int a = center - half, b = center + half;
    if (a < 0 || b >= stream.frames)
      throw std::invalid_argument("multi_reblur: sub-interval outside the stream");
    std::vector<double> ts(static_cast<size_t>(sub.recon_count));
    for (int m = 0; m < sub.recon_count; ++m)
      ts[static_cast<size_t>(m)] =
          a + (m + 0.5) * static_cast<double>(sub.frames) / sub.recon_count;
    std::vector<Var> frames = recon_fn(ts);
    Var target = t.constant(tfp(stream, a, b, threshold_c));
    parts.push_back(reblur_loss(t, frames, target, cfg));
    if (n == 0) {
      res.full_frames = frames;
      res.full_timestamps = ts;
    }
  }
  res.loss = t.mean_of(parts);
  return res;
}

JointLossResult joint_loss(Tape& t, const std::vector<Var>& gs_frames,
                           const std::vector<Var>& rec_frames) {
  if (gs_frames.size() != rec_frames.size() || gs_frames.empty())
    throw std::invalid_argument("joint_loss: sequence length mismatch");
  const size_t m = gs_frames.size();
  std::vector<Var> fwd, rev;
  fwd.reserve(m);
  rev.reserve(m);
  for (size_t i = 0; i < m; ++i) {
    fwd.push_back(t.mean(t.square(t.sub(gs_frames[i], rec_frames[i]))));
    rev.push_back(t.mean(t.square(t.sub(gs_frames[m - 1 - i], rec_frames[i]))));
  }
  Var l = t.mean_of(fwd);
  Var lr = t.mean_of(rev);
  JointLossResult res;
  res.flipped = t.value(lr).item() < t.value(l).item();
  res.loss = res.flipped ? lr : l;
  return res;
}

}  // namespace uspg

#include "uspg/recon_net.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace uspg {

std::vector<Tensor*> ReconNetParams::all() {
  std::vector<Tensor*> v{&pre_short_w, &pre_short_b, &pre_long_w, &pre_long_b,
                         &time_embed};
  for (auto& t : body_w) v.push_back(&t);
  for (auto& t : body_b) v.push_back(&t);
  v.push_back(&head_w);
  v.push_back(&head_b);
  return v;
}

std::vector<const Tensor*> ReconNetParams::all() const {
  auto mutable_list = const_cast<ReconNetParams*>(this)->all();
  return {mutable_list.begin(), mutable_list.end()};
}

namespace {

Tensor he_uniform(Shape s, int fan_in, double gain, std::mt19937_64& rng) {
  const double limit = gain * std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t{s};
  for (int i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

}  // namespace

ReconNetParams init_recon_params(std::uint64_t seed, const ReconNetConfig& cfg) {
  std::mt19937_64 rng(seed);
  ReconNetParams p;
  p.cfg = cfg;
  const int f = cfg.features;
  p.pre_short_w = he_uniform(Shape{f, cfg.short_channels, 3, 3}, cfg.short_channels * 9, 1.0, rng);
  p.pre_short_b = Tensor{Shape{f}};
  p.pre_long_w = he_uniform(Shape{f, cfg.long_channels, 3, 3}, cfg.long_channels * 9, 1.0, rng);
  p.pre_long_b = Tensor{Shape{f}};
  p.time_embed = Tensor{Shape{f}};
  for (int b = 0; b < 2 * cfg.blocks; ++b) {
    p.body_w.push_back(he_uniform(Shape{f, f, 3, 3}, f * 9, 1.0, rng));
    p.body_b.push_back(Tensor{Shape{f}});
  }
  // Small head keeps the initial output near sigmoid(0) = 0.5.
  p.head_w = he_uniform(Shape{1, f, 3, 3}, f * 9, 0.1, rng);
  p.head_b = Tensor{Shape{1}};
  return p;
}

ReconNetVars register_recon_params(Tape& tape, const ReconNetParams& p) {
  ReconNetVars v;
  v.pre_short_w = tape.param(p.pre_short_w);
  v.pre_short_b = tape.param(p.pre_short_b);
  v.pre_long_w = tape.param(p.pre_long_w);
  v.pre_long_b = tape.param(p.pre_long_b);
  v.time_embed = tape.param(p.time_embed);
  for (const auto& t : p.body_w) v.body_w.push_back(tape.param(t));
  for (const auto& t : p.body_b) v.body_b.push_back(tape.param(t));
  v.head_w = tape.param(p.head_w);
  v.head_b = tape.param(p.head_b);
  v.all = {v.pre_short_w, v.pre_short_b, v.pre_long_w, v.pre_long_b, v.time_embed};
  for (Var x : v.body_w) v.all.push_back(x);
  for (Var x : v.body_b) v.all.push_back(x);
  v.all.push_back(v.head_w);
  v.all.push_back(v.head_b);
  return v;
}

Var recon_long_feature(Tape& tape, const ReconNetVars& v, Var long_input) {
  return tape.relu(tape.bias_add(tape.conv2d(long_input, v.pre_long_w), v.pre_long_b));
}

Var recon_forward(Tape& tape, const ReconNetVars& v, Var short_input,
                  Var long_feature, double t_norm) {
  if (t_norm < 0.0 || t_norm > 1.0)
    throw std::invalid_argument("recon_forward: t_norm outside [0,1]");
  Var fs = tape.relu(tape.bias_add(tape.conv2d(short_input, v.pre_short_w), v.pre_short_b));
  Var f = tape.bias_add(tape.add(fs, long_feature), tape.scale(v.time_embed, t_norm));
  const int blocks = static_cast<int>(v.body_w.size()) / 2;
  for (int b = 0; b < blocks; ++b) {
    Var h = tape.relu(tape.bias_add(tape.conv2d(f, v.body_w[static_cast<size_t>(2 * b)]),
                                    v.body_b[static_cast<size_t>(2 * b)]));
    Var r = tape.bias_add(tape.conv2d(h, v.body_w[static_cast<size_t>(2 * b + 1)]),
                          v.body_b[static_cast<size_t>(2 * b + 1)]);
    f = tape.add(f, r);
  }
  Var logits = tape.bias_add(tape.conv2d(f, v.head_w), v.head_b);
  Var out = tape.sigmoid(logits);
  const Shape& s = tape.value(out).shape();
  return tape.reshape(out, Shape{s[1], s[2]});
}

int frame_at_tick(double t) {
  return static_cast<int>(std::llround(t - 0.5));
}

std::vector<Var> recon_sequence(Tape& tape, const ReconNetVars& v,
                                const SpikeStream& stream, Var long_feature,
                                const std::vector<double>& timestamps,
                                double interval_start, double interval_duration) {
  const int window = tape.value(v.pre_short_w).shape()[1];
  std::vector<Var> out;
  out.reserve(timestamps.size());
  for (double t : timestamps) {
    const int center = frame_at_tick(t);
    Var short_in = tape.constant(window_tensor(stream, center, window));
    const double t_norm =
        std::clamp((t - interval_start) / interval_duration, 0.0, 1.0);
    out.push_back(recon_forward(tape, v, short_in, long_feature, t_norm));
  }
  return out;
}

}  // namespace uspg

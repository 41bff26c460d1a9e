#include <doctest.h>

#include <cmath>
#include <random>

#include "fd_check.hpp"
#include "uspg/losses.hpp"
#include "uspg/metrics.hpp"
#include "uspg/recon_net.hpp"

using namespace uspg;
using uspg::testing::random_tensor;

namespace {

Tensor random_binary(Shape s, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.4);
  Tensor t{s};
  for (int i = 0; i < t.size(); ++i) t[i] = coin(rng) ? 1.0 : 0.0;
  return t;
}

ReconNetVars vars_from_list(const ReconNetConfig& cfg, const std::vector<Var>& v) {
  ReconNetVars r;
  size_t i = 0;
  r.pre_short_w = v[i++];
  r.pre_short_b = v[i++];
  r.pre_long_w = v[i++];
  r.pre_long_b = v[i++];
  r.time_embed = v[i++];
  for (int b = 0; b < 2 * cfg.blocks; ++b) r.body_w.push_back(v[i++]);
  for (int b = 0; b < 2 * cfg.blocks; ++b) r.body_b.push_back(v[i++]);
  r.head_w = v[i++];
  r.head_b = v[i++];
  r.all = v;
  return r;
}

SpikeStream random_stream(int k, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.35);
  SpikeStream s(k, h, w);
  for (int f = 0; f < k; ++f)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (coin(rng)) s.set(f, y, x, true);
  return s;
}

}  // namespace

TEST_CASE("network initialization") {
  SUBCASE("same seed reproduces weights bit for bit") {
    ReconNetParams a = init_recon_params(7);
    ReconNetParams b = init_recon_params(7);
    auto la = a.all(), lb = b.all();
    REQUIRE(la.size() == lb.size());
    for (size_t i = 0; i < la.size(); ++i)
      for (int k = 0; k < la[i]->size(); ++k) CHECK((*la[i])[k] == (*lb[i])[k]);
    ReconNetParams c = init_recon_params(8);
    CHECK(a.pre_short_w[0] != c.pre_short_w[0]);
  }
  SUBCASE("biases and time embedding start at zero") {
    ReconNetParams p = init_recon_params(3);
    CHECK(p.pre_short_b.abs_max() == 0.0);
    CHECK(p.pre_long_b.abs_max() == 0.0);
    CHECK(p.time_embed.abs_max() == 0.0);
    for (const Tensor& b : p.body_b) CHECK(b.abs_max() == 0.0);
    CHECK(p.head_b.abs_max() == 0.0);
  }
}

TEST_CASE("network forward") {
  std::mt19937_64 rng(11);
  ReconNetConfig cfg;  // default 41/34/16/3
  const Tensor short_in = random_binary(Shape{cfg.short_channels, 12, 12}, rng);
  const Tensor long_in = random_tensor(Shape{cfg.long_channels, 12, 12}, rng, 0.0, 1.0);

  SUBCASE("all-zero weights output exactly one half") {
    ReconNetParams p = init_recon_params(1);
    for (Tensor* t : p.all()) t->fill(0.0);
    Tape t;
    ReconNetVars v = register_recon_params(t, p);
    Var lf = recon_long_feature(t, v, t.constant(long_in));
    Var out = recon_forward(t, v, t.constant(short_in), lf, 0.5);
    const Tensor& img = t.value(out);
    CHECK(img.shape() == Shape{12, 12});
    for (int i = 0; i < img.size(); ++i) CHECK(img[i] == 0.5);
  }
  SUBCASE("fresh initialization stays in the middle band") {
    for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
      ReconNetParams p = init_recon_params(seed);
      Tape t;
      ReconNetVars v = register_recon_params(t, p);
      Var lf = recon_long_feature(t, v, t.constant(long_in));
      Var out = recon_forward(t, v, t.constant(short_in), lf, 0.0);
      const Tensor& img = t.value(out);
      for (int i = 0; i < img.size(); ++i) {
        CHECK(img[i] > 0.25);
        CHECK(img[i] < 0.75);
      }
    }
  }
  SUBCASE("output lies strictly inside (0,1) and is deterministic") {
    ReconNetParams p = init_recon_params(4);
    Tensor first;
    for (int rep = 0; rep < 2; ++rep) {
      Tape t;
      ReconNetVars v = register_recon_params(t, p);
      Var lf = recon_long_feature(t, v, t.constant(long_in));
      Var out = recon_forward(t, v, t.constant(short_in), lf, 0.3);
      const Tensor& img = t.value(out);
      for (int i = 0; i < img.size(); ++i) {
        CHECK(img[i] > 0.0);
        CHECK(img[i] < 1.0);
      }
      if (rep == 0)
        first = img;
      else
        for (int i = 0; i < img.size(); ++i) CHECK(img[i] == first[i]);
    }
  }
  SUBCASE("the short window order matters") {
    ReconNetParams p = init_recon_params(4);
    Tensor swapped = short_in;
    const int hw = 12 * 12;
    for (int i = 0; i < hw; ++i) std::swap(swapped[i], swapped[3 * hw + i]);
    Tape t;
    ReconNetVars v = register_recon_params(t, p);
    Var lf = recon_long_feature(t, v, t.constant(long_in));
    const Tensor a = t.value(recon_forward(t, v, t.constant(short_in), lf, 0.3));
    const Tensor b = t.value(recon_forward(t, v, t.constant(swapped), lf, 0.3));
    double diff = 0.0;
    for (int i = 0; i < a.size(); ++i) diff = std::max(diff, std::fabs(a[i] - b[i]));
    CHECK(diff > 1e-6);
  }
  SUBCASE("the time input shifts the output") {
    ReconNetParams p = init_recon_params(4);
    for (int i = 0; i < p.time_embed.size(); ++i) p.time_embed[i] = 0.1 * (i + 1);
    Tape t;
    ReconNetVars v = register_recon_params(t, p);
    Var lf = recon_long_feature(t, v, t.constant(long_in));
    const Tensor a = t.value(recon_forward(t, v, t.constant(short_in), lf, 0.0));
    const Tensor b = t.value(recon_forward(t, v, t.constant(short_in), lf, 1.0));
    double diff = 0.0;
    for (int i = 0; i < a.size(); ++i) diff = std::max(diff, std::fabs(a[i] - b[i]));
    CHECK(diff > 1e-6);
    CHECK_THROWS(recon_forward(t, v, t.constant(short_in), lf, 1.5));
  }
}

TEST_CASE("network gradients agree with finite differences") {
  std::mt19937_64 rng(21);
  ReconNetConfig cfg;
  cfg.short_channels = 5;
  cfg.long_channels = 3;
  cfg.features = 4;
  cfg.blocks = 1;
  ReconNetParams p = init_recon_params(9, cfg);
  const Tensor short_in = random_binary(Shape{5, 8, 8}, rng);
  const Tensor long_in = random_tensor(Shape{3, 8, 8}, rng, 0.0, 1.0);
  const Tensor weights = random_tensor(Shape{8, 8}, rng, -1.0, 1.0);

  std::vector<Tensor> inputs;
  for (const Tensor* t : p.all()) inputs.push_back(*t);
  auto build = [&](Tape& t, const std::vector<Var>& vars) {
    ReconNetVars v = vars_from_list(cfg, vars);
    Var lf = recon_long_feature(t, v, t.constant(long_in));
    Var out = recon_forward(t, v, t.constant(short_in), lf, 0.37);
    return t.mean(t.mul(out, t.constant(weights)));
  };
  const auto r = uspg::testing::fd_check(inputs, build);
  CHECK(r.max_rel <= 1e-6);
  CHECK(r.checked > 100);
}

TEST_CASE("reconstruction sequences index the stream correctly") {
  SpikeStream stream = random_stream(137, 10, 10, 31);
  ReconNetConfig cfg;
  cfg.long_channels = 34;
  ReconNetParams p = init_recon_params(2, cfg);
  Tape t;
  ReconNetVars v = register_recon_params(t, p);
  Var long_in = t.constant(voxel_tensor(voxelize(stream)));
  Var lf = recon_long_feature(t, v, long_in);

  CHECK(frame_at_tick(20.5) == 20);
  CHECK(frame_at_tick(68.5) == 68);
  CHECK(frame_at_tick(21.0) == 21);  // half rounds away from zero
  CHECK(frame_at_tick(20.99) == 20);

  const std::vector<double> ts{24.23, 68.5};
  const auto frames = recon_sequence(t, v, stream, lf, ts, 20.0, 97.0);
  REQUIRE(frames.size() == 2);
  // Each element equals a manual forward on the same centered window.
  for (size_t i = 0; i < ts.size(); ++i) {
    Var manual = recon_forward(t, v,
                               t.constant(window_tensor(stream, frame_at_tick(ts[i]), 41)),
                               lf, (ts[i] - 20.0) / 97.0);
    const Tensor& a = t.value(frames[i]);
    const Tensor& b = t.value(manual);
    for (int k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);
  }
}

TEST_CASE("structural similarity") {
  std::mt19937_64 rng(41);
  const Tensor a = random_tensor(Shape{16, 16}, rng, 0.05, 0.95);
  const Tensor b = random_tensor(Shape{16, 16}, rng, 0.05, 0.95);
  LossConfig cfg;

  SUBCASE("identical images score one") {
    Tape t;
    CHECK(t.value(ssim_mean(t, t.constant(a), t.constant(a), cfg)).item() ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ssim(a, a, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("the two implementations agree to full precision") {
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor x = random_tensor(Shape{16, 16}, rng, 0.0, 1.0);
      const Tensor y = random_tensor(Shape{16, 16}, rng, 0.0, 1.0);
      Tape t;
      const double tape_val = t.value(ssim_mean(t, t.constant(x), t.constant(y), cfg)).item();
      CHECK(std::fabs(tape_val - ssim(x, y, cfg)) <= 1e-10);
    }
  }
  SUBCASE("shape mismatch is rejected") {
    Tape t;
    CHECK_THROWS(ssim_mean(t, t.constant(a), t.constant(Tensor{Shape{8, 8}}), cfg));
  }
  SUBCASE("kernel is normalized and symmetric") {
    const auto k = gaussian_kernel1d(11, 1.5);
    double sum = 0.0;
    for (double v : k) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    for (int i = 0; i < 5; ++i) CHECK(k[static_cast<size_t>(i)] ==
                                      doctest::Approx(k[static_cast<size_t>(10 - i)]));
    CHECK(k[5] > k[4]);
    CHECK_THROWS(gaussian_kernel1d(10, 1.5));
  }
}

TEST_CASE("image loss") {
  LossConfig cfg;
  SUBCASE("identical images give zero") {
    std::mt19937_64 rng(51);
    const Tensor a = random_tensor(Shape{16, 16}, rng, 0.0, 1.0);
    Tape t;
    CHECK(std::fabs(t.value(l1_dssim(t, t.constant(a), t.constant(a), cfg)).item()) <= 1e-12);
  }
  SUBCASE("constant images match the closed form") {
    Tensor a{Shape{16, 16}, 0.7};
    Tensor b{Shape{16, 16}, 0.2};
    Tape t;
    const double got = t.value(l1_dssim(t, t.constant(a), t.constant(b), cfg)).item();
    const double s = ssim(a, b, cfg);  // constant images: variance terms vanish
    CHECK(got == doctest::Approx(0.8 * 0.5 + 0.2 * (1.0 - s) / 2.0).epsilon(1e-12));
    const double expect_s = (2 * 0.7 * 0.2 + cfg.ssim_c1) / (0.7 * 0.7 + 0.2 * 0.2 + cfg.ssim_c1);
    CHECK(s == doctest::Approx(expect_s).epsilon(1e-9));
  }
  SUBCASE("gradient through the full loss matches finite differences") {
    std::mt19937_64 rng(53);
    // keep a strictly above b so the absolute value has no kink nearby
    Tensor a = random_tensor(Shape{14, 14}, rng, 0.55, 0.9);
    Tensor b = random_tensor(Shape{14, 14}, rng, 0.1, 0.45);
    auto build = [&](Tape& t, const std::vector<Var>& v) {
      return l1_dssim(t, v[0], t.constant(b), cfg);
    };
    const auto r = uspg::testing::fd_check({a}, build);
    CHECK(r.max_rel <= 1e-6);
  }
}

TEST_CASE("reblur losses") {
  LossConfig cfg;
  std::mt19937_64 rng(61);

  SUBCASE("frames averaging to the target are a null space") {
    const Tensor target = random_tensor(Shape{16, 16}, rng, 0.3, 0.7);
    Tensor up = target, down = target;
    for (int i = 0; i < up.size(); ++i) {
      up[i] += 0.1;
      down[i] -= 0.1;
    }
    Tape t;
    Var loss = reblur_loss(t, {t.constant(up), t.constant(down)}, t.constant(target), cfg);
    CHECK(std::fabs(t.value(loss).item()) <= 1e-9);
    CHECK_THROWS(reblur_loss(t, {}, t.constant(target), cfg));
  }

  SpikeStream stream = random_stream(137, 16, 16, 71);
  const double c = 0.5;
  // Deterministic stand-in reconstructor: one fixed image per timestamp.
  auto fake_frames = [&](Tape& t) {
    return [&t](const std::vector<double>& ts) {
      std::vector<Var> out;
      for (double time : ts) {
        Tensor img{Shape{16, 16}};
        for (int i = 0; i < img.size(); ++i)
          img[i] = 0.5 + 0.3 * std::sin(0.05 * time + 0.1 * i);
        out.push_back(t.constant(img));
      }
      return out;
    };
  };

  SUBCASE("a single-entry schedule reduces to one reblur term") {
    LossConfig single = cfg;
    single.schedule = {{97, 13}};
    Tape t;
    const auto res = multi_reblur_loss(t, fake_frames(t), stream, c, 20, 97, single);
    REQUIRE(res.full_frames.size() == 13);
    CHECK(res.full_timestamps[0] == doctest::Approx(20.0 + 0.5 * 97.0 / 13).epsilon(1e-14));
    Var manual = reblur_loss(t, res.full_frames, t.constant(tfp(stream, 20, 116, c)), cfg);
    CHECK(t.value(res.loss).item() == t.value(manual).item());
  }
  SUBCASE("the full schedule averages co-centered sub-interval terms") {
    Tape t;
    auto fn = fake_frames(t);
    const auto res = multi_reblur_loss(t, fn, stream, c, 20, 97, cfg);
    double manual = 0.0;
    const int center = 68;
    for (const auto& sub : cfg.schedule) {
      const int half = (sub.frames - 1) / 2;
      std::vector<double> ts(static_cast<size_t>(sub.recon_count));
      for (int m = 0; m < sub.recon_count; ++m)
        ts[static_cast<size_t>(m)] =
            center - half + (m + 0.5) * static_cast<double>(sub.frames) / sub.recon_count;
      Var part = reblur_loss(t, fn(ts),
                             t.constant(tfp(stream, center - half, center + half, c)), cfg);
      manual += t.value(part).item();
    }
    manual /= static_cast<double>(cfg.schedule.size());
    CHECK(t.value(res.loss).item() == doctest::Approx(manual).epsilon(1e-14));
  }
  SUBCASE("schedule validation") {
    Tape t;
    auto fn = fake_frames(t);
    LossConfig bad = cfg;
    bad.schedule = {};
    CHECK_THROWS(multi_reblur_loss(t, fn, stream, c, 20, 97, bad));
    bad.schedule = {{96, 13}};  // even
    CHECK_THROWS(multi_reblur_loss(t, fn, stream, c, 20, 97, bad));
    bad.schedule = {{99, 13}};  // wider than the exposure
    CHECK_THROWS(multi_reblur_loss(t, fn, stream, c, 20, 97, bad));
    CHECK_THROWS(multi_reblur_loss(t, fn, stream, c, 20, 96, cfg));  // even exposure
    SpikeStream tiny = random_stream(50, 16, 16, 3);
    CHECK_THROWS(multi_reblur_loss(t, fn, tiny, c, 0, 97, cfg));  // outside the stream
  }
}

TEST_CASE("sequence alignment loss") {
  std::mt19937_64 rng(81);
  auto img = [&]() { return random_tensor(Shape{8, 8}, rng, 0.0, 1.0); };
  const Tensor a = img(), b = img(), c = img();

  SUBCASE("identical sequences give zero, unflipped") {
    Tape t;
    std::vector<Var> s{t.constant(a), t.constant(b), t.constant(c)};
    const auto r = joint_loss(t, s, s);
    CHECK(t.value(r.loss).item() == 0.0);
    CHECK(!r.flipped);
  }
  SUBCASE("a reversed sequence gives zero through the flipped branch") {
    Tape t;
    std::vector<Var> fwd{t.constant(a), t.constant(b), t.constant(c)};
    std::vector<Var> rev{t.constant(c), t.constant(b), t.constant(a)};
    const auto r = joint_loss(t, fwd, rev);
    CHECK(t.value(r.loss).item() == 0.0);
    CHECK(r.flipped);
  }
  SUBCASE("length-one sequences tie and stay unflipped") {
    Tape t;
    const auto r = joint_loss(t, {t.constant(a)}, {t.constant(b)});
    CHECK(!r.flipped);
    double mse = 0.0;
    for (int i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
    CHECK(t.value(r.loss).item() == doctest::Approx(mse / a.size()).epsilon(1e-14));
  }
  SUBCASE("the value is invariant to reversing one side") {
    Tape t;
    std::vector<Var> gs{t.constant(a), t.constant(b), t.constant(c)};
    std::vector<Var> gs_rev{t.constant(c), t.constant(b), t.constant(a)};
    std::vector<Var> rec{t.constant(img()), t.constant(img()), t.constant(img())};
    const auto r1 = joint_loss(t, gs, rec);
    const auto r2 = joint_loss(t, gs_rev, rec);
    CHECK(t.value(r1.loss).item() == doctest::Approx(t.value(r2.loss).item()).epsilon(1e-14));
  }
  SUBCASE("gradients reach both sequences") {
    Tape t;
    Var x = t.param(a), y = t.param(b);
    const auto r = joint_loss(t, {x}, {y});
    t.backward(r.loss);
    CHECK(t.grad(x).abs_max() > 0.0);
    CHECK(t.grad(y).abs_max() > 0.0);
    // d/dx mean((x-y)^2) = 2(x-y)/n
    for (int i = 0; i < a.size(); ++i)
      CHECK(t.grad(x)[i] == doctest::Approx(2.0 * (a[i] - b[i]) / a.size()).epsilon(1e-12));
  }
  SUBCASE("mismatched lengths are rejected") {
    Tape t;
    CHECK_THROWS(joint_loss(t, {t.constant(a)}, {t.constant(a), t.constant(b)}));
    CHECK_THROWS(joint_loss(t, {}, {}));
  }
}

TEST_CASE("the combined objective is the plain sum of its parts") {
  std::mt19937_64 rng(91);
  Tape t;
  Var l1 = t.mean(t.square(t.param(random_tensor(Shape{6, 6}, rng, -1.0, 1.0))));
  Var l2 = t.mean(t.abs(t.param(random_tensor(Shape{6, 6}, rng, 0.5, 1.0))));
  Var l3 = t.mean(t.param(random_tensor(Shape{6, 6}, rng, 0.0, 1.0)));
  Var total = t.add_n({l1, l2, l3});
  const double expect = t.value(l1).item() + t.value(l2).item() + t.value(l3).item();
  CHECK(t.value(total).item() == doctest::Approx(expect).epsilon(1e-15));
}

#include "uspg/spike.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace uspg {

SpikeStream::SpikeStream(int k, int h, int w) : frames(k), height(h), width(w) {
  if (k < 1 || h < 1 || w < 1)
    throw std::invalid_argument("SpikeStream: dimensions must be >= 1");
  bits.assign(static_cast<size_t>((bit_count() + 7) / 8), 0);
}

bool SpikeStream::get(int k, int y, int x) const {
  const std::int64_t b =
      (static_cast<std::int64_t>(k) * height + y) * width + x;
  return (bits[static_cast<size_t>(b >> 3)] >> (b & 7)) & 1;
}

void SpikeStream::set(int k, int y, int x, bool v) {
  const std::int64_t b =
      (static_cast<std::int64_t>(k) * height + y) * width + x;
  if (v)
    bits[static_cast<size_t>(b >> 3)] |= static_cast<std::uint8_t>(1u << (b & 7));
  else
    bits[static_cast<size_t>(b >> 3)] &= static_cast<std::uint8_t>(~(1u << (b & 7)));
}

SpikeStream simulate_spikes(const IntensitySequence& seq, const SpikeSimConfig& cfg) {
  if (seq.frames < 1 || seq.height < 1 || seq.width < 1)
    throw std::invalid_argument("simulate_spikes: empty sequence");
  if (!(cfg.threshold_c > 0.0))
    throw std::invalid_argument("simulate_spikes: threshold must be positive");
  if (cfg.initial_accumulator < 0.0 || cfg.initial_accumulator >= cfg.threshold_c)
    throw std::invalid_argument("simulate_spikes: initial accumulator outside [0,C)");
  for (double v : seq.values)
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw std::invalid_argument("simulate_spikes: intensity outside [0,1]");

  const int h = seq.height, w = seq.width;
  std::vector<double> acc(static_cast<size_t>(h * w), cfg.initial_accumulator);
  if (cfg.phase_seed) {
    std::mt19937_64 rng(*cfg.phase_seed);
    std::uniform_real_distribution<double> u(0.0, cfg.threshold_c);
    for (double& a : acc) a = u(rng);
  }

  SpikeStream out(seq.frames, h, w);
  const double c = cfg.threshold_c;
  for (int k = 0; k < seq.frames; ++k) {
    const double* frame = seq.values.data() + static_cast<size_t>(k) * h * w;
    for (int i = 0; i < h * w; ++i) {
      acc[static_cast<size_t>(i)] += frame[i];
      // The comparator tolerance absorbs accumulated summation rounding so
      // that firing ticks match exact arithmetic (e.g. repeated 0.3 sums).
      if (acc[static_cast<size_t>(i)] >= c - 1e-9) {
        acc[static_cast<size_t>(i)] -= c;
        out.set(k, i / w, i % w, true);
      }
    }
  }
  return out;
}

Tensor tfp(const SpikeStream& stream, int a, int b, double c) {
  if (a < 0 || b >= stream.frames || b < a)
    throw std::invalid_argument("tfp: bad window");
  const int h = stream.height, w = stream.width;
  const double t = static_cast<double>(b - a + 1);
  Tensor img{Shape{h, w}};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int n = 0;
      for (int k = a; k <= b; ++k) n += stream.get(k, y, x) ? 1 : 0;
      img.at(y, x) = std::clamp(c * n / t, 0.0, 1.0);
    }
  return img;
}

Tensor tfi(const SpikeStream& stream, int t, double c) {
  if (t < 0 || t >= stream.frames) throw std::invalid_argument("tfi: frame out of range");
  const int h = stream.height, w = stream.width;
  Tensor fallback = tfp(stream, 0, stream.frames - 1, c);
  Tensor img{Shape{h, w}};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int before = -1, after = -1;
      for (int k = t; k >= 0; --k)
        if (stream.get(k, y, x)) { before = k; break; }
      for (int k = t + 1; k < stream.frames; ++k)
        if (stream.get(k, y, x)) { after = k; break; }
      if (before >= 0 && after >= 0)
        img.at(y, x) = std::clamp(c / static_cast<double>(after - before), 0.0, 1.0);
      else
        img.at(y, x) = fallback.at(y, x);
    }
  return img;
}

VoxelGrid voxelize(const SpikeStream& stream) {
  if (stream.frames < 4) throw std::invalid_argument("voxelize: needs K >= 4");
  VoxelGrid g;
  g.voxels = stream.frames / 4;
  g.height = stream.height;
  g.width = stream.width;
  g.values.assign(static_cast<size_t>(g.voxels) * g.height * g.width, 0.0);
  for (int v = 0; v < g.voxels; ++v)
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) {
        int n = 0;
        for (int k = 4 * v; k < 4 * v + 4; ++k) n += stream.get(k, y, x) ? 1 : 0;
        g.values[static_cast<size_t>((v * g.height + y) * g.width + x)] = n / 4.0;
      }
  return g;
}

Tensor voxel_tensor(const VoxelGrid& grid) {
  Tensor t{Shape{grid.voxels, grid.height, grid.width}};
  std::memcpy(t.data(), grid.values.data(), sizeof(double) * grid.values.size());
  return t;
}

SpikeStream extract_window(const SpikeStream& stream, int center, int length) {
  if (length < 1 || length % 2 == 0)
    throw std::invalid_argument("extract_window: length must be odd and positive");
  const int half = (length - 1) / 2;
  const int a = center - half;
  if (a < 0 || a + length > stream.frames)
    throw std::invalid_argument("extract_window: window exceeds stream bounds");
  SpikeStream out(length, stream.height, stream.width);
  for (int k = 0; k < length; ++k)
    for (int y = 0; y < stream.height; ++y)
      for (int x = 0; x < stream.width; ++x)
        if (stream.get(a + k, y, x)) out.set(k, y, x, true);
  return out;
}

Tensor window_tensor(const SpikeStream& stream, int center, int length) {
  SpikeStream w = extract_window(stream, center, length);
  Tensor t{Shape{w.frames, w.height, w.width}};
  int i = 0;
  for (int k = 0; k < w.frames; ++k)
    for (int y = 0; y < w.height; ++y)
      for (int x = 0; x < w.width; ++x) t[i++] = w.get(k, y, x) ? 1.0 : 0.0;
  return t;
}

namespace {
void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}
std::uint32_t get_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw std::runtime_error("spk: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
}  // namespace

void write_spk(const std::string& path, const SpikeStream& stream) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("spk: cannot open " + path);
  f.write("SPK1", 4);
  put_u32(f, static_cast<std::uint32_t>(stream.frames));
  put_u32(f, static_cast<std::uint32_t>(stream.height));
  put_u32(f, static_cast<std::uint32_t>(stream.width));
  f.write(reinterpret_cast<const char*>(stream.bits.data()),
          static_cast<std::streamsize>(stream.bits.size()));
  if (!f) throw std::runtime_error("spk: write failed for " + path);
}

SpikeStream read_spk(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("spk: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "SPK1", 4) != 0)
    throw std::runtime_error("spk: bad magic in " + path);
  const std::uint32_t k = get_u32(f), h = get_u32(f), w = get_u32(f);
  if (k == 0 || h == 0 || w == 0 || static_cast<std::uint64_t>(k) * h * w > (1ull << 40))
    throw std::runtime_error("spk: bad dimensions in " + path);
  SpikeStream s(static_cast<int>(k), static_cast<int>(h), static_cast<int>(w));
  f.read(reinterpret_cast<char*>(s.bits.data()),
         static_cast<std::streamsize>(s.bits.size()));
  if (f.gcount() != static_cast<std::streamsize>(s.bits.size()))
    throw std::runtime_error("spk: truncated payload in " + path);
  // Bits past K*H*W-1 must be zero.
  const std::int64_t n = s.bit_count();
  if (n % 8 != 0) {
    const std::uint8_t mask = static_cast<std::uint8_t>((1u << (n % 8)) - 1u);
    if (s.bits.back() & static_cast<std::uint8_t>(~mask))
      throw std::runtime_error("spk: nonzero padding bits in " + path);
  }
  return s;
}

}  // namespace uspg

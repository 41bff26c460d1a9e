#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uspg/tensor.hpp"

namespace uspg {

/// Bit-packed K x H x W binary spike tensor.
/// Bit index b = k*H*W + y*W + x, stored LSB-first in byte b>>3.
struct SpikeStream {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  SpikeStream() = default;
  SpikeStream(int k, int h, int w);

  bool get(int k, int y, int x) const;
  void set(int k, int y, int x, bool v);
  std::int64_t bit_count() const {
    return static_cast<std::int64_t>(frames) * height * width;
  }
};

/// Per-frame per-pixel normalized intensity in [0,1], row-major.
struct IntensitySequence {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int k, int y, int x) const {
    return values[static_cast<size_t>((k * height + y) * width + x)];
  }
  double& at(int k, int y, int x) {
    return values[static_cast<size_t>((k * height + y) * width + x)];
  }
};

/// Temporal pooling of spike frames by groups of four; values are count/4.
struct VoxelGrid {
  int voxels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;
};

struct SpikeSimConfig {
  double threshold_c = 0.5;  // C = Theta/mu, dimensionless intensity*ticks
  double initial_accumulator = 0.0;
  /// When set, the initial accumulator is drawn uniformly in [0,C) per pixel.
  std::optional<std::uint64_t> phase_seed;
};

/// Integrate-and-fire simulation; fires when the accumulator reaches C and
/// carries the residual (reset by subtraction).
SpikeStream simulate_spikes(const IntensitySequence& seq, const SpikeSimConfig& cfg);

/// TFP reconstruction over the inclusive frame range [a,b]: C*N/T, clamped to [0,1].
Tensor tfp(const SpikeStream& stream, int a, int b, double c);

/// TFI reconstruction at frame t: C / inter-spike interval around t; pixels
/// without a bracketing spike pair fall back to full-stream TFP.
Tensor tfi(const SpikeStream& stream, int t, double c);

VoxelGrid voxelize(const SpikeStream& stream);
Tensor voxel_tensor(const VoxelGrid& grid);  // (voxels,H,W)

/// Contiguous odd-length sub-stream centered at `center` (0-indexed).
SpikeStream extract_window(const SpikeStream& stream, int center, int length);

/// Short-window slice as a (length,H,W) tensor of 0/1 values.
Tensor window_tensor(const SpikeStream& stream, int center, int length);

void write_spk(const std::string& path, const SpikeStream& stream);
SpikeStream read_spk(const std::string& path);

}  // namespace uspg

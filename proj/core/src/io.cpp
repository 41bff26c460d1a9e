#include "uspg/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace uspg {

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
  if (!f) throw std::runtime_error("tsr: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
}  // namespace

void write_tsr(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("tsr: cannot open " + path);
  f.write("TSR1", 4);
  put_u32(f, static_cast<std::uint32_t>(t.shape().rank));
  for (int i = 0; i < t.shape().rank; ++i)
    put_u32(f, static_cast<std::uint32_t>(t.shape()[i]));
  std::vector<float> payload(static_cast<size_t>(t.size()));
  for (int i = 0; i < t.size(); ++i) payload[static_cast<size_t>(i)] = static_cast<float>(t[i]);
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!f) throw std::runtime_error("tsr: write failed for " + path);
}

Tensor read_tsr(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("tsr: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "TSR1", 4) != 0)
    throw std::runtime_error("tsr: bad magic in " + path);
  const std::uint32_t rank = get_u32(f);
  if (rank > 4) throw std::runtime_error("tsr: rank > 4 in " + path);
  std::initializer_list<int> empty{};
  Shape s(empty);
  s.rank = static_cast<int>(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = get_u32(f);
    if (d == 0 || d > (1u << 24)) throw std::runtime_error("tsr: bad dimension in " + path);
    s.dim[i] = static_cast<int>(d);
  }
  Tensor t{s};
  std::vector<float> payload(static_cast<size_t>(t.size()));
  f.read(reinterpret_cast<char*>(payload.data()),
         static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(payload.size() * sizeof(float)))
    throw std::runtime_error("tsr: truncated payload in " + path);
  for (int i = 0; i < t.size(); ++i) t[i] = payload[static_cast<size_t>(i)];
  return t;
}

void write_pgm(const std::string& path, const Tensor& image) {
  if (image.shape().rank != 2) throw std::invalid_argument("pgm: expects (H,W)");
  const int h = image.shape()[0], w = image.shape()[1];
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("pgm: cannot open " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = std::clamp(image.at(y, x), 0.0, 1.0);
      row[static_cast<size_t>(x)] = static_cast<unsigned char>(std::lround(255.0 * v));
    }
    f.write(reinterpret_cast<const char*>(row.data()), w);
  }
  if (!f) throw std::runtime_error("pgm: write failed for " + path);
}

}  // namespace uspg

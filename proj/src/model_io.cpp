#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "dyngraph/model.hpp"

namespace dyngraph {

namespace {

constexpr std::array<char, 4> kMagic{'D', 'G', 'R', 'L'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "model files are little-endian; add byte swapping for this target");

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw ModelFormatError("model file: truncated header");
  }
  return v;
}

void write_blob(std::ostream& os, const Matrix& m) {
  os.write(reinterpret_cast<const char*>(m.data().data()),
           static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Matrix read_blob(std::istream& is, std::size_t rows, std::size_t cols, const char* name) {
  std::vector<double> data(rows * cols);
  if (!is.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(double)))) {
    throw ModelFormatError(std::string("model file: truncated tensor ") + name);
  }
  return Matrix(rows, cols, std::move(data));
}

}  // namespace

void save_model(std::ostream& os, const ModelParams& params) {
  params.validate();
  os.write(kMagic.data(), kMagic.size());
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(params.node_count()));
  write_u32(os, static_cast<std::uint32_t>(params.feature_dim()));
  write_u32(os, static_cast<std::uint32_t>(params.hidden_dim()));
  write_u32(os, static_cast<std::uint32_t>(params.num_classes()));
  write_u32(os, static_cast<std::uint32_t>(params.extra_layers.size()));
  for (const Matrix* t : params.tensors()) write_blob(os, *t);
  if (!os) throw std::runtime_error("model file: write failed");
}

ModelParams load_model(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw ModelFormatError("model file: bad magic");
  }
  const std::uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw ModelFormatError("model file: unsupported version " + std::to_string(version));
  }
  const std::size_t m = read_u32(is);
  const std::size_t p = read_u32(is);
  const std::size_t q = read_u32(is);
  const std::size_t c = read_u32(is);
  const std::size_t layers = read_u32(is);
  if (m == 0 || p == 0 || q == 0 || c == 0) throw ModelFormatError("model file: zero dimension");

  ModelParams params;
  params.w0 = read_blob(is, p, q, "w0");
  params.a_learn = read_blob(is, m, m, "a_learn");
  params.head_w = read_blob(is, q, c, "head_w");
  params.head_b = read_blob(is, 1, c, "head_b");
  for (std::size_t l = 0; l < layers; ++l)
    params.extra_layers.push_back(read_blob(is, q, q, "extra_layer"));
  if (is.peek() != std::char_traits<char>::eof()) {
    throw ModelFormatError("model file: trailing bytes");
  }
  params.validate();
  return params;
}

void save_model(const std::string& path, const ModelParams& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  save_model(os, params);
}

ModelParams load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open model file '" + path + "'");
  return load_model(is);
}

}  // namespace dyngraph

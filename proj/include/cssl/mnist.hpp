#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cssl/datagen.hpp"

namespace cssl {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const std::string& path,
                                 std::size_t offset) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(path + ": truncated at offset " + std::to_string(offset));
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

// IDX image + label pair; pixels scaled to [0,1].
struct MnistData {
  Matrix x;           // N x (rows*cols)
  std::vector<int> y;  // digits 0-9
};

inline MnistData mnist_load_idx(const std::string& images_path,
                                const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw FormatError(images_path + ": cannot open");
  const std::uint32_t img_magic = detail::read_be_u32(img, images_path, 0);
  if (img_magic != 0x00000803u)
    throw FormatError(images_path + ": bad magic at offset 0 (expected 0x00000803)");
  const std::uint32_t count = detail::read_be_u32(img, images_path, 4);
  const std::uint32_t rows = detail::read_be_u32(img, images_path, 8);
  const std::uint32_t cols = detail::read_be_u32(img, images_path, 12);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw FormatError(labels_path + ": cannot open");
  const std::uint32_t lab_magic = detail::read_be_u32(lab, labels_path, 0);
  if (lab_magic != 0x00000801u)
    throw FormatError(labels_path + ": bad magic at offset 0 (expected 0x00000801)");
  const std::uint32_t lab_count = detail::read_be_u32(lab, labels_path, 4);
  if (lab_count != count)
    throw FormatError(labels_path + ": label count " + std::to_string(lab_count) +
                      " != image count " + std::to_string(count));

  MnistData data;
  const std::size_t pix = std::size_t(rows) * cols;
  data.x = Matrix(count, pix);
  data.y.resize(count);

  std::vector<unsigned char> buf(pix);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pix)))
      throw FormatError(images_path + ": truncated at offset " +
                        std::to_string(16 + std::size_t(i) * pix));
    double* row = data.x.row(i);
    for (std::size_t j = 0; j < pix; ++j) row[j] = buf[j] / 255.0;
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    char c;
    if (!lab.get(c))
      throw FormatError(labels_path + ": truncated at offset " + std::to_string(8 + i));
    const int d = static_cast<unsigned char>(c);
    if (d > 9)
      throw FormatError(labels_path + ": label " + std::to_string(d) +
                        " out of range at offset " + std::to_string(8 + i));
    data.y[i] = d;
  }
  return data;
}

// Selection-bias split: the labeled set draws `low_frac` of its samples from
// digits 0-4, the unlabeled and test sets reverse the ratio. Draws without
// replacement; the three sets are disjoint.
inline Dataset mnist_bias_sample(const Matrix& x, const std::vector<int>& y,
                                 std::size_t n_labeled, std::size_t m_unlabeled,
                                 std::size_t test_count, double low_frac,
                                 std::uint64_t seed) {
  if (x.rows != y.size()) throw ConfigError("mnist_bias_sample: x/y size mismatch");
  if (!(low_frac >= 0.0 && low_frac <= 1.0))
    throw ConfigError("mnist_bias_sample: low_frac outside [0,1]");

  std::vector<std::size_t> low_pool, high_pool;
  for (std::size_t i = 0; i < y.size(); ++i)
    (y[i] <= 4 ? low_pool : high_pool).push_back(i);

  Rng rng(seed);
  rng.shuffle(low_pool);
  rng.shuffle(high_pool);
  std::size_t low_next = 0, high_next = 0;

  auto take = [&](std::vector<std::size_t>& pool, std::size_t& next, std::size_t count,
                  std::vector<std::size_t>& out) {
    if (next + count > pool.size())
      throw ConfigError("mnist_bias_sample: pool exhausted (need " +
                        std::to_string(count) + ", have " +
                        std::to_string(pool.size() - next) + ")");
    for (std::size_t i = 0; i < count; ++i) out.push_back(pool[next++]);
  };

  auto split = [&](std::size_t total, bool low_majority) {
    std::vector<std::size_t> idx;
    const auto major = static_cast<std::size_t>(std::llround(
        static_cast<double>(total) * low_frac));
    if (low_majority) {
      take(low_pool, low_next, major, idx);
      take(high_pool, high_next, total - major, idx);
    } else {
      take(high_pool, high_next, major, idx);
      take(low_pool, low_next, total - major, idx);
    }
    rng.shuffle(idx);
    return idx;
  };

  const std::vector<std::size_t> lab_idx = split(n_labeled, true);
  const std::vector<std::size_t> unl_idx = split(m_unlabeled, false);
  const std::vector<std::size_t> test_idx = split(test_count, false);

  auto gather = [&](const std::vector<std::size_t>& idx) {
    LabeledSet s;
    s.x = Matrix(idx.size(), x.cols);
    s.y.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* src = x.row(idx[i]);
      std::copy(src, src + x.cols, s.x.row(i));
      s.y[i] = y[idx[i]];
    }
    return s;
  };

  Dataset ds;
  ds.seed = seed;
  ds.labeled = gather(lab_idx);
  LabeledSet unl = gather(unl_idx);
  ds.unlabeled_x = std::move(unl.x);
  ds.unlabeled_y_hidden = std::move(unl.y);
  ds.test = gather(test_idx);
  return ds;
}

}  // namespace cssl

#pragma once

#include <cstdint>
#include <fstream>

#include "shiftdiff/gmm.hpp"

namespace shiftdiff {

struct Dataset {
  Matrix x0;
  std::vector<int> labels;
  int num_classes = 0;
  GmmSpec gmm;  // dim == 0 when the data did not come from a mixture

  int dim() const { return x0.cols(); }
  int size() const { return x0.rows(); }
  bool has_gmm() const { return gmm.dim > 0; }
};

// Finite draw from the mixture; classes sampled from the prior.
inline Dataset make_gmm_dataset(const GmmSpec& spec, int size, Rng& rng) {
  spec.validate();
  require(size > 0, "data.size must be positive");
  Dataset ds;
  ds.num_classes = spec.num_classes();
  ds.gmm = spec;
  ds.x0.resize(size, spec.dim);
  ds.labels.resize(size);
  for (int i = 0; i < size; ++i) {
    double u = rng.uniform(), acc = 0.0;
    int c = spec.num_classes() - 1;
    for (int q = 0; q < spec.num_classes(); ++q) {
      acc += spec.prior(q);
      if (u < acc) {
        c = q;
        break;
      }
    }
    ds.labels[i] = c;
    Matrix one = gmm_sample(spec, c, 1, rng);
    std::copy(one.row(0), one.row(0) + spec.dim, ds.x0.row(i));
  }
  return ds;
}

namespace detail {

inline uint32_t read_be32(std::istream& in, const std::string& path, size_t& offset) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in)
    throw parse_error(path + ": truncated at offset " + std::to_string(offset));
  offset += 4;
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

}  // namespace detail

// IDX image/label pair -> vectors in [-1, 1] (pixel p maps to 2p/255 - 1).
inline Dataset read_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw io_error("cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw io_error("cannot open " + labels_path);

  size_t ioff = 0, loff = 0;
  uint32_t magic = detail::read_be32(img, images_path, ioff);
  if (magic != 0x00000803u)
    throw parse_error(images_path + ": bad image magic at offset 0 (got 0x" +
                      [&] { char b[16]; snprintf(b, sizeof b, "%08x", magic); return std::string(b); }() + ")");
  uint32_t count = detail::read_be32(img, images_path, ioff);
  uint32_t rows = detail::read_be32(img, images_path, ioff);
  uint32_t cols = detail::read_be32(img, images_path, ioff);

  uint32_t lmagic = detail::read_be32(lab, labels_path, loff);
  if (lmagic != 0x00000801u)
    throw parse_error(labels_path + ": bad label magic at offset 0");
  uint32_t lcount = detail::read_be32(lab, labels_path, loff);
  if (lcount != count)
    throw parse_error(labels_path + ": item count " + std::to_string(lcount) +
                      " != image count " + std::to_string(count));

  Dataset ds;
  ds.num_classes = 10;
  size_t pixels = static_cast<size_t>(rows) * cols;
  ds.x0.resize(static_cast<int>(count), static_cast<int>(pixels));
  ds.labels.resize(count);

  std::vector<unsigned char> buf(pixels);
  for (uint32_t i = 0; i < count; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
    if (!img)
      throw parse_error(images_path + ": truncated at offset " +
                        std::to_string(ioff + static_cast<size_t>(i) * pixels));
    double* row = ds.x0.row(static_cast<int>(i));
    for (size_t p = 0; p < pixels; ++p) row[p] = 2.0 * buf[p] / 255.0 - 1.0;
  }
  for (uint32_t i = 0; i < count; ++i) {
    char c;
    lab.read(&c, 1);
    if (!lab)
      throw parse_error(labels_path + ": truncated at offset " +
                        std::to_string(loff + i));
    int label = static_cast<unsigned char>(c);
    if (label > 9)
      throw parse_error(labels_path + ": label " + std::to_string(label) +
                        " out of range at item " + std::to_string(i));
    ds.labels[i] = label;
  }
  return ds;
}

}  // namespace shiftdiff

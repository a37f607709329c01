#pragma once

#include <cstdio>
#include <cmath>
#include <fstream>

#include "shiftdiff/common.hpp"

namespace shiftdiff {

inline std::string format_g17(double v) {
  char buf[40];
  snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// One sample per line, comma-separated, full double precision; the header
// names the plan and condition so files are self-describing.
inline void write_samples(const std::string& path, const Matrix& samples,
                          const std::string& header) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot write samples to " + path);
  out << "# " << header << "\n";
  for (int i = 0; i < samples.rows(); ++i) {
    for (int d = 0; d < samples.cols(); ++d) {
      if (d) out << ",";
      out << format_g17(samples.at(i, d));
    }
    out << "\n";
  }
  if (!out) throw io_error("short write to " + path);
}

// Per-step training metrics; only deterministic fields go into the file so
// identical runs are byte-identical (wall time is console-only).
class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::string& path) {
    if (path.empty()) return;
    out_.open(path, std::ios::trunc);
    if (!out_) throw io_error("cannot write metrics to " + path);
    out_ << "step,loss\n";
  }
  void write(int64_t step, double loss) {
    if (!out_.is_open()) return;
    out_ << step << "," << format_g17(loss) << "\n";
  }

 private:
  std::ofstream out_;
};

// Binary portable graymap for image-shaped samples; values in [-1, 1].
inline void write_pgm(const std::string& path, const double* data, int width, int height) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write pgm to " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  for (int i = 0; i < width * height; ++i) {
    double v = (data[i] + 1.0) * 0.5 * 255.0;
    int b = static_cast<int>(std::lround(v));
    b = std::min(255, std::max(0, b));
    out.put(static_cast<char>(b));
  }
}

// Binary portable pixmap; data is interleaved rgb in [-1, 1].
inline void write_ppm(const std::string& path, const double* data, int width, int height) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write ppm to " + path);
  out << "P6\n" << width << " " << height << "\n255\n";
  for (int i = 0; i < width * height * 3; ++i) {
    double v = (data[i] + 1.0) * 0.5 * 255.0;
    int b = static_cast<int>(std::lround(v));
    b = std::min(255, std::max(0, b));
    out.put(static_cast<char>(b));
  }
}

}  // namespace shiftdiff

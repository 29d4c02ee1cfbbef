#include "kflow/datasets.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>

#include "kflow/common.hpp"

namespace kflow {

Dataset make_blobs(long n, long classes, RandomStream& rs, double stddev, double radius) {
  require(n >= 1 && classes >= 2, "blobs need n >= 1 and classes >= 2");
  std::vector<double> xs(static_cast<size_t>(n) * 2);
  std::vector<long> ys(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) {
    const long c = i % classes;
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) /
                         static_cast<double>(classes);
    xs[static_cast<size_t>(2 * i)] = radius * std::cos(angle) + stddev * rs.normal();
    xs[static_cast<size_t>(2 * i + 1)] = radius * std::sin(angle) + stddev * rs.normal();
    ys[static_cast<size_t>(i)] = c;
  }
  Dataset d;
  d.x = Tensor(Shape{n, 2}, std::move(xs));
  d.labels = std::move(ys);
  d.classes = classes;
  d.source = "synthetic-blobs";
  return d;
}

Dataset make_moons(long n, RandomStream& rs, double noise) {
  require(n >= 2, "moons need at least 2 points");
  std::vector<double> xs(static_cast<size_t>(n) * 2);
  std::vector<long> ys(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) {
    const long c = i % 2;
    const double t = std::numbers::pi * rs.uniform01();
    double px, py;
    if (c == 0) {
      px = std::cos(t);
      py = std::sin(t);
    } else {
      px = 1.0 - std::cos(t);
      py = 0.5 - std::sin(t);
    }
    xs[static_cast<size_t>(2 * i)] = px + noise * rs.normal();
    xs[static_cast<size_t>(2 * i + 1)] = py + noise * rs.normal();
    ys[static_cast<size_t>(i)] = c;
  }
  Dataset d;
  d.x = Tensor(Shape{n, 2}, std::move(xs));
  d.labels = std::move(ys);
  d.classes = 2;
  d.source = "synthetic-moons";
  return d;
}

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(is),
                                    std::istreambuf_iterator<char>());
}

std::uint32_t read_u32(const std::vector<unsigned char>& buf, size_t off,
                       const std::string& path) {
  require(off + 4 <= buf.size(), path + " truncated at byte " + std::to_string(buf.size()) +
                                     ", needed " + std::to_string(off + 4));
  return (static_cast<std::uint32_t>(buf[off]) << 24) |
         (static_cast<std::uint32_t>(buf[off + 1]) << 16) |
         (static_cast<std::uint32_t>(buf[off + 2]) << 8) |
         static_cast<std::uint32_t>(buf[off + 3]);
}

std::string hex32(std::uint32_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) s += digits[(v >> shift) & 0xf];
  return s;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 long max_count) {
  const auto img = read_file(images_path);
  const std::uint32_t imagic = read_u32(img, 0, images_path);
  require(imagic == 0x00000803u, "bad idx image magic " + hex32(imagic) + " at byte 0 of " +
                                     images_path + ", expected 0x00000803");
  const long count = static_cast<long>(read_u32(img, 4, images_path));
  const long rows = static_cast<long>(read_u32(img, 8, images_path));
  const long cols = static_cast<long>(read_u32(img, 12, images_path));
  const size_t need = 16 + static_cast<size_t>(count) * static_cast<size_t>(rows) *
                               static_cast<size_t>(cols);
  require(img.size() >= need, images_path + " truncated at byte " +
                                  std::to_string(img.size()) + ", needed " +
                                  std::to_string(need));

  const auto lab = read_file(labels_path);
  const std::uint32_t lmagic = read_u32(lab, 0, labels_path);
  require(lmagic == 0x00000801u, "bad idx label magic " + hex32(lmagic) + " at byte 0 of " +
                                     labels_path + ", expected 0x00000801");
  const long lcount = static_cast<long>(read_u32(lab, 4, labels_path));
  require(lcount == count, "label count " + std::to_string(lcount) +
                               " does not match image count " + std::to_string(count));
  require(lab.size() >= 8 + static_cast<size_t>(lcount),
          labels_path + " truncated at byte " + std::to_string(lab.size()) + ", needed " +
              std::to_string(8 + static_cast<size_t>(lcount)));

  long keep = count;
  if (max_count > 0 && max_count < count) keep = max_count;
  const long pix = rows * cols;
  std::vector<double> xs(static_cast<size_t>(keep) * static_cast<size_t>(pix));
  for (long i = 0; i < keep * pix; ++i) {
    xs[static_cast<size_t>(i)] = static_cast<double>(img[16 + static_cast<size_t>(i)]) / 255.0;
  }
  std::vector<long> ys(static_cast<size_t>(keep));
  long mx = 0;
  for (long i = 0; i < keep; ++i) {
    ys[static_cast<size_t>(i)] = static_cast<long>(lab[8 + static_cast<size_t>(i)]);
    mx = std::max(mx, ys[static_cast<size_t>(i)]);
  }
  Dataset d;
  d.x = Tensor(Shape{keep, pix}, std::move(xs));
  d.labels = std::move(ys);
  d.classes = mx + 1;
  d.source = "idx-image-files";
  return d;
}

Dataset subset(const Dataset& d, long start, long count, const std::string& split_tag) {
  require(start >= 0 && count >= 0 && start + count <= d.size(),
          "subset range [" + std::to_string(start) + ", " + std::to_string(start + count) +
              ") exceeds dataset size " + std::to_string(d.size()));
  const long f = d.features();
  std::vector<double> xs(static_cast<size_t>(count) * static_cast<size_t>(f));
  for (long i = 0; i < count * f; ++i)
    xs[static_cast<size_t>(i)] = d.x.values()[static_cast<size_t>(start * f + i)];
  Dataset out;
  out.x = Tensor(Shape{count, f}, std::move(xs));
  out.labels.assign(d.labels.begin() + start, d.labels.begin() + start + count);
  out.classes = d.classes;
  out.source = d.source;
  out.split = split_tag;
  return out;
}

}  // namespace kflow

#include "kflow/datasets.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"

using namespace kflow;

namespace {

std::string fixture(const std::string& name) {
  return std::string(KFLOW_TEST_DIR) + "/fixtures/" + name;
}

std::string temp_file(const std::string& name, const std::string& bytes) {
  auto path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream os(path, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  return path;
}

std::string be32(unsigned long v) {
  std::string s(4, '\0');
  s[0] = static_cast<char>((v >> 24) & 0xff);
  s[1] = static_cast<char>((v >> 16) & 0xff);
  s[2] = static_cast<char>((v >> 8) & 0xff);
  s[3] = static_cast<char>(v & 0xff);
  return s;
}

}  // namespace

TEST_CASE("blobs are balanced and sit near their circle centers") {
  RandomStream rs(41);
  Dataset d = make_blobs(600, 3, rs);
  CHECK(d.size() == 600);
  CHECK(d.features() == 2);
  CHECK(d.classes == 3);
  CHECK(d.source == "synthetic-blobs");
  for (long i = 0; i < 600; ++i) CHECK(d.labels[static_cast<size_t>(i)] == i % 3);

  for (long c = 0; c < 3; ++c) {
    double mx = 0.0, my = 0.0;
    long cnt = 0;
    for (long i = c; i < 600; i += 3) {
      mx += d.x.values()[static_cast<size_t>(2 * i)];
      my += d.x.values()[static_cast<size_t>(2 * i + 1)];
      ++cnt;
    }
    mx /= static_cast<double>(cnt);
    my /= static_cast<double>(cnt);
    const double angle = 2.0 * std::acos(-1.0) * static_cast<double>(c) / 3.0;
    CHECK(std::abs(mx - 2.0 * std::cos(angle)) < 0.15);
    CHECK(std::abs(my - 2.0 * std::sin(angle)) < 0.15);
  }
}

TEST_CASE("moons interleave two offset half circles") {
  RandomStream rs(43);
  Dataset d = make_moons(400, rs);
  CHECK(d.classes == 2);
  CHECK(d.size() == 400);
  double y0 = 0.0, y1 = 0.0;
  for (long i = 0; i < 400; ++i) {
    double y = d.x.values()[static_cast<size_t>(2 * i + 1)];
    if (i % 2 == 0) {
      y0 += y;
    } else {
      y1 += y;
    }
  }
  CHECK(y0 / 200.0 > 0.4);
  CHECK(y1 / 200.0 < 0.1);
}

TEST_CASE("idx loader parses the fixture pair exactly") {
  Dataset d = load_idx(fixture("tiny-images.idx"), fixture("tiny-labels.idx"));
  CHECK(d.size() == 4);
  CHECK(d.features() == 784);
  CHECK(d.classes == 4);
  CHECK(d.source == "idx-image-files");
  CHECK(d.labels == std::vector<long>{3, 0, 2, 1});

  double total = 0.0;
  for (double v : d.x.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    total += v;
  }
  CHECK(total == doctest::Approx(793.2235294117656).epsilon(1e-12));
  CHECK(d.x.values()[0] == 0.0);
  CHECK(d.x.values()[1] == doctest::Approx(1.0 / 255.0).epsilon(1e-15));
  CHECK(d.x.values()[3] == doctest::Approx(3.0 / 255.0).epsilon(1e-15));

  Dataset head = load_idx(fixture("tiny-images.idx"), fixture("tiny-labels.idx"), 2);
  CHECK(head.size() == 2);
  CHECK(head.labels == std::vector<long>{3, 0});
}

TEST_CASE("idx loader reports malformed files with byte offsets") {
  CHECK_THROWS_WITH_AS(load_idx(fixture("tiny-labels.idx"), fixture("tiny-labels.idx")),
                       doctest::Contains("bad idx image magic 0x00000801"), kflow::error);
  CHECK_THROWS_WITH_AS(load_idx(fixture("missing.idx"), fixture("tiny-labels.idx")),
                       doctest::Contains("cannot open"), kflow::error);

  std::string short_img = be32(0x803) + be32(4) + be32(28) + be32(28) + std::string(10, 'x');
  auto ip = temp_file("kflow-short.idx", short_img);
  CHECK_THROWS_WITH_AS(load_idx(ip, fixture("tiny-labels.idx")),
                       doctest::Contains("truncated at byte"), kflow::error);

  std::string img = be32(0x803) + be32(2) + be32(1) + be32(1) + std::string(2, '\x05');
  std::string lab = be32(0x801) + be32(3) + std::string(3, '\x01');
  auto ip2 = temp_file("kflow-img2.idx", img);
  auto lp2 = temp_file("kflow-lab3.idx", lab);
  CHECK_THROWS_WITH_AS(load_idx(ip2, lp2), doctest::Contains("does not match"), kflow::error);
}

TEST_CASE("subset slices rows and retags the split") {
  RandomStream rs(47);
  Dataset d = make_blobs(30, 3, rs);
  Dataset head = subset(d, 0, 20, "train");
  Dataset tail = subset(d, 20, 10, "test");
  CHECK(head.size() == 20);
  CHECK(tail.size() == 10);
  CHECK(head.split == "train");
  CHECK(tail.split == "test");
  CHECK(tail.classes == 3);
  for (long i = 0; i < 20; ++i) {
    CHECK(head.x.values()[static_cast<size_t>(2 * i)] ==
          d.x.values()[static_cast<size_t>(2 * i)]);
    CHECK(head.labels[static_cast<size_t>(i)] == d.labels[static_cast<size_t>(i)]);
  }
  for (long i = 0; i < 10; ++i) {
    CHECK(tail.x.values()[static_cast<size_t>(2 * i)] ==
          d.x.values()[static_cast<size_t>(2 * (20 + i))]);
  }
  CHECK_THROWS_WITH_AS(subset(d, 25, 10, "x"), doctest::Contains("exceeds"), kflow::error);
}

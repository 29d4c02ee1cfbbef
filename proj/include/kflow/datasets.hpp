#pragma once
#include <string>
#include <vector>

#include "kflow/random.hpp"
#include "kflow/tensor.hpp"

namespace kflow {

struct Dataset {
  Tensor x;                  // (n, features)
  std::vector<long> labels;  // values in [0, classes)
  long classes = 0;
  std::string source;  // synthetic-blobs, synthetic-moons, idx-image-files
  std::string split = "all";

  long size() const { return x.defined() ? x.shape()[0] : 0; }
  long features() const { return x.defined() ? x.shape()[1] : 0; }
};

// class centers equally spaced on a circle, isotropic gaussian spread;
// labels interleave so any prefix stays balanced
Dataset make_blobs(long n, long classes, RandomStream& rs, double stddev = 0.5,
                   double radius = 2.0);

// two interleaved half circles with additive noise
Dataset make_moons(long n, RandomStream& rs, double noise = 0.1);

// big-endian IDX image + label pair; pixels scaled to [0,1];
// max_count > 0 keeps only the leading examples
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 long max_count = 0);

// row slice [start, start + count) with a new split tag
Dataset subset(const Dataset& d, long start, long count, const std::string& split_tag);

}  // namespace kflow

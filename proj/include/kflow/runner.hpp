#pragma once
#include <cstdint>
#include <string>

#include "kflow/config.hpp"

namespace kflow {

// Each runner reads its sections of the config, drives the experiment with
// every random choice derived from the seed, writes csv/svg/report files
// under out_dir, and returns a one-line summary. Identical (config, seed)
// pairs reproduce every output byte for byte.
std::string run_simulate(const Config& cfg, std::uint64_t seed, const std::string& out_dir);
std::string run_train_snn(const Config& cfg, std::uint64_t seed, const std::string& out_dir);
std::string run_certify(const Config& cfg, std::uint64_t seed, const std::string& out_dir);
std::string run_bandit(const Config& cfg, std::uint64_t seed, const std::string& out_dir);

// dispatch on [experiment] kind
std::string run_experiment(const Config& cfg, std::uint64_t seed, const std::string& out_dir);

}  // namespace kflow

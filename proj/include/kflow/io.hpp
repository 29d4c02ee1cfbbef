#pragma once
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kflow/common.hpp"

namespace kflow {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> band;  // optional half-widths around y, same length
};

struct PlotOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  long width = 720;
  long height = 440;
  bool log_y = false;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

// deterministic standalone vector plot; series draw as lines with optional
// shaded bands, provenance goes into a leading comment
void write_svg_plot(std::ostream& os, const std::vector<PlotSeries>& series,
                    const PlotOptions& opt);

// "# config <hex16> seed <n>" comment line for CSV provenance
std::string provenance_line(std::uint64_t config_hash, std::uint64_t seed);

void ensure_dir(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace kflow

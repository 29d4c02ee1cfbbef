#include "kflow/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "kflow/config.hpp"

namespace kflow {

namespace {

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') {
      out += "&amp;";
    } else if (c == '<') {
      out += "&lt;";
    } else if (c == '>') {
      out += "&gt;";
    } else {
      out += c;
    }
  }
  return out;
}

const char* kPalette[] = {"#1f6fb2", "#c94f2e", "#3a8c3f", "#7a4fa3", "#b0803a", "#4a8b8f"};

struct Range {
  double lo = 0.0, hi = 1.0;
};

Range pad(Range r) {
  if (r.hi <= r.lo) {
    r.lo -= 0.5;
    r.hi += 0.5;
  }
  double m = 0.05 * (r.hi - r.lo);
  return {r.lo - m, r.hi + m};
}

}  // namespace

void write_svg_plot(std::ostream& os, const std::vector<PlotSeries>& series,
                    const PlotOptions& opt) {
  require(!series.empty(), "plot needs at least one series");
  auto ty = [&](double v) {
    if (!opt.log_y) return v;
    require(v > 0.0, "log-scale plot needs positive values, got " + short_num(v));
    return std::log10(v);
  };

  Range rx, ry;
  bool seen = false;
  for (const auto& s : series) {
    require(s.x.size() == s.y.size(), "series '" + s.label + "' x and y lengths differ");
    require(s.band.empty() || s.band.size() == s.y.size(),
            "series '" + s.label + "' band length differs from y");
    for (size_t i = 0; i < s.x.size(); ++i) {
      double half = s.band.empty() ? 0.0 : s.band[i];
      double lo = ty(opt.log_y ? std::max(s.y[i] - half, 1e-300) : s.y[i] - half);
      double hi = ty(s.y[i] + half);
      if (!seen) {
        rx = {s.x[i], s.x[i]};
        ry = {lo, hi};
        seen = true;
      }
      rx.lo = std::min(rx.lo, s.x[i]);
      rx.hi = std::max(rx.hi, s.x[i]);
      ry.lo = std::min(ry.lo, lo);
      ry.hi = std::max(ry.hi, hi);
    }
  }
  require(seen, "plot needs at least one data point");
  rx = pad(rx);
  ry = pad(ry);

  const double ml = 62, mr = 18, mt = 34, mb = 46;
  double pw = static_cast<double>(opt.width) - ml - mr;
  double ph = static_cast<double>(opt.height) - mt - mb;
  auto px = [&](double v) { return ml + pw * (v - rx.lo) / (rx.hi - rx.lo); };
  auto py = [&](double v) { return mt + ph * (1.0 - (ty(v) - ry.lo) / (ry.hi - ry.lo)); };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\""
     << opt.height << "\" viewBox=\"0 0 " << opt.width << " " << opt.height << "\">\n";
  os << "<!-- config " << hex_u64(opt.config_hash) << " seed " << opt.seed << " -->\n";
  os << "<rect width=\"" << opt.width << "\" height=\"" << opt.height
     << "\" fill=\"white\"/>\n";

  // frame and ticks
  os << "<g stroke=\"#444\" fill=\"none\" stroke-width=\"1\">\n";
  os << "<rect x=\"" << short_num(ml) << "\" y=\"" << short_num(mt) << "\" width=\""
     << short_num(pw) << "\" height=\"" << short_num(ph) << "\"/>\n";
  os << "</g>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#222\">\n";
  for (int i = 0; i <= 4; ++i) {
    double fx = rx.lo + (rx.hi - rx.lo) * i / 4.0;
    double fy = ry.lo + (ry.hi - ry.lo) * i / 4.0;
    double vy = opt.log_y ? std::pow(10.0, fy) : fy;
    os << "<text x=\"" << short_num(px(fx)) << "\" y=\"" << short_num(mt + ph + 16)
       << "\" text-anchor=\"middle\">" << short_num(fx) << "</text>\n";
    os << "<text x=\"" << short_num(ml - 6) << "\" y=\""
       << short_num(mt + ph * (1.0 - i / 4.0) + 4) << "\" text-anchor=\"end\">" << short_num(vy)
       << "</text>\n";
  }
  os << "<text x=\"" << short_num(ml + pw / 2) << "\" y=\"" << short_num(mt + ph + 36)
     << "\" text-anchor=\"middle\">" << escape_xml(opt.x_label) << "</text>\n";
  os << "<text x=\"14\" y=\"" << short_num(mt + ph / 2) << "\" text-anchor=\"middle\" "
     << "transform=\"rotate(-90 14 " << short_num(mt + ph / 2) << ")\">"
     << escape_xml(opt.y_label) << "</text>\n";
  os << "<text x=\"" << short_num(ml + pw / 2) << "\" y=\"20\" text-anchor=\"middle\" "
     << "font-size=\"14\">" << escape_xml(opt.title) << "</text>\n";
  os << "</g>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % 6];
    if (!s.band.empty() && s.x.size() > 1) {
      os << "<polygon fill=\"" << color << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
      for (size_t i = 0; i < s.x.size(); ++i) {
        double hi = s.y[i] + s.band[i];
        os << short_num(px(s.x[i])) << "," << short_num(py(hi)) << " ";
      }
      for (size_t i = s.x.size(); i-- > 0;) {
        double lo = s.y[i] - s.band[i];
        if (opt.log_y) lo = std::max(lo, 1e-300);
        os << short_num(px(s.x[i])) << "," << short_num(py(lo)) << " ";
      }
      os << "\"/>\n";
    }
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) {
      os << short_num(px(s.x[i])) << "," << short_num(py(s.y[i])) << " ";
    }
    os << "\"/>\n";
    double lx = ml + pw - 130, lyy = mt + 14 + 16.0 * static_cast<double>(si);
    os << "<line x1=\"" << short_num(lx) << "\" y1=\"" << short_num(lyy - 4) << "\" x2=\""
       << short_num(lx + 22) << "\" y2=\"" << short_num(lyy - 4) << "\" stroke=\"" << color
       << "\" stroke-width=\"1.6\"/>\n";
    os << "<text x=\"" << short_num(lx + 28) << "\" y=\"" << short_num(lyy)
       << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#222\">"
       << escape_xml(s.label) << "</text>\n";
  }
  os << "</svg>\n";
}

std::string provenance_line(std::uint64_t config_hash, std::uint64_t seed) {
  return "# config " + hex_u64(config_hash) + " seed " + std::to_string(seed) + "\n";
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec || !std::filesystem::is_directory(path)) {
    fail("cannot create output directory " + path);
  }
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "cannot open " + path + " for writing");
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  require(os.good(), "failed writing " + path);
}

}  // namespace kflow

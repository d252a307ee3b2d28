// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dependency-free single-file SVG line plots for spectra and sweep curves.
// CSV remains the contract; these are optional companions for eyeballing.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fora/errors.hpp"

namespace fora {

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

inline void write_line_plot(const std::string& path, const std::string& title,
                            const std::vector<PlotSeries>& series) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b"};
  const int width = 640, height = 420, margin = 56;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmin > xmax) throw ConfigError("write_line_plot: no points");
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  const double yspan = ymax - ymin;
  ymin -= 0.05 * yspan;
  ymax += 0.05 * yspan;

  auto sx = [&](double x) {
    return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin);
  };
  auto sy = [&](double y) {
    return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin);
  };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::string(buf);
  };

  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_line_plot: cannot open " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"15\">" << title << "</text>\n";
  // Axes.
  out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\""
      << width - margin << "\" y2=\"" << height - margin
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin
      << "\" y2=\"" << height - margin << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  // Min/max tick labels.
  out << "<text x=\"" << margin << "\" y=\"" << height - margin + 18
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << num(xmin) << "</text>\n";
  out << "<text x=\"" << width - margin << "\" y=\"" << height - margin + 18
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(xmax)
      << "</text>\n";
  out << "<text x=\"" << margin - 6 << "\" y=\"" << height - margin
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(ymin)
      << "</text>\n";
  out << "<text x=\"" << margin - 6 << "\" y=\"" << margin + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(ymax)
      << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = kColors[si % 6];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : series[si].points)
      out << num(sx(x)) << "," << num(sy(y)) << " ";
    out << "\"/>\n";
    out << "<text x=\"" << width - margin + 4 << "\" y=\"" << margin + 16 * si + 12
        << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << color << "\">"
        << series[si].name << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace fora

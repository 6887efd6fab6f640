#pragma once

// Minimal deterministic SVG line plots of CSV columns against the first column.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bcil/core.hpp"

namespace bcil {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

struct PlotData {
  std::string x_name;
  std::vector<Series> series;
};

/// Reads a CSV table: '#' lines are skipped, the first remaining line is the
/// header, empty cells are missing values. `columns` selects series (all when empty).
inline PlotData parse_plot_csv(std::istream& in, const std::vector<std::string>& columns = {}) {
  PlotData d;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  std::vector<int> pick;  // header index -> series index, -1 skipped
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split(line, ',');
    if (header.empty()) {
      for (auto f : fields) header.emplace_back(trim(f));
      if (header.size() < 2) throw Error(ErrorKind::Malformed, "plot CSV needs an x column and at least one series");
      d.x_name = header[0];
      pick.assign(header.size(), -1);
      for (std::size_t i = 1; i < header.size(); ++i) {
        if (!columns.empty() && std::find(columns.begin(), columns.end(), header[i]) == columns.end()) continue;
        pick[i] = static_cast<int>(d.series.size());
        d.series.push_back({header[i], {}});
      }
      for (const auto& c : columns)
        if (std::find(header.begin() + 1, header.end(), c) == header.end())
          throw Error(ErrorKind::Malformed, "no column named '" + c + "'");
      continue;
    }
    if (fields.size() != header.size())
      throw Error(ErrorKind::Malformed, "line " + std::to_string(lineno) + ": expected " +
                                            std::to_string(header.size()) + " fields");
    double x;
    if (!parse_double(fields[0], x) || !std::isfinite(x))
      throw Error(ErrorKind::Malformed, "line " + std::to_string(lineno) + ": bad x value");
    for (std::size_t i = 1; i < fields.size(); ++i) {
      if (pick[i] < 0 || trim(fields[i]).empty()) continue;
      double y;
      if (!parse_double(fields[i], y) || !std::isfinite(y))
        throw Error(ErrorKind::Malformed, "line " + std::to_string(lineno) + ": bad value in '" + header[i] + "'");
      d.series[static_cast<std::size_t>(pick[i])].points.emplace_back(x, y);
    }
  }
  if (header.empty()) throw Error(ErrorKind::Malformed, "plot CSV is empty");
  std::erase_if(d.series, [](const Series& s) { return s.points.empty(); });
  if (d.series.empty()) throw Error(ErrorKind::Malformed, "no series has any data");
  return d;
}

/// Axis label for a column name, with units.
inline std::string axis_label(const std::string& column) {
  if (column == "t_ms") return "time [ms]";
  if (column == "t" || column == "time") return "time [s]";
  if (column == "epoch") return "epoch";
  auto has = [&](const char* part) { return column.find(part) != std::string::npos; };
  if (has("dth")) return "angular velocity [rad/s]";
  if (has("th")) return "angle [rad]";
  if (has("tau") || has("ref") || has("env")) return "torque [N·m]";
  if (has("AR") || has("loss")) return "loss [normalized MSE]";
  return column + " [-]";
}

namespace detail {
inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}
inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}
}  // namespace detail

inline std::string render_svg(const PlotData& d) {
  constexpr double W = 800, H = 450, left = 80, right = 170, top = 20, bottom = 60;
  constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                     "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : d.series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pw = W - left - right, ph = H - top - bottom;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  std::set<std::string> units;
  for (const auto& s : d.series) units.insert(axis_label(s.name));
  const std::string ylabel = units.size() == 1 ? *units.begin() : "value [mixed units]";

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<text x=\"" << detail::fmt("%.2f", sx(xv)) << "\" y=\"" << H - bottom + 16
      << "\" text-anchor=\"middle\">" << detail::fmt("%.4g", xv) << "</text>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << detail::fmt("%.2f", sy(yv) + 4)
      << "\" text-anchor=\"end\">" << detail::fmt("%.4g", yv) << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">"
    << detail::xml_escape(axis_label(d.x_name)) << "</text>\n";
  o << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << detail::xml_escape(ylabel) << "</text>\n";
  for (std::size_t i = 0; i < d.series.size(); ++i) {
    const auto& s = d.series[i];
    const char* colour = palette[i % std::size(palette)];
    o << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.2\" points=\"";
    for (std::size_t k = 0; k < s.points.size(); ++k)
      o << (k ? " " : "") << detail::fmt("%.2f", sx(s.points[k].first)) << ','
        << detail::fmt("%.2f", sy(s.points[k].second));
    o << "\"/>\n";
    const double ly = top + 14.0 * static_cast<double>(i) + 8;
    o << "<line x1=\"" << W - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - right + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << W - right + 35 << "\" y=\"" << ly + 4 << "\">" << detail::xml_escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline void emit_plot(const std::string& csv_path, const std::string& svg_path,
                      const std::vector<std::string>& columns = {}) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + csv_path + "'");
  const std::string svg = render_svg(parse_plot_csv(in, columns));
  std::ofstream out(svg_path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + svg_path + "' for writing");
  out << svg;
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + svg_path + "'");
}

}  // namespace bcil

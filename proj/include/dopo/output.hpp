#pragma once

// Sweep artifacts: CSV table, SVG plot and the resolved-config metadata file.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dopo/config.hpp"
#include "dopo/errors.hpp"
#include "dopo/experiments.hpp"

namespace dopo {

namespace detail {

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << content;
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace detail

inline std::string csv_text(const SweepResult& result) {
  std::ostringstream os;
  std::vector<std::string> header = result.axis_names;
  header.insert(header.end(), result.record_names.begin(), result.record_names.end());
  header.push_back("wall_time");
  header.push_back("config_hash");
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << '\n';
  for (const auto& p : result.points) {
    for (double v : p.axis_values) os << detail::fmt("%.12g", v) << ',';
    for (const auto& r : p.records) os << detail::fmt("%.12g", r.value) << ',';
    os << detail::fmt("%.12g", p.wall_seconds) << ',' << result.config_hash << '\n';
  }
  return os.str();
}

inline void emit_csv(const SweepResult& result, const std::string& path) { detail::write_file(path, csv_text(result)); }

inline std::string trajectory_csv_text(const TrajectorySeries& t) {
  std::ostringstream os;
  os << "time";
  for (const auto& n : t.names) os << ',' << n;
  os << '\n';
  for (std::size_t k = 0; k < t.times.size(); ++k) {
    os << detail::fmt("%.12g", t.times[k]);
    for (const auto& v : t.values) os << ',' << detail::fmt("%.12g", v[k]);
    os << '\n';
  }
  return os.str();
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InvalidArgument("CsvTable: no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
  double number(std::size_t row, const std::string& name) const { return std::stod(rows.at(row).at(column(name))); }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size()) throw InvalidArgument("parse_csv: ragged row");
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

inline std::string meta_text(const SweepResult& result) {
  std::ostringstream os;
  os << "# dopo " << result.version << '\n';
  os << "# config_hash " << result.config_hash << '\n';
  os << serialize_config(result.config);
  return os.str();
}

inline void emit_meta(const SweepResult& result, const std::string& path) { detail::write_file(path, meta_text(result)); }

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

namespace detail {

struct Frame {
  double left = 80, top = 40, width = 480, height = 340;
};

inline std::string color_for(double t) {
  // Piecewise-linear blue -> teal -> yellow ramp.
  static const std::array<std::array<double, 3>, 5> stops = {{
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(t, 0.0, 1.0) * (stops.size() - 1);
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
  const double f = t - k;
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(stops[k][0] + f * (stops[k + 1][0] - stops[k][0]))),
                static_cast<int>(std::lround(stops[k][1] + f * (stops[k + 1][1] - stops[k][1]))),
                static_cast<int>(std::lround(stops[k][2] + f * (stops[k + 1][2] - stops[k][2]))));
  return buf;
}

inline void svg_open(std::ostringstream& os, const std::string& title) {
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"440\" viewBox=\"0 0 640 440\" "
        "font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"640\" height=\"440\" fill=\"white\"/>\n"
     << "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
}

inline void svg_axes(std::ostringstream& os, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  os << "<rect x=\"" << f.left << "\" y=\"" << f.top << "\" width=\"" << f.width << "\" height=\"" << f.height
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << f.left + f.width / 2 << "\" y=\"" << f.top + f.height + 38
     << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  os << "<text x=\"20\" y=\"" << f.top + f.height / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 20 "
     << f.top + f.height / 2 << ")\">" << ylabel << "</text>\n";
}

inline void svg_ticks(std::ostringstream& os, const Frame& f, double x0, double x1, double y0, double y1) {
  for (int k = 0; k <= 4; ++k) {
    const double fx = f.left + f.width * k / 4.0;
    const double fy = f.top + f.height - f.height * k / 4.0;
    os << "<text x=\"" << fmt("%.2f", fx) << "\" y=\"" << f.top + f.height + 16 << "\" text-anchor=\"middle\">"
       << fmt("%.3g", x0 + (x1 - x0) * k / 4.0) << "</text>\n";
    os << "<text x=\"" << f.left - 6 << "\" y=\"" << fmt("%.2f", fy + 4) << "\" text-anchor=\"end\">"
       << fmt("%.3g", y0 + (y1 - y0) * k / 4.0) << "</text>\n";
  }
}

struct Series {
  std::string name;
  std::vector<double> x, y;
  std::string color;
};

inline std::string line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                             const std::vector<Series>& series, std::optional<double> threshold) {
  std::ostringstream os;
  svg_open(os, title);
  const Frame f;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series) {
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (!any) {
        x0 = x1 = s.x[k];
        y0 = y1 = s.y[k];
        any = true;
      }
      x0 = std::min(x0, s.x[k]);
      x1 = std::max(x1, s.x[k]);
      y0 = std::min(y0, s.y[k]);
      y1 = std::max(y1, s.y[k]);
    }
  }
  if (threshold) {
    y0 = std::min(y0, *threshold);
    y1 = std::max(y1, *threshold);
  }
  y0 = std::min(y0, 0.0);
  if (x1 == x0) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  if (y1 == y0) y1 = y0 + 1.0;
  y1 += 0.05 * (y1 - y0);
  auto px = [&](double x) { return f.left + f.width * (x - x0) / (x1 - x0); };
  auto py = [&](double y) { return f.top + f.height - f.height * (y - y0) / (y1 - y0); };
  svg_axes(os, f, xlabel, ylabel);
  svg_ticks(os, f, x0, x1, y0, y1);
  if (threshold) {
    os << "<line x1=\"" << f.left << "\" x2=\"" << f.left + f.width << "\" y1=\"" << fmt("%.2f", py(*threshold))
       << "\" y2=\"" << fmt("%.2f", py(*threshold)) << "\" stroke=\"black\" stroke-dasharray=\"6 4\"/>\n";
  }
  int legend = 0;
  for (const auto& s : series) {
    if (s.x.size() > 1) {
      os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t k = 0; k < s.x.size(); ++k) {
        os << (k ? " " : "") << fmt("%.2f", px(s.x[k])) << ',' << fmt("%.2f", py(s.y[k]));
      }
      os << "\"/>\n";
    }
    if (s.x.size() <= 40) {
      for (std::size_t k = 0; k < s.x.size(); ++k) {
        os << "<circle cx=\"" << fmt("%.2f", px(s.x[k])) << "\" cy=\"" << fmt("%.2f", py(s.y[k]))
           << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
      }
    }
    const double ly = f.top + 14 + 16 * legend++;
    os << "<line x1=\"" << f.left + f.width - 110 << "\" x2=\"" << f.left + f.width - 90 << "\" y1=\"" << ly - 4
       << "\" y2=\"" << ly - 4 << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << f.left + f.width - 84 << "\" y=\"" << ly << "\">" << s.name << "</text>\n";
  }
  if (!any) {
    os << "<text x=\"" << f.left + f.width / 2 << "\" y=\"" << f.top + f.height / 2
       << "\" text-anchor=\"middle\">no data</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Colored cells of w[row][col] with the level-`level` contour by marching
/// squares over cell centers.
inline std::string heatmap(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                           const std::vector<double>& xs, const std::vector<double>& ys,
                           const std::vector<std::vector<double>>& w, double lo, double hi, double level) {
  std::ostringstream os;
  svg_open(os, title);
  const Frame f;
  const std::size_t nx = xs.size(), ny = ys.size();
  const double cw = f.width / nx, ch = f.height / ny;
  for (std::size_t r = 0; r < ny; ++r) {
    for (std::size_t c = 0; c < nx; ++c) {
      os << "<rect x=\"" << fmt("%.2f", f.left + c * cw) << "\" y=\"" << fmt("%.2f", f.top + f.height - (r + 1) * ch)
         << "\" width=\"" << fmt("%.2f", cw + 0.05) << "\" height=\"" << fmt("%.2f", ch + 0.05) << "\" fill=\""
         << color_for((w[r][c] - lo) / (hi - lo)) << "\"/>\n";
    }
  }
  svg_axes(os, f, xlabel, ylabel);
  auto cx = [&](double c) { return f.left + (c + 0.5) * cw; };
  auto cy = [&](double r) { return f.top + f.height - (r + 0.5) * ch; };
  for (std::size_t c = 0; c < nx; c += std::max<std::size_t>(1, nx / 5)) {
    os << "<text x=\"" << fmt("%.2f", cx(c)) << "\" y=\"" << f.top + f.height + 16 << "\" text-anchor=\"middle\">"
       << fmt("%.3g", xs[c]) << "</text>\n";
  }
  for (std::size_t r = 0; r < ny; r += std::max<std::size_t>(1, ny / 5)) {
    os << "<text x=\"" << f.left - 6 << "\" y=\"" << fmt("%.2f", cy(r) + 4) << "\" text-anchor=\"end\">"
       << fmt("%.3g", ys[r]) << "</text>\n";
  }
  std::ostringstream path;
  auto lerp = [&](double a, double b) { return (level - a) / (b - a); };
  for (std::size_t r = 0; r + 1 < ny; ++r) {
    for (std::size_t c = 0; c + 1 < nx; ++c) {
      // Corners counter-clockwise from bottom-left: (r,c) (r,c+1) (r+1,c+1) (r+1,c).
      const double v[4] = {w[r][c], w[r][c + 1], w[r + 1][c + 1], w[r + 1][c]};
      const double px[4] = {0, 1, 1, 0}, py[4] = {0, 0, 1, 1};
      std::vector<std::pair<double, double>> hits;
      for (int e = 0; e < 4; ++e) {
        const int a = e, b = (e + 1) % 4;
        if ((v[a] > level) != (v[b] > level)) {
          const double t = lerp(v[a], v[b]);
          hits.emplace_back(c + px[a] + t * (px[b] - px[a]), r + py[a] + t * (py[b] - py[a]));
        }
      }
      for (std::size_t h = 0; h + 1 < hits.size(); h += 2) {
        path << "M" << fmt("%.2f", cx(hits[h].first)) << ' ' << fmt("%.2f", cy(hits[h].second)) << "L"
             << fmt("%.2f", cx(hits[h + 1].first)) << ' ' << fmt("%.2f", cy(hits[h + 1].second));
      }
    }
  }
  if (!path.str().empty()) {
    os << "<path class=\"threshold\" d=\"" << path.str() << "\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n";
  }
  // Color bar.
  for (int k = 0; k < 20; ++k) {
    os << "<rect x=\"" << f.left + f.width + 20 << "\" y=\"" << fmt("%.2f", f.top + f.height - (k + 1) * f.height / 20)
       << "\" width=\"14\" height=\"" << fmt("%.2f", f.height / 20 + 0.05) << "\" fill=\"" << color_for((k + 0.5) / 20)
       << "\"/>\n";
  }
  os << "<text x=\"" << f.left + f.width + 38 << "\" y=\"" << f.top + f.height << "\">" << fmt("%.3g", lo) << "</text>\n";
  os << "<text x=\"" << f.left + f.width + 38 << "\" y=\"" << f.top + 10 << "\">" << fmt("%.3g", hi) << "</text>\n";
  os << "<text x=\"" << f.left + f.width + 27 << "\" y=\"" << f.top - 8 << "\" text-anchor=\"middle\">W</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace detail

/// Line plot for trajectories and 1-D sweeps, colored-cell grid with the
/// W = N/2 contour for 2-D sweeps.
inline std::string plot_text(const SweepResult& result) {
  const std::string title = result.config.scenario;
  const double threshold = result.config.n_modes / 2.0;
  const auto& pts = result.points;
  if (pts.size() == 1 && pts[0].trajectory) {
    const TrajectorySeries& t = *pts[0].trajectory;
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    std::vector<detail::Series> series;
    for (std::size_t s = 0; s < t.names.size(); ++s) series.push_back({t.names[s], t.times, t.values[s], colors[s % 4]});
    return detail::line_plot(title, "time", "value", series, std::nullopt);
  }
  auto w_of = [&](const PointResult& p) {
    for (const auto& r : p.records) {
      if (r.name == "W") return r.value;
    }
    return 0.0;
  };
  if (result.axis_names.size() == 2 && !pts.empty()) {
    std::vector<double> ys, xs;
    auto add_unique = [](std::vector<double>& v, double x) {
      if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
    };
    for (const auto& p : pts) {
      add_unique(ys, p.axis_values.at(0));
      add_unique(xs, p.axis_values.at(1));
    }
    std::vector<std::vector<double>> w(ys.size(), std::vector<double>(xs.size(), 0.0));
    for (const auto& p : pts) {
      const auto r = std::find(ys.begin(), ys.end(), p.axis_values[0]) - ys.begin();
      const auto c = std::find(xs.begin(), xs.end(), p.axis_values[1]) - xs.begin();
      w[r][c] = w_of(p);
    }
    return detail::heatmap(title, result.axis_names[1], result.axis_names[0], xs, ys, w, 0.0,
                           static_cast<double>(result.config.n_modes), threshold);
  }
  detail::Series s{"W", {}, {}, "#1f77b4"};
  std::string xlabel = result.axis_names.size() == 1 ? result.axis_names[0] : "grid index";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    s.x.push_back(result.axis_names.size() == 1 ? pts[i].axis_values[0] : static_cast<double>(i));
    s.y.push_back(w_of(pts[i]));
  }
  return detail::line_plot(title, xlabel, "W", {s}, threshold);
}

inline void emit_plot(const SweepResult& result, const std::string& path) { detail::write_file(path, plot_text(result)); }

}  // namespace dopo

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cstl {

// Renders CSV curves (first column = x, remaining columns = series) as a
// standalone SVG built from plain path/text elements.
inline std::string render_curves_svg(const std::string& csv_text,
                                     const std::string& title) {
  std::istringstream in(csv_text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("plot: empty input");
  std::vector<std::string> headers;
  {
    std::istringstream hs(line);
    std::string tok;
    while (std::getline(hs, tok, ',')) headers.push_back(tok);
  }
  if (headers.size() < 2) {
    throw std::invalid_argument("plot: need an x column and one series");
  }
  std::vector<std::vector<double>> columns(headers.size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    std::size_t col = 0;
    while (std::getline(ls, tok, ',') && col < columns.size()) {
      columns[col].push_back(std::strtod(tok.c_str(), nullptr));
      ++col;
    }
  }
  if (columns[0].empty()) throw std::invalid_argument("plot: no data rows");

  const double width = 760, height = 420;
  const double left = 64, right = 24, top = 36, bottom = 48;
  const double px = width - left - right, py = height - top - bottom;

  double xmin = columns[0].front(), xmax = columns[0].back();
  if (xmax <= xmin) xmax = xmin + 1;
  double ymin = 1e300, ymax = -1e300;
  for (std::size_t c = 1; c < columns.size(); ++c) {
    for (double v : columns[c]) {
      if (std::isfinite(v)) {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    }
  }
  if (ymin > ymax) {
    ymin = 0;
    ymax = 1;
  }
  if (ymax - ymin < 1e-12) ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * px; };
  auto sy = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * py; };

  const char* palette[6] = {"#d62728", "#1f77b4", "#2ca02c",
                            "#9467bd", "#ff7f0e", "#8c564b"};
  char buf[160];
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << left << "\" y=\"22\" font-family=\"monospace\" "
         "font-size=\"14\">"
      << title << "</text>\n";

  // axes
  std::snprintf(buf, sizeof(buf),
                "<path d=\"M %.1f %.1f L %.1f %.1f L %.1f %.1f\" fill=\"none\" "
                "stroke=\"#333\" stroke-width=\"1\"/>\n",
                left, top, left, top + py, left + px, top + py);
  svg << buf;
  for (int tick = 0; tick <= 4; ++tick) {
    const double ty = ymin + (ymax - ymin) * tick / 4.0;
    const double yy = sy(ty);
    std::snprintf(buf, sizeof(buf),
                  "<path d=\"M %.1f %.1f L %.1f %.1f\" stroke=\"#ccc\" "
                  "stroke-width=\"0.5\"/>\n",
                  left, yy, left + px, yy);
    svg << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"monospace\" "
                  "font-size=\"11\" text-anchor=\"end\">%.3g</text>\n",
                  left - 6, yy + 4, ty);
    svg << buf;
    const double tx = xmin + (xmax - xmin) * tick / 4.0;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"monospace\" "
                  "font-size=\"11\" text-anchor=\"middle\">%.4g</text>\n",
                  sx(tx), top + py + 18, tx);
    svg << buf;
  }

  for (std::size_t c = 1; c < columns.size(); ++c) {
    const char* color = palette[(c - 1) % 6];
    svg << "<path d=\"";
    bool first = true;
    for (std::size_t i = 0; i < columns[c].size() && i < columns[0].size(); ++i) {
      if (!std::isfinite(columns[c][i])) continue;
      std::snprintf(buf, sizeof(buf), "%s %.2f %.2f ", first ? "M" : "L",
                    sx(columns[0][i]), sy(columns[c][i]));
      svg << buf;
      first = false;
    }
    svg << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n";
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"monospace\" "
                  "font-size=\"12\" fill=\"%s\">%s</text>\n",
                  left + px - 110.0, top + 16.0 + 16.0 * static_cast<double>(c - 1),
                  color, headers[c].c_str());
    svg << buf;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace cstl

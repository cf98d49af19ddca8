#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace prefixsim {

// Just enough SVG to render the result figures: grouped bars, line series,
// and CDF step curves. No external tooling.

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

namespace svg_detail {

constexpr double kW = 720, kH = 420;
constexpr double kMarginL = 70, kMarginR = 20, kMarginT = 40, kMarginB = 50;
inline const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                "#9467bd", "#8c564b"};

inline std::string header(const std::string& title) {
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"16\" "
         "font-family=\"sans-serif\">" << title << "</text>\n";
    return s.str();
}

inline std::string axes(const std::string& xlabel, const std::string& ylabel,
                        double xmin, double xmax, double ymin, double ymax) {
    std::ostringstream s;
    const double x0 = kMarginL, x1 = kW - kMarginR, y0 = kH - kMarginB, y1 = kMarginT;
    s << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
      << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
      << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kH - 10
      << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << xlabel
      << "</text>\n";
    s << "<text x=\"16\" y=\"" << (y0 + y1) / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" "
         "transform=\"rotate(-90 16 " << (y0 + y1) / 2 << ")\">" << ylabel << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 4.0;
        const double px = x0 + (x1 - x0) * i / 4.0;
        s << "<text x=\"" << px << "\" y=\"" << y0 + 16
          << "\" text-anchor=\"middle\" font-size=\"10\" font-family=\"sans-serif\">" << fx
          << "</text>\n";
        const double fy = ymin + (ymax - ymin) * i / 4.0;
        const double py = y0 - (y0 - y1) * i / 4.0;
        s << "<text x=\"" << x0 - 6 << "\" y=\"" << py + 3
          << "\" text-anchor=\"end\" font-size=\"10\" font-family=\"sans-serif\">" << fy
          << "</text>\n";
    }
    return s.str();
}

}  // namespace svg_detail

inline std::string svg_line_chart(const std::vector<Series>& series, const std::string& title,
                                  const std::string& xlabel, const std::string& ylabel) {
    using namespace svg_detail;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.points) {
            if (first) {
                xmin = xmax = x;
                ymin = ymax = y;
                first = false;
            }
            xmin = std::min(xmin, x); xmax = std::max(xmax, x);
            ymin = std::min(ymin, y); ymax = std::max(ymax, y);
        }
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    ymin = std::min(ymin, 0.0);

    std::ostringstream out;
    out << header(title) << axes(xlabel, ylabel, xmin, xmax, ymin, ymax);
    const double x0 = kMarginL, x1 = kW - kMarginR, y0 = kH - kMarginB, y1 = kMarginT;
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = kColors[i % 6];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : series[i].points) {
            const double px = x0 + (x1 - x0) * (x - xmin) / (xmax - xmin);
            const double py = y0 - (y0 - y1) * (y - ymin) / (ymax - ymin);
            out << px << "," << py << " ";
        }
        out << "\"/>\n";
        out << "<text x=\"" << x1 - 150 << "\" y=\"" << kMarginT + 16 * (i + 1)
            << "\" font-size=\"11\" font-family=\"sans-serif\" fill=\"" << color << "\">"
            << series[i].name << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

inline std::string svg_bar_chart(const std::vector<std::string>& group_labels,
                                 const std::vector<Series>& series, const std::string& title,
                                 const std::string& ylabel) {
    using namespace svg_detail;
    double ymax = 0;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.points) ymax = std::max(ymax, y);
    }
    if (ymax <= 0) ymax = 1;

    std::ostringstream out;
    out << header(title) << axes("", ylabel, 0, static_cast<double>(group_labels.size()), 0, ymax);
    const double x0 = kMarginL, x1 = kW - kMarginR, y0 = kH - kMarginB, y1 = kMarginT;
    const double group_w = (x1 - x0) / static_cast<double>(group_labels.size());
    const double bar_w = group_w / (static_cast<double>(series.size()) + 1.0);
    for (std::size_t g = 0; g < group_labels.size(); ++g) {
        out << "<text x=\"" << x0 + group_w * (static_cast<double>(g) + 0.5) << "\" y=\""
            << y0 + 16 << "\" text-anchor=\"middle\" font-size=\"10\" "
            "font-family=\"sans-serif\">" << group_labels[g] << "</text>\n";
        for (std::size_t s = 0; s < series.size(); ++s) {
            if (g >= series[s].points.size()) continue;
            const double v = series[s].points[g].second;
            const double h = (y0 - y1) * v / ymax;
            const double px = x0 + group_w * static_cast<double>(g) +
                              bar_w * (static_cast<double>(s) + 0.5);
            out << "<rect x=\"" << px << "\" y=\"" << y0 - h << "\" width=\"" << bar_w
                << "\" height=\"" << h << "\" fill=\"" << kColors[s % 6] << "\"/>\n";
        }
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
        out << "<text x=\"" << x1 - 150 << "\" y=\"" << kMarginT + 16 * (s + 1)
            << "\" font-size=\"11\" font-family=\"sans-serif\" fill=\"" << kColors[s % 6]
            << "\">" << series[s].name << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace prefixsim

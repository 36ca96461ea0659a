// Tiny self-contained SVG emitters: a bar chart for rank histograms and a
// multi-series line chart for score-versus-lead-time plots. CSV stays the
// canonical output; these are a convenience for quick visual checks.
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "enscal/error.hpp"
#include "enscal/io.hpp"

namespace enscal {

namespace detail {

inline std::string svg_open(int width, int height) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
           std::to_string(width) + "\" height=\"" + std::to_string(height) +
           "\" viewBox=\"0 0 " + std::to_string(width) + " " +
           std::to_string(height) + "\">\n";
}

inline std::string svg_text(double x, double y, const std::string& s,
                            const std::string& extra = "") {
    return "<text x=\"" + fmt_double(x) + "\" y=\"" + fmt_double(y) +
           "\" font-family=\"sans-serif\" font-size=\"12\"" +
           (extra.empty() ? "" : " " + extra) + ">" + s + "</text>\n";
}

inline const std::vector<std::string> svg_palette = {
    "#2b6cb0", "#c05621", "#2f855a", "#9b2c2c", "#6b46c1", "#4a5568"};

}  // namespace detail

// Bar chart of histogram counts with a dashed line at the flat-histogram
// expectation.
inline std::string svg_bar_chart(const std::vector<long long>& counts,
                                 const std::string& title) {
    require(!counts.empty(), errc::validation, "empty histogram");
    const int width = 640, height = 400;
    const double left = 50, right = 15, top = 40, bottom = 40;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    long long total = 0, cmax = 1;
    for (long long c : counts) {
        total += c;
        cmax = std::max(cmax, c);
    }
    const double expected =
        static_cast<double>(total) / static_cast<double>(counts.size());
    const double ymax = std::max(static_cast<double>(cmax), expected) * 1.1;

    std::string out = detail::svg_open(width, height);
    out += detail::svg_text(left, 22, title, "font-size=\"14\" font-weight=\"bold\"");
    const double n = static_cast<double>(counts.size());
    const double slot = plot_w / n;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double h = plot_h * static_cast<double>(counts[i]) / ymax;
        const double x = left + slot * static_cast<double>(i) + 0.1 * slot;
        out += "<rect x=\"" + fmt_double(x) + "\" y=\"" +
               fmt_double(top + plot_h - h) + "\" width=\"" + fmt_double(0.8 * slot) +
               "\" height=\"" + fmt_double(h) + "\" fill=\"#2b6cb0\"/>\n";
        if (counts.size() <= 40)
            out += detail::svg_text(x + 0.4 * slot - 4, height - bottom + 16,
                                    std::to_string(i + 1));
    }
    const double ey = top + plot_h - plot_h * expected / ymax;
    out += "<line x1=\"" + fmt_double(left) + "\" y1=\"" + fmt_double(ey) +
           "\" x2=\"" + fmt_double(left + plot_w) + "\" y2=\"" + fmt_double(ey) +
           "\" stroke=\"#9b2c2c\" stroke-dasharray=\"5,4\"/>\n";
    out += "<line x1=\"" + fmt_double(left) + "\" y1=\"" + fmt_double(top) +
           "\" x2=\"" + fmt_double(left) + "\" y2=\"" + fmt_double(top + plot_h) +
           "\" stroke=\"#4a5568\"/>\n";
    out += "<line x1=\"" + fmt_double(left) + "\" y1=\"" + fmt_double(top + plot_h) +
           "\" x2=\"" + fmt_double(left + plot_w) + "\" y2=\"" +
           fmt_double(top + plot_h) + "\" stroke=\"#4a5568\"/>\n";
    out += detail::svg_text(8, top + 4, fmt_double(ymax));
    out += detail::svg_text(8, top + plot_h, "0");
    out += "</svg>\n";
    return out;
}

struct SvgSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Multi-series line chart with markers and a legend.
inline std::string svg_line_chart(const std::vector<SvgSeries>& series,
                                  const std::string& title,
                                  const std::string& x_label,
                                  const std::string& y_label) {
    require(!series.empty(), errc::validation, "no series to plot");
    const int width = 640, height = 400;
    const double left = 60, right = 140, top = 40, bottom = 50;
    const double plot_w = width - left - right, plot_h = height - top - bottom;

    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series) {
        require(s.x.size() == s.y.size() && !s.x.empty(), errc::validation,
                "series needs matching nonempty x and y");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                first = false;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (xmax == xmin) xmax = xmin + 1;
    double pad = 0.08 * (ymax - ymin);
    if (pad == 0) pad = std::max(0.5 * std::abs(ymax), 0.5);
    ymin -= pad;
    ymax += pad;

    const auto px = [&](double v) { return left + plot_w * (v - xmin) / (xmax - xmin); };
    const auto py = [&](double v) {
        return top + plot_h - plot_h * (v - ymin) / (ymax - ymin);
    };

    std::string out = detail::svg_open(width, height);
    out += detail::svg_text(left, 22, title, "font-size=\"14\" font-weight=\"bold\"");
    out += "<line x1=\"" + fmt_double(left) + "\" y1=\"" + fmt_double(top) +
           "\" x2=\"" + fmt_double(left) + "\" y2=\"" + fmt_double(top + plot_h) +
           "\" stroke=\"#4a5568\"/>\n";
    out += "<line x1=\"" + fmt_double(left) + "\" y1=\"" + fmt_double(top + plot_h) +
           "\" x2=\"" + fmt_double(left + plot_w) + "\" y2=\"" +
           fmt_double(top + plot_h) + "\" stroke=\"#4a5568\"/>\n";
    out += detail::svg_text(left + plot_w / 2 - 20, height - 12, x_label);
    out += detail::svg_text(10, top - 10, y_label);
    out += detail::svg_text(10, py(ymin) + 4, fmt_double(ymin));
    out += detail::svg_text(10, py(ymax) + 4, fmt_double(ymax));

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const std::string& color =
            detail::svg_palette[si % detail::svg_palette.size()];
        std::string points;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            points += fmt_double(px(s.x[i])) + "," + fmt_double(py(s.y[i]));
            if (i + 1 < s.x.size()) points += " ";
            out += "<circle cx=\"" + fmt_double(px(s.x[i])) + "\" cy=\"" +
                   fmt_double(py(s.y[i])) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
        }
        out += "<polyline points=\"" + points + "\" fill=\"none\" stroke=\"" + color +
               "\" stroke-width=\"1.5\"/>\n";
        const double ly = top + 16 * static_cast<double>(si);
        out += "<rect x=\"" + fmt_double(width - right + 10) + "\" y=\"" +
               fmt_double(ly) + "\" width=\"10\" height=\"10\" fill=\"" + color +
               "\"/>\n";
        out += detail::svg_text(width - right + 26, ly + 9, s.label);
    }
    out += "</svg>\n";
    return out;
}

}  // namespace enscal

#include "zeroscm/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "zeroscm/tensor.hpp"

namespace zeroscm {

namespace {
const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}
}  // namespace

void write_line_plot(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<double>& xs, const std::vector<PlotSeries>& series) {
    if (xs.empty() || series.empty()) throw DataError("write_line_plot: nothing to plot");
    const double width = 640, height = 440;
    const double left = 70, right = 150, top = 48, bottom = 56;
    const double plot_w = width - left - right, plot_h = height - top - bottom;

    double xmin = xs.front(), xmax = xs.back();
    for (double v : xs) {
        xmin = std::min(xmin, v);
        xmax = std::max(xmax, v);
    }
    double ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (double v : s.values)
            if (std::isfinite(v)) {
                ymin = std::min(ymin, v);
                ymax = std::max(ymax, v);
            }
    if (ymin > ymax) throw DataError("write_line_plot: no finite values");
    if (xmax == xmin) xmax = xmin + 1;
    double pad = (ymax - ymin) * 0.08;
    if (pad == 0) pad = std::abs(ymax) * 0.1 + 0.1;
    ymin -= pad;
    ymax += pad;

    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * plot_w; };
    auto py = [&](double y) { return top + (ymax - y) / (ymax - ymin) * plot_h; };

    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" "
           "font-family=\"sans-serif\">" << title << "</text>\n";

    // axes
    out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
        << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
        << top + plot_h << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double y = ymin + (ymax - ymin) * i / 4.0;
        out << "<line x1=\"" << left - 4 << "\" y1=\"" << py(y) << "\" x2=\"" << left << "\" y2=\""
            << py(y) << "\" stroke=\"black\"/>\n"
            << "<text x=\"" << left - 8 << "\" y=\"" << py(y) + 4
            << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << fmt(y)
            << "</text>\n";
    }
    for (double x : xs) {
        out << "<line x1=\"" << px(x) << "\" y1=\"" << top + plot_h << "\" x2=\"" << px(x)
            << "\" y2=\"" << top + plot_h + 4 << "\" stroke=\"black\"/>\n"
            << "<text x=\"" << px(x) << "\" y=\"" << top + plot_h + 18
            << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << fmt(x)
            << "</text>\n";
    }
    out << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 14
        << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << x_label
        << "</text>\n"
        << "<text x=\"18\" y=\"" << top + plot_h / 2
        << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" "
           "transform=\"rotate(-90 18 " << top + plot_h / 2 << ")\">" << y_label << "</text>\n";

    for (size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % 8];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\" points=\"";
        for (size_t i = 0; i < xs.size() && i < series[s].values.size(); ++i) {
            if (!std::isfinite(series[s].values[i])) continue;
            out << px(xs[i]) << "," << py(series[s].values[i]) << " ";
        }
        out << "\"/>\n";
        for (size_t i = 0; i < xs.size() && i < series[s].values.size(); ++i) {
            if (!std::isfinite(series[s].values[i])) continue;
            out << "<circle cx=\"" << px(xs[i]) << "\" cy=\"" << py(series[s].values[i])
                << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
        }
        double ly = top + 10 + 16 * static_cast<double>(s);
        out << "<line x1=\"" << left + plot_w + 12 << "\" y1=\"" << ly << "\" x2=\""
            << left + plot_w + 32 << "\" y2=\"" << ly << "\" stroke=\"" << color
            << "\" stroke-width=\"1.6\"/>\n"
            << "<text x=\"" << left + plot_w + 38 << "\" y=\"" << ly + 4
            << "\" font-size=\"11\" font-family=\"sans-serif\">" << series[s].name << "</text>\n";
    }
    out << "</svg>\n";
    if (!out) throw DataError("plot: write failed");
}

}  // namespace zeroscm

#pragma once

#include <string>
#include <vector>

namespace zeroscm {

struct PlotSeries {
    std::string name;
    std::vector<double> values;  // aligned with the shared x positions
};

/// Minimal static line plot (SVG): one polyline per series, linear axes,
/// legend in the top-right corner.
void write_line_plot(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<double>& xs, const std::vector<PlotSeries>& series);

}  // namespace zeroscm

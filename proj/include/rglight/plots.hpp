#pragma once

#include <string>
#include <vector>

namespace rglight::plots {

struct Series {
    std::string name;
    std::vector<double> y;  // x is the index
};

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);

/// values[r][c]; NaN cells are drawn blank. Cell text shows the rounded value.
std::string heatmap_svg(const std::string& title, const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels, const std::vector<std::vector<double>>& values,
                        double lo, double hi);

}  // namespace rglight::plots

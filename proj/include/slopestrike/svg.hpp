#pragma once

// Static SVG charts with no plotting dependency.

#include <string>
#include <vector>

#include "slopestrike/metrics.hpp"

namespace slopestrike::svg {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Line chart with axes, five ticks per axis and a legend. Non-finite points
/// break the line.
std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series, int width = 800, int height = 420);

/// 2x2 confusion matrix (rows: actual real/adversarial, columns: predicted).
std::string confusion_matrix(const std::string& title, const metrics::ConfusionReport& report);

std::string escape(const std::string& text);

} // namespace slopestrike::svg

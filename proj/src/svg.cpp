#include "slopestrike/svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace slopestrike::svg {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string num(double v) { return fmt::format("{:.2f}", v); }

std::string tick_label(double v) {
    if (v == 0.0) {
        return "0";
    }
    return fmt::format("{:.4g}", v);
}

} // namespace

std::string escape(const std::string& text) {
    std::string out;
    for (char c : text) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series, int width, int height) {
    const double left = 70, right = 160, top = 40, bottom = 50;
    const double pw = width - left - right;
    const double ph = height - top - bottom;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
                xmin = std::min(xmin, s.x[i]);
                xmax = std::max(xmax, s.x[i]);
                ymin = std::min(ymin, s.y[i]);
                ymax = std::max(ymax, s.y[i]);
            }
        }
    }
    if (!std::isfinite(xmin)) {
        xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    }
    if (xmax == xmin) {
        xmax = xmin + 1;
    }
    if (ymax == ymin) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    const auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
    const auto sy = [&](double y) { return top + (ymax - y) / (ymax - ymin) * ph; };

    std::string out = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
        "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        width, height, width, height);
    out += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
                       num(left + pw / 2), escape(title));
    out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
                       num(left), num(top), num(pw), num(ph));
    for (int k = 0; k <= 4; ++k) {
        const double xv = xmin + (xmax - xmin) * k / 4.0;
        const double yv = ymin + (ymax - ymin) * k / 4.0;
        out += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#ddd\"/>"
                           "<text x=\"{0}\" y=\"{3}\" text-anchor=\"middle\">{4}</text>\n",
                           num(sx(xv)), num(top), num(top + ph), num(top + ph + 16), tick_label(xv));
        out += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"#ddd\"/>"
                           "<text x=\"{3}\" y=\"{4}\" text-anchor=\"end\">{5}</text>\n",
                           num(left), num(sy(yv)), num(left + pw), num(left - 6), num(sy(yv) + 4), tick_label(yv));
    }
    out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", num(left + pw / 2),
                       num(height - 10.0), escape(x_label));
    out += fmt::format("<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{1}</text>\n",
                       num(top + ph / 2), escape(y_label));
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto* color = kPalette[k % std::size(kPalette)];
        const auto& s = series[k];
        std::string pts;
        const auto flush = [&] {
            if (!pts.empty()) {
                out += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                                   color, pts);
                pts.clear();
            }
        };
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
                flush();
                continue;
            }
            pts += fmt::format("{}{},{}", pts.empty() ? "" : " ", num(sx(s.x[i])), num(sy(s.y[i])));
        }
        flush();
        const double ly = top + 10 + 18.0 * static_cast<double>(k);
        out += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>"
                           "<text x=\"{4}\" y=\"{5}\">{6}</text>\n",
                           num(left + pw + 10), num(ly), num(left + pw + 30), color, num(left + pw + 36),
                           num(ly + 4), escape(s.label));
    }
    out += "</svg>\n";
    return out;
}

std::string confusion_matrix(const std::string& title, const metrics::ConfusionReport& r) {
    const std::size_t cells[2][2] = {{r.tn, r.fp}, {r.fn, r.tp}};
    const std::size_t total = r.tn + r.fp + r.fn + r.tp;
    std::string out =
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"420\" height=\"400\" viewBox=\"0 0 420 400\" "
        "font-family=\"sans-serif\" font-size=\"13\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += fmt::format("<text x=\"240\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n", escape(title));
    const char* names[2] = {"real", "adversarial"};
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            const double frac = total == 0 ? 0.0 : static_cast<double>(cells[i][j]) / static_cast<double>(total);
            const int shade = static_cast<int>(std::lround(255.0 - 180.0 * frac));
            const int x = 120 + 120 * j;
            const int y = 60 + 120 * i;
            out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"120\" height=\"120\" fill=\"rgb({},{},255)\" "
                               "stroke=\"#333\"/><text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"18\">{}"
                               "</text>\n",
                               x, y, shade, shade, x + 60, y + 66, cells[i][j]);
        }
        out += fmt::format("<text x=\"112\" y=\"{}\" text-anchor=\"end\">{}</text>\n", 124 + 120 * i, names[i]);
        out += fmt::format("<text x=\"{}\" y=\"316\" text-anchor=\"middle\">{}</text>\n", 180 + 120 * i, names[i]);
    }
    out += "<text x=\"240\" y=\"336\" text-anchor=\"middle\">predicted</text>\n";
    out += "<text x=\"24\" y=\"180\" text-anchor=\"middle\" transform=\"rotate(-90 24 180)\">actual</text>\n";
    out += fmt::format("<text x=\"240\" y=\"372\" text-anchor=\"middle\">accuracy {:.2f}  specificity {:.2f}  "
                       "kappa {:.2f}</text>\n",
                       r.accuracy, r.specificity, r.kappa);
    out += "</svg>\n";
    return out;
}

} // namespace slopestrike::svg

#include "rglight/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace rglight::plots {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

std::string esc(const std::string& s) {
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

std::string num(double v, int prec = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

// white -> red ramp
std::string ramp(double t) {
    t = std::clamp(t, 0.0, 1.0);
    const int g = static_cast<int>(std::lround(255 * (1.0 - 0.8 * t)));
    const int r = 255 - static_cast<int>(std::lround(60 * t));
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, g);
    return buf;
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
    const double w = 720, h = 420, left = 70, right = 150, top = 40, bottom = 50;
    std::size_t n = 0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : series) {
        n = std::max(n, s.y.size());
        for (double v : s.y) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (!(hi > lo)) {
        lo = std::isfinite(lo) ? lo - 1 : 0;
        hi = lo + 2;
    }
    const double pw = w - left - right, ph = h - top - bottom;
    auto px = [&](double i) { return left + (n > 1 ? i / (n - 1) : 0.0) * pw; };
    auto py = [&](double v) { return top + (1.0 - (v - lo) / (hi - lo)) * ph; };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << esc(title) << "</text>\n";
    o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4.0;
        o << "<text x=\"" << left - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
          << num(v) << "</text>\n";
        const double i = n > 1 ? (n - 1) * k / 4.0 : 0.0;
        o << "<text x=\"" << px(i) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
          << num(i, 0) << "</text>\n";
    }
    o << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
      << esc(x_label) << "</text>\n";
    o << "<text x=\"16\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 16 " << top + ph / 2
      << ")\" text-anchor=\"middle\" font-size=\"12\">" << esc(y_label) << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % std::size(kPalette)];
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < series[s].y.size(); ++i) {
            o << num(px(static_cast<double>(i))) << ',' << num(py(series[s].y[i])) << ' ';
        }
        o << "\"/>\n";
        const double ly = top + 16 + 18.0 * s;
        o << "<line x1=\"" << w - right + 12 << "\" y1=\"" << ly << "\" x2=\"" << w - right + 36 << "\" y2=\"" << ly
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        o << "<text x=\"" << w - right + 42 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">" << esc(series[s].name)
          << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

std::string heatmap_svg(const std::string& title, const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels, const std::vector<std::vector<double>>& values,
                        double lo, double hi) {
    const double cell = 64, left = 80, top = 50;
    const double w = left + cell * col_labels.size() + 20;
    const double h = top + cell * row_labels.size() + 40;
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << esc(title) << "</text>\n";
    for (std::size_t c = 0; c < col_labels.size(); ++c) {
        o << "<text x=\"" << left + cell * (c + 0.5) << "\" y=\"" << top - 6
          << "\" text-anchor=\"middle\" font-size=\"11\">" << esc(col_labels[c]) << "</text>\n";
    }
    for (std::size_t r = 0; r < row_labels.size(); ++r) {
        o << "<text x=\"" << left - 6 << "\" y=\"" << top + cell * (r + 0.5) + 4
          << "\" text-anchor=\"end\" font-size=\"11\">" << esc(row_labels[r]) << "</text>\n";
        for (std::size_t c = 0; c < col_labels.size(); ++c) {
            const double v = r < values.size() && c < values[r].size() ? values[r][c] : std::nan("");
            const double x = left + cell * c, y = top + cell * r;
            const std::string fill = std::isnan(v) ? "#eeeeee" : ramp(hi > lo ? (v - lo) / (hi - lo) : 0.0);
            o << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
              << "\" fill=\"" << fill << "\" stroke=\"white\"/>\n";
            if (!std::isnan(v)) {
                o << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
                  << "\" text-anchor=\"middle\" font-size=\"11\">" << num(v, 0) << "</text>\n";
            }
        }
    }
    o << "</svg>\n";
    return o.str();
}

}  // namespace rglight::plots

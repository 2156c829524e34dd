#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ballseg {

// Minimal SVG line-plot writer. CSV files are the canonical outputs; these
// plots exist so runs can be eyeballed without extra tooling.
struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

struct PlotOptions {
    std::string title, x_label, y_label;
    std::string note;  // free-form annotation under the title
    int width = 640, height = 440;
};

inline void write_line_plot_svg(const std::filesystem::path& path,
                                const std::vector<PlotSeries>& series, const PlotOptions& opt) {
    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};
    double min_x = 0, max_x = 1, min_y = 0, max_y = 1;
    bool first = true;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (first) {
                min_x = max_x = x;
                min_y = max_y = y;
                first = false;
            }
            min_x = std::min(min_x, x);
            max_x = std::max(max_x, x);
            min_y = std::min(min_y, y);
            max_y = std::max(max_y, y);
        }
    if (max_x == min_x) max_x = min_x + 1;
    if (max_y == min_y) max_y = min_y + 1;

    const double ml = 64, mr = 16, mt = 52, mb = 48;
    const double pw = opt.width - ml - mr, ph = opt.height - mt - mb;
    auto px = [&](double x) { return ml + (x - min_x) / (max_x - min_x) * pw; };
    auto py = [&](double y) { return mt + ph - (y - min_y) / (max_y - min_y) * ph; };

    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_line_plot_svg: cannot write " + path.string());
    os << std::fixed << std::setprecision(2);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\""
       << opt.height << "\" viewBox=\"0 0 " << opt.width << " " << opt.height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << opt.width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
          "font-family=\"sans-serif\" font-size=\"14\">" << opt.title << "</text>\n";
    if (!opt.note.empty())
        os << "<text x=\"" << opt.width / 2 << "\" y=\"36\" text-anchor=\"middle\" "
              "font-family=\"sans-serif\" font-size=\"10\" fill=\"#555\">" << opt.note << "</text>\n";

    // axes and ticks
    os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double fx = min_x + (max_x - min_x) * i / 5.0;
        const double fy = min_y + (max_y - min_y) * i / 5.0;
        os << "<line x1=\"" << px(fx) << "\" y1=\"" << mt + ph << "\" x2=\"" << px(fx) << "\" y2=\""
           << mt + ph + 4 << "\" stroke=\"#333\"/>\n";
        os << "<text x=\"" << px(fx) << "\" y=\"" << mt + ph + 16
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
           << std::setprecision(3) << fx << std::setprecision(2) << "</text>\n";
        os << "<line x1=\"" << ml - 4 << "\" y1=\"" << py(fy) << "\" x2=\"" << ml << "\" y2=\""
           << py(fy) << "\" stroke=\"#333\"/>\n";
        os << "<text x=\"" << ml - 8 << "\" y=\"" << py(fy) + 3
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
           << std::setprecision(3) << fy << std::setprecision(2) << "</text>\n";
    }
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << opt.height - 10
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << opt.x_label
       << "</text>\n";
    os << "<text x=\"14\" y=\"" << mt + ph / 2
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 "
       << mt + ph / 2 << ")\">" << opt.y_label << "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        if (series[s].points.empty()) continue;
        const char* color = kColors[s % (sizeof(kColors) / sizeof(kColors[0]))];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : series[s].points) os << px(x) << "," << py(y) << " ";
        os << "\"/>\n";
        const double ly = mt + 14 + 14 * static_cast<double>(s);
        os << "<line x1=\"" << ml + pw - 150 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw - 130
           << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << ml + pw - 126 << "\" y=\"" << ly + 3
           << "\" font-family=\"sans-serif\" font-size=\"10\">" << series[s].label << "</text>\n";
    }
    os << "</svg>\n";
}

}  // namespace ballseg

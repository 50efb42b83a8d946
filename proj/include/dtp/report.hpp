#ifndef DTP_REPORT_HPP
#define DTP_REPORT_HPP

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "dtp/error.hpp"
#include "dtp/evalkit.hpp"

namespace dtp {

struct ChartSeries {
    std::string label;
    std::vector<double> y;
};

/// Minimal SVG line chart: axes, per-series polylines, legend. The CSV
/// tables are the machine contract; these images are for eyeballing curves.
inline void write_svg_chart(const std::string& path, const std::string& title,
                            const std::vector<double>& x, const std::vector<ChartSeries>& series,
                            double y_min = 0.0, double y_max = 1.0) {
    if (x.empty() || series.empty()) throw ContractError("svg chart needs data");
    const double width = 640, height = 420;
    const double ml = 60, mr = 150, mt = 40, mb = 45;
    const double pw = width - ml - mr, ph = height - mt - mb;
    const double x_min = x.front(), x_max = std::max(x.back(), x.front() + 1e-9);
    auto px = [&](double v) { return ml + (v - x_min) / (x_max - x_min) * pw; };
    auto py = [&](double v) { return mt + (1.0 - (v - y_min) / (y_max - y_min)) * ph; };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b"};

    std::ofstream out(path);
    if (!out) throw IoError("cannot write chart: " + path);
    char buf[512];
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.0f\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" "
                  "text-anchor=\"middle\">%s</text>\n",
                  ml + pw / 2, title.c_str());
    out << buf;
    // axes
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                  ml, mt + ph, ml + pw, mt + ph);
    out << buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                  ml, mt, ml, mt + ph);
    out << buf;
    // y ticks
    for (int k = 0; k <= 5; ++k) {
        const double v = y_min + (y_max - y_min) * k / 5.0;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" "
                      "text-anchor=\"end\">%.2f</text>\n",
                      ml - 6, py(v) + 4, v);
        out << buf;
        std::snprintf(buf, sizeof(buf),
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n",
                      ml, py(v), ml + pw, py(v));
        out << buf;
    }
    // x ticks at data points
    for (double v : x) {
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" "
                      "text-anchor=\"middle\">%g</text>\n",
                      px(v), mt + ph + 18, v);
        out << buf;
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = colors[s % 6];
        std::string points;
        for (std::size_t i = 0; i < x.size() && i < series[s].y.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", px(x[i]), py(series[s].y[i]));
            points += buf;
        }
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\""
            << points << "\"/>\n";
        for (std::size_t i = 0; i < x.size() && i < series[s].y.size(); ++i) {
            std::snprintf(buf, sizeof(buf),
                          "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\" fill=\"%s\"/>\n", px(x[i]),
                          py(series[s].y[i]), color);
            out << buf;
        }
        std::snprintf(buf, sizeof(buf),
                      "<rect x=\"%.1f\" y=\"%.1f\" width=\"12\" height=\"12\" fill=\"%s\"/>\n",
                      ml + pw + 12, mt + 18.0 * s, color);
        out << buf;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" "
                      "font-size=\"12\">%s</text>\n",
                      ml + pw + 28, mt + 18.0 * s + 10, series[s].label.c_str());
        out << buf;
    }
    out << "</svg>\n";
}

/// Plain-text summary table for the final stage: one row per domain plus the
/// seen / unseen averages, percentages at one decimal.
inline std::string final_summary_table(const StageReport& report) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-10s %-8s %8s %8s\n", "domain", "split", "mAP", "rank1");
    out += buf;
    for (const auto& d : report.domains) {
        std::snprintf(buf, sizeof(buf), "%-10d %-8s %8.1f %8.1f\n", d.domain_id,
                      d.seen ? "seen" : "unseen", round1(d.map * 100.0), round1(d.rank1 * 100.0));
        out += buf;
    }
    auto [sm, sr] = report.seen_average();
    std::snprintf(buf, sizeof(buf), "%-10s %-8s %8.1f %8.1f\n", "seen-avg", "", round1(sm * 100.0),
                  round1(sr * 100.0));
    out += buf;
    bool any_unseen = false;
    for (const auto& d : report.domains) any_unseen |= !d.seen;
    if (any_unseen) {
        auto [um, ur] = report.unseen_average();
        std::snprintf(buf, sizeof(buf), "%-10s %-8s %8.1f %8.1f\n", "unseen-avg", "",
                      round1(um * 100.0), round1(ur * 100.0));
        out += buf;
    }
    return out;
}

/// Same summary as comma-separated values.
inline std::string final_summary_csv(const StageReport& report) {
    std::string out = "domain,split,map,rank1\n";
    char buf[160];
    for (const auto& d : report.domains) {
        std::snprintf(buf, sizeof(buf), "%d,%s,%.17g,%.17g\n", d.domain_id,
                      d.seen ? "seen" : "unseen", d.map, d.rank1);
        out += buf;
    }
    auto [sm, sr] = report.seen_average();
    std::snprintf(buf, sizeof(buf), "seen-avg,,%.17g,%.17g\n", sm, sr);
    out += buf;
    bool any_unseen = false;
    for (const auto& d : report.domains) any_unseen |= !d.seen;
    if (any_unseen) {
        auto [um, ur] = report.unseen_average();
        std::snprintf(buf, sizeof(buf), "unseen-avg,,%.17g,%.17g\n", um, ur);
        out += buf;
    }
    return out;
}

}  // namespace dtp

#endif  // DTP_REPORT_HPP

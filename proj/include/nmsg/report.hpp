#ifndef NMSG_REPORT_HPP
#define NMSG_REPORT_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nmsg/training.hpp"

namespace nmsg {

inline constexpr const char* metrics_header =
    "iter,task_loss,sg_loss_ic,sg_loss_oc,sg_loss_wc,gnorm_true_ic,gnorm_true_oc,gnorm_true_wc,"
    "gnorm_sg_ic,gnorm_sg_oc,gnorm_sg_wc,metric,rare_flag";

inline std::string fmt_num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

/// CSV text for `records`. With `phase_column` a trailing `phase` column is appended.
inline std::string metrics_csv(const std::vector<MetricsRecord>& records, bool phase_column = false)
{
    std::string out = metrics_header;
    if (phase_column) out += ",phase";
    out += '\n';
    for (const auto& r : records) {
        out += std::to_string(r.iter);
        out += ',' + fmt_num(r.task_loss);
        for (double v : r.sg_loss) out += ',' + fmt_num(v);
        for (double v : r.gnorm_true) out += ',' + fmt_num(v);
        for (double v : r.gnorm_sg) out += ',' + fmt_num(v);
        out += ',' + fmt_num(r.metric);
        out += r.rare ? ",1" : ",0";
        if (phase_column) out += ',' + r.phase;
        out += '\n';
    }
    return out;
}

inline void write_text(const std::string& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write '" + path + "'");
    f << text;
}

struct Series {
    std::string name;
    std::string color;
    std::vector<double> x, y;
};

struct Panel {
    std::string title;
    std::string y_label;
    std::vector<Series> series;
    std::vector<double> markers; // x positions drawn as red ticks on the x axis
};

namespace detail {

inline std::string xml_escape(const std::string& s)
{
    std::string o;
    for (char c : s) {
        switch (c) {
        case '&': o += "&amp;"; break;
        case '<': o += "&lt;"; break;
        case '>': o += "&gt;"; break;
        case '"': o += "&quot;"; break;
        default: o += c;
        }
    }
    return o;
}

inline std::string tick_label(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

} // namespace detail

/// Self-contained SVG with one line chart per panel, stacked vertically.
inline std::string svg_chart(const std::string& title, const std::vector<Panel>& panels)
{
    const double W = 720, PH = 260, top = 40, left = 70, right = 20, pad = 50;
    const double H = top + PH * static_cast<double>(std::max<std::size_t>(panels.size(), 1));
    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' ' << H
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << detail::xml_escape(title) << "</text>\n";
    for (std::size_t pi = 0; pi < panels.size(); ++pi) {
        const Panel& p = panels[pi];
        const double y0 = top + PH * static_cast<double>(pi);
        const double px0 = left, px1 = W - right, py0 = y0 + 20, py1 = y0 + PH - pad;
        double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
        for (const auto& s : p.series)
            for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
                if (!std::isfinite(s.y[i])) continue;
                xmin = std::min(xmin, s.x[i]);
                xmax = std::max(xmax, s.x[i]);
                ymin = std::min(ymin, s.y[i]);
                ymax = std::max(ymax, s.y[i]);
            }
        if (xmin > xmax) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
        if (xmax == xmin) xmax = xmin + 1;
        if (ymax == ymin) ymax = ymin + 1;
        auto sx = [&](double v) { return px0 + (v - xmin) / (xmax - xmin) * (px1 - px0); };
        auto sy = [&](double v) { return py1 - (v - ymin) / (ymax - ymin) * (py1 - py0); };

        o << "<g>\n<text x=\"" << (px0 + px1) / 2 << "\" y=\"" << y0 + 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
          << detail::xml_escape(p.title) << "</text>\n";
        o << "<line x1=\"" << px0 << "\" y1=\"" << py1 << "\" x2=\"" << px1 << "\" y2=\"" << py1 << "\" stroke=\"black\"/>\n";
        o << "<line x1=\"" << px0 << "\" y1=\"" << py0 << "\" x2=\"" << px0 << "\" y2=\"" << py1 << "\" stroke=\"black\"/>\n";
        for (int k = 0; k <= 4; ++k) {
            const double xv = xmin + (xmax - xmin) * k / 4.0, yv = ymin + (ymax - ymin) * k / 4.0;
            o << "<line x1=\"" << sx(xv) << "\" y1=\"" << py1 << "\" x2=\"" << sx(xv) << "\" y2=\"" << py1 + 4 << "\" stroke=\"black\"/>";
            o << "<text x=\"" << sx(xv) << "\" y=\"" << py1 + 16 << "\" text-anchor=\"middle\">" << detail::tick_label(xv) << "</text>\n";
            o << "<line x1=\"" << px0 - 4 << "\" y1=\"" << sy(yv) << "\" x2=\"" << px0 << "\" y2=\"" << sy(yv) << "\" stroke=\"black\"/>";
            o << "<text x=\"" << px0 - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << detail::tick_label(yv) << "</text>\n";
        }
        o << "<text x=\"" << (px0 + px1) / 2 << "\" y=\"" << py1 + 32 << "\" text-anchor=\"middle\">iteration</text>\n";
        o << "<text x=\"14\" y=\"" << (py0 + py1) / 2 << "\" transform=\"rotate(-90 14 " << (py0 + py1) / 2
          << ")\" text-anchor=\"middle\">" << detail::xml_escape(p.y_label) << "</text>\n";
        for (double m : p.markers)
            if (m >= xmin && m <= xmax)
                o << "<line x1=\"" << sx(m) << "\" y1=\"" << py1 << "\" x2=\"" << sx(m) << "\" y2=\"" << py1 - 6
                  << "\" stroke=\"red\"/>\n";
        double ly = py0 + 4;
        for (const auto& s : p.series) {
            o << "<polyline fill=\"none\" stroke=\"" << detail::xml_escape(s.color) << "\" stroke-width=\"1\" points=\"";
            for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
                if (std::isfinite(s.y[i])) o << sx(s.x[i]) << ',' << sy(s.y[i]) << ' ';
            o << "\"/>\n";
            o << "<text x=\"" << px1 - 4 << "\" y=\"" << ly + 8 << "\" text-anchor=\"end\" fill=\"" << detail::xml_escape(s.color)
              << "\">" << detail::xml_escape(s.name) << "</text>\n";
            ly += 14;
        }
        o << "</g>\n";
    }
    o << "</svg>\n";
    return o.str();
}

} // namespace nmsg

#endif

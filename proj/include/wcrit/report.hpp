#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wcrit/error.hpp"
#include "wcrit/kv.hpp"
#include "wcrit/trainers.hpp"

namespace wcrit {

inline constexpr const char* kMetricsHeader = "step,mean_w2,iqm_neg_w2,sup_w2,loss";

inline void write_metrics_csv(const MetricsTrace& trace, std::ostream& os) {
  os << kMetricsHeader << '\n';
  for (const auto& r : trace.records)
    os << r.step << ',' << kv::format_double(r.mean_w2) << ',' << kv::format_double(r.iqm_neg_w2) << ','
       << kv::format_double(r.sup_w2) << ',' << kv::format_double(r.loss) << '\n';
}

inline nlohmann::json record_json(const MetricsRecord& r) {
  auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
  return {{"event", "eval"}, {"step", r.step},         {"mean_w2", num(r.mean_w2)},
          {"iqm_neg_w2", num(r.iqm_neg_w2)}, {"sup_w2", num(r.sup_w2)}, {"loss", num(r.loss)}};
}

/// One JSON object per evaluation, then a closing status record.
inline void write_events_jsonl(const MetricsTrace& trace, std::ostream& os, const nlohmann::json& extra = {}) {
  for (const auto& r : trace.records) os << record_json(r).dump() << '\n';
  nlohmann::json end{{"event", "end"}, {"aborted", trace.aborted}};
  if (trace.aborted) end["diagnostic"] = trace.diagnostic;
  if (extra.is_object())
    for (const auto& [k, v] : extra.items()) end[k] = v;
  os << end.dump() << '\n';
}

/// Static line chart of (x, y) points.
inline std::string svg_line_plot(const std::vector<double>& xs, const std::vector<double>& ys, const std::string& title,
                                 const std::string& x_label, const std::string& y_label) {
  const double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < std::min(xs.size(), ys.size()); ++i)
    if (std::isfinite(xs[i]) && std::isfinite(ys[i])) pts.emplace_back(xs[i], ys[i]);
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!pts.empty()) {
    x0 = x1 = pts[0].first;
    y0 = y1 = pts[0].second;
    for (auto [x, y] : pts) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  auto f = [](double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
  };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << L << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << f(x0) << "</text>\n";
  os << "<text x=\"" << W - R << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << f(x1) << "</text>\n";
  os << "<text x=\"" << L - 6 << "\" y=\"" << H - B << "\" text-anchor=\"end\">" << f(y0) << "</text>\n";
  os << "<text x=\"" << L - 6 << "\" y=\"" << T + 4 << "\" text-anchor=\"end\">" << f(y1) << "</text>\n";
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (T + H - B) / 2 << ")\">" << y_label << "</text>\n";
  if (!pts.empty()) {
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) os << (i ? " " : "") << f(px(pts[i].first)) << ',' << f(py(pts[i].second));
    os << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline std::string metrics_svg(const MetricsTrace& trace) {
  std::vector<double> xs, ys;
  for (const auto& r : trace.records) {
    xs.push_back(static_cast<double>(r.step));
    ys.push_back(r.mean_w2);
  }
  return svg_line_plot(xs, ys, "Mean W2 to oracle", "gradient step", "mean W2");
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + path + "'");
  os << content;
  if (!os) throw ConfigError("failed writing '" + path + "'");
}

}  // namespace wcrit

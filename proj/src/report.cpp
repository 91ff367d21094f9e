#include "ngpt/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "ngpt/errors.hpp"

namespace ngpt {

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double m = 0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

}  // namespace

LerpReport lerp_magnitude_report(const std::vector<const NgptWeights*>& models) {
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_depth;
  for (const auto* w : models) {
    if (!w) throw ConfigError("lerp report: missing model");
    auto& [a, m] = by_depth[w->config.n_layers];
    for (const auto& lp : w->layers) {
      const auto ea = w->effective(lp.alpha_a), em = w->effective(lp.alpha_m);
      a.insert(a.end(), ea.values().begin(), ea.values().end());
      m.insert(m.end(), em.values().begin(), em.values().end());
    }
  }
  if (by_depth.size() < 3) {
    throw ConfigError("lerp report needs at least 3 distinct depths, got " + std::to_string(by_depth.size()));
  }
  LerpReport r;
  std::vector<std::pair<double, double>> pa, pm;
  for (const auto& [depth, am] : by_depth) {
    LerpRow row;
    row.depth = depth;
    std::tie(row.mean_alpha_a, row.std_alpha_a) = mean_std(am.first);
    std::tie(row.mean_alpha_m, row.std_alpha_m) = mean_std(am.second);
    r.rows.push_back(row);
    pa.emplace_back(depth, row.mean_alpha_a);
    pm.emplace_back(depth, row.mean_alpha_m);
  }
  r.fit_alpha_a = fit_power_law(pa);
  r.fit_alpha_m = fit_power_law(pm);
  return r;
}

LerpReport lerp_magnitude_report(const std::vector<std::filesystem::path>& checkpoints) {
  std::vector<NgptWeights> loaded;
  loaded.reserve(checkpoints.size());
  for (const auto& p : checkpoints) {
    if (!std::filesystem::exists(p)) throw IoError("missing checkpoint " + p.string());
    loaded.push_back(load_checkpoint(p).weights);
  }
  std::vector<const NgptWeights*> ptrs;
  for (const auto& w : loaded) ptrs.push_back(&w);
  return lerp_magnitude_report(ptrs);
}

std::string lerp_csv(const LerpReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << kLerpCsvHeader << '\n';
  for (const auto& row : r.rows) {
    os << row.depth << ',' << row.mean_alpha_a << ',' << row.std_alpha_a << ',' << row.mean_alpha_m << ','
       << row.std_alpha_m << '\n';
  }
  return os.str();
}

namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::string render_plot(const std::vector<PlotCurve>& curves, const std::string& title) {
  if (curves.empty()) throw ConfigError("plot needs at least one curve");
  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo, y_lo = x_lo, y_hi = -x_lo;
  for (const auto& c : curves) {
    for (const auto& [x, y] : c.points) {
      if (!(x > 0) || !std::isfinite(y)) continue;
      x_lo = std::min(x_lo, std::log2(x));
      x_hi = std::max(x_hi, std::log2(x));
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
    }
  }
  if (!std::isfinite(x_lo)) {
    x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
  }
  if (x_hi == x_lo) x_lo -= 0.5, x_hi += 0.5;
  if (y_hi == y_lo) y_lo -= 0.5, y_hi += 0.5;

  const double W = 640, H = 420, ml = 70, mr = 150, mt = 40, mb = 50;
  const double pw = W - ml - mr, ph = H - mt - mb;
  auto sx = [&](double lx) { return ml + (lx - x_lo) / (x_hi - x_lo) * pw; };
  auto sy = [&](double y) { return mt + (y_hi - y) / (y_hi - y_lo) * ph; };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\" data-x-min=\"" << short_num(std::exp2(x_lo)) << "\" data-x-max=\""
     << short_num(std::exp2(x_hi)) << "\" data-y-min=\"" << short_num(y_lo) << "\" data-y-max=\""
     << short_num(y_hi) << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
     << "</text>\n"
     << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";

  // Ticks at integer powers of two plus the range ends.
  for (double t = std::ceil(x_lo); t <= std::floor(x_hi); t += 1.0) {
    os << "<line x1=\"" << num(sx(t)) << "\" y1=\"" << mt + ph << "\" x2=\"" << num(sx(t)) << "\" y2=\""
       << mt + ph + 5 << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << num(sx(t)) << "\" y=\"" << mt + ph + 18 << "\" text-anchor=\"middle\" font-size=\"10\">2^"
       << static_cast<int>(t) << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double y = y_lo + (y_hi - y_lo) * k / 4.0;
    os << "<text x=\"" << ml - 6 << "\" y=\"" << num(sy(y) + 3) << "\" text-anchor=\"end\" font-size=\"10\">"
       << short_num(y) << "</text>\n";
  }
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">peak lr</text>\n"
     << "<text x=\"16\" y=\"" << mt + ph / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
     << mt + ph / 2 << ")\">final loss</text>\n";

  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    const char* color = kPalette[i % std::size(kPalette)];
    std::vector<std::pair<double, double>> pts;
    for (const auto& [x, y] : c.points) {
      if (x > 0 && std::isfinite(y)) pts.emplace_back(x, y);
    }
    std::sort(pts.begin(), pts.end());
    std::string label = xml_escape(c.label);
    if (!pts.empty()) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t k = 0; k < pts.size(); ++k) {
        os << (k ? " " : "") << num(sx(std::log2(pts[k].first))) << ',' << num(sy(pts[k].second));
      }
      os << "\"/>\n";
      auto best = *std::min_element(pts.begin(), pts.end(),
                                    [](const auto& a, const auto& b) { return a.second < b.second; });
      os << "<circle cx=\"" << num(sx(std::log2(best.first))) << "\" cy=\"" << num(sy(best.second))
         << "\" r=\"3.5\" fill=\"" << color << "\"/>\n";
      label += " (" + short_num(best.second) + ")";
    }
    const double ly = mt + 14 + 16 * static_cast<double>(i);
    os << "<line x1=\"" << ml + pw + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << ml + pw + 28 << "\" y2=\"" << ly - 4
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << ml + pw + 32 << "\" y=\"" << ly << "\" font-size=\"10\">" << label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void emit_plot(const std::vector<PlotCurve>& curves, const std::filesystem::path& path, const std::string& title) {
  const auto svg = render_plot(curves, title);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << svg;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace ngpt

#include "escape/harness/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "escape/errors.hpp"
#include "escape/harness/csv.hpp"

namespace escape {

namespace {

constexpr double kWidth = 720, kHeight = 440;
constexpr double kLeft = 80, kRight = 180, kTop = 40, kBottom = 60;

// Legend order is fixed: centralized, diffusion, consensus.
struct StrategyStyle {
  const char* name;
  const char* color;
};
constexpr StrategyStyle kStyles[] = {{"centralized", "#1b9e77"}, {"diffusion", "#d95f02"}, {"consensus", "#7570b3"}};
constexpr const char* kPalette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d",
                                    "#666666"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", std::abs(v) < 1e-300 ? 0.0 : v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

PlotKind parse_plot_kind(std::string_view s) {
  if (s == "er_curves") return PlotKind::er_curves;
  if (s == "landscape") return PlotKind::landscape;
  if (s == "escape") return PlotKind::escape;
  throw Error("unknown plot kind '" + std::string(s) + "'");
}

std::string render_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const Series& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 <= 0) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 <= 0) {
    const double pad = std::max(std::abs(y0) * 0.1, 0.5);
    y0 -= pad;
    y1 += pad;
  }
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << fmt(kLeft + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"15\">" << escape_xml(title) << "</text>\n";
  o << "<rect x=\"" << fmt(kLeft) << "\" y=\"" << fmt(kTop) << "\" width=\"" << fmt(pw) << "\" height=\"" << fmt(ph)
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<line x1=\"" << fmt(px(xv)) << "\" y1=\"" << fmt(kTop + ph) << "\" x2=\"" << fmt(px(xv)) << "\" y2=\""
      << fmt(kTop + ph + 5) << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << fmt(kTop + ph + 20)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << tick(xv) << "</text>\n";
    o << "<line x1=\"" << fmt(kLeft - 5) << "\" y1=\"" << fmt(py(yv)) << "\" x2=\"" << fmt(kLeft) << "\" y2=\""
      << fmt(py(yv)) << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << fmt(kLeft - 8) << "\" y=\"" << fmt(py(yv) + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << tick(yv) << "</text>\n";
  }
  o << "<text x=\"" << fmt(kLeft + pw / 2) << "\" y=\"" << fmt(kHeight - 15)
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << escape_xml(x_label) << "</text>\n";
  o << "<text transform=\"translate(18," << fmt(kTop + ph / 2)
    << ") rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << escape_xml(y_label)
    << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const Series& ser = series[s];
    if (!ser.x.empty()) {
      o << "<polyline fill=\"none\" stroke=\"" << ser.color << "\" stroke-width=\"1.5\""
        << (ser.dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"";
      for (std::size_t i = 0; i < ser.x.size(); ++i) {
        if (!std::isfinite(ser.x[i]) || !std::isfinite(ser.y[i])) continue;
        o << (i ? " " : "") << fmt(px(ser.x[i])) << ',' << fmt(py(ser.y[i]));
      }
      o << "\"/>\n";
    }
    const double ly = kTop + 14 + 18.0 * static_cast<double>(s), lx = kWidth - kRight + 12;
    o << "<line x1=\"" << fmt(lx) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(lx + 24) << "\" y2=\"" << fmt(ly)
      << "\" stroke=\"" << ser.color << "\" stroke-width=\"1.5\"" << (ser.dashed ? " stroke-dasharray=\"6,4\"" : "")
      << "/>\n";
    o << "<text x=\"" << fmt(lx + 30) << "\" y=\"" << fmt(ly + 4) << "\" font-family=\"sans-serif\" font-size=\"11\">"
      << escape_xml(ser.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

namespace {

std::vector<Series> er_series(const std::vector<std::filesystem::path>& inputs) {
  const CsvTable* trace = nullptr;
  const CsvTable* theory = nullptr;
  std::vector<CsvTable> tables;
  tables.reserve(inputs.size());
  for (const auto& f : inputs) tables.push_back(read_csv(f));
  for (const CsvTable& t : tables) {
    if (t.has("er_cen") || t.has("e_n"))
      theory = &t;
    else
      trace = &t;
  }
  std::vector<Series> out;
  if (trace) {
    const auto n = trace->numbers("n");
    const auto strategy = trace->strings("strategy");
    const auto er = trace->numbers("er_empirical");
    for (const StrategyStyle& st : kStyles) {
      Series s{std::string(st.name) + " (empirical)", st.color, false, {}, {}};
      for (std::size_t i = 0; i < n.size(); ++i)
        if (strategy[i] == st.name) {
          s.x.push_back(n[i]);
          s.y.push_back(er[i]);
        }
      out.push_back(std::move(s));
    }
  }
  if (theory) {
    const auto n = theory->numbers("n");
    const char* columns[] = {"er_cen", "er_dif", "er_con"};
    for (std::size_t k = 0; k < 3; ++k) {
      const auto er = theory->numbers(columns[k]);
      Series s{std::string(kStyles[k].name) + " (theory)", kStyles[k].color, true, {}, {}};
      // Theory row n is the state after n + 1 updates.
      for (std::size_t i = 0; i < n.size(); ++i) {
        s.x.push_back(n[i] + 1.0);
        s.y.push_back(er[i]);
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<Series> landscape_series(const CsvTable& t) {
  const auto point = t.strings("point");
  const auto dir = t.numbers("direction");
  const auto alpha = t.numbers("alpha");
  const auto risk = t.numbers("risk");
  std::vector<std::string> points;
  std::vector<Series> out;
  std::map<std::pair<std::string, long>, std::size_t> index;
  for (std::size_t i = 0; i < point.size(); ++i) {
    if (std::find(points.begin(), points.end(), point[i]) == points.end()) points.push_back(point[i]);
    const auto key = std::make_pair(point[i], static_cast<long>(dir[i]));
    auto it = index.find(key);
    if (it == index.end()) {
      const std::size_t p = std::find(points.begin(), points.end(), point[i]) - points.begin();
      it = index.emplace(key, out.size()).first;
      out.push_back({point[i] + " dir " + std::to_string(key.second), kPalette[p % 8], p % 2 == 1, {}, {}});
    }
    out[it->second].x.push_back(alpha[i]);
    out[it->second].y.push_back(risk[i]);
  }
  return out;
}

std::vector<Series> escape_series(const CsvTable& t) {
  const auto n = t.numbers("n");
  const auto strategy = t.strings("strategy");
  const auto frac = t.numbers("escaped_fraction");
  t.column("trials");
  std::vector<Series> out;
  for (const StrategyStyle& st : kStyles) {
    Series s{st.name, st.color, false, {}, {}};
    for (std::size_t i = 0; i < n.size(); ++i)
      if (strategy[i] == st.name) {
        s.x.push_back(n[i]);
        s.y.push_back(frac[i]);
      }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::string plot_svg(PlotKind kind, const std::vector<std::filesystem::path>& inputs) {
  if (inputs.empty()) throw Error("plot needs at least one input file");
  switch (kind) {
    case PlotKind::er_curves: return render_svg("Excess risk", "iteration n", "ER_n", er_series(inputs));
    case PlotKind::landscape:
      return render_svg("Risk along random directions", "alpha", "J(w + alpha v)", landscape_series(read_csv(inputs[0])));
    case PlotKind::escape: break;
  }
  return render_svg("Escaped fraction", "iteration n", "escaped fraction", escape_series(read_csv(inputs[0])));
}

}  // namespace escape

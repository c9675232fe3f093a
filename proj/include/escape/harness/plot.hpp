#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace escape {

enum class PlotKind { er_curves, landscape, escape };

PlotKind parse_plot_kind(std::string_view s);

struct Series {
  std::string label;
  std::string color;
  bool dashed = false;
  std::vector<double> x;
  std::vector<double> y;
};

/// Line chart with axes, ticks and a legend in series order. No data gives
/// empty axes on [0, 1] x [0, 1].
std::string render_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series);

/// er_curves takes trace.csv and/or theory.csv (recognised by their columns)
/// and overlays empirical and predicted ER per strategy; landscape takes
/// landscape.csv; escape takes escape.csv. Throws MissingColumn.
std::string plot_svg(PlotKind kind, const std::vector<std::filesystem::path>& inputs);

}  // namespace escape

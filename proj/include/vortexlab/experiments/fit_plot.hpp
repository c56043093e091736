#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "vortexlab/error.hpp"
#include "vortexlab/experiments/csv.hpp"
#include "vortexlab/experiments/svg.hpp"
#include "vortexlab/rate_fit.hpp"

namespace vortexlab::experiments {

enum class FitModel { exponential, power_law };

inline std::string_view to_string(FitModel m) {
  return m == FitModel::exponential ? "exponential" : "powerlaw";
}

struct FitPlotOptions {
  std::string x_column;     // default "t" for exponential fits, the first column otherwise
  std::string summary_path;  // default <csv dir>/fits.csv
  std::string svg_path;      // default <csv dir>/<csv stem>_<column>_fit.svg
  std::size_t min_rows = 10;
};

struct FitPlotResult {
  RateFit fit;
  std::string svg_path;
  std::string summary_path;
};

/// Fits one CSV column against another (exponential in x, or power law),
/// appends the fit to a summary CSV and draws data plus fitted curve.
inline FitPlotResult fit_and_plot(const std::string& csv_path, const std::string& column,
                                  FitModel model, const FitPlotOptions& opts = {}) {
  namespace fs = std::filesystem;
  const auto table = read_csv(csv_path);
  const std::string xcol =
      !opts.x_column.empty() ? opts.x_column
      : model == FitModel::exponential ? std::string("t")
                                       : (table.header.empty() ? std::string() : table.header[0]);
  if (!table.has_column(column))
    fail(ErrorCode::ColumnMissing, csv_path + " has no column '" + column + "'");
  if (!table.has_column(xcol))
    fail(ErrorCode::ColumnMissing, csv_path + " has no column '" + xcol + "'");
  if (table.rows.size() < opts.min_rows)
    fail(ErrorCode::DegenerateFit, csv_path + " has " + std::to_string(table.rows.size()) +
                                       " rows, need " + std::to_string(opts.min_rows));
  const auto x = table.numeric_column(xcol);
  const auto y = table.numeric_column(column);

  FitPlotResult res;
  res.fit = model == FitModel::exponential ? fit_exponential(x, y, opts.min_rows)
                                           : fit_power_law(x, y, opts.min_rows);

  const fs::path src(csv_path);
  const fs::path dir = src.parent_path();
  res.summary_path = !opts.summary_path.empty() ? opts.summary_path : (dir / "fits.csv").string();
  res.svg_path = !opts.svg_path.empty()
                     ? opts.svg_path
                     : (dir / (src.stem().string() + "_" + column + "_fit.svg")).string();

  const bool fresh = !fs::exists(res.summary_path);
  if (fresh) {
    CsvWriter w(res.summary_path, schemas::fits());
    w.close();
  }
  {
    std::ofstream out(res.summary_path, std::ios::binary | std::ios::app);
    if (!out) fail(ErrorCode::IoError, "cannot append to " + res.summary_path);
    out << src.filename().string() << "," << xcol << "," << column << "," << to_string(model) << ","
        << format_double(res.fit.rate) << "," << format_double(res.fit.intercept) << ","
        << format_double(res.fit.r_squared) << "," << res.fit.samples << "\n";
  }

  double x0 = x.front(), x1 = x.front();
  for (double v : x) {
    x0 = std::min(x0, v);
    x1 = std::max(x1, v);
  }
  PlotSpec p;
  p.title = src.filename().string() + ": " + column;
  p.x_label = xcol;
  p.y_label = column;
  p.log_y = true;
  p.log_x = model == FitModel::power_law;
  p.series.push_back({"data", x, y, true, "#1f77b4"});
  p.series.push_back(fitted_curve("fit", x0, x1, res.fit.rate, res.fit.intercept,
                                  model == FitModel::power_law));
  p.notes.push_back(std::string(model == FitModel::exponential ? "rate = " : "slope = ") +
                    format_double(res.fit.rate) + ", R^2 = " + format_double(res.fit.r_squared));
  write_svg(res.svg_path, p);
  return res;
}

}  // namespace vortexlab::experiments

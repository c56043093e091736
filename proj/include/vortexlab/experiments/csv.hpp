#pragma once

// CSV files with a versioned schema line:
//
//   #schema=intermediate/1
//   t,omega_l1,...
//   0,1.25,...
//
// Numbers are written as shortest round-trip decimals.

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vortexlab/error.hpp"
#include "vortexlab/experiments/format.hpp"

namespace vortexlab::experiments {

struct CsvSchema {
  std::string kind;
  int version = 1;
  std::vector<std::string> columns;

  std::string tag() const { return kind + "/" + std::to_string(version); }
};

namespace schemas {

inline const CsvSchema& intermediate() {
  static const CsvSchema s{"intermediate", 1,
                           {"t", "omega_l1", "omega_l2", "omega_linf", "det_j", "max_a2", "max_a3",
                            "probe"}};
  return s;
}

inline const CsvSchema& smallscale() {
  static const CsvSchema s{"smallscale", 1,
                           {"t", "max_abs_omega1", "max_abs_omega2", "min_abs_omega2",
                            "max_abs_omega3", "max_radius_over_delta"}};
  return s;
}

inline const CsvSchema& trajectories() {
  static const CsvSchema s{"smallscale_seeds", 1,
                           {"seed", "t", "A1", "A2", "A3", "omega1", "omega2", "omega3"}};
  return s;
}

inline const CsvSchema& principles() {
  static const CsvSchema s{"principles", 1,
                           {"epsilon", "t", "g1_inf", "g1_hs", "g2", "energy", "base_hs",
                            "perturbed_hs", "linear_l2", "perturbation_l2"}};
  return s;
}

inline const CsvSchema& rates() {
  static const CsvSchema s{"rates", 1,
                           {"M", "horizon", "probe_rate", "probe_rate_over_M", "probe_r2",
                            "max_a2_rate", "omega2_rate", "omega2_rate_over_M"}};
  return s;
}

inline const CsvSchema& summary() {
  static const CsvSchema s{"summary", 1, {"run", "metric", "value", "bound", "pass"}};
  return s;
}

inline const CsvSchema& fits() {
  static const CsvSchema s{"fits", 1,
                           {"source", "x", "column", "model", "rate", "intercept", "r_squared",
                            "samples"}};
  return s;
}

}  // namespace schemas

/// One CSV cell: a number or a bare token.
struct Cell {
  std::string text;
  Cell(double v) : text(format_double(v)) {}
  Cell(int v) : text(std::to_string(v)) {}
  Cell(std::size_t v) : text(std::to_string(v)) {}
  Cell(bool v) : text(v ? "true" : "false") {}
  Cell(const char* s) : text(s) {}
  Cell(std::string s) : text(std::move(s)) {}
};

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const CsvSchema& schema)
      : path_(path), columns_(schema.columns.size()) {
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) fail(ErrorCode::IoError, "cannot write " + path);
    out_ << "#schema=" << schema.tag() << "\n";
    for (std::size_t i = 0; i < schema.columns.size(); ++i)
      out_ << (i ? "," : "") << schema.columns[i];
    out_ << "\n";
  }

  void row(const std::vector<Cell>& cells) {
    require(cells.size() == columns_, ErrorCode::InvalidArgument,
            "row has " + std::to_string(cells.size()) + " cells, schema has " +
                std::to_string(columns_));
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i].text;
    out_ << "\n";
  }

  void close() {
    out_.close();
    if (out_.fail()) fail(ErrorCode::IoError, "error writing " + path_);
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::size_t columns_;
  std::ofstream out_;
};

struct CsvTable {
  std::string schema;  // "kind/version", empty if the file has none
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  bool has_column(std::string_view name) const {
    return std::find(header.begin(), header.end(), name) != header.end();
  }

  std::size_t column_index(std::string_view name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(ErrorCode::ColumnMissing, "no column '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - header.begin());
  }

  std::vector<double> numeric_column(std::string_view name) const {
    const std::size_t c = column_index(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      double v;
      if (c >= rows[r].size() || !parse_double(rows[r][c], v))
        fail(ErrorCode::InvalidArgument, "column '" + std::string(name) + "' row " +
                                             std::to_string(r + 1) + " is not a number");
      out.push_back(v);
    }
    return out;
  }
};

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path);
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("#schema=", 0) == 0) t.schema = line.substr(8);
      continue;
    }
    if (!have_header) {
      t.header = split_csv_line(line);
      have_header = true;
    } else {
      t.rows.push_back(split_csv_line(line));
    }
  }
  if (!have_header) fail(ErrorCode::InvalidArgument, path + " has no header row");
  return t;
}

}  // namespace vortexlab::experiments

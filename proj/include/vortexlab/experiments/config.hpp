#pragma once

// Experiment configuration as flat "section.key = value" text.
//
//   # comment
//   kind = smallscale
//   sweep.M = 2, 4, 8
//   output.dir = out/smallscale
//
// Lists are comma separated. Every key has a default; unknown or repeated
// keys are errors. serialize() writes every key in a fixed order with
// shortest round-trip numbers, so parse(serialize(c)) == c.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vortexlab/error.hpp"
#include "vortexlab/experiments/format.hpp"
#include "vortexlab/intermediate_flow.hpp"

namespace vortexlab::experiments {

enum class ExperimentKind { intermediate, smallscale, principles, theorem_rates };
enum class HorizonRule { strain_time, fixed };  // T_M = log(1 + M) / M, or horizon.value
enum class DtRule { automatic, fixed };

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::intermediate;
  std::string output_dir = "out";
  std::uint64_t seed = 1;
  int threads = 0;
  bool deterministic_sum = false;

  std::vector<double> M_values{2.0, 4.0, 8.0};
  std::vector<double> epsilon_values{1e-2, 5e-3, 2.5e-3};
  std::vector<int> resolutions{32};           // spectral N per side
  std::vector<double> spacings{1.0 / 64};     // particle lattice spacing h

  HorizonRule horizon_rule = HorizonRule::strain_time;
  double horizon_value = 1.0;
  DtRule dt_rule = DtRule::automatic;
  double dt_value = 0.01;

  Backend backend = Backend::direct;
  SymmetryMode symmetry = SymmetryMode::mirror_reduced;
  double domain_half_length = 100.0;
  double grid_domain_half_length = 4.0;
  int grid_resolution = 512;
  int image_radius = 32;
  double fd_step = 1e-3;
  double cfl = 0.5;

  double probe_c = 0.1;
  double probe_gamma = 1.0;
  int probe_samples = 64;

  int smallscale_seeds = 1000;
  double ell_ratio = 1.0;  // ell = ratio * delta / (M + 1)
  double smallscale_epsilon = 1e-3;
  int substeps = 4;
  int trajectory_seeds = 16;  // seeds written to the per-seed trajectory file; -1 for all

  double sobolev_s = 2.6;
  double principles_horizon = 0.5;
  double principles_dt = 0.005;

  bool operator==(const ExperimentConfig&) const = default;

  /// Run length for strain rate M under the horizon rule.
  double horizon(double M) const {
    return horizon_rule == HorizonRule::fixed ? horizon_value : StrainParams{M}.T_M();
  }
};

inline std::string_view to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::intermediate: return "intermediate";
    case ExperimentKind::smallscale: return "smallscale";
    case ExperimentKind::principles: return "principles";
    case ExperimentKind::theorem_rates: return "theorem-rates";
  }
  return "intermediate";
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// A config key: how to read it into and write it out of a config. read()
// returns an empty string on success and a reason otherwise.
struct FieldCodec {
  std::string key;
  std::function<std::string(ExperimentConfig&, std::string_view)> read;
  std::function<std::string(const ExperimentConfig&)> write;
};

template <class T>
using Member = T ExperimentConfig::*;

inline FieldCodec real_field(std::string key, Member<double> m, std::function<bool(double)> ok,
                             std::string rule) {
  return {key,
          [m, ok, rule](ExperimentConfig& c, std::string_view v) -> std::string {
            double x;
            if (!parse_double(v, x) || !std::isfinite(x)) return "expected a finite number";
            if (!ok(x)) return "must be " + rule;
            c.*m = x;
            return {};
          },
          [m](const ExperimentConfig& c) { return format_double(c.*m); }};
}

template <class Int>
FieldCodec int_field(std::string key, Member<Int> m, std::function<bool(Int)> ok, std::string rule) {
  return {key,
          [m, ok, rule](ExperimentConfig& c, std::string_view v) -> std::string {
            Int x;
            if (!parse_integer(v, x)) return "expected an integer";
            if (!ok(x)) return "must be " + rule;
            c.*m = x;
            return {};
          },
          [m](const ExperimentConfig& c) { return std::to_string(c.*m); }};
}

inline FieldCodec real_list_field(std::string key, Member<std::vector<double>> m,
                                  std::function<bool(double)> ok, std::string rule) {
  return {key,
          [m, ok, rule](ExperimentConfig& c, std::string_view v) -> std::string {
            const auto items = split_list(v);
            if (items.empty()) return "list must not be empty";
            std::vector<double> xs;
            for (const auto& it : items) {
              double x;
              if (!parse_double(it, x) || !std::isfinite(x)) return "bad number '" + it + "'";
              if (!ok(x)) return "entries must be " + rule;
              xs.push_back(x);
            }
            c.*m = std::move(xs);
            return {};
          },
          [m](const ExperimentConfig& c) {
            std::string s;
            for (std::size_t i = 0; i < (c.*m).size(); ++i)
              s += (i ? ", " : "") + format_double((c.*m)[i]);
            return s;
          }};
}

inline FieldCodec int_list_field(std::string key, Member<std::vector<int>> m,
                                 std::function<bool(int)> ok, std::string rule) {
  return {key,
          [m, ok, rule](ExperimentConfig& c, std::string_view v) -> std::string {
            const auto items = split_list(v);
            if (items.empty()) return "list must not be empty";
            std::vector<int> xs;
            for (const auto& it : items) {
              int x;
              if (!parse_integer(it, x)) return "bad integer '" + it + "'";
              if (!ok(x)) return "entries must be " + rule;
              xs.push_back(x);
            }
            c.*m = std::move(xs);
            return {};
          },
          [m](const ExperimentConfig& c) {
            std::string s;
            for (std::size_t i = 0; i < (c.*m).size(); ++i)
              s += (i ? ", " : "") + std::to_string((c.*m)[i]);
            return s;
          }};
}

template <class E>
FieldCodec enum_field(std::string key, Member<E> m, std::vector<std::pair<std::string, E>> names) {
  return {key,
          [m, names](ExperimentConfig& c, std::string_view v) -> std::string {
            std::string options;
            for (const auto& [n, e] : names) {
              if (v == n) {
                c.*m = e;
                return {};
              }
              options += (options.empty() ? "" : " | ") + n;
            }
            return "expected one of " + options;
          },
          [m, names](const ExperimentConfig& c) {
            for (const auto& [n, e] : names)
              if (c.*m == e) return n;
            return names.front().first;
          }};
}

inline bool is_pow2(int n) { return n >= 4 && (n & (n - 1)) == 0; }

inline const std::vector<FieldCodec>& fields() {
  static const std::vector<FieldCodec> f = [] {
    auto positive = [](double x) { return x > 0.0; };
    auto nonneg = [](double x) { return x >= 0.0; };
    std::vector<FieldCodec> v;
    v.push_back(enum_field<ExperimentKind>("kind", &ExperimentConfig::kind,
                                           {{"intermediate", ExperimentKind::intermediate},
                                            {"smallscale", ExperimentKind::smallscale},
                                            {"principles", ExperimentKind::principles},
                                            {"theorem-rates", ExperimentKind::theorem_rates}}));
    v.push_back({"output.dir",
                 [](ExperimentConfig& c, std::string_view s) -> std::string {
                   if (s.empty()) return "must not be empty";
                   c.output_dir = std::string(s);
                   return {};
                 },
                 [](const ExperimentConfig& c) { return c.output_dir; }});
    v.push_back(int_field<std::uint64_t>("seed", &ExperimentConfig::seed,
                                         [](std::uint64_t) { return true; }, "an integer"));
    v.push_back(int_field<int>("threads", &ExperimentConfig::threads,
                               [](int x) { return x >= 0; }, ">= 0"));
    v.push_back(enum_field<bool>("deterministic_sum", &ExperimentConfig::deterministic_sum,
                                 {{"false", false}, {"true", true}}));
    v.push_back(real_list_field("sweep.M", &ExperimentConfig::M_values, nonneg, ">= 0"));
    v.push_back(real_list_field("sweep.epsilon", &ExperimentConfig::epsilon_values, positive, "> 0"));
    v.push_back(int_list_field("sweep.resolution", &ExperimentConfig::resolutions, is_pow2,
                               "powers of two >= 4"));
    v.push_back(real_list_field("sweep.spacing", &ExperimentConfig::spacings, positive, "> 0"));
    v.push_back(enum_field<HorizonRule>("horizon.rule", &ExperimentConfig::horizon_rule,
                                        {{"T_M", HorizonRule::strain_time},
                                         {"fixed", HorizonRule::fixed}}));
    v.push_back(real_field("horizon.value", &ExperimentConfig::horizon_value, positive, "> 0"));
    v.push_back(enum_field<DtRule>("dt.rule", &ExperimentConfig::dt_rule,
                                   {{"auto", DtRule::automatic}, {"fixed", DtRule::fixed}}));
    v.push_back(real_field("dt.value", &ExperimentConfig::dt_value, positive, "> 0"));
    v.push_back(enum_field<Backend>("intermediate.backend", &ExperimentConfig::backend,
                                    {{"direct", Backend::direct}, {"grid", Backend::grid}}));
    v.push_back(enum_field<SymmetryMode>("intermediate.symmetry", &ExperimentConfig::symmetry,
                                         {{"mirror_reduced", SymmetryMode::mirror_reduced},
                                          {"full", SymmetryMode::full}}));
    v.push_back(real_field("intermediate.domain", &ExperimentConfig::domain_half_length,
                           [](double x) { return x > 2.0; }, "> 2"));
    v.push_back(real_field("intermediate.grid_domain", &ExperimentConfig::grid_domain_half_length,
                           [](double x) { return x > 2.0; }, "> 2"));
    v.push_back(int_field<int>("intermediate.grid_resolution", &ExperimentConfig::grid_resolution,
                               is_pow2, "a power of two >= 4"));
    v.push_back(int_field<int>("intermediate.image_radius", &ExperimentConfig::image_radius,
                               [](int x) { return x >= 1; }, ">= 1"));
    v.push_back(real_field("intermediate.fd_step", &ExperimentConfig::fd_step, positive, "> 0"));
    v.push_back(real_field("intermediate.cfl", &ExperimentConfig::cfl, positive, "> 0"));
    v.push_back(real_field("probe.c", &ExperimentConfig::probe_c, positive, "> 0"));
    v.push_back(real_field("probe.gamma", &ExperimentConfig::probe_gamma, nonneg, ">= 0"));
    v.push_back(int_field<int>("probe.samples", &ExperimentConfig::probe_samples,
                               [](int x) { return x >= 1; }, ">= 1"));
    v.push_back(int_field<int>("smallscale.seeds", &ExperimentConfig::smallscale_seeds,
                               [](int x) { return x >= 1; }, ">= 1"));
    v.push_back(real_field("smallscale.ell_ratio", &ExperimentConfig::ell_ratio,
                           [](double x) { return x > 0.0 && x <= 1.0; }, "in (0, 1]"));
    v.push_back(real_field("smallscale.epsilon", &ExperimentConfig::smallscale_epsilon, positive,
                           "> 0"));
    v.push_back(int_field<int>("smallscale.substeps", &ExperimentConfig::substeps,
                               [](int x) { return x >= 1; }, ">= 1"));
    v.push_back(int_field<int>("smallscale.trajectories", &ExperimentConfig::trajectory_seeds,
                               [](int x) { return x >= -1; }, ">= -1"));
    v.push_back(real_field("principles.s", &ExperimentConfig::sobolev_s, nonneg, ">= 0"));
    v.push_back(real_field("principles.horizon", &ExperimentConfig::principles_horizon, positive,
                           "> 0"));
    v.push_back(real_field("principles.dt", &ExperimentConfig::principles_dt, positive, "> 0"));
    return v;
  }();
  return f;
}

[[noreturn]] inline void parse_error(int line, const std::string& field, const std::string& what) {
  fail(ErrorCode::ConfigParseError,
       "line " + std::to_string(line) + (field.empty() ? "" : ", field '" + field + "'") + ": " + what);
}

}  // namespace detail

/// Parses config text. Errors name the line and the field.
inline ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = detail::trim(raw);
    if (s.empty() || s[0] == '#') continue;
    // Inline comments need whitespace before the '#'.
    for (std::size_t i = 1; i < s.size(); ++i)
      if (s[i] == '#' && (s[i - 1] == ' ' || s[i - 1] == '\t')) {
        s = detail::trim(s.substr(0, i));
        break;
      }
    const auto eq = s.find('=');
    if (eq == std::string::npos) detail::parse_error(line, "", "expected 'key = value'");
    const std::string key = detail::trim(s.substr(0, eq));
    const std::string value = detail::trim(s.substr(eq + 1));
    if (key.empty()) detail::parse_error(line, "", "missing key");
    const auto& fs = detail::fields();
    const auto it = std::find_if(fs.begin(), fs.end(), [&](const auto& f) { return f.key == key; });
    if (it == fs.end()) detail::parse_error(line, key, "unknown key");
    if (!seen.insert(key).second) detail::parse_error(line, key, "key given twice");
    if (const auto err = it->read(c, value); !err.empty()) detail::parse_error(line, key, err);
  }
  if (!seen.count("kind")) detail::parse_error(line, "kind", "missing required key");
  return c;
}

/// Sets one key on an existing config, e.g. from a command-line override.
inline void set_config_value(ExperimentConfig& c, std::string_view key, std::string_view value) {
  const std::string k = detail::trim(key);
  const auto& fs = detail::fields();
  const auto it = std::find_if(fs.begin(), fs.end(), [&](const auto& f) { return f.key == k; });
  if (it == fs.end()) fail(ErrorCode::ConfigParseError, "field '" + k + "': unknown key");
  if (const auto err = it->read(c, detail::trim(value)); !err.empty())
    fail(ErrorCode::ConfigParseError, "field '" + k + "': " + err);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::IoError, "cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

/// Every key in a fixed order; lossless for parse_config.
inline std::string serialize_config(const ExperimentConfig& c) {
  std::string out;
  for (const auto& f : detail::fields()) out += f.key + " = " + f.write(c) + "\n";
  return out;
}

/// Key/value pairs in serialization order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : detail::fields()) out.emplace_back(f.key, f.write(c));
  return out;
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(serialize_config(c))); }

}  // namespace vortexlab::experiments

#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vortexlab/experiments.hpp"

namespace vx = vortexlab::experiments;

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  int threads = -1;
  bool deterministic_sum = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "config file (flat key = value)")->check(CLI::ExistingFile);
  sub->add_option("--out", f.out, "output directory (overrides output.dir)");
  sub->add_option("--seed", f.seed, "determinism seed (overrides seed)");
  sub->add_option("--threads", f.threads, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
  sub->add_flag("--deterministic-sum", f.deterministic_sum, "single-threaded kernel summation");
  sub->add_option("--set", f.overrides, "override a config key, e.g. --set sweep.M=2,4");
}

void apply_override(vx::ExperimentConfig& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    vortexlab::fail(vortexlab::ErrorCode::ConfigParseError, "--set expects key=value, got '" + kv + "'");
  const auto kind = cfg.kind;
  vx::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  if (cfg.kind != kind)
    vortexlab::fail(vortexlab::ErrorCode::ConfigParseError, "kind is set by the subcommand");
}

vx::ExperimentConfig resolve(vx::ExperimentKind kind, const CommonFlags& f, const CLI::App* sub) {
  vx::ExperimentConfig cfg;
  if (!f.config.empty()) {
    cfg = vx::load_config(f.config);
    if (cfg.kind != kind)
      vortexlab::fail(vortexlab::ErrorCode::ConfigParseError,
                      "config kind '" + std::string(vx::to_string(cfg.kind)) +
                          "' does not match subcommand '" + std::string(vx::to_string(kind)) + "'");
  }
  cfg.kind = kind;
  if (f.config.empty()) cfg.output_dir = "out/" + std::string(vx::to_string(kind));
  for (const auto& kv : f.overrides) apply_override(cfg, kv);
  if (sub->count("--out")) cfg.output_dir = f.out;
  if (sub->count("--seed")) cfg.seed = f.seed;
  if (sub->count("--threads")) cfg.threads = f.threads;
  if (f.deterministic_sum) cfg.deterministic_sum = true;
  return cfg;
}

int execute(const vx::ExperimentConfig& cfg) {
  const auto man = vx::run(cfg);
  for (const auto& r : man.runs) {
    const char* tag = r.passed ? "PASS" : (r.acceptance ? "FAIL" : "WARN");
    std::printf("%s %s (%.1f s)\n", tag, r.name.c_str(), r.wall_seconds);
    if (!r.ok) {
      std::printf("    error: %s\n", r.error.c_str());
      continue;
    }
    for (const auto& m : r.metrics)
      std::printf("    %-32s %-24s %s%s\n", m.name.c_str(), vx::format_double(m.value).c_str(),
                  m.bound.c_str(), m.checked && !m.pass ? "  <-- fails" : "");
  }
  std::printf("manifest: %s\n", man.manifest_path.c_str());
  return man.success() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vortexlab: strained vortex quadrupole experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(vx::kVersion));

  const std::map<std::string, vx::ExperimentKind> kinds{
      {"intermediate", vx::ExperimentKind::intermediate},
      {"smallscale", vx::ExperimentKind::smallscale},
      {"principles", vx::ExperimentKind::principles},
      {"rates", vx::ExperimentKind::theorem_rates}};
  const std::map<std::string, std::string> help{
      {"intermediate", "quadrupole evolution: norm growth, Jacobian, gradient probe"},
      {"smallscale", "small-scale vorticity along characteristics: decay and confinement"},
      {"principles", "spectral epsilon sweep: nonlinear vs linearized and modified evolutions"},
      {"rates", "fitted decay rates of the gradient probe and small-scale vorticity over M"}};

  std::map<std::string, CommonFlags> flags;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, kind] : kinds) {
    auto* sub = app.add_subcommand(name, help.at(name));
    add_common(sub, flags[name]);
    subs[name] = sub;
  }

  std::string csv, column, model = "exponential", x_column, summary, svg;
  auto* fit = app.add_subcommand("fit", "fit one CSV column and plot it");
  fit->add_option("csv", csv, "input CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("column", column, "column to fit")->required();
  fit->add_option("--model", model, "exponential or powerlaw")
      ->check(CLI::IsMember({"exponential", "powerlaw"}));
  fit->add_option("--x", x_column, "abscissa column (default t, or the first column)");
  fit->add_option("--summary", summary, "fits summary CSV to append to");
  fit->add_option("--svg", svg, "SVG output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit->parsed()) {
      vx::FitPlotOptions o;
      o.x_column = x_column;
      o.summary_path = summary;
      o.svg_path = svg;
      const auto res = vx::fit_and_plot(
          csv, column, model == "powerlaw" ? vx::FitModel::power_law : vx::FitModel::exponential, o);
      std::printf("rate %s intercept %s r2 %s samples %zu\nsvg: %s\nsummary: %s\n",
                  vx::format_double(res.fit.rate).c_str(), vx::format_double(res.fit.intercept).c_str(),
                  vx::format_double(res.fit.r_squared).c_str(), res.fit.samples, res.svg_path.c_str(),
                  res.summary_path.c_str());
      return 0;
    }
    for (const auto& [name, sub] : subs)
      if (sub->parsed()) return execute(resolve(kinds.at(name), flags[name], sub));
  } catch (const vortexlab::Error& e) {
    std::fprintf(stderr, "vortexlab: %s\n", e.what());
    return 2;
  }
  return 2;
}

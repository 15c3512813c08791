// Command-line front end for the experiment runner.
//
// Every subcommand assembles an ExperimentConfig (config file first, then
// flag overrides), runs it into the output directory and writes
// manifest.json alongside the outputs. Exit codes: 0 = all checks passed,
// 2 = checker failures present, 1 = execution error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rwre/runner.hpp"

namespace {

struct CommonArgs {
  std::string config_file;
  std::string outdir;
  int workers = 0;
  std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* sub, CommonArgs& args, const std::string& default_out) {
  sub->add_option("-c,--config", args.config_file, "config file (key = value lines)");
  sub->add_option("-o,--out", args.outdir, "output directory")->default_val(default_out);
  sub->add_option("-w,--workers", args.workers, "worker threads (0 = hardware)");
  sub->add_option("--set", args.overrides, "override a config key, key=value")->take_all();
}

rwre::ExperimentConfig assemble(const std::string& kind, const CommonArgs& args,
                                const std::vector<std::pair<std::string, std::string>>& flag_params) {
  rwre::ExperimentConfig cfg;
  if (!args.config_file.empty()) {
    std::ifstream in(args.config_file);
    if (!in) throw std::runtime_error("cannot open config file " + args.config_file);
    std::ostringstream ss;
    ss << in.rdbuf();
    cfg = rwre::ExperimentConfig::from_text(ss.str());
  }
  cfg.kind = kind;
  for (const auto& [key, value] : flag_params)
    if (!value.empty()) cfg.params[key] = value;
  for (const std::string& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::runtime_error("bad --set argument '" + kv + "'");
    cfg.params[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return cfg;
}

int run_and_report(const rwre::ExperimentConfig& cfg, const CommonArgs& args) {
  const rwre::RunManifest m = rwre::run_experiment(cfg, args.outdir, args.workers);
  std::printf("%s: %zu output file(s) in %s, %lld checker failure(s), %.2fs\n", cfg.kind.c_str(),
              m.outputs.size(), args.outdir.c_str(), static_cast<long long>(m.checker_failures),
              m.wall_seconds);
  return m.checker_failures == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rwre-lab: balanced random walks in random environments, desk-scale numerics"};
  app.require_subcommand(1);

  struct SubSpec {
    const char* name;
    const char* kind;
    const char* help;
  };
  // flag name -> config key, shared across subcommands where meaningful
  const std::vector<SubSpec> subs = {
      {"gen-env", "gen-env", "generate an environment file"},
      {"stationary", "stationary", "solve the periodized stationary density Phi_N"},
      {"phi", "phi-diagnostics", "norm diagnostics of Phi_N across N and seeds"},
      {"mp", "mp-check", "maximum-principle ratio corpus (calibrated constant)"},
      {"mvi", "mvi-check", "mean-value-inequality ratio corpus (calibrated constant)"},
      {"cutoff", "cutoff-check", "cutoff-profile lemma checker (explicit constant)"},
      {"perc", "perc-stats", "connectivity decay q_n and submultiplicativity checks"},
      {"mp2", "mp2-check", "coarse-kernel maximum principle (fully explicit, hard pass/fail)"},
      {"mvi2", "mvi2-check", "coarse-kernel mean value inequality ratio corpus"},
      {"clt", "walk-clt", "endpoint covariance and normality diagnostics"},
      {"transience", "transience", "annulus visit probabilities and Omega_i frequencies"},
  };

  struct SubState {
    CommonArgs common;
    std::string spec, d, seed, N, M, n, radius, eps0, K, i_max, grid, count, R, sigma, p, beta, kernel,
        p_open, horizons, mode;
  };
  std::vector<SubState> states(subs.size());

  for (size_t i = 0; i < subs.size(); ++i) {
    CLI::App* sub = app.add_subcommand(subs[i].name, subs[i].help);
    SubState& st = states[i];
    add_common(sub, st.common, std::string("out/") + subs[i].name);
    sub->add_option("--spec", st.spec, "environment spec, e.g. 'iid-elliptic shape=4'");
    sub->add_option("--d", st.d, "dimension (2..4)");
    sub->add_option("--seed", st.seed, "master seed");
    sub->add_option("--N", st.N, "torus radius N");
    sub->add_option("--M", st.M, "Monte Carlo sample count");
    sub->add_option("--n", st.n, "walk horizon");
    sub->add_option("--radius", st.radius, "box radius");
    sub->add_option("--eps0", st.eps0, "openness threshold eps_0");
    sub->add_option("--K", st.K, "annulus growth factor");
    sub->add_option("--i-max", st.i_max, "last annulus index");
    sub->add_option("--grid", st.grid, "comma-separated n grid");
    sub->add_option("--count", st.count, "instance count");
    sub->add_option("--R", st.R, "ball radius");
    sub->add_option("--sigma", st.sigma, "inner-ball fraction");
    sub->add_option("--p", st.p, "norm exponent");
    sub->add_option("--beta", st.beta, "cutoff profile exponent");
    sub->add_option("--kernel", st.kernel, "cutoff kernel: nn or coarse");
    sub->add_option("--p-open", st.p_open, "site openness probability");
    sub->add_option("--horizons", st.horizons, "comma-separated horizons (contrast mode)");
    if (std::string(subs[i].name) == "transience")
      sub->add_option("--mode", st.mode, "annulus (default) or contrast");
  }

  std::string replay_manifest, replay_out;
  int replay_workers = 0;
  CLI::App* rep = app.add_subcommand("replay", "re-execute a manifest and verify output digests");
  rep->add_option("manifest", replay_manifest, "path to manifest.json")->required();
  rep->add_option("-o,--out", replay_out, "output directory")->default_val("out/replay");
  rep->add_option("-w,--workers", replay_workers, "worker threads (0 = hardware)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (rep->parsed()) {
      const rwre::ReplayReport r = rwre::replay(replay_manifest, replay_out, replay_workers);
      if (r.match) {
        std::printf("replay: all %zu output digest(s) match\n", r.rerun.outputs.size());
        return 0;
      }
      for (const auto& f : r.divergent_files) std::printf("replay: DIVERGENT %s\n", f.c_str());
      for (const auto& f : r.missing_files) std::printf("replay: MISSING %s\n", f.c_str());
      return 2;
    }
    for (size_t i = 0; i < subs.size(); ++i) {
      CLI::App* sub = app.get_subcommand(subs[i].name);
      if (!sub->parsed()) continue;
      const SubState& st = states[i];
      std::string kind = subs[i].kind;
      if (kind == "transience" && st.mode == "contrast") kind = "recurrence-contrast";
      const rwre::ExperimentConfig cfg = assemble(
          kind, st.common,
          {{"spec", st.spec},     {"d", st.d},         {"seed", st.seed},   {"N", st.N},
           {"M", st.M},           {"n", st.n},         {"radius", st.radius}, {"eps0", st.eps0},
           {"K", st.K},           {"i_max", st.i_max}, {"grid", st.grid},   {"count", st.count},
           {"R", st.R},           {"sigma", st.sigma}, {"p", st.p},         {"beta", st.beta},
           {"kernel", st.kernel}, {"p_open", st.p_open}, {"horizons", st.horizons}});
      return run_and_report(cfg, st.common);
    }
    std::fprintf(stderr, "no subcommand\n");
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

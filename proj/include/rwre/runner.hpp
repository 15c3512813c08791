#pragma once

// Experiment orchestration: config parsing, dispatch, CSV/JSON persistence,
// run manifests with content digests, and replay verification.
//
// Reruns of the same experiment config are byte-identical regardless of the
// worker count: all Monte Carlo goes through per-sample streams with
// order-fixed reductions, and execution-only settings (workers, output
// directory) are kept out of the config echo and the output files.

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rwre/env_io.hpp"
#include "rwre/percolation.hpp"
#include "rwre/torus.hpp"
#include "rwre/walk.hpp"

namespace rwre {

inline constexpr const char* kArtifactName = "rwre-lab";
inline constexpr const char* kArtifactVersion = "1.0.0";
inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string kind;
  std::map<std::string, std::string> params;

  bool has(const std::string& key) const { return params.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }
  std::string require(const std::string& key) const {
    auto it = params.find(key);
    if (it == params.end())
      throw std::invalid_argument("config: missing required key '" + key + "' for kind '" + kind + "'");
    return it->second;
  }
  int64_t get_int(const std::string& key, int64_t fallback) const {
    return has(key) ? std::stoll(require(key)) : fallback;
  }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? std::strtod(require(key).c_str(), nullptr) : fallback;
  }
  uint64_t get_seed(const std::string& key, uint64_t fallback) const {
    return has(key) ? std::strtoull(require(key).c_str(), nullptr, 10) : fallback;
  }
  std::vector<int> get_int_list(const std::string& key, const std::string& fallback) const {
    std::vector<int> out;
    std::istringstream is(get(key, fallback));
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
    return out;
  }

  // key = value lines, '#' comments; later keys win, CLI overrides are merged
  static ExperimentConfig from_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (key.empty()) continue;
      if (key == "kind")
        cfg.kind = val;
      else
        cfg.params[key] = val;
    }
    return cfg;
  }

  EnvSpec env_spec() const {
    const int d = static_cast<int>(get_int("d", 2));
    return EnvSpec::parse(require("spec"), d);
  }
};

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

inline std::string fnv1a64_hex(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

inline std::string digest_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("digest_file: cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a64_hex(ss.str());
}

struct RunManifest {
  std::string kind;
  std::map<std::string, std::string> config;
  std::vector<std::pair<std::string, std::string>> outputs;  // (file name, digest)
  int64_t checker_failures = 0;
  double wall_seconds = 0.0;
  std::map<std::string, double> stage_seconds;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["artifact"] = kArtifactName;
    j["version"] = kArtifactVersion;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = kind;
    j["config"] = config;
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& [file, digest] : outputs) outs.push_back({{"file", file}, {"digest", digest}});
    j["outputs"] = outs;
    j["checker_failures"] = checker_failures;
    j["timings"] = {{"wall_seconds", wall_seconds}, {"stages", stage_seconds}};
    return j;
  }

  static RunManifest from_json(const nlohmann::json& j) {
    if (j.at("schema_version").get<int>() != kSchemaVersion)
      throw std::runtime_error("manifest: incompatible schema version");
    RunManifest m;
    m.kind = j.at("kind").get<std::string>();
    m.config = j.at("config").get<std::map<std::string, std::string>>();
    for (const auto& o : j.at("outputs"))
      m.outputs.emplace_back(o.at("file").get<std::string>(), o.at("digest").get<std::string>());
    m.checker_failures = j.at("checker_failures").get<int64_t>();
    return m;
  }
};

// ---------------------------------------------------------------------------
// output helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class OutputSink {
 public:
  OutputSink(std::filesystem::path dir, RunManifest& manifest) : dir_(std::move(dir)), manifest_(&manifest) {
    std::filesystem::create_directories(dir_);
  }

  void write(const std::string& name, const std::string& bytes) {
    const std::filesystem::path p = dir_ / name;
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output " + p.string());
    out << bytes;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + p.string());
    manifest_->outputs.emplace_back(name, fnv1a64_hex(bytes));
  }

  void write_json(const std::string& name, const nlohmann::json& j) { write(name, j.dump(2) + "\n"); }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  RunManifest* manifest_;
};

class StageTimer {
 public:
  StageTimer(RunManifest& m, std::string name)
      : m_(&m), name_(std::move(name)), t0_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    m_->stage_seconds[name_] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  RunManifest* m_;
  std::string name_;
  std::chrono::steady_clock::time_point t0_;
};

inline Environment environment_from_config(const ExperimentConfig& cfg, int radius) {
  const EnvSpec spec = cfg.env_spec();
  const uint64_t seed = cfg.get_seed("seed", 1);
  Environment env = Environment::generate(spec, seed, radius);
  if (cfg.get_int("remove_laziness", 0) != 0) env = remove_laziness(env);
  return env;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// experiments
// ---------------------------------------------------------------------------

namespace experiments {

inline void gen_env(const ExperimentConfig& cfg, detail::OutputSink& out, RunManifest& m) {
  const int radius = static_cast<int>(cfg.get_int("radius", 8));
  detail::StageTimer t(m, "generate");
  const Environment env = detail::environment_from_config(cfg, radius);
  out.write("environment.txt", environment_to_text(env));
  nlohmann::json j;
  const ValidationReport rep = env.validate();
  j["sites"] = rep.sites_checked;
  j["violations"] = rep.violations.size();
  j["min_epsilon"] = rep.min_epsilon;
  j["xi_hat"] = rep.xi_hat;
  j["non_elliptic_sites"] = rep.non_elliptic_sites;
  out.write_json("summary.json", j);
  m.checker_failures = static_cast<int64_t>(rep.violations.size());
}

inline void stationary(const ExperimentConfig& cfg, detail::OutputSink& out, RunManifest& m, int workers) {
  const int N = static_cast<int>(cfg.get_int("N", 4));
  const Environment env = detail::environment_from_config(cfg, N);
  const TorusEnv tenv = periodize(env, N);
  SolvePhiOptions opt;
  opt.tol = cfg.get_double("tol", 1e-10);
  opt.workers = workers;
  StationaryDensity phi;
  {
    detail::StageTimer t(m, "solve");
    phi = solve_phi(tenv, opt);
  }
  std::ostringstream csv;
  csv << "x1";
  for (int c = 1; c < env.d(); ++c) csv << ",x" << c + 1;
  csv << ",phi\n";
  for (int64_t i = 0; i < tenv.count(); ++i) {
    const Site x = tenv.site(i);
    for (int c = 0; c < env.d(); ++c) csv << (c ? "," : "") << x[c];
    csv << ',' << detail::fmt_g17(phi.phi[static_cast<size_t>(i)]) << '\n';
  }
  out.write("phi.csv", csv.str());
  nlohmann::json j;
  j["N"] = N;
  j["d"] = env.d();
  j["residual"] = phi.residual;
  j["iterations"] = phi.iterations;
  j["direct_solve"] = phi.direct_solve;
  out.write_json("summary.json", j);
}

inline void phi_diagnostics(const ExperimentConfig& cfg, detail::OutputSink& out, RunManifest& m,
                            int workers) {
  const std::vector<int> Ns = cfg.get_int_list("N_list", "4,8,16");
  const int seeds = static_cast<int>(cfg.get_int("seed_count", 10));
  const uint64_t seed0 = cfg.get_seed("seed", 1);
  const double p = cfg.get_double("p", 6.0);
  const EnvSpec spec = cfg.env_spec();

  std::ostringstream csv;
  csv << "seed,N,alpha,beta,p,norm_phi_eps_beta,norm_phi_alpha,norm_inv_eps_p,residual\n";
  std::vector<double> xs, ys;
  std::map<int, double> max_by_N;
  {
    detail::StageTimer t(m, "solve");
    for (int s = 0; s < seeds; ++s) {
      const uint64_t seed = seed0 + static_cast<uint64_t>(s);
      const Environment env = Environment::generate(spec, seed, Ns.back());
      for (int N : Ns) {
        const TorusEnv tenv = periodize(env, N);
        SolvePhiOptions opt;
        opt.workers = workers;
        const StationaryDensity phi = solve_phi(tenv, opt);
        const PhiDiagnostics diag = phi_bound_diagnostics(tenv, phi, p);
        csv << seed << ',' << N << ',' << detail::fmt_g17(diag.alpha) << ',' << detail::fmt_g17(diag.beta)
            << ',' << detail::fmt_g17(diag.p) << ',' << detail::fmt_g17(diag.norm_phi_eps_beta) << ','
            << detail::fmt_g17(diag.norm_phi_alpha) << ',' << detail::fmt_g17(diag.norm_inv_eps_p) << ','
            << detail::fmt_g17(diag.residual) << '\n';
        xs.push_back(static_cast<double>(N));
        ys.push_back(diag.norm_phi_eps_beta);
        auto [it, fresh] = max_by_N.emplace(N, diag.norm_phi_eps_beta);
        if (!fresh) it->second = std::max(it->second, diag.norm_phi_eps_beta);
      }
    }
  }
  out.write("phi_diagnostics.csv", csv.str());

  // trend test on ||Phi eps||_beta across N: increasing trend fails
  const double rho = spearman_rho(xs, ys);
  const double z = rho * std::sqrt(static_cast<double>(xs.size()) - 1.0);
  const bool no_increasing_trend = z < 1.645;  // one-sided 5%
  const double max_first = max_by_N.begin()->second;
  const double max_last = max_by_N.rbegin()->second;
  const bool bounded = max_last <= 2.0 * max_first;
  nlohmann::json j;
  j["spearman_rho"] = rho;
  j["spearman_z"] = z;
  j["no_increasing_trend"] = no_increasing_trend;
  j["max_norm_by_N"] = max_by_N;
  j["bounded_vs_first"] = bounded;
  out.write_json("summary.json", j);
  m.checker_failures = (no_increasing_trend && bounded) ? 0 : 1;
}

// shared instance loop for the calibrated-constant checkers (mp / mvi)
inline void mp_check_experiment(const ExperimentConfig& cfg, detail::OutputSink& out, RunManifest& m) {
  const int count = static_cast<int>(cfg.get_int("count", 60));
  const int ref_count = static_cast<int>(cfg.get_int("ref_count", count / 2));
  const uint64_t seed0 = cfg.get_seed("seed", 1);
  const int d = static_cast<int>(cfg.get_int("d", 2));
  const int r_min = static_cast<int>(cfg.get_int("radius_min", 3));
  const int r_max = static_cast<int>(cfg.get_int("radius_max", 8));
  EnvSpec spec;
  spec.variant = EnvVariant::IidElliptic;
  spec.d = d;
  spec.shape = cfg.get_double("shape", 1.5);

  std::ostringstream csv;
  csv << "instance,seed,radius,lhs,rhs_core,ratio,ratio_valid,contact_size\n";
  double c_hat = 0.0, max_eval = 0.0;
  int64_t failures = 0;
  detail::StageTimer t(m, "instances");
  for (int i = 0; i < count; ++i) {
    const uint64_t seed = seed0 + static_cast<uint64_t>(i);
    const int radius = r_min + i % (r_max - r_min + 1);
    const Environment env = remove_laziness(Environment::generate(spec, seed, radius + 1));
    const LatticeDomain dom = LatticeDomain::box(d, radius);
    RngStream rs = derive_stream(seed0, "mp-instance", static_cast<uint64_t>(i));
    GridFunction h(dom.interior);
    for (size_t k = 0; k < h.size(); ++k) h[k] = rs.uniform();
    GridFunction g0(dom.boundary);
    for (size_t k = 0; k < g0.size(); ++k) g0[k] = rs.uniform() - 0.5;
    GridFunction u = dirichlet_solve(env, dom, h, g0);
    const double a1 = rs.uniform() - 0.5, a2 = rs.uniform() - 0.5;
    for (size_t k = 0; k < u.size(); ++k)
      u[k] += a1 * (*dom.closure)[k][0] + a2 * (*dom.closure)[k][1];
    const MpCheckResult r = mp_check(env, dom, u, h);
    if (!r.hypothesis_violations.empty()) ++failures;
    csv << i << ',' << seed << ',' << radius << ',' << detail::fmt_g17(r.lhs) << ','
        << detail::fmt_g17(r.rhs_core) << ',' << detail::fmt_g17(r.ratio) << ',' << (r.ratio_valid ? 1 : 0)
        << ',' << r.contact_size << '\n';
    if (r.ratio_valid) {
      if (i < ref_count)
        c_hat = std::max(c_hat, r.ratio);
      else
        max_eval = std::max(max_eval, r.ratio);
    }
  }
  out.write("mp_instances.csv", csv.str());
  const bool calibrated_pass = max_eval <= 1.5 * c_hat;
  if (!calibrated_pass) ++failures;
  nlohmann::json j;
  j["c_hat_reference"] = c_hat;
  j["max_eval_ratio"] = max_eval;
  j["bound"] = 1.5 * c_hat;
  j["calibrated_pass"] = calibrated_pass;
  j["hypothesis_failures"] = failures;
  out.write_json("summary.json", j);
  m.checker_failures = failures;
}

inline void mvi_check_experiment(const ExperimentConfig& cfg, detail::OutputSink& out, RunManifest& m) {
  const int count = static_cast<int>(cfg.get_int("count", 40));
  const int ref_count = static_cast<int>(cfg.get_int("ref_count", count / 2));
  const uint64_t seed0 = cfg.get_seed("seed", 1);
  const int d = static_cast<int>(cfg.get_int("d", 2));
  const double R = cfg.get_double("R", 12.0);
  const double sigma = cfg.get_double("sigma", 0.5);
  const double p = cfg.get_double("p", 2.0);
  EnvSpec spec;
  spec.variant = EnvVariant::IidElliptic;
  spec.d = d;
  spec.shape = cfg.get_double("shape", 2.0);

  std::ostringstream csv;
  csv << "instance,seed,ratio,vacuous,max_inner,denom\n";
  double c_hat = 0.0, max_eval = 0.0;
  detail::StageTimer t(m, "instances");
  for (int i = 0; i < count; ++i) {
    const uint64_t seed = seed0 + static_cast<uint64_t>(i);
    const Environment env = remove_laziness(Environment::generate(spec, seed, static_cast<int>(R) + 2));
    const LatticeDomain dom = LatticeDomain::ball_l2(d, R);
    RngStream rs = derive_stream(seed0, "mvi-instance", static_cast<uint64_t>(i));
    GridFunction g(dom.boundary);
    for (size_t k = 0; k < g.size(); ++k) g[k] = 2.0 * rs.uniform() - 0.7;
    const MviCheckResult r = mvi_check(env, R, sigma, p, g);
    csv << i << ',' << seed << ',' << detail::fmt_g17(r.ratio) << ',' << (r.vacuous ? 1 : 0) << ','
        << detail::fmt_g17(r.max_inner) << ',' << detail::fmt_g17(r.denom) << '\n';
    if (!r.vacuous) {
      if (i < ref_count)
        c_hat = std::max(c_hat, r.ratio);
      else
        max_eval = std::max(max_eval, r.ratio);
    }
  }
  out.write("mvi_instances.csv", csv.str());
  const bool calibrated_pass = max_eval <= 1.5 * c_hat;
  nlohmann::json j;
  j["c_hat_reference"] = c_hat;
  j["max_eval_ratio"] = max_eval;
  j["bound"] = 1.5 * c_hat;
  j["calibrated_pass"] = calibrated_pass;
  out.write_json("summary.json", j);
  m.checker_failures = calibrated_pass ? 0 : 1;
}

inline void cutoff_check_experiment(const ExperimentConfig& cfg, detail::OutputSink& out, RunManifest& m) {
  const int count = static_cast<int>(cfg.get_int("count", 50));
  const uint64_t seed0 = cfg.get_seed("seed", 1);
  const int d = static_cast<int>(cfg.get_int("d", 2));
  const double R = cfg.get_double("R", 12.0);
  const double beta = cfg.get_double("beta", 4.0);
  const bool coarse = cfg.get("kernel", "nn") == "coarse";
  const double eps0 = cfg.get_double("eps0", 0.2);
  const double p_open = cfg.get_double("p_open", 0.15);

  std::ostringstream csv;
  csv << "instance,seed,contact_size,violations,max_reach\n";
  int64_t total_violations = 0;
  detail::StageTimer t(m, "instances");
  int i = 0;
  uint64_t attempt = 0;
  while (i < count) {
    const uint64_t seed = seed0 + attempt++;
    const int env_radius = static_cast<int>(R) + (coarse ? 14 : 2);
    Environment env;
    if (coarse) {
      EnvSpec spec;
      spec.variant = EnvVariant::IidMaxJump;
      spec.d = d;
      spec.p_open = p_open;
      spec.eps0 = eps0;
      env = Environment::generate(spec, seed, env_radius);
    } else {
      EnvSpec spec;
      spec.variant = EnvVariant::IidElliptic;
      spec.d = d;
      spec.shape = cfg.get_double("shape", 2.0);
      env = remove_laziness(Environment::generate(spec, seed, env_radius));
    }
    const LatticeDomain dom = LatticeDomain::ball_l2(d, R);
    JumpOperator op;
    ClusterMap cm;
    if (coarse) {
      cm = build_cluster_map(env, eps0, env_radius);
      bool usable = true;
      for (const Site& x : *dom.interior)
        if (cm.is_open(x) && cm.censored_at(x)) usable = false;
      if (!usable) continue;  // next seed; skipped instances are not counted
      op = coarse_operator(env, cm, *dom.interior, xi0_floor(d));
    } else {
      op = nn_operator(env, *dom.interior);
    }
    RngStream rs = derive_stream(seed0, "cutoff-instance", attempt);
    GridFunction g(op.boundary);
    for (size_t k = 0; k < g.size(); ++k) g[k] = 2.0 * rs.uniform() - 0.5;
    const GridFunction u = jump_dirichlet_solve(op, GridFunction(op.domain), g);
    const CutoffCheckResult r = cutoff_lemma_check(op, u, R, beta);
    double max_reach = 0.0;
    for (double h : op.reach) max_reach = std::max(max_reach, h);
    csv << i << ',' << seed << ',' << r.contact_size << ',' << r.violations.size() << ','
        << detail::fmt_g17(max_reach) << '\n';
    total_violations += static_cast<int64_t>(r.violations.size());
    ++i;
  }
  out.write("cutoff_instances.csv", csv.str());
  nlohmann::json j;
  j["violations"] = total_violations;
  j["constant"] = beta * beta * std::pow(2.0, 4.0 * beta + 2.0) + 32.0;
  out.write_json("summary.json", j);
  m.checker_failures = total_violations;
}

inline void perc_stats(const ExperimentConfig& cfg, detail::OutputSink& out, RunManifest& m, int workers) {
  const EnvSpec spec = cfg.env_spec();
  const double eps0 = cfg.get_double("eps0", 0.2);
  const std::vector<int> grid = cfg.get_int_list("grid", "2,4,6,8,12,16");
  const int M = static_cast<int>(cfg.get_int("M", 100000));
  const uint64_t seed = cfg.get_seed("seed", 1);
  ConnectivityStats st;
  {
    detail::StageTimer t(m, "sampling");
    st = connectivity_stats(spec, eps0, grid, M, seed, workers);
  }
  std::ostringstream csv;
  csv << "n,q_hat,ci_lo,ci_hi,hits,samples,tail_l\n";
  for (size_t i = 0; i < st.grid.size(); ++i)
    csv << st.grid[i] << ',' << detail::fmt_g17(st.q[i].p_hat) << ',' << detail::fmt_g17(st.q[i].lo) << ','
        << detail::fmt_g17(st.q[i].hi) << ',' << st.hits[i] << ',' << M << ','
        << detail::fmt_g17(st.tail_l[i]) << '\n';
  out.write("perc_q.csv", csv.str());

  int64_t sub_failures = 0;
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : st.sub1) {
    checks.push_back({{"kind", "sub1"}, {"m", c.m}, {"n", c.n}, {"pass", c.pass}});
    if (!c.pass) ++sub_failures;
  }
  for (const auto& c : st.sub2) {
    checks.push_back({{"kind", "sub2"}, {"m", c.m}, {"n", c.n}, {"pass", c.pass}});
    if (!c.pass) ++sub_failures;
  }
  nlohmann::json j;
  j["phi_hat"] = st.phi_hat;
  j["phi_se"] = st.phi_se;
  j["phi_positive"] = st.phi_positive;
  j["tail_prefactor"] = st.tail_prefactor;
  j["censored"] = st.censored;
  j["pair_checks"] = checks;
  out.write_json("summary.json", j);
  m.checker_failures = sub_failures + (st.phi_positive ? 0 : 1);
}

inline void mp2_check_experiment(const ExperimentConfig& cfg, detail::OutputSink& out, RunManifest& m) {
  const int count = static_cast<int>(cfg.get_int("count", 100));
  const uint64_t seed0 = cfg.get_seed("seed", 1);
  const int d = static_cast<int>(cfg.get_int("d", 2));
  const int r_min = static_cast<int>(cfg.get_int("radius_min", 3));
  const int r_max = static_cast<int>(cfg.get_int("radius_max", 12));
  const double eps0 = cfg.get_double("eps0", 0.2);
  const double p_open = cfg.get_double("p_open", 0.12);
  EnvSpec spec;
  spec.variant = EnvVariant::IidMaxJump;
  spec.d = d;
  spec.p_open = p_open;
  spec.eps0 = eps0;

  std::ostringstream csv;
  csv << "instance,seed,radius,max_E,max_Eb,rhs_sum_term,contact_size,pass\n";
  int64_t failures = 0;
  int64_t skipped = 0;
  detail::StageTimer t(m, "instances");
  int i = 0;
  uint64_t attempt = 0;
  while (i < count) {
    const uint64_t seed = seed0 + attempt++;
    const int radius = r_min + i % (r_max - r_min + 1);
    const int env_radius = radius + 14;
    const Environment env = Environment::generate(spec, seed, env_radius);
    const ClusterMap cm = build_cluster_map(env, eps0, env_radius);
    const SiteSet E = *LatticeDomain::box(d, radius).interior;
    bool usable = true;
    for (const Site& x : E)
      if (cm.is_open(x) && cm.censored_at(x)) usable = false;
    if (!usable) {
      ++skipped;
      continue;
    }
    const JumpOperator op = coarse_operator(env, cm, E, xi0_floor(d));
    RngStream rs = derive_stream(seed0, "mp2-instance", attempt);
    GridFunction h(op.domain);
    for (size_t k = 0; k < h.size(); ++k) h[k] = rs.uniform();
    GridFunction g(op.boundary);
    for (size_t k = 0; k < g.size(); ++k) g[k] = rs.uniform() - 0.3;
    GridFunction u = jump_dirichlet_solve(op, h, g);
    const double a1 = 0.4 * rs.uniform() - 0.2, a2 = 0.4 * rs.uniform() - 0.2;
    for (size_t k = 0; k < u.size(); ++k) {
      const Site& z = (*op.closure)[k];
      u[k] += a1 * z[0] + a2 * z[1];
    }
    const Mp2CheckResult r = mp2_check(op, cm, u, h, eps0);
    if (!r.pass) ++failures;
    csv << i << ',' << seed << ',' << radius << ',' << detail::fmt_g17(r.max_E) << ','
        << detail::fmt_g17(r.max_Eb) << ',' << detail::fmt_g17(r.rhs_sum_term) << ',' << r.contact_size
        << ',' << (r.pass ? 1 : 0) << '\n';
    ++i;
  }
  out.write("mp2_instances.csv", csv.str());
  nlohmann::json j;
  j["failures"] = failures;
  j["skipped_censored"] = skipped;
  out.write_json("summary.json", j);
  m.checker_failures = failures;
}

inline void mvi2_check_experiment(const ExperimentConfig& cfg, detail::OutputSink& out, RunManifest& m) {
  const int count = static_cast<int>(cfg.get_int("count", 30));
  const int ref_count = static_cast<int>(cfg.get_int("ref_count", count / 2));
  const uint64_t seed0 = cfg.get_seed("seed", 1);
  const int d = static_cast<int>(cfg.get_int("d", 2));
  const double R = cfg.get_double("R", 10.0);
  const double sigma = cfg.get_double("sigma", 0.5);
  const double p = cfg.get_double("p", 1.0);
  const double eps0 = cfg.get_double("eps0", 0.2);
  const double p_open = cfg.get_double("p_open", 0.1);
  EnvSpec spec;
  spec.variant = EnvVariant::IidMaxJump;
  spec.d = d;
  spec.p_open = p_open;
  spec.eps0 = eps0;

  std::ostringstream csv;
  csv << "instance,seed,ratio,vacuous\n";
  double c_hat = 0.0, max_eval = 0.0;
  detail::StageTimer t(m, "instances");
  int i = 0;
  uint64_t attempt = 0;
  while (i < count) {
    const uint64_t seed = seed0 + attempt++;
    const int env_radius = static_cast<int>(R) + 14;
    const Environment env = Environment::generate(spec, seed, env_radius);
    const ClusterMap cm = build_cluster_map(env, eps0, env_radius);
    const SiteSet E = *LatticeDomain::ball_l2(d, R).interior;
    bool usable = true;
    for (const Site& x : E)
      if (cm.is_open(x) && cm.censored_at(x)) usable = false;
    if (!usable) continue;
    const JumpOperator op = coarse_operator(env, cm, E, xi0_floor(d));
    RngStream rs = derive_stream(seed0, "mvi2-instance", attempt);
    GridFunction g(op.boundary);
    for (size_t k = 0; k < g.size(); ++k) g[k] = 2.0 * rs.uniform() - 0.7;
    const GridFunction u = jump_dirichlet_solve(op, GridFunction(op.domain), g);
    const Mvi2CheckResult r = mvi2_check(op, cm, R, sigma, p, u, eps0);
    csv << i << ',' << seed << ',' << detail::fmt_g17(r.ratio) << ',' << (r.vacuous ? 1 : 0) << '\n';
    if (!r.vacuous) {
      if (i < ref_count)
        c_hat = std::max(c_hat, r.ratio);
      else
        max_eval = std::max(max_eval, r.ratio);
    }
    ++i;
  }
  out.write("mvi2_instances.csv", csv.str());
  const bool calibrated_pass = max_eval <= 1.5 * c_hat;
  nlohmann::json j;
  j["c_hat_reference"] = c_hat;
  j["max_eval_ratio"] = max_eval;
  j["calibrated_pass"] = calibrated_pass;
  out.write_json("summary.json", j);
  m.checker_failures = calibrated_pass ? 0 : 1;
}

inline void walk_clt(const ExperimentConfig& cfg, detail::OutputSink& out, RunManifest& m, int workers) {
  const int64_t n = cfg.get_int("n", 10000);
  const int M = static_cast<int>(cfg.get_int("M", 10000));
  const uint64_t walk_seed = cfg.get_seed("walk_seed", 1001);
  const Environment env = detail::environment_from_config(cfg, static_cast<int>(cfg.get_int("radius", 64)));
  CltReport rep;
  {
    detail::StageTimer t(m, "walks");
    rep = clt_covariance(env, n, M, walk_seed, workers);
  }
  std::ostringstream csv;
  csv << "coord,mean,mean_se,var,var_se,ks\n";
  for (int a = 0; a < env.d(); ++a)
    csv << a + 1 << ',' << detail::fmt_g17(rep.mean[static_cast<size_t>(a)]) << ','
        << detail::fmt_g17(rep.mean_se[static_cast<size_t>(a)]) << ','
        << detail::fmt_g17(rep.cov[static_cast<size_t>(a)][static_cast<size_t>(a)]) << ','
        << detail::fmt_g17(rep.diag_se[static_cast<size_t>(a)]) << ','
        << detail::fmt_g17(rep.ks[static_cast<size_t>(a)]) << '\n';
  out.write("clt.csv", csv.str());
  nlohmann::json j;
  j["n"] = n;
  j["M"] = M;
  nlohmann::json cov = nlohmann::json::array();
  for (int a = 0; a < env.d(); ++a) {
    nlohmann::json row = nlohmann::json::array();
    for (int b = 0; b < env.d(); ++b) row.push_back(rep.cov[static_cast<size_t>(a)][static_cast<size_t>(b)]);
    cov.push_back(row);
  }
  j["cov"] = cov;
  out.write_json("summary.json", j);
}

inline void transience(const ExperimentConfig& cfg, detail::OutputSink& out, RunManifest& m, int workers) {
  const EnvSpec spec = cfg.env_spec();
  const double eps0 = cfg.get_double("eps0", 0.1);
  const int K = static_cast<int>(cfg.get_int("K", 4));
  const int i_max = static_cast<int>(cfg.get_int("i_max", 3));
  const int M = static_cast<int>(cfg.get_int("M", 10000));
  const uint64_t seed = cfg.get_seed("seed", 1);
  TransienceOptions opt;
  opt.omega_env_samples = static_cast<int>(cfg.get_int("omega_envs", 20));
  opt.omega_radius_cap = static_cast<int>(cfg.get_int("omega_radius_cap", 96));
  TransienceReport rep;
  {
    detail::StageTimer t(m, "walks");
    rep = transience_iid_experiment(spec, eps0, K, i_max, M, seed, workers, opt);
  }
  std::ostringstream csv;
  csv << "i,visit_prob,ci_lo,ci_hi,omega_freq,omega_envs\n";
  for (int i = 1; i <= i_max; ++i) {
    const auto& p = rep.visit_prob[static_cast<size_t>(i - 1)];
    csv << i << ',' << detail::fmt_g17(p.p_hat) << ',' << detail::fmt_g17(p.lo) << ','
        << detail::fmt_g17(p.hi) << ',' << detail::fmt_g17(rep.omega_freq[static_cast<size_t>(i - 1)])
        << ',' << rep.omega_envs[static_cast<size_t>(i - 1)] << '\n';
  }
  out.write("transience.csv", csv.str());
  nlohmann::json j;
  j["K"] = K;
  j["i_max"] = i_max;
  j["M"] = M;
  j["cumulative"] = rep.cumulative;
  j["truncated"] = rep.truncated;
  out.write_json("summary.json", j);
}

inline void recurrence_contrast(const ExperimentConfig& cfg, detail::OutputSink& out, RunManifest& m,
                                int workers) {
  const int M = static_cast<int>(cfg.get_int("M", 2000));
  const uint64_t walk_seed = cfg.get_seed("walk_seed", 7);
  std::vector<int64_t> horizons;
  for (int h : cfg.get_int_list("horizons", "10000,1000000")) horizons.push_back(h);
  const Environment env = detail::environment_from_config(cfg, static_cast<int>(cfg.get_int("radius", 8)));
  HorizonVisits rep;
  {
    detail::StageTimer t(m, "walks");
    rep = visits_by_horizon(env, horizons, M, walk_seed, workers);
  }
  std::ostringstream csv;
  csv << "horizon,mean_visits,se\n";
  for (size_t i = 0; i < rep.horizons.size(); ++i)
    csv << rep.horizons[i] << ',' << detail::fmt_g17(rep.mean_visits[i]) << ','
        << detail::fmt_g17(rep.se[i]) << '\n';
  out.write("recurrence.csv", csv.str());
  nlohmann::json j;
  j["M"] = M;
  j["growth"] = rep.mean_visits.back() - rep.mean_visits.front();
  out.write_json("summary.json", j);
}

}  // namespace experiments

// ---------------------------------------------------------------------------
// dispatch / replay
// ---------------------------------------------------------------------------

inline RunManifest run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& outdir,
                                  int workers = 0) {
  if (workers <= 0) workers = default_workers();
  RunManifest m;
  m.kind = cfg.kind;
  m.config = cfg.params;
  const auto t0 = std::chrono::steady_clock::now();
  detail::OutputSink out(outdir, m);

  if (cfg.kind == "gen-env")
    experiments::gen_env(cfg, out, m);
  else if (cfg.kind == "stationary")
    experiments::stationary(cfg, out, m, workers);
  else if (cfg.kind == "phi-diagnostics")
    experiments::phi_diagnostics(cfg, out, m, workers);
  else if (cfg.kind == "mp-check")
    experiments::mp_check_experiment(cfg, out, m);
  else if (cfg.kind == "mvi-check")
    experiments::mvi_check_experiment(cfg, out, m);
  else if (cfg.kind == "cutoff-check")
    experiments::cutoff_check_experiment(cfg, out, m);
  else if (cfg.kind == "perc-stats")
    experiments::perc_stats(cfg, out, m, workers);
  else if (cfg.kind == "mp2-check")
    experiments::mp2_check_experiment(cfg, out, m);
  else if (cfg.kind == "mvi2-check")
    experiments::mvi2_check_experiment(cfg, out, m);
  else if (cfg.kind == "walk-clt")
    experiments::walk_clt(cfg, out, m, workers);
  else if (cfg.kind == "transience")
    experiments::transience(cfg, out, m, workers);
  else if (cfg.kind == "recurrence-contrast")
    experiments::recurrence_contrast(cfg, out, m, workers);
  else
    throw std::invalid_argument("unknown experiment kind '" + cfg.kind + "'");

  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream mf(outdir / "manifest.json", std::ios::binary);
  mf << m.to_json().dump(2) << "\n";
  return m;
}

struct ReplayReport {
  bool match = true;
  std::vector<std::string> divergent_files;
  std::vector<std::string> missing_files;
  RunManifest rerun;
};

inline ReplayReport replay(const std::filesystem::path& manifest_path,
                           const std::filesystem::path& outdir, int workers = 0) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw std::runtime_error("replay: cannot open " + manifest_path.string());
  nlohmann::json j;
  in >> j;
  const RunManifest original = RunManifest::from_json(j);
  ExperimentConfig cfg;
  cfg.kind = original.kind;
  cfg.params = original.config;

  ReplayReport rep;
  rep.rerun = run_experiment(cfg, outdir, workers);
  std::map<std::string, std::string> fresh;
  for (const auto& [file, digest] : rep.rerun.outputs) fresh[file] = digest;
  for (const auto& [file, digest] : original.outputs) {
    auto it = fresh.find(file);
    if (it == fresh.end()) {
      rep.missing_files.push_back(file);
      rep.match = false;
    } else if (it->second != digest) {
      rep.divergent_files.push_back(file);
      rep.match = false;
    }
  }
  return rep;
}

}  // namespace rwre

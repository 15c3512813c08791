#pragma once

// Environment file format: a structured-text header followed by one CSV row
// per site of the materialized box, row-major order, (stay, axis[1..d]).
// Values are written as hex floats so files round-trip bit-exactly.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "rwre/environment.hpp"

namespace rwre {

inline constexpr int kEnvFormatVersion = 1;

inline std::string environment_to_text(const Environment& env) {
  std::ostringstream os;
  os << "rwre-env " << kEnvFormatVersion << "\n";
  os << "d " << env.d() << "\n";
  os << "radius " << env.radius() << "\n";
  os << "seed " << env.seed() << "\n";
  os << "lazy_removed " << (env.laziness_removed() ? 1 : 0) << "\n";
  os << "spec " << env.spec().to_string() << "\n";
  os << "table\n";
  char buf[64];
  const int d = env.d();
  for (const SiteKernel& k : env.table()) {
    std::snprintf(buf, sizeof buf, "%a", k.stay);
    os << buf;
    for (int i = 0; i < d; ++i) {
      std::snprintf(buf, sizeof buf, "%a", k.axis[static_cast<size_t>(i)]);
      os << ',' << buf;
    }
    os << '\n';
  }
  return os.str();
}

inline void save_environment(const Environment& env, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_environment: cannot open " + path.string());
  out << environment_to_text(env);
  if (!out) throw std::runtime_error("save_environment: write failed for " + path.string());
}

inline Environment environment_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;

  auto expect_kv = [&](const std::string& key) -> std::string {
    if (!std::getline(is, line)) throw std::runtime_error("env file: truncated header, expected '" + key + "'");
    if (line.rfind(key + " ", 0) != 0) throw std::runtime_error("env file: expected '" + key + "', got '" + line + "'");
    return line.substr(key.size() + 1);
  };

  const std::string magic = expect_kv("rwre-env");
  if (std::stoi(magic) != kEnvFormatVersion) throw std::runtime_error("env file: unsupported version " + magic);
  const int d = std::stoi(expect_kv("d"));
  const int radius = std::stoi(expect_kv("radius"));
  const uint64_t seed = std::strtoull(expect_kv("seed").c_str(), nullptr, 10);
  const bool lazy_removed = std::stoi(expect_kv("lazy_removed")) != 0;
  const EnvSpec spec = EnvSpec::parse(expect_kv("spec"), d);
  if (!std::getline(is, line) || line != "table") throw std::runtime_error("env file: missing table marker");

  const int64_t n = box_count(d, radius);
  std::vector<SiteKernel> kernels;
  kernels.reserve(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    if (!std::getline(is, line)) throw std::runtime_error("env file: table truncated at row " + std::to_string(r));
    SiteKernel k;
    const char* p = line.c_str();
    char* end = nullptr;
    k.stay = std::strtod(p, &end);
    for (int i = 0; i < d; ++i) {
      if (*end != ',') throw std::runtime_error("env file: bad row " + std::to_string(r));
      p = end + 1;
      k.axis[static_cast<size_t>(i)] = std::strtod(p, &end);
    }
    kernels.push_back(k);
  }
  return Environment::from_parts(spec, seed, radius, lazy_removed, std::move(kernels));
}

inline Environment load_environment(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_environment: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return environment_from_text(ss.str());
}

}  // namespace rwre

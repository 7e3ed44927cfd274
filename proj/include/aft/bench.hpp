#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "aft/tensor.hpp"

namespace aft {

/// Latency summary over repeated runs of one forward pass. Times are wall
/// clock, single threaded. p95 uses the nearest-rank method.
struct BenchResult {
  std::string name;
  int warmup = 0;
  int iterations = 0;
  double min_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
};

/// Runs `step` warmup + iters times and collects timing stats. At least 10
/// measured iterations are required for the percentiles to mean anything.
template <typename F>
BenchResult bench_latency(std::string name, F&& step, int iters, int warmup) {
  require(iters >= 10, "bench: at least 10 iterations required, got ", iters);
  require(warmup >= 0, "bench: warmup must be non-negative");

  for (int i = 0; i < warmup; ++i) step();

  std::vector<double> ms(iters);
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    step();
    const auto t1 = std::chrono::steady_clock::now();
    ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  std::sort(ms.begin(), ms.end());

  BenchResult r;
  r.name = std::move(name);
  r.warmup = warmup;
  r.iterations = iters;
  r.min_ms = ms.front();
  r.median_ms = (iters % 2 == 1)
                    ? ms[iters / 2]
                    : 0.5 * (ms[iters / 2 - 1] + ms[iters / 2]);
  r.p95_ms = ms[static_cast<std::size_t>(
                    std::ceil(0.95 * static_cast<double>(iters))) -
                1];
  return r;
}

inline std::string render_text(const BenchResult& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << r.name << ": min " << r.min_ms << " ms, median " << r.median_ms
     << " ms, p95 " << r.p95_ms << " ms  (" << r.iterations << " iters, "
     << r.warmup << " warmup, single thread)";
  return os.str();
}

inline nlohmann::ordered_json to_json(const BenchResult& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["warmup"] = r.warmup;
  j["iterations"] = r.iterations;
  j["min_ms"] = r.min_ms;
  j["median_ms"] = r.median_ms;
  j["p95_ms"] = r.p95_ms;
  return j;
}

}  // namespace aft

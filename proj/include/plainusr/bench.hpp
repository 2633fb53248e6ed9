#pragma once

// Wall-clock latency harness. Warmup runs are discarded; the median and p95
// (nearest rank) are taken over the timed runs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "plainusr/init.hpp"
#include "plainusr/model.hpp"
#include "plainusr/parallel.hpp"

namespace plainusr {

struct LatencyStats {
  std::vector<double> samples_ms;  // timed runs, in execution order
  double median_ms = 0;
  double p95_ms = 0;
  double min_ms = 0;
  double mean_ms = 0;
};

inline LatencyStats summarize(std::vector<double> samples) {
  LatencyStats s;
  s.samples_ms = samples;
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  s.median_ms = n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * double(n)));
  s.p95_ms = samples[std::max<std::size_t>(rank, 1) - 1];
  s.min_ms = samples.front();
  double sum = 0;
  for (double v : samples) sum += v;
  s.mean_ms = sum / double(n);
  return s;
}

// Times fn() `iters` times after `warmup` untimed calls.
inline LatencyStats bench_callable(const std::function<void()>& fn, std::size_t warmup, std::size_t iters) {
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> samples;
  samples.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return summarize(std::move(samples));
}

struct Environment {
  std::string compiler;
  std::string cpu;
  unsigned hardware_threads = 0;
  int threads = 1;
  bool optimized = false;

  nlohmann::json to_json() const {
    return {{"compiler", compiler},
            {"cpu", cpu},
            {"hardware_threads", hardware_threads},
            {"threads", threads},
            {"optimized", optimized}};
  }
};

inline Environment environment_fingerprint() {
  Environment e;
#if defined(__clang__)
  e.compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  e.compiler = "gcc " __VERSION__;
#else
  e.compiler = "unknown";
#endif
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) e.cpu = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  }
  if (e.cpu.empty()) e.cpu = "unknown";
  e.hardware_threads = std::thread::hardware_concurrency();
  e.threads = num_threads();
#ifdef NDEBUG
  e.optimized = true;
#endif
  return e;
}

struct BenchReport {
  static constexpr int schema_version = 1;
  std::size_t height = 0, width = 0;
  std::size_t warmup = 0, iters = 0;
  Form form = Form::training;
  LatencyStats stats;
  Environment env;

  nlohmann::json to_json() const {
    return {{"schema_version", schema_version},
            {"input", {{"height", height}, {"width", width}}},
            {"form", form == Form::fused ? "fused" : "training"},
            {"warmup", warmup},
            {"iters", iters},
            {"median_ms", stats.median_ms},
            {"p95_ms", stats.p95_ms},
            {"min_ms", stats.min_ms},
            {"mean_ms", stats.mean_ms},
            {"samples_ms", stats.samples_ms},
            {"environment", env.to_json()}};
  }
};

// Times one forward pass of m on a fixed random 1x3xhxw input: training-form
// models run the split/concat schedule, fused models the in-place one.
// `threads` operator threads are used for the duration of the call.
template <class T>
BenchReport bench(const PlainUSRModel<T>& m, std::size_t h, std::size_t w, std::size_t warmup, std::size_t iters,
                  int threads = 1) {
  Rng rng(0);
  const auto x = random_tensor<T>(Shape4{1, m.config.in_channels, h, w}, rng);
  const int saved = num_threads();
  set_num_threads(threads);
  BenchReport r;
  r.height = h;
  r.width = w;
  r.warmup = warmup;
  r.iters = iters;
  r.form = m.form;
  try {
    r.stats = bench_callable(
        [&] {
          auto y = m.form == Form::fused ? forward_fused(m, x) : forward_train(m, x);
          (void)y;
        },
        warmup, iters);
    r.env = environment_fingerprint();
  } catch (...) {
    set_num_threads(saved);
    throw;
  }
  set_num_threads(saved);
  return r;
}

}  // namespace plainusr

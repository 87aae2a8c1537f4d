#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "pvf/dataset.hpp"
#include "pvf/tensor.hpp"

namespace pvf::testing {

struct GradCheckResult {
  bool ok = true;
  double worst_excess = 0.0;  // largest |a - n| - tolerance seen
  std::size_t checked = 0;
  std::string worst;          // description of the worst entry
};

// Compares the tape gradient of `loss_fn` with central differences for every
// entry of every tensor in `wrt`. Tolerance: atol + rtol * max(|a|, |n|).
inline GradCheckResult gradcheck(const std::function<Tensor(Graph&)>& loss_fn,
                                 std::vector<std::pair<std::string, Tensor>> wrt,
                                 double eps = 1e-5, double rtol = 1e-4, double atol = 1e-6) {
  for (auto& [name, t] : wrt) t.zero_grad();
  Graph g;
  Tensor loss = loss_fn(g);
  g.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& [name, t] : wrt) {
    const auto gr = t.grad();
    analytic.emplace_back(gr.begin(), gr.end());
  }

  auto eval = [&] {
    Graph probe(Graph::Mode::kInference);
    return loss_fn(probe).item();
  };

  GradCheckResult r;
  r.worst_excess = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto data = wrt[k].second.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = eval();
      data[i] = saved - eps;
      const double down = eval();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double excess =
          std::abs(a - numeric) - (atol + rtol * std::max(std::abs(a), std::abs(numeric)));
      ++r.checked;
      if (excess > r.worst_excess) {
        r.worst_excess = excess;
        std::ostringstream os;
        os << wrt[k].first << '[' << i << "] analytic " << a << " numeric " << numeric;
        r.worst = os.str();
      }
      if (excess > 0.0) r.ok = false;
    }
  }
  return r;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline void fill_random(Tensor t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
}

// Contiguous series starting at 05:00 with the given step, values as given.
inline RawSeries series_from(const std::vector<double>& values, std::int64_t step_seconds = 900,
                             double capacity = 100.0) {
  RawSeries s;
  s.capacity_mw = capacity;
  s.step_seconds = step_seconds;
  for (std::size_t i = 0; i < values.size(); ++i) {
    s.timestamps.push_back(1420070400 + 5 * 3600 + static_cast<Timestamp>(i) * step_seconds);
    s.values.push_back(values[i]);
  }
  return s;
}

// A clean sine wave in [0, 1]; `period` in samples.
inline std::vector<double> sine_values(std::size_t n, double period, double phase = 0.0) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = 0.5 + 0.5 * std::sin(2.0 * 3.14159265358979323846 * static_cast<double>(i) / period +
                                phase);
  }
  return v;
}

// Fresh empty directory under the system temp path.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("pvf_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace pvf::testing

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace immune {

// Absolute tolerance used for probability/row normalization checks.
constexpr double kProbTol = 1e-9;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(sum_i exp(x[i])) with the max subtracted first; tolerates -inf entries.
inline double log_sum_exp(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

// Softmax of a score vector, computed in log domain. Scores may include
// -inf (those entries get probability 0).
inline std::vector<double> softmax(std::span<const double> scores) {
  double lse = log_sum_exp(scores);
  std::vector<double> out(scores.size(), 0.0);
  for (size_t i = 0; i < scores.size(); ++i) {
    out[i] = scores[i] == kNegInf ? 0.0 : std::exp(scores[i] - lse);
  }
  return out;
}

// Shortest-round-trip-safe decimal rendering, used for CSV cells so repeated
// runs emit byte-identical files.
inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return std::string(buf);
}

}  // namespace immune

#include <immune/distance.hpp>

#include <cmath>
#include <map>
#include <string>

#include <immune/errors.hpp>

namespace immune {

namespace {

// KL sums can round to a tiny negative for near-identical inputs even
// though the true value is >= 0; snap those to zero.
double clamp_kl(double sum) { return (sum < 0.0 && sum > -1e-12) ? 0.0 : sum; }

}  // namespace

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw SupportMismatchError("kl_divergence: supports differ in size (" +
                               std::to_string(p.size()) + " vs " + std::to_string(q.size()) +
                               ")");
  }
  double sum = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) {
      throw SupportMismatchError("kl_divergence: p[" + std::to_string(i) +
                                 "] > 0 but q[" + std::to_string(i) + "] = 0");
    }
    sum += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return clamp_kl(sum);
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw SupportMismatchError("tv_distance: supports differ in size (" +
                               std::to_string(p.size()) + " vs " + std::to_string(q.size()) +
                               ")");
  }
  double sum = 0.0;
  for (size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - q[i]);
  return 0.5 * sum;
}

namespace {

// Align two trajectory distributions on the union of their supports,
// keyed by token sequence.
std::map<std::vector<int>, std::pair<double, double>> align(const TrajectoryDistribution& p,
                                                            const TrajectoryDistribution& q) {
  std::map<std::vector<int>, std::pair<double, double>> joint;
  for (const auto& wt : p.support) joint[wt.traj.token_ids].first = wt.prob;
  for (const auto& wt : q.support) joint[wt.traj.token_ids].second = wt.prob;
  return joint;
}

}  // namespace

double kl_divergence(const TrajectoryDistribution& p, const TrajectoryDistribution& q) {
  double sum = 0.0;
  for (const auto& [tokens, pq] : align(p, q)) {
    auto [pi, qi] = pq;
    if (pi <= 0.0) continue;
    if (qi <= 0.0) {
      throw SupportMismatchError(
          "kl_divergence: trajectory with p > 0 has q = 0 (support mismatch)");
    }
    sum += pi * (std::log(pi) - std::log(qi));
  }
  return clamp_kl(sum);
}

double tv_distance(const TrajectoryDistribution& p, const TrajectoryDistribution& q) {
  double sum = 0.0;
  for (const auto& [tokens, pq] : align(p, q)) sum += std::abs(pq.first - pq.second);
  return 0.5 * sum;
}

}  // namespace immune

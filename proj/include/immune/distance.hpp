#pragma once

#include <span>

#include <immune/policy.hpp>

namespace immune {

/**
 * KL(p || q) in nats over a shared index space. Terms with p_i = 0
 * contribute 0; p_i > 0 with q_i = 0 violates absolute continuity and
 * throws SupportMismatchError, as do length mismatches. Bit-identical
 * inputs return exactly 0.
 */
double kl_divergence(std::span<const double> p, std::span<const double> q);

// Total variation distance: max_A |p(A) - q(A)| = (1/2) sum |p_i - q_i|.
double tv_distance(std::span<const double> p, std::span<const double> q);

// Trajectory-distribution overloads; supports are aligned by token
// sequence, and mass present in q but not p contributes 0 to the KL sum.
double kl_divergence(const TrajectoryDistribution& p, const TrajectoryDistribution& q);
double tv_distance(const TrajectoryDistribution& p, const TrajectoryDistribution& q);

}  // namespace immune

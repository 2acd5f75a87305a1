#pragma once

#include <cstdint>
#include <span>

#include "mrm/error.hpp"

namespace mrm::bench {

// Inverse-CDF Pareto sampling clipped to a catalog of N ranks:
//   X = x_m / u^(1/alpha), rank = min(floor(X), N), u in (0,1).
// With alpha = 1, x_m = 1: P(rank=1) = 1/2, P(rank=2) = 1/6.
uint64_t pareto_rank(double u, double alpha, double x_m, uint64_t n);

// Nearest-rank percentile: sort ascending, take element ceil(p/100 * n),
// 1-based. Throws EmptySamples.
double percentile(std::span<const double> samples, double p);

// exp(mean(ln x)). Throws NonPositiveInput unless every x > 0, EmptySamples
// on an empty span.
double geomean(std::span<const double> xs);

}  // namespace mrm::bench

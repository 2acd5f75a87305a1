#include "mrm/bench/stats_math.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace mrm::bench {

uint64_t pareto_rank(double u, double alpha, double x_m, uint64_t n) {
  if (!(u > 0.0) || !(u < 1.0)) raise(Errc::InvalidArgument, "u must be in (0,1)");
  if (!(alpha > 0.0) || !(x_m > 0.0)) raise(Errc::InvalidArgument, "alpha and x_m must be > 0");
  if (n == 0) raise(Errc::InvalidArgument, "n must be >= 1");
  double x = x_m / std::pow(u, 1.0 / alpha);
  if (x >= double(n)) return n;
  uint64_t rank = uint64_t(std::floor(x));
  return std::max<uint64_t>(rank, 1);
}

double percentile(std::span<const double> samples, double p) {
  if (samples.empty()) raise(Errc::EmptySamples, "percentile of empty sample set");
  if (!(p > 0.0) || p > 100.0) raise(Errc::InvalidArgument, "p must be in (0, 100]");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  size_t k = size_t(std::ceil(p / 100.0 * double(sorted.size())));
  if (k == 0) k = 1;
  return sorted[k - 1];
}

double geomean(std::span<const double> xs) {
  if (xs.empty()) raise(Errc::EmptySamples, "geomean of empty set");
  double acc = 0.0;
  for (double x : xs) {
    if (!(x > 0.0)) raise(Errc::NonPositiveInput, "geomean requires positive inputs");
    acc += std::log(x);
  }
  return std::exp(acc / double(xs.size()));
}

}  // namespace mrm::bench

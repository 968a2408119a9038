#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace heatrisk {

/// Hyndman-Fan type 7 sample quantile (linear interpolation between order
/// statistics, the R default). Ignores NaN entries.
double quantile_type7(std::span<const double> values, double prob);
double median(std::span<const double> values);
double mean(std::span<const double> values);

/// Effective sample size via Geyer's initial positive sequence estimator.
double effective_sample_size(std::span<const double> draws);
/// Split-chain potential scale reduction for a single chain.
double split_rhat(std::span<const double> draws);

using Rng = std::mt19937_64;

/// Named, independent substreams derived from one root seed. The same
/// (seed, name) pair always yields the same generator.
class RngStreams {
 public:
  explicit RngStreams(std::uint64_t root_seed) : root_(root_seed) {}
  Rng stream(std::string_view name) const;
  std::uint64_t root() const { return root_; }

 private:
  std::uint64_t root_;
};

/// 64-bit FNV-1a; used for stream naming and config hashes.
std::uint64_t fnv1a64(std::string_view data);

double sample_normal(Rng& rng);
double sample_uniform(Rng& rng);
double sample_gamma(Rng& rng, double shape, double scale);
/// Inverse-gamma with density proportional to x^-(shape+1) exp(-scale/x).
double sample_inverse_gamma(Rng& rng, double shape, double scale);
/// Wald / inverse Gaussian (Michael, Schucany and Haas transformation).
double sample_inverse_gaussian(Rng& rng, double mean, double shape);
double sample_exponential(Rng& rng, double rate);
std::uint64_t sample_poisson(Rng& rng, double mean);

}  // namespace heatrisk

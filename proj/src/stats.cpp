#include "heatrisk/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "heatrisk/error.hpp"

namespace heatrisk {

double quantile_type7(std::span<const double> values, double prob) {
  if (!(prob >= 0.0 && prob <= 1.0)) throw Error("invalid_argument", "quantile level outside [0,1]");
  std::vector<double> v;
  v.reserve(values.size());
  for (double x : values) {
    if (!std::isnan(x)) v.push_back(x);
  }
  if (v.empty()) throw Error("empty_input", "quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double median(std::span<const double> values) { return quantile_type7(values, 0.5); }

double mean(std::span<const double> values) {
  if (values.empty()) throw Error("empty_input", "mean of an empty sample");
  double s = 0.0;
  for (double x : values) s += x;
  return s / static_cast<double>(values.size());
}

double effective_sample_size(std::span<const double> draws) {
  const std::size_t n = draws.size();
  if (n < 4) return static_cast<double>(n);
  const double m = mean(draws);
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = draws[i] - m;
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += c[i] * c[i + lag];
    return s / static_cast<double>(n);
  };
  const double var0 = autocov(0);
  if (!(var0 > 0.0)) return static_cast<double>(n);
  // Sum consecutive autocorrelation pairs while they stay positive.
  double tau = -1.0;
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    const double pair = (autocov(2 * k) + autocov(2 * k + 1)) / var0;
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / static_cast<double>(n));
  return static_cast<double>(n) / tau;
}

double split_rhat(std::span<const double> draws) {
  const std::size_t half = draws.size() / 2;
  if (half < 2) return std::numeric_limits<double>::quiet_NaN();
  auto a = draws.subspan(0, half);
  auto b = draws.subspan(draws.size() - half, half);
  auto var = [](std::span<const double> x, double m) {
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
  };
  const double ma = mean(a), mb = mean(b);
  const double w = 0.5 * (var(a, ma) + var(b, mb));
  const double grand = 0.5 * (ma + mb);
  const double n = static_cast<double>(half);
  const double between = n * ((ma - grand) * (ma - grand) + (mb - grand) * (mb - grand));
  if (!(w > 0.0)) return between > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double var_plus = (n - 1.0) / n * w + between / n;
  return std::sqrt(var_plus / w);
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

Rng RngStreams::stream(std::string_view name) const {
  const std::uint64_t tag = fnv1a64(name);
  std::seed_seq seq{static_cast<std::uint32_t>(root_), static_cast<std::uint32_t>(root_ >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return Rng(seq);
}

double sample_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

double sample_uniform(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

double sample_gamma(Rng& rng, double shape, double scale) {
  return std::gamma_distribution<double>(shape, scale)(rng);
}

double sample_inverse_gamma(Rng& rng, double shape, double scale) {
  return scale / sample_gamma(rng, shape, 1.0);
}

double sample_inverse_gaussian(Rng& rng, double mu, double lambda) {
  if (!std::isfinite(mu)) {
    // Limit of a vanishing residual: the Levy distribution lambda / z^2.
    const double z = sample_normal(rng);
    return lambda / std::max(z * z, 1e-300);
  }
  const double z = sample_normal(rng);
  const double y = z * z;
  // Smaller root of the quadratic, written to avoid cancellation when mu >> lambda.
  const double r = mu * y / (2.0 * lambda);
  const double x = mu / (1.0 + r + std::sqrt(2.0 * r + r * r));
  const double u = sample_uniform(rng);
  return (u <= mu / (mu + x)) ? x : mu * mu / x;
}

double sample_exponential(Rng& rng, double rate) {
  return std::exponential_distribution<double>(rate)(rng);
}

std::uint64_t sample_poisson(Rng& rng, double mean) {
  if (!(mean > 0.0)) return 0;
  return static_cast<std::uint64_t>(std::poisson_distribution<long long>(mean)(rng));
}

}  // namespace heatrisk

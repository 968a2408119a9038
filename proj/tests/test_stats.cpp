#include <doctest.h>

#include <cmath>
#include <numeric>

#include "heatrisk/stats.hpp"

using namespace heatrisk;

TEST_CASE("type-7 quantiles") {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  CHECK(quantile_type7(v, 0.90) == doctest::Approx(90.1));
  CHECK(quantile_type7(v, 0.0) == 1.0);
  CHECK(quantile_type7(v, 1.0) == 100.0);
  CHECK(median(std::vector<double>{3, 1, 2, NAN}) == 2.0);
  CHECK(mean(std::vector<double>{1, 2, 3, 6}) == 3.0);
}

TEST_CASE("named streams are reproducible and distinct") {
  const RngStreams s(42);
  auto a = s.stream("gqrm"), b = s.stream("gqrm"), c = s.stream("ggpm");
  CHECK(a() == b());
  CHECK(s.stream("gqrm")() != c());
  CHECK(RngStreams(43).stream("gqrm")() != RngStreams(42).stream("gqrm")());
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("sampler moments") {
  Rng rng(5);
  const int n = 200000;
  double g = 0, ig = 0, w = 0, e = 0, p = 0, z = 0, z2 = 0;
  for (int i = 0; i < n; ++i) {
    g += sample_gamma(rng, 2.5, 2.0);
    ig += sample_inverse_gamma(rng, 4.0, 6.0);
    w += sample_inverse_gaussian(rng, 1.5, 3.0);
    e += sample_exponential(rng, 4.0);
    p += double(sample_poisson(rng, 3.7));
    const double x = sample_normal(rng);
    z += x;
    z2 += x * x;
  }
  CHECK(g / n == doctest::Approx(5.0).epsilon(0.01));
  CHECK(ig / n == doctest::Approx(2.0).epsilon(0.01));
  CHECK(w / n == doctest::Approx(1.5).epsilon(0.01));
  CHECK(e / n == doctest::Approx(0.25).epsilon(0.01));
  CHECK(p / n == doctest::Approx(3.7).epsilon(0.01));
  CHECK(std::abs(z / n) < 0.01);
  CHECK(z2 / n == doctest::Approx(1.0).epsilon(0.01));
  // Large means take a different branch.
  double big = 0;
  for (int i = 0; i < 20000; ++i) big += double(sample_poisson(rng, 250.0));
  CHECK(big / 20000 == doctest::Approx(250.0).epsilon(0.005));
}

TEST_CASE("MCMC diagnostics") {
  Rng rng(9);
  std::vector<double> iid(4000), ar(4000), drift(4000);
  double x = 0;
  for (std::size_t i = 0; i < iid.size(); ++i) {
    iid[i] = sample_normal(rng);
    x = 0.9 * x + sample_normal(rng);
    ar[i] = x;
    drift[i] = double(i) / 400.0 + 0.1 * sample_normal(rng);
  }
  const double ess_iid = effective_sample_size(iid);
  const double ess_ar = effective_sample_size(ar);
  CHECK(ess_iid > 3000);
  // AR(1) with phi=0.9: n (1-phi)/(1+phi) ~ 210.
  CHECK(ess_ar > 120);
  CHECK(ess_ar < 350);
  CHECK(split_rhat(iid) < 1.01);
  CHECK(split_rhat(drift) > 1.5);
}

#include <doctest.h>

#include <cmath>

#include "heatrisk/error.hpp"
#include "heatrisk/ggpm.hpp"

using namespace heatrisk;
using namespace heatrisk::ggpm;

namespace {

std::vector<Point> scattered_sites(std::size_t n, std::uint64_t seed, double extent = 60.0) {
  Rng rng(seed);
  std::vector<Point> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({extent * sample_uniform(rng), extent * sample_uniform(rng)});
  return out;
}

std::vector<double> spread_altitudes(std::size_t n) {
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(-1.5 + 3.0 * double(i) / double(n - 1));
  return out;
}

GgpmData make_data(const GgpmParams& p, std::size_t n_sites, int n_days, std::uint64_t seed) {
  GgpmData d;
  d.locations = scattered_sites(n_sites, seed);
  d.altitude_std = spread_altitudes(n_sites);
  for (std::size_t i = 0; i < n_sites; ++i) d.sites.push_back("G" + std::to_string(i));
  d.year = 2015;
  for (int t = 0; t < n_days; ++t) d.dates.push_back(add_days(make_date(2015, 5, 1), t));
  Rng rng(seed + 100);
  d.y = simulate(p, d.locations, d.altitude_std, n_days, rng).y;
  return d;
}

GgpmParams truth() {
  GgpmParams p;
  p.beta0 = 27.0;
  p.beta1 = -0.8;
  p.a = 0.6;
  p.sigma2_omega = 2.0;
  p.k = 0.08;
  p.nu = 1.0;
  p.sigma2_eps = 0.3;
  return p;
}

}  // namespace

TEST_CASE("Matern correlation") {
  for (double nu : {0.5, 1.0, 1.5, 2.5}) CHECK(matern(0.0, 0.3, nu) == 1.0);
  CHECK(matern(2.0, 1.0, 0.5) == doctest::Approx(0.1353352832366127).epsilon(1e-12));
  for (double x : {0.01, 0.3, 1.0, 4.0, 12.0}) {
    CHECK(matern(x, 1.0, 0.5) == doctest::Approx(std::exp(-x)).epsilon(1e-12));
    CHECK(matern(x, 1.0, 1.5) == doctest::Approx((1 + x) * std::exp(-x)).epsilon(1e-10));
    CHECK(matern(x, 1.0, 2.5) == doctest::Approx((1 + x + x * x / 3) * std::exp(-x)).epsilon(1e-10));
  }
  for (double nu : {0.5, 1.0, 2.0}) {
    double prev = 1.0;
    for (double h = 0.5; h < 80; h += 0.5) {
      const double c = matern(h, 0.1, nu);
      CHECK(c <= prev);
      CHECK(c >= 0.0);
      prev = c;
    }
    // Near zero the correlation approaches one continuously.
    CHECK(matern(1e-8, 0.1, nu) == doctest::Approx(1.0).epsilon(1e-6));
    for (double h : {1.0, 10.0, 35.0}) {
      const double e = 1e-6;
      const double fd = (matern(h, 0.1 + e, nu) - matern(h, 0.1 - e, nu)) / (2 * e);
      CHECK(matern_dk(h, 0.1, nu) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
  GgpmParams p;
  p.k = 0.1;
  CHECK(matern(p.practical_range(), p.k, 1.0) == doctest::Approx(0.14).epsilon(0.1));
  CHECK_THROWS_AS(matern(-1.0, 1.0, 1.0), Error);
}

TEST_CASE("unconstrained coordinates round trip") {
  const auto p = truth();
  const auto q = from_unconstrained(to_unconstrained(p), p.nu);
  CHECK(q.beta0 == doctest::Approx(p.beta0));
  CHECK(q.a == doctest::Approx(p.a));
  CHECK(q.sigma2_omega == doctest::Approx(p.sigma2_omega));
  CHECK(q.k == doctest::Approx(p.k));
  CHECK(q.sigma2_eps == doctest::Approx(p.sigma2_eps));
  CHECK(unconstrained_names().size() == 6);
  GgpmParams bad = p;
  bad.a = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("simulation without noise is the fixed-effect surface") {
  auto p = truth();
  p.sigma2_omega = 0.0;
  p.sigma2_eps = 0.0;
  const auto sites = scattered_sites(5, 1);
  const auto alt = spread_altitudes(5);
  Rng rng(1);
  const auto sim = simulate(p, sites, alt, 20, rng);
  for (Eigen::Index s = 0; s < 5; ++s) {
    for (Eigen::Index t = 0; t < 20; ++t) CHECK(sim.y(s, t) == p.beta0 + p.beta1 * alt[std::size_t(s)]);
  }
}

TEST_CASE("simulated moments match the model") {
  auto p = truth();
  p.sigma2_eps = 0.0;
  const std::vector<Point> sites{{0, 0}, {10, 0}, {0, 25}};
  const std::vector<double> alt{0, 0, 0};
  Rng rng(4);
  const int n = 40000;
  const auto sim = simulate(p, sites, alt, n, rng);
  const Eigen::MatrixXd& x = sim.latent;
  const double var = p.stationary_variance();
  auto cov = [&](Eigen::Index i, Eigen::Index j, int lag) {
    double s = 0;
    for (int t = lag; t < n; ++t) s += x(i, t) * x(j, t - lag);
    return s / (n - lag);
  };
  CHECK(cov(0, 0, 0) / var == doctest::Approx(1.0).epsilon(0.06));
  CHECK(cov(0, 0, 1) / cov(0, 0, 0) == doctest::Approx(p.a).epsilon(0.05));
  CHECK(cov(0, 1, 0) / var == doctest::Approx(matern(10, p.k, p.nu)).epsilon(0.08));
  CHECK(cov(0, 2, 0) / var == doctest::Approx(matern(25, p.k, p.nu)).epsilon(0.1));
}

TEST_CASE("Kalman and dense likelihoods agree") {
  const auto p = truth();
  auto d = make_data(p, 6, 25, 2);
  d.y(1, 3) = NAN;
  d.y(4, 10) = NAN;
  for (Eigen::Index s = 0; s < 6; ++s) d.y(s, 12) = NAN;  // a day with no data
  for (const auto& q : {p, from_unconstrained(to_unconstrained(p) + Eigen::VectorXd::Constant(6, 0.2), 1.0)}) {
    const double kf = marginal_loglik(q, d);
    CHECK(std::isfinite(kf));
    CHECK(kf == doctest::Approx(marginal_loglik_dense(q, d)).epsilon(1e-9));
  }
  auto q = p;
  q.nu = 2.5;
  CHECK(marginal_loglik(q, d) == doctest::Approx(marginal_loglik_dense(q, d)).epsilon(1e-9));
}

TEST_CASE("analytic gradient matches finite differences") {
  const auto p = truth();
  auto d = make_data(p, 5, 30, 3);
  d.y(2, 7) = NAN;
  const Eigen::VectorXd theta = to_unconstrained(p) + Eigen::VectorXd::LinSpaced(6, -0.1, 0.15);
  const auto at = from_unconstrained(theta, p.nu);
  const Eigen::VectorXd g = marginal_loglik_gradient(at, d);
  for (Eigen::Index i = 0; i < 6; ++i) {
    const double e = 1e-5;
    Eigen::VectorXd up = theta, dn = theta;
    up(i) += e;
    dn(i) -= e;
    const double fd =
        (marginal_loglik(from_unconstrained(up, p.nu), d) - marginal_loglik(from_unconstrained(dn, p.nu), d)) / (2 * e);
    CHECK(g(i) == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("posterior mode recovers the generating parameters") {
  const auto p = truth();
  const auto d = make_data(p, 10, 150, 5);
  const auto f = fit(d);
  CHECK(f.converged);
  CHECK(f.params.a == doctest::Approx(p.a).epsilon(0.25));
  CHECK(std::abs(f.params.beta1 - p.beta1) < 0.2);
  CHECK(f.covariance.rows() == 6);
  CHECK(f.summary.size() == 6);
  for (const auto& iv : f.summary) {
    CHECK(iv.lower <= iv.estimate);
    CHECK(iv.estimate <= iv.upper);
  }
  // The mode beats the truth on the posterior it maximizes.
  CHECK(f.log_posterior >= log_posterior(to_unconstrained(p), d, {}) - 1e-6);
}

TEST_CASE("prediction") {
  auto p = truth();
  p.sigma2_eps = 1e-8;
  const auto d = make_data(p, 6, 20, 6);
  const auto at_station = predict(p, d, d.locations, d.altitude_std);
  CHECK((at_station.mean - d.y).cwiseAbs().maxCoeff() < 1e-3);
  CHECK(at_station.sd.maxCoeff() < 1e-2);

  const std::vector<Point> far{{1e5, 1e5}};
  const std::vector<double> far_alt{0.7};
  const auto away = predict(p, d, far, far_alt);
  for (Eigen::Index t = 0; t < 20; ++t) {
    CHECK(away.mean(0, t) == doctest::Approx(p.beta0 + p.beta1 * 0.7).epsilon(1e-9));
    CHECK(away.sd(0, t) == doctest::Approx(std::sqrt(p.stationary_variance() + p.sigma2_eps)).epsilon(1e-6));
  }

  const auto mid = predict(truth(), d, scattered_sites(15, 9), spread_altitudes(15));
  CHECK((mid.sd.array() >= 0.0).all());
  CHECK(mid.mean.allFinite());
  CHECK_THROWS_AS(predict(p, d, far, std::vector<double>{}), Error);
}

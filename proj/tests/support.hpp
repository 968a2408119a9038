#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <cmath>
#include <string>
#include <vector>

#include "heatrisk/domain.hpp"
#include "heatrisk/gqrm.hpp"
#include "heatrisk/stats.hpp"

namespace heatrisk::testing {

/// Inverse-CDF draw from AL(0, sigma, tau).
inline double sample_al(Rng& rng, double sigma, double tau) {
  const double u = sample_uniform(rng);
  if (u < tau) return sigma / (1 - tau) * std::log(u / tau);
  return -sigma / tau * std::log((1 - u) / (1 - tau));
}

struct PanelTruth {
  double rho = 0.4;
  double sigma = 1.0;
  double tau = 0.5;
  double base = 25.0;
  double seasonal = 3.0;
  double altitude_slope = -0.8;
};

/// Station panel following the quantile autoregression with constant rho and
/// sigma and no random effects.
inline gqrm::GqrmData quantile_panel(std::size_t n_sites, int n_years, int season_length, const PanelTruth& truth,
                                     std::uint64_t seed) {
  Rng rng(seed);
  gqrm::GqrmData d;
  d.season_length = season_length;
  for (int t = 0; t < n_years; ++t) d.years.push_back(2010 + t);
  d.y.resize(static_cast<Eigen::Index>(n_sites), n_years * season_length);
  for (std::size_t s = 0; s < n_sites; ++s) {
    d.sites.push_back("S" + std::to_string(s));
    d.locations.push_back({10.0 * double(s % 4) + 3.0 * sample_uniform(rng), 12.0 * double(s / 4) + 3.0 * sample_uniform(rng)});
    d.altitude_std.push_back(-1.5 + 3.0 * double(s) / double(n_sites - 1));
  }
  for (std::size_t s = 0; s < n_sites; ++s) {
    auto q = [&](int ell) {
      return truth.base + truth.seasonal * std::sin(2 * M_PI * ell / 365.0) + truth.altitude_slope * d.altitude_std[s];
    };
    for (int t = 1; t <= n_years; ++t) {
      double prev = q(1) + sample_al(rng, truth.sigma, truth.tau);
      d.y(static_cast<Eigen::Index>(s), (t - 1) * season_length) = prev;
      for (int ell = 2; ell <= season_length; ++ell) {
        const double y = q(ell) + truth.rho * (prev - q(ell - 1)) + sample_al(rng, truth.sigma, truth.tau);
        d.y(static_cast<Eigen::Index>(s), (t - 1) * season_length + ell - 1) = y;
        prev = y;
      }
    }
  }
  return d;
}

/// nx x ny unit-size square municipalities with the given side.
inline MunicipalityMap square_map(int nx, int ny, double side, double x0 = 0.0, double y0 = 0.0) {
  std::vector<Municipality> ms;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      Municipality m;
      m.id = "M" + std::to_string(j) + "_" + std::to_string(i);
      m.shape = rectangle_polygon({x0 + i * side, y0 + j * side, x0 + (i + 1) * side, y0 + (j + 1) * side});
      m.altitude_m = 100.0 * (i + j);
      ms.push_back(m);
    }
  }
  return MunicipalityMap(ms);
}

}  // namespace heatrisk::testing

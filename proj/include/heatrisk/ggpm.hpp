#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "heatrisk/domain.hpp"
#include "heatrisk/stats.hpp"

/// Gaussian spatiotemporal model for daily maxima: fixed effects plus a
/// latent AR(1)-in-time field with Matern spatial innovations and a nugget,
/// fitted separately per year.
namespace heatrisk::ggpm {

/// Matern correlation (k h)^nu K_nu(k h) / (Gamma(nu) 2^(nu-1)); 1 at h = 0.
double matern(double h, double k, double nu);
/// Derivative of `matern` with respect to k.
double matern_dk(double h, double k, double nu);

struct GgpmParams {
  double beta0 = 0.0;
  double beta1 = 0.0;  // per SD of altitude
  double a = 0.5;
  double sigma2_omega = 1.0;
  double k = 0.1;  // 1/km
  double nu = 1.0;
  double sigma2_eps = 0.1;

  void validate() const;
  /// Marginal variance of the latent field, sigma2_omega / (1 - a^2).
  double stationary_variance() const { return sigma2_omega / (1.0 - a * a); }
  /// Distance at which the correlation is about 0.13: sqrt(8 nu) / k.
  double practical_range() const;
};

/// Unconstrained coordinates used for optimization:
/// [beta0, beta1, atanh(a), log sigma_omega, log k, log sigma_eps].
Eigen::VectorXd to_unconstrained(const GgpmParams& p);
GgpmParams from_unconstrained(const Eigen::VectorXd& theta, double nu);
std::vector<std::string> unconstrained_names();

struct Simulation {
  Eigen::MatrixXd latent;  // sites x days
  Eigen::MatrixXd y;       // sites x days
};

/// Draws the latent field from its stationary distribution and evolves it
/// by AR(1) with Matern-correlated innovations.
Simulation simulate(const GgpmParams& params, std::span<const Point> sites,
                    std::span<const double> altitude_std, int n_days, Rng& rng);

/// One year of station data; NaN marks a missing observation.
struct GgpmData {
  std::vector<SiteId> sites;
  std::vector<Point> locations;
  std::vector<double> altitude_std;
  int year = 0;
  std::vector<Date> dates;
  Eigen::MatrixXd y;  // sites x days

  std::size_t n_sites() const { return sites.size(); }
  int n_days() const { return static_cast<int>(y.cols()); }
  void validate() const;

  static GgpmData from_stations(std::span<const StationSeries> stations, const StudyPeriod& period,
                                std::size_t year_index, const Standardizer& altitude);
};

struct GgpmPriors {
  double coef_variance = 1e4;
  double a_sd = 1.0;               // normal prior on atanh(a)
  double field_sd_rate = 0.46;     // exponential prior on sigma_omega
  double nugget_sd_rate = 0.92;    // exponential prior on sigma_eps
  double range0_km = 10.0;         // P(range < range0) = range_alpha
  double range_alpha = 0.05;
};

struct FitConfig {
  double nu = 1.0;
  GgpmPriors priors;
  int max_iterations = 500;
};

/// Exact Gaussian log-likelihood with the latent field integrated out, by
/// Kalman filtering over days. Missing observations are marginalized.
double marginal_loglik(const GgpmParams& params, const GgpmData& data);
/// Same quantity from the dense space-time covariance of all observations.
double marginal_loglik_dense(const GgpmParams& params, const GgpmData& data);
/// Analytic gradient of the log-likelihood in unconstrained coordinates.
Eigen::VectorXd marginal_loglik_gradient(const GgpmParams& params, const GgpmData& data);

double log_prior(const Eigen::VectorXd& theta, double nu, const GgpmPriors& priors);
double log_posterior(const Eigen::VectorXd& theta, const GgpmData& data, const FitConfig& config);

struct Interval {
  std::string name;
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct GgpmFit {
  int year = 0;
  GgpmParams params;
  Eigen::VectorXd theta;       // posterior mode, unconstrained
  Eigen::MatrixXd covariance;  // Laplace covariance, unconstrained
  std::vector<Interval> summary;  // beta0, beta1, a, sigma2_omega, k, sigma2_eps
  double log_posterior = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

/// Posterior mode by BFGS and 95% Laplace intervals mapped back from the
/// unconstrained scale.
GgpmFit fit(const GgpmData& data, const FitConfig& config = {});

struct Prediction {
  Eigen::MatrixXd mean;  // points x days
  Eigen::MatrixXd sd;
};

/// Predictive mean and sd of Y at new points for every day of the year,
/// conditioning on all station data of that year (plug-in parameters).
Prediction predict(const GgpmParams& params, const GgpmData& data, std::span<const Point> points,
                   std::span<const double> altitude_std);

}  // namespace heatrisk::ggpm

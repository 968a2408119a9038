#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "heatrisk/casecrossover.hpp"

/// Bayesian conditional Poisson models for case-crossover data: a binned
/// exposure effect with a second-order random-walk prior, holiday and
/// heatwave log relative risks, and one effect per stratum.
namespace heatrisk::epi {

/// Rate of the exponential prior on a standard deviation with P(sd > u) = alpha.
double pc_prior_rate(double u, double alpha);

/// Quadratic RW2 term (tau / 2) * sum_b (f_b - 2 f_{b-1} + f_{b-2})^2.
double rw2_penalty(std::span<const double> f, double tau);
/// Penalty minus the rank-(B-2) normalizing term (B - 2)/2 * log(tau / (2 pi)).
double rw2_neg_log_prior(std::span<const double> f, double tau);
/// D2' D2 for B bins.
Eigen::MatrixXd rw2_structure(int n_bins);

/// Equal-width bins over [lo, lo + n * width].
struct Binning {
  double lo = 0.0;
  double width = 1.0;
  int n = 1;

  static Binning equal_width(std::span<const double> values, int n_bins);
  int bin(double x) const;
  double midpoint(int b) const { return lo + (b + 0.5) * width; }
};

enum class Likelihood { Poisson, Conditional };

struct EpiSpec {
  int n_bins = 100;
  double pc_u = 0.1;
  double pc_alpha = 0.01;
  double beta_variance = 1000.0;
  double stratum_variance = 100.0;
  bool temperature = true;
  bool heatwave = false;
  Likelihood likelihood = Likelihood::Poisson;
  int tau_points = 25;
  std::optional<double> fixed_tau;

  void validate() const;
};

/// Flat per-row view of one exposure column (and optionally one heatwave
/// column) of a case-crossover dataset.
struct EpiData {
  std::vector<double> exposure;
  std::vector<std::uint8_t> outcome;
  std::vector<std::uint8_t> holiday;
  std::vector<std::uint8_t> heatwave;       // empty when not used
  std::vector<std::size_t> stratum_start;   // n_strata + 1 offsets

  std::size_t n_rows() const { return exposure.size(); }
  std::size_t n_strata() const { return stratum_start.empty() ? 0 : stratum_start.size() - 1; }
  void validate() const;

  static EpiData from_dataset(const cco::Dataset& data, std::size_t method,
                              std::optional<std::size_t> heatwave = std::nullopt);
};

/// Log probability that the case row is the event given one event in the
/// stratum: eta_case - log sum exp(eta).
double conditional_loglik(std::span<const double> eta, std::size_t case_index);

/// Negative log posterior of the latent vector given tau. The latent vector
/// is [fixed effects, curve coordinates, stratum effects]; the curve is
/// f = Z g with Z an orthonormal basis of sum-to-zero vectors. Fixed
/// effects are (intercept, holiday[, heatwave]) for the Poisson likelihood
/// and (holiday[, heatwave]) for the conditional one.
class EpiPosterior {
 public:
  EpiPosterior(const EpiData& data, const EpiSpec& spec);

  std::size_t dim() const { return n_fixed_ + n_basis_ + n_strata_effects_; }
  std::size_t n_fixed() const { return n_fixed_; }
  std::size_t n_basis() const { return n_basis_; }
  std::vector<std::string> fixed_names() const;
  const Binning& binning() const { return binning_; }
  const Eigen::MatrixXd& basis() const { return z_; }

  double value(const Eigen::VectorXd& x, double tau) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& x, double tau) const;
  Eigen::VectorXd initial() const;
  /// Curve values per bin.
  Eigen::VectorXd curve(const Eigen::VectorXd& x) const;

  struct Mode {
    Eigen::VectorXd x;
    Eigen::MatrixXd covariance;  // marginal covariance of fixed + curve coordinates
    double log_marginal = 0.0;   // Laplace approximation in log tau, up to a constant
    int iterations = 0;
  };
  /// Newton iterations with backtracking. Throws "nonconvergence".
  Mode mode(double tau, const Eigen::VectorXd& start) const;

 private:
  struct Local;
  Local evaluate(const Eigen::VectorXd& x, double tau, bool second_order) const;
  void linear_predictor(const Eigen::VectorXd& x, std::vector<double>& eta) const;
  double fixed_value(std::size_t r, std::size_t i) const;

  const EpiData& data_;
  EpiSpec spec_;
  Binning binning_;
  std::vector<int> bins_;
  std::vector<std::size_t> stratum_of_;
  std::size_t n_fixed_ = 0, n_basis_ = 0, n_strata_effects_ = 0;
  Eigen::MatrixXd z_;        // B x (B-1)
  Eigen::MatrixXd penalty_;  // Z' K Z
  double pc_rate_ = 0.0;
};

struct Summary {
  double mean = 0.0;
  double median = 0.0;
  double lower = 0.0;  // 2.5%
  double upper = 0.0;  // 97.5%
};

struct EpiFit {
  EpiSpec spec;
  Binning binning;
  std::vector<std::string> fixed_names;
  std::vector<Summary> fixed;
  std::vector<Summary> curve;  // per bin, empty without temperature
  std::vector<double> log_tau;
  std::vector<double> weights;
  double tau_mode = 0.0;
  std::size_t n_strata = 0;
  std::size_t n_rows = 0;
  bool separation = false;
  std::vector<std::string> warnings;

  const Summary& coefficient(std::string_view name) const;
};

/// MAP and Laplace summaries, with log tau integrated over a grid centred
/// on the mode of its Laplace-approximate marginal.
EpiFit fit(const EpiData& data, const EpiSpec& spec = {});

struct RiskCurve {
  std::vector<double> bin_mid;
  std::vector<double> logrr_median, logrr_lower, logrr_upper;
  std::vector<double> rr;  // exp(logrr_median)
  double mmt = 0.0;
  int mmt_bin = 0;
};

/// Minimum-mortality temperature and the curve re-centred at it.
RiskCurve risk_curve(const EpiFit& fit);

struct HeatwaveResult {
  std::string method;
  std::string heatwave_id;
  bool with_temperature = true;
  double prevalence = 0.0;  // fraction of rows flagged
  bool skipped = false;
  std::string warning;
  Summary beta;
  double rr = 1.0, rr_lower = 1.0, rr_upper = 1.0;
};

/// One fit per heatwave column. Constant columns are skipped with a warning.
std::vector<HeatwaveResult> fit_heatwave_models(const cco::Dataset& data, std::size_t method,
                                                std::span<const std::size_t> heatwave_columns,
                                                bool with_temperature, EpiSpec spec = {});

}  // namespace heatrisk::epi

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "heatrisk/domain.hpp"
#include "heatrisk/stats.hpp"

/// Spatial quantile autoregression for daily maxima, fitted per quantile
/// level by Metropolis-within-Gibbs under an asymmetric Laplace working
/// likelihood.
namespace heatrisk::gqrm {

/// Check (tilted absolute) loss u * (tau - 1{u < 0}).
double al_checkloss(double u, double tau);
/// Log density of AL(0, sigma, tau): log(tau (1 - tau) / sigma) - check(u / sigma).
double al_log_density(double u, double sigma, double tau);

struct QuantileLevelSet {
  std::vector<double> levels;

  /// {0.05, 0.10, 0.20, ..., 0.80, 0.90, 0.95}
  static QuantileLevelSet defaults();
  void validate() const;
};

/// Gaussian-process hyperparameters of one spatial field with exponential
/// covariance variance * exp(-decay * h).
struct FieldHyper {
  double mean = 0.0;
  double variance = 1.0;
  double decay = 1.0;
};

struct GqrmParams {
  double beta0 = 0.0;     // global intercept
  double trend = 0.0;     // alpha, per year (centered year index)
  double beta_sin = 0.0;  // harmonic coefficients
  double beta_cos = 0.0;
  double beta_alt = 0.0;  // standardized altitude
  Eigen::VectorXd site_intercept;    // beta0(s)
  Eigen::VectorXd site_trend;        // alpha(s)
  Eigen::VectorXd year_effect;       // psi_t
  Eigen::MatrixXd site_year_effect;  // eta_t(s), sites x years
  Eigen::VectorXd log_scale;         // Z_sigma(s) = log sigma(s)
  Eigen::VectorXd ar_logit;          // Z_rho(s) = log((1 + rho) / (1 - rho))
  FieldHyper scale_field;
  FieldHyper ar_field;
  FieldHyper intercept_field;  // mean fixed at 0
  FieldHyper trend_field;      // mean fixed at 0
  double year_variance = 1.0;
  double site_year_variance = 1.0;

  static GqrmParams zeros(std::size_t n_sites, std::size_t n_years);
  std::size_t n_sites() const { return static_cast<std::size_t>(site_intercept.size()); }
  std::size_t n_years() const { return static_cast<std::size_t>(year_effect.size()); }
  double rho(std::size_t s) const;
  double sigma(std::size_t s) const;
  void validate() const;

  static std::vector<std::string> names(std::size_t n_sites, std::size_t n_years);
  Eigen::VectorXd flatten() const;
  static GqrmParams unflatten(const Eigen::VectorXd& v, std::size_t n_sites, std::size_t n_years);
};

/// Year index t (1-based) centered at the midpoint of 1..n_years.
double centered_year(int t, int n_years);

/// q_{t,l}(s): fixed effects, harmonics and random effects.
double location(const GqrmParams& p, std::size_t site, double altitude_std, int t, int ell);

/// tau-level conditional quantile given the previous day's value:
/// q_{t,l}(s) + rho(s) * (y_prev - q_{t,l-1}(s)). Requires ell >= 2.
double conditional_quantile(const GqrmParams& p, std::size_t site, double altitude_std, int t,
                            int ell, double y_prev);

/// Gap-free station panel for one fit.
struct GqrmData {
  std::vector<SiteId> sites;
  std::vector<Point> locations;
  std::vector<double> altitude_std;
  std::vector<int> years;  // calendar years, t = 1..n_years
  int season_length = 0;   // L; l = 1 conditions only
  Eigen::MatrixXd y;       // sites x (n_years * L)

  std::size_t n_sites() const { return sites.size(); }
  int n_years() const { return static_cast<int>(years.size()); }
  double value(std::size_t s, int t, int ell) const {
    return y(static_cast<Eigen::Index>(s),
             static_cast<Eigen::Index>((t - 1) * season_length + ell - 1));
  }
  void validate() const;

  /// Stations must be gap-free and the season length constant across years.
  static GqrmData from_stations(std::span<const StationSeries> stations, const StudyPeriod& period,
                                const Standardizer& altitude);
};

struct GqrmPriors {
  double coef_variance = 1e4;  // global coefficients
  double mean_variance = 1e4;  // GP means of the log-scale and AR fields
  double ig_shape = 2.0;       // inverse-gamma on every variance
  double ig_scale = 1.0;
  /// Improper flat prior on the global intercept (makes the sampler exactly
  /// location-equivariant).
  bool flat_intercept = false;
  /// Pin the annual-effect variances instead of sampling them.
  std::optional<double> fixed_year_variance;
  std::optional<double> fixed_site_year_variance;
};

struct McmcConfig {
  int burn_in = 5000;
  int draws = 5000;
  int thin = 1;
  double target_acceptance = 0.44;
  int adapt_every = 50;
  std::uint64_t seed = 1;
};

struct ChainDiagnostics {
  std::map<std::string, double> ess;
  std::map<std::string, double> acceptance;
  double max_rhat = 1.0;
  std::string max_rhat_parameter;
  bool diverged = false;
  std::vector<std::string> warnings;
};

struct QuantileFit {
  double tau = 0.5;
  std::vector<std::string> names;
  Eigen::MatrixXd draws;  // kept draws x parameters
  GqrmParams posterior_median;
  ChainDiagnostics diagnostics;

  GqrmParams draw(Eigen::Index i) const;
};

/// Metropolis-within-Gibbs sampler. Conjugate Gibbs updates for every
/// Gaussian-conditional block (via the exponential-normal mixture form of
/// the AL), adaptive random-walk Metropolis for the log-scale and AR fields
/// and for the GP decays. Adaptation runs during burn-in only.
class GqrmSampler {
 public:
  GqrmSampler(GqrmData data, double tau, GqrmPriors priors, McmcConfig config);

  void step();
  void run();
  /// Runs at most `iterations` more steps (for checkpointed runs).
  void run_for(int iterations);
  bool done() const;
  int iteration() const { return iteration_; }
  const GqrmParams& state() const { return p_; }
  QuantileFit result() const;

  void save_checkpoint(std::ostream& os) const;
  /// Restores a sampler from `save_checkpoint` output; the data must be the
  /// same panel the checkpoint was written for.
  static GqrmSampler load_checkpoint(std::istream& is, GqrmData data, GqrmPriors priors);

 private:
  struct GpCache {
    double decay = 0.0;
    Eigen::MatrixXd inverse;
    double logdet = 0.0;
  };
  struct Adaptive {
    double log_step = std::log(0.5);
    int accepted = 0;
    int proposed = 0;
    int total_accepted = 0;
    int total_proposed = 0;
  };

  std::size_t obs_index(std::size_t s, int t, int ell) const;
  double harmonic_sin(int ell) const;
  double harmonic_cos(int ell) const;
  double site_year_constant(std::size_t s, int t) const;
  void compute_site_residuals(std::size_t s, double rho, std::vector<double>& out) const;
  void compute_residuals();
  double site_checkloss(const std::vector<double>& resid) const;
  GpCache make_cache(double decay) const;
  double field_conditional_logprior(const Eigen::VectorXd& z, const FieldHyper& h,
                                    const GpCache& gp, std::size_t s, double value) const;

  void update_ar_field();
  void update_scale_field();
  void update_field_hyper(Eigen::VectorXd& z, FieldHyper& h, GpCache& gp, Adaptive& decay_adapt,
                          bool sample_mean);
  void sample_mixture();
  void accumulate_site_year();
  void update_global();
  void update_site_intercept();
  void update_site_trend();
  void update_year_effects();
  void update_site_year_effects();
  void update_variances();
  bool metropolis(Adaptive& a, double log_ratio);
  void adapt();
  void record();
  void initialize();

  GqrmData data_;
  double tau_;
  GqrmPriors priors_;
  McmcConfig config_;
  Rng rng_;
  GqrmParams p_;
  Eigen::MatrixXd dist_;
  double decay_lo_ = 0.0, decay_hi_ = 0.0;
  GpCache gp_scale_, gp_ar_, gp_intercept_, gp_trend_;
  std::vector<Adaptive> ar_adapt_, scale_adapt_;
  Adaptive scale_decay_adapt_, ar_decay_adapt_, intercept_decay_adapt_, trend_decay_adapt_;
  int iteration_ = 0;
  int kept_ = 0;

  // Per-observation work arrays, indexed by obs_index (l >= 2 only).
  std::vector<double> resid_;
  std::vector<double> mix_;
  std::vector<double> site_checkloss_;
  Eigen::MatrixXd prec_sum_;   // sites x years: sum of 1/V
  Eigen::MatrixXd resp_sum_;   // sites x years: sum of (u - theta w)/V
  std::vector<double> sin_, cos_;
  Eigen::MatrixXd draws_;
};

QuantileFit fit(const GqrmData& data, double tau, const McmcConfig& config,
                const GqrmPriors& priors = {});

/// Plug-in conditional quantiles Q*(tau | y_{t,l-1}(s)) for l = 2..L.
struct QStarTable {
  double tau = 0.5;
  std::vector<SiteId> sites;
  std::vector<int> years;
  int season_length = 0;
  Eigen::MatrixXd values;  // sites x (n_years * (L - 1)), column (t-1)(L-1) + (l-2)

  double at(std::size_t s, int t, int ell) const {
    return values(static_cast<Eigen::Index>(s),
                  static_cast<Eigen::Index>((t - 1) * (season_length - 1) + ell - 2));
  }
};

QStarTable plugin_quantiles(const GqrmParams& params, double tau, const GqrmData& data);
/// Uses the posterior median of every parameter.
QStarTable plugin_quantiles(const QuantileFit& fit, const GqrmData& data);

/// Fraction of (s, t, l >= 2) with y <= Q*.
double empirical_coverage(const QStarTable& q, const GqrmData& data);

}  // namespace heatrisk::gqrm

#include "heatrisk/ggpm.hpp"

#include <ceres/ceres.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "heatrisk/error.hpp"

namespace heatrisk::ggpm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Eigen::MatrixXd correlation(std::span<const Point> a, std::span<const Point> b, double k,
                            double nu) {
  Eigen::MatrixXd c(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          matern(distance(a[i], b[j]), k, nu);
    }
  }
  return c;
}

// Cholesky with escalating diagonal jitter.
Eigen::LLT<Eigen::MatrixXd> robust_llt(const Eigen::MatrixXd& m) {
  double jitter = 0.0;
  const double scale = std::max(m.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  for (int attempt = 0; attempt < 6; ++attempt) {
    Eigen::MatrixXd mj = m;
    mj.diagonal().array() += jitter * scale;
    Eigen::LLT<Eigen::MatrixXd> llt(mj);
    if (llt.info() == Eigen::Success) return llt;
    jitter = jitter == 0.0 ? 1e-12 : jitter * 100.0;
  }
  throw Error("not_positive_definite", "covariance matrix is not positive definite");
}

std::vector<int> observed_rows(const Eigen::MatrixXd& y, Eigen::Index day) {
  std::vector<int> obs;
  for (Eigen::Index s = 0; s < y.rows(); ++s) {
    if (!std::isnan(y(s, day))) obs.push_back(static_cast<int>(s));
  }
  return obs;
}

Eigen::VectorXd fixed_mean(const GgpmParams& p, const GgpmData& d) {
  Eigen::VectorXd mu(static_cast<Eigen::Index>(d.n_sites()));
  for (std::size_t s = 0; s < d.n_sites(); ++s) {
    mu(static_cast<Eigen::Index>(s)) = p.beta0 + p.beta1 * d.altitude_std[s];
  }
  return mu;
}

struct FilterPass {
  double loglik = 0.0;
  std::vector<Eigen::VectorXd> m_pred, m_filt;
  std::vector<Eigen::MatrixXd> p_pred, p_filt;
};

// Kalman filter over days for the station latent state. Returns -inf log
// likelihood when an innovation covariance is not positive definite.
FilterPass kalman(const GgpmParams& p, const GgpmData& d, bool keep) {
  const auto n = static_cast<Eigen::Index>(d.n_sites());
  const Eigen::MatrixXd q = p.sigma2_omega * correlation(d.locations, d.locations, p.k, p.nu);
  const Eigen::VectorXd mu = fixed_mean(p, d);
  FilterPass out;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd cov = q / (1.0 - p.a * p.a);
  for (Eigen::Index day = 0; day < d.y.cols(); ++day) {
    if (keep) {
      out.m_pred.push_back(m);
      out.p_pred.push_back(cov);
    }
    const auto obs = observed_rows(d.y, day);
    if (!obs.empty()) {
      const auto no = static_cast<Eigen::Index>(obs.size());
      Eigen::VectorXd v(no);
      for (Eigen::Index i = 0; i < no; ++i) v(i) = d.y(obs[i], day) - mu(obs[i]) - m(obs[i]);
      Eigen::MatrixXd f = cov(obs, obs);
      f.diagonal().array() += p.sigma2_eps;
      Eigen::LLT<Eigen::MatrixXd> llt(f);
      if (llt.info() != Eigen::Success) {
        out.loglik = kNegInf;
        return out;
      }
      const Eigen::VectorXd fv = llt.solve(v);
      const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      out.loglik += -0.5 * (logdet + v.dot(fv) + static_cast<double>(no) * kLog2Pi);
      const Eigen::MatrixXd pso = cov(Eigen::all, obs);  // n x no
      const Eigen::MatrixXd gain = llt.solve(pso.transpose()).transpose();
      m += gain * v;
      cov -= gain * pso.transpose();
      cov = 0.5 * (cov + cov.transpose()).eval();
    }
    if (keep) {
      out.m_filt.push_back(m);
      out.p_filt.push_back(cov);
    }
    m *= p.a;
    cov = p.a * p.a * cov + q;
  }
  if (!std::isfinite(out.loglik)) out.loglik = kNegInf;
  return out;
}

struct Observed {
  std::vector<std::pair<int, int>> index;  // (site, day)
  Eigen::VectorXd resid;
};

Observed gather(const GgpmParams& p, const GgpmData& d) {
  Observed o;
  const Eigen::VectorXd mu = fixed_mean(p, d);
  std::vector<double> r;
  for (Eigen::Index day = 0; day < d.y.cols(); ++day) {
    for (Eigen::Index s = 0; s < d.y.rows(); ++s) {
      if (std::isnan(d.y(s, day))) continue;
      o.index.emplace_back(static_cast<int>(s), static_cast<int>(day));
      r.push_back(d.y(s, day) - mu(s));
    }
  }
  o.resid = Eigen::Map<Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
  return o;
}

double ar_factor(double a, int lag) { return std::pow(a, lag) / (1.0 - a * a); }

Eigen::MatrixXd dense_covariance(const GgpmParams& p, const GgpmData& d, const Observed& o) {
  const Eigen::MatrixXd c = correlation(d.locations, d.locations, p.k, p.nu);
  const auto n = static_cast<Eigen::Index>(o.index.size());
  Eigen::MatrixXd sigma(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const auto [si, di] = o.index[static_cast<std::size_t>(i)];
      const auto [sj, dj] = o.index[static_cast<std::size_t>(j)];
      double v = p.sigma2_omega * ar_factor(p.a, std::abs(di - dj)) * c(si, sj);
      if (i == j) v += p.sigma2_eps;
      sigma(i, j) = v;
      sigma(j, i) = v;
    }
  }
  return sigma;
}

class NegLogPosterior : public ceres::FirstOrderFunction {
 public:
  NegLogPosterior(const GgpmData& data, const FitConfig& config) : data_(data), config_(config) {}

  bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
    const Eigen::Map<const Eigen::VectorXd> theta(parameters, 6);
    const double f = value(theta);
    if (!std::isfinite(f)) return false;
    *cost = f;
    if (gradient != nullptr) {
      Eigen::VectorXd t = theta;
      for (int i = 0; i < 6; ++i) {
        const double h = 1e-5 * std::max(1.0, std::abs(theta(i)));
        t(i) = theta(i) + h;
        const double up = value(t);
        t(i) = theta(i) - h;
        const double down = value(t);
        t(i) = theta(i);
        if (!std::isfinite(up) || !std::isfinite(down)) return false;
        gradient[i] = (up - down) / (2.0 * h);
      }
    }
    return true;
  }
  int NumParameters() const override { return 6; }

  double value(const Eigen::VectorXd& theta) const {
    return -log_posterior(theta, data_, config_);
  }

 private:
  const GgpmData& data_;
  const FitConfig& config_;
};

}  // namespace

double matern(double h, double k, double nu) {
  if (h < 0.0 || !(k > 0.0) || !(nu > 0.0)) {
    throw Error("invalid_argument", "matern needs h >= 0, k > 0 and nu > 0");
  }
  const double x = k * h;
  if (x == 0.0) return 1.0;
  if (nu == 0.5) return std::exp(-x);
  if (x > 700.0) return 0.0;
  const double logc = (1.0 - nu) * std::numbers::ln2 - std::lgamma(nu) + nu * std::log(x) +
                      std::log(std::cyl_bessel_k(nu, x));
  return std::min(1.0, std::exp(logc));
}

double matern_dk(double h, double k, double nu) {
  const double x = k * h;
  if (x == 0.0) return 0.0;
  if (nu == 0.5) return -h * std::exp(-x);
  if (x > 700.0) return 0.0;
  // d/dx [x^nu K_nu(x)] = -x^nu K_{nu-1}(x), and K_{-v} = K_v
  const double logm = (1.0 - nu) * std::numbers::ln2 - std::lgamma(nu) + nu * std::log(x) +
                      std::log(std::cyl_bessel_k(std::abs(nu - 1.0), x));
  return -h * std::exp(logm);
}

void GgpmParams::validate() const {
  if (!std::isfinite(beta0) || !std::isfinite(beta1)) {
    throw Error("invalid_params", "fixed effects must be finite");
  }
  if (!(std::abs(a) < 1.0)) throw Error("invalid_params", "AR coefficient must satisfy |a| < 1");
  if (!(sigma2_omega >= 0.0) || !(sigma2_eps >= 0.0)) {
    throw Error("invalid_params", "variances must be non-negative");
  }
  if (!(k > 0.0) || !(nu > 0.0)) throw Error("invalid_params", "k and nu must be positive");
}

double GgpmParams::practical_range() const { return std::sqrt(8.0 * nu) / k; }

Eigen::VectorXd to_unconstrained(const GgpmParams& p) {
  Eigen::VectorXd t(6);
  t << p.beta0, p.beta1, std::atanh(p.a), 0.5 * std::log(p.sigma2_omega), std::log(p.k),
      0.5 * std::log(p.sigma2_eps);
  return t;
}

GgpmParams from_unconstrained(const Eigen::VectorXd& theta, double nu) {
  GgpmParams p;
  p.beta0 = theta(0);
  p.beta1 = theta(1);
  p.a = std::tanh(theta(2));
  p.sigma2_omega = std::exp(2.0 * theta(3));
  p.k = std::exp(theta(4));
  p.nu = nu;
  p.sigma2_eps = std::exp(2.0 * theta(5));
  return p;
}

std::vector<std::string> unconstrained_names() {
  return {"beta0", "beta1", "atanh_a", "log_sigma_omega", "log_k", "log_sigma_eps"};
}

Simulation simulate(const GgpmParams& params, std::span<const Point> sites,
                    std::span<const double> altitude_std, int n_days, Rng& rng) {
  params.validate();
  if (sites.size() != altitude_std.size()) {
    throw Error("invalid_argument", "sites and altitudes differ in length");
  }
  if (n_days < 1) throw Error("invalid_argument", "need at least one day");
  const auto n = static_cast<Eigen::Index>(sites.size());
  const Eigen::MatrixXd l = robust_llt(correlation(sites, sites, params.k, params.nu)).matrixL();
  auto innovation = [&] {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = sample_normal(rng);
    return Eigen::VectorXd(l * z);
  };
  Simulation out;
  out.latent.resize(n, n_days);
  out.y.resize(n, n_days);
  Eigen::VectorXd xi = std::sqrt(params.stationary_variance()) * innovation();
  const double sw = std::sqrt(params.sigma2_omega);
  const double se = std::sqrt(params.sigma2_eps);
  for (int day = 0; day < n_days; ++day) {
    if (day > 0) xi = params.a * xi + sw * innovation();
    out.latent.col(day) = xi;
    for (Eigen::Index s = 0; s < n; ++s) {
      out.y(s, day) = params.beta0 + params.beta1 * altitude_std[static_cast<std::size_t>(s)] +
                      xi(s) + se * sample_normal(rng);
    }
  }
  return out;
}

void GgpmData::validate() const {
  const std::size_t n = sites.size();
  if (n < 2) throw Error("too_few_stations", "Gaussian model needs at least 2 stations");
  if (locations.size() != n || altitude_std.size() != n || static_cast<std::size_t>(y.rows()) != n ||
      dates.size() != static_cast<std::size_t>(y.cols())) {
    throw Error("invalid_data", "station panel dimensions are inconsistent");
  }
  bool any = false;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = y.data()[i];
    if (std::isinf(v)) throw Error("invalid_data", "infinite observation");
    any = any || !std::isnan(v);
  }
  if (!any) throw Error("invalid_data", "no observations in this year");
}

GgpmData GgpmData::from_stations(std::span<const StationSeries> stations,
                                 const StudyPeriod& period, std::size_t year_index,
                                 const Standardizer& altitude) {
  if (year_index >= period.n_years()) throw Error("invalid_argument", "year index out of range");
  GgpmData d;
  d.year = period.first_year() + static_cast<int>(year_index);
  const std::size_t off = period.year_offset(year_index);
  const int len = period.season_length(year_index);
  for (int ell = 0; ell < len; ++ell) d.dates.push_back(period.date(off + static_cast<std::size_t>(ell)));
  d.y.resize(static_cast<Eigen::Index>(stations.size()), len);
  for (std::size_t s = 0; s < stations.size(); ++s) {
    const auto& st = stations[s];
    if (st.values.size() != period.n_days()) {
      throw Error("invalid_data", "station " + st.id + " is not aligned to the study period");
    }
    d.sites.push_back(st.id);
    d.locations.push_back(st.location);
    d.altitude_std.push_back(altitude.apply(st.altitude));
    for (int ell = 0; ell < len; ++ell) {
      d.y(static_cast<Eigen::Index>(s), ell) = st.values[off + static_cast<std::size_t>(ell)];
    }
  }
  d.validate();
  return d;
}

double marginal_loglik(const GgpmParams& params, const GgpmData& data) {
  params.validate();
  return kalman(params, data, false).loglik;
}

double marginal_loglik_dense(const GgpmParams& params, const GgpmData& data) {
  params.validate();
  const Observed o = gather(params, data);
  Eigen::LLT<Eigen::MatrixXd> llt(dense_covariance(params, data, o));
  if (llt.info() != Eigen::Success) return kNegInf;
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double quad = o.resid.dot(llt.solve(o.resid));
  return -0.5 * (logdet + quad + static_cast<double>(o.resid.size()) * kLog2Pi);
}

Eigen::VectorXd marginal_loglik_gradient(const GgpmParams& p, const GgpmData& data) {
  p.validate();
  const Observed o = gather(p, data);
  const auto n = static_cast<Eigen::Index>(o.index.size());
  Eigen::LLT<Eigen::MatrixXd> llt(dense_covariance(p, data, o));
  if (llt.info() != Eigen::Success) {
    throw Error("not_positive_definite", "space-time covariance is not positive definite");
  }
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::VectorXd alpha = inv * o.resid;
  const Eigen::MatrixXd c = correlation(data.locations, data.locations, p.k, p.nu);
  Eigen::MatrixXd dc(c.rows(), c.cols());
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      dc(i, j) = p.k * matern_dk(distance(data.locations[static_cast<std::size_t>(i)],
                                          data.locations[static_cast<std::size_t>(j)]),
                                 p.k, p.nu);
    }
  }
  const double a = p.a, s2 = p.sigma2_omega, one_m = 1.0 - a * a;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(6);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [si, di] = o.index[static_cast<std::size_t>(i)];
    g(0) += alpha(i);
    g(1) += alpha(i) * data.altitude_std[static_cast<std::size_t>(si)];
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto [sj, dj] = o.index[static_cast<std::size_t>(j)];
      const double w = alpha(i) * alpha(j) - inv(i, j);
      const int lag = std::abs(di - dj);
      const double f = std::pow(a, lag) / one_m;
      // d f / d atanh(a) = (1 - a^2) f'(a)
      const double df = (lag == 0 ? 0.0 : lag * std::pow(a, lag - 1)) +
                        2.0 * std::pow(a, lag + 1) / one_m;
      g(2) += 0.5 * w * s2 * df * c(si, sj);
      g(3) += w * s2 * f * c(si, sj);
      g(4) += 0.5 * w * s2 * f * dc(si, sj);
      if (i == j) g(5) += w * p.sigma2_eps;
    }
  }
  return g;
}

double log_prior(const Eigen::VectorXd& theta, double nu, const GgpmPriors& pr) {
  double lp = 0.0;
  for (int i = 0; i < 2; ++i) {
    lp += -0.5 * theta(i) * theta(i) / pr.coef_variance - 0.5 * std::log(2.0 * std::numbers::pi * pr.coef_variance);
  }
  lp += -0.5 * std::pow(theta(2) / pr.a_sd, 2) - std::log(pr.a_sd) - 0.5 * kLog2Pi;
  // Exponential priors on the two standard deviations, with log Jacobians.
  auto sd_prior = [](double log_sd, double rate) {
    return std::log(rate) - rate * std::exp(log_sd) + log_sd;
  };
  lp += sd_prior(theta(3), pr.field_sd_rate);
  lp += sd_prior(theta(5), pr.nugget_sd_rate);
  // Range prior for a 2-d field: pi(r) = lam r^-2 exp(-lam / r), r = sqrt(8 nu) / k.
  const double lam = -std::log(pr.range_alpha) * pr.range0_km;
  const double log_range = 0.5 * std::log(8.0 * nu) - theta(4);
  lp += std::log(lam) - log_range - lam * std::exp(-log_range);
  return lp;
}

double log_posterior(const Eigen::VectorXd& theta, const GgpmData& data, const FitConfig& config) {
  if (!theta.allFinite() || std::abs(theta(2)) > 15.0 || std::abs(theta(3)) > 30.0 ||
      std::abs(theta(4)) > 30.0 || std::abs(theta(5)) > 30.0) {
    return kNegInf;
  }
  const GgpmParams p = from_unconstrained(theta, config.nu);
  const double ll = kalman(p, data, false).loglik;
  if (!std::isfinite(ll)) return kNegInf;
  return ll + log_prior(theta, config.nu, config.priors);
}

GgpmFit fit(const GgpmData& data, const FitConfig& config) {
  data.validate();
  // Starting point: least squares on altitude, residual variance split
  // between field and nugget, range at 30% of the station span.
  double sx = 0, sy = 0, sxx = 0, sxy = 0, cnt = 0;
  for (Eigen::Index s = 0; s < data.y.rows(); ++s) {
    const double x = data.altitude_std[static_cast<std::size_t>(s)];
    for (Eigen::Index d = 0; d < data.y.cols(); ++d) {
      const double v = data.y(s, d);
      if (std::isnan(v)) continue;
      sx += x;
      sy += v;
      sxx += x * x;
      sxy += x * v;
      cnt += 1;
    }
  }
  const double denom = cnt * sxx - sx * sx;
  const double b1 = std::abs(denom) > 1e-12 ? (cnt * sxy - sx * sy) / denom : 0.0;
  const double b0 = (sy - b1 * sx) / cnt;
  double rss = 0.0;
  for (Eigen::Index s = 0; s < data.y.rows(); ++s) {
    for (Eigen::Index d = 0; d < data.y.cols(); ++d) {
      const double v = data.y(s, d);
      if (!std::isnan(v)) rss += std::pow(v - b0 - b1 * data.altitude_std[static_cast<std::size_t>(s)], 2);
    }
  }
  const double var = std::max(rss / cnt, 1e-6);
  double dmax = 0.0;
  for (const auto& p : data.locations) {
    for (const auto& q : data.locations) dmax = std::max(dmax, distance(p, q));
  }
  GgpmParams start;
  start.beta0 = b0;
  start.beta1 = b1;
  start.a = 0.5;
  start.sigma2_omega = 0.75 * var * (1.0 - 0.25);
  start.sigma2_eps = 0.25 * var;
  start.nu = config.nu;
  start.k = std::sqrt(8.0 * config.nu) / std::max(0.3 * dmax, 1e-3);

  auto* objective = new NegLogPosterior(data, config);
  ceres::GradientProblem problem(objective);
  ceres::GradientProblemSolver::Options options;
  options.line_search_direction_type = ceres::BFGS;
  options.max_num_iterations = config.max_iterations;
  options.function_tolerance = 1e-12;
  options.gradient_tolerance = 1e-8;
  options.parameter_tolerance = 1e-10;
  options.logging_type = ceres::SILENT;
  Eigen::VectorXd theta = to_unconstrained(start);
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(options, problem, theta.data(), &summary);
  if (summary.termination_type == ceres::FAILURE || !theta.allFinite()) {
    throw Error("optimizer_nonconvergence", "GGPM mode search failed: " + summary.message);
  }

  GgpmFit out;
  out.year = data.year;
  out.theta = theta;
  out.params = from_unconstrained(theta, config.nu);
  out.log_posterior = -objective->value(theta);
  out.iterations = static_cast<int>(summary.iterations.size());
  out.converged = summary.termination_type == ceres::CONVERGENCE;
  out.message = summary.message;

  // Laplace approximation: finite-difference Hessian of the negative log posterior.
  Eigen::MatrixXd hess(6, 6);
  Eigen::VectorXd h(6);
  for (int i = 0; i < 6; ++i) h(i) = 1e-4 * std::max(1.0, std::abs(theta(i)));
  const double f0 = objective->value(theta);
  auto at = [&](int i, double di, int j, double dj) {
    Eigen::VectorXd t = theta;
    t(i) += di;
    t(j) += dj;
    return objective->value(t);
  };
  for (int i = 0; i < 6; ++i) {
    hess(i, i) = (at(i, h(i), i, 0.0) - 2.0 * f0 + at(i, -h(i), i, 0.0)) / (h(i) * h(i));
    for (int j = 0; j < i; ++j) {
      const double v = (at(i, h(i), j, h(j)) - at(i, h(i), j, -h(j)) - at(i, -h(i), j, h(j)) +
                        at(i, -h(i), j, -h(j))) /
                       (4.0 * h(i) * h(j));
      hess(i, j) = v;
      hess(j, i) = v;
    }
  }
  Eigen::LLT<Eigen::MatrixXd> hl(hess);
  const bool ok = hl.info() == Eigen::Success && hess.allFinite();
  out.covariance = ok ? Eigen::MatrixXd(hl.solve(Eigen::MatrixXd::Identity(6, 6)))
                      : Eigen::MatrixXd::Constant(6, 6, std::numeric_limits<double>::quiet_NaN());
  if (!ok) out.message += "; Hessian not positive definite, intervals unavailable";

  const double z = 1.959963984540054;
  auto interval = [&](const std::string& name, int i, auto transform) {
    const double sd = std::sqrt(out.covariance(i, i));
    const double lo = transform(theta(i) - z * sd), hi = transform(theta(i) + z * sd);
    out.summary.push_back({name, transform(theta(i)), std::min(lo, hi), std::max(lo, hi)});
  };
  auto ident = [](double v) { return v; };
  auto variance = [](double v) { return std::exp(2.0 * v); };
  interval("beta0", 0, ident);
  interval("beta1", 1, ident);
  interval("a", 2, [](double v) { return std::tanh(v); });
  interval("sigma2_omega", 3, variance);
  interval("k", 4, [](double v) { return std::exp(v); });
  interval("sigma2_eps", 5, variance);
  return out;
}

Prediction predict(const GgpmParams& p, const GgpmData& data, std::span<const Point> points,
                   std::span<const double> altitude_std) {
  p.validate();
  data.validate();
  if (points.size() != altitude_std.size()) {
    throw Error("invalid_argument", "points and altitudes differ in length");
  }
  const FilterPass fp = kalman(p, data, true);
  if (!std::isfinite(fp.loglik)) {
    throw Error("not_positive_definite", "Kalman filter failed for these parameters");
  }
  const auto days = static_cast<std::size_t>(data.n_days());
  std::vector<Eigen::VectorXd> ms(days);
  std::vector<Eigen::MatrixXd> ps(days);
  ms[days - 1] = fp.m_filt[days - 1];
  ps[days - 1] = fp.p_filt[days - 1];
  for (std::size_t d = days - 1; d-- > 0;) {
    // J = a P_filt(d) P_pred(d+1)^-1
    const Eigen::LLT<Eigen::MatrixXd> pl = robust_llt(fp.p_pred[d + 1]);
    const Eigen::MatrixXd j = p.a * pl.solve(fp.p_filt[d]).transpose();
    ms[d] = fp.m_filt[d] + j * (ms[d + 1] - fp.m_pred[d + 1]);
    ps[d] = fp.p_filt[d] + j * (ps[d + 1] - fp.p_pred[d + 1]) * j.transpose();
    ps[d] = 0.5 * (ps[d] + ps[d].transpose()).eval();
  }

  // Separable covariance: the grid latent given the station latent at the
  // same day is independent of every other day.
  const Eigen::MatrixXd css = correlation(data.locations, data.locations, p.k, p.nu);
  const Eigen::MatrixXd cgs = correlation(points, data.locations, p.k, p.nu);
  const Eigen::MatrixXd b = robust_llt(css).solve(cgs.transpose()).transpose();
  const Eigen::VectorXd resid_corr =
      (Eigen::VectorXd::Ones(cgs.rows()) - b.cwiseProduct(cgs).rowwise().sum()).cwiseMax(0.0);
  const double s2 = p.stationary_variance();
  const auto g = static_cast<Eigen::Index>(points.size());
  Prediction out;
  out.mean.resize(g, static_cast<Eigen::Index>(days));
  out.sd.resize(g, static_cast<Eigen::Index>(days));
  for (std::size_t d = 0; d < days; ++d) {
    const Eigen::VectorXd latent = b * ms[d];
    const Eigen::MatrixXd bp = b * ps[d];
    const Eigen::VectorXd smooth_var = bp.cwiseProduct(b).rowwise().sum();
    for (Eigen::Index i = 0; i < g; ++i) {
      out.mean(i, static_cast<Eigen::Index>(d)) =
          p.beta0 + p.beta1 * altitude_std[static_cast<std::size_t>(i)] + latent(i);
      const double v = s2 * resid_corr(i) + std::max(smooth_var(i), 0.0) + p.sigma2_eps;
      out.sd(i, static_cast<Eigen::Index>(d)) = std::sqrt(std::max(v, 0.0));
    }
  }
  return out;
}

}  // namespace heatrisk::ggpm

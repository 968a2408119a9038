#include "heatrisk/gqrm.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

#include "heatrisk/error.hpp"

namespace heatrisk::gqrm {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kHarmonicPeriod = 365.0;
constexpr const char* kCheckpointMagic = "# heatrisk-gqrm-checkpoint v1";

void require_tau(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw Error("invalid_tau", "quantile level must lie in (0,1)");
}

std::string fmt(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw Error("invalid_checkpoint", "bad number '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

// Draws x ~ N(Q^-1 h, Q^-1) for a symmetric positive-definite precision Q.
Eigen::VectorXd sample_gaussian_canonical(Rng& rng, const Eigen::MatrixXd& q,
                                          const Eigen::VectorXd& h) {
  Eigen::LLT<Eigen::MatrixXd> llt(q);
  if (llt.info() != Eigen::Success) {
    throw Error("cholesky_failed", "conditional precision is not positive definite");
  }
  Eigen::VectorXd z(h.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = sample_normal(rng);
  Eigen::VectorXd mean = llt.solve(h);
  return mean + llt.matrixU().solve(z);
}

}  // namespace

double al_checkloss(double u, double tau) { return u * (tau - (u < 0.0 ? 1.0 : 0.0)); }

double al_log_density(double u, double sigma, double tau) {
  return std::log(tau * (1.0 - tau) / sigma) - al_checkloss(u / sigma, tau);
}

QuantileLevelSet QuantileLevelSet::defaults() {
  return {{0.05, 0.10, 0.20, 0.30, 0.40, 0.50, 0.60, 0.70, 0.80, 0.90, 0.95}};
}

void QuantileLevelSet::validate() const {
  if (levels.empty()) throw Error("invalid_tau", "no quantile levels given");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    require_tau(levels[i]);
    if (i > 0 && !(levels[i] > levels[i - 1])) {
      throw Error("invalid_tau", "quantile levels must be strictly increasing");
    }
  }
}

GqrmParams GqrmParams::zeros(std::size_t n_sites, std::size_t n_years) {
  GqrmParams p;
  const auto s = static_cast<Eigen::Index>(n_sites);
  const auto t = static_cast<Eigen::Index>(n_years);
  p.site_intercept = Eigen::VectorXd::Zero(s);
  p.site_trend = Eigen::VectorXd::Zero(s);
  p.year_effect = Eigen::VectorXd::Zero(t);
  p.site_year_effect = Eigen::MatrixXd::Zero(s, t);
  p.log_scale = Eigen::VectorXd::Zero(s);
  p.ar_logit = Eigen::VectorXd::Zero(s);
  return p;
}

double GqrmParams::rho(std::size_t s) const {
  return std::tanh(0.5 * ar_logit(static_cast<Eigen::Index>(s)));
}

double GqrmParams::sigma(std::size_t s) const {
  return std::exp(log_scale(static_cast<Eigen::Index>(s)));
}

void GqrmParams::validate() const {
  const auto s = site_intercept.size();
  if (site_trend.size() != s || log_scale.size() != s || ar_logit.size() != s ||
      site_year_effect.rows() != s || site_year_effect.cols() != year_effect.size()) {
    throw Error("invalid_params", "parameter blocks have inconsistent sizes");
  }
  if (!flatten().allFinite()) throw Error("invalid_params", "non-finite parameter value");
  for (const auto* h : {&scale_field, &ar_field, &intercept_field, &trend_field}) {
    if (!(h->variance > 0.0) || !(h->decay > 0.0)) {
      throw Error("invalid_params", "GP variance and decay must be positive");
    }
  }
  if (!(year_variance > 0.0) || !(site_year_variance > 0.0)) {
    throw Error("invalid_params", "annual effect variances must be positive");
  }
}

std::vector<std::string> GqrmParams::names(std::size_t n_sites, std::size_t n_years) {
  std::vector<std::string> out = {"beta0", "trend", "beta_sin", "beta_cos", "beta_alt"};
  auto indexed = [&](const std::string& base, std::size_t n) {
    for (std::size_t i = 1; i <= n; ++i) out.push_back(base + "[" + std::to_string(i) + "]");
  };
  indexed("site_intercept", n_sites);
  indexed("site_trend", n_sites);
  indexed("year_effect", n_years);
  for (std::size_t s = 1; s <= n_sites; ++s) {
    for (std::size_t t = 1; t <= n_years; ++t) {
      out.push_back("site_year_effect[" + std::to_string(s) + "," + std::to_string(t) + "]");
    }
  }
  indexed("log_scale", n_sites);
  indexed("ar_logit", n_sites);
  for (const char* n : {"scale_mean", "scale_variance", "scale_decay", "ar_mean", "ar_variance",
                        "ar_decay", "intercept_variance", "intercept_decay", "trend_variance",
                        "trend_decay", "year_variance", "site_year_variance"}) {
    out.emplace_back(n);
  }
  return out;
}

Eigen::VectorXd GqrmParams::flatten() const {
  const auto s = site_intercept.size();
  const auto t = year_effect.size();
  Eigen::VectorXd v(5 + 4 * s + t + s * t + 12);
  Eigen::Index k = 0;
  for (double x : {beta0, trend, beta_sin, beta_cos, beta_alt}) v(k++) = x;
  v.segment(k, s) = site_intercept;
  k += s;
  v.segment(k, s) = site_trend;
  k += s;
  v.segment(k, t) = year_effect;
  k += t;
  for (Eigen::Index i = 0; i < s; ++i) {
    for (Eigen::Index j = 0; j < t; ++j) v(k++) = site_year_effect(i, j);
  }
  v.segment(k, s) = log_scale;
  k += s;
  v.segment(k, s) = ar_logit;
  k += s;
  for (double x : {scale_field.mean, scale_field.variance, scale_field.decay, ar_field.mean,
                   ar_field.variance, ar_field.decay, intercept_field.variance,
                   intercept_field.decay, trend_field.variance, trend_field.decay, year_variance,
                   site_year_variance}) {
    v(k++) = x;
  }
  return v;
}

GqrmParams GqrmParams::unflatten(const Eigen::VectorXd& v, std::size_t n_sites,
                                 std::size_t n_years) {
  GqrmParams p = zeros(n_sites, n_years);
  const auto s = static_cast<Eigen::Index>(n_sites);
  const auto t = static_cast<Eigen::Index>(n_years);
  if (v.size() != 5 + 4 * s + t + s * t + 12) {
    throw Error("invalid_params", "flattened parameter vector has the wrong length");
  }
  Eigen::Index k = 0;
  p.beta0 = v(k++);
  p.trend = v(k++);
  p.beta_sin = v(k++);
  p.beta_cos = v(k++);
  p.beta_alt = v(k++);
  p.site_intercept = v.segment(k, s);
  k += s;
  p.site_trend = v.segment(k, s);
  k += s;
  p.year_effect = v.segment(k, t);
  k += t;
  for (Eigen::Index i = 0; i < s; ++i) {
    for (Eigen::Index j = 0; j < t; ++j) p.site_year_effect(i, j) = v(k++);
  }
  p.log_scale = v.segment(k, s);
  k += s;
  p.ar_logit = v.segment(k, s);
  k += s;
  p.scale_field = {v(k), v(k + 1), v(k + 2)};
  k += 3;
  p.ar_field = {v(k), v(k + 1), v(k + 2)};
  k += 3;
  p.intercept_field = {0.0, v(k), v(k + 1)};
  k += 2;
  p.trend_field = {0.0, v(k), v(k + 1)};
  k += 2;
  p.year_variance = v(k++);
  p.site_year_variance = v(k++);
  return p;
}

double centered_year(int t, int n_years) { return t - 0.5 * (n_years + 1); }

double location(const GqrmParams& p, std::size_t site, double altitude_std, int t, int ell) {
  const auto s = static_cast<Eigen::Index>(site);
  const double tc = centered_year(t, static_cast<int>(p.n_years()));
  const double angle = kTwoPi * ell / kHarmonicPeriod;
  const double gamma = p.site_intercept(s) + p.site_trend(s) * tc + p.year_effect(t - 1) +
                       p.site_year_effect(s, t - 1);
  return p.beta0 + p.trend * tc + p.beta_sin * std::sin(angle) + p.beta_cos * std::cos(angle) +
         p.beta_alt * altitude_std + gamma;
}

double conditional_quantile(const GqrmParams& p, std::size_t site, double altitude_std, int t,
                            int ell, double y_prev) {
  if (ell < 2) throw Error("invalid_argument", "conditional quantile needs day of season >= 2");
  return location(p, site, altitude_std, t, ell) +
         p.rho(site) * (y_prev - location(p, site, altitude_std, t, ell - 1));
}

void GqrmData::validate() const {
  const std::size_t s = sites.size();
  if (s < 3) throw Error("too_few_stations", "quantile model needs at least 3 stations");
  if (years.size() < 2) throw Error("too_few_years", "quantile model needs at least 2 years");
  if (season_length < 3) throw Error("invalid_data", "season too short");
  if (locations.size() != s || altitude_std.size() != s ||
      static_cast<std::size_t>(y.rows()) != s ||
      y.cols() != static_cast<Eigen::Index>(years.size()) * season_length) {
    throw Error("invalid_data", "station panel dimensions are inconsistent");
  }
  if (!y.allFinite()) throw Error("gaps_present", "station panel must be gap-free");
}

GqrmData GqrmData::from_stations(std::span<const StationSeries> stations,
                                 const StudyPeriod& period, const Standardizer& altitude) {
  GqrmData d;
  const int len = period.season_length(0);
  for (std::size_t yi = 0; yi < period.n_years(); ++yi) {
    if (period.season_length(yi) != len) {
      throw Error("invalid_data", "season length must be constant across years");
    }
    d.years.push_back(period.first_year() + static_cast<int>(yi));
  }
  d.season_length = len;
  d.y.resize(static_cast<Eigen::Index>(stations.size()), static_cast<Eigen::Index>(period.n_days()));
  for (std::size_t s = 0; s < stations.size(); ++s) {
    const auto& st = stations[s];
    if (st.values.size() != period.n_days()) {
      throw Error("invalid_data", "station " + st.id + " is not aligned to the study period");
    }
    if (st.missing_count() > 0) {
      throw Error("gaps_present", "station " + st.id + " still has missing days");
    }
    d.sites.push_back(st.id);
    d.locations.push_back(st.location);
    d.altitude_std.push_back(altitude.apply(st.altitude));
    for (std::size_t k = 0; k < st.values.size(); ++k) {
      d.y(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) = st.values[k];
    }
  }
  d.validate();
  return d;
}

GqrmParams QuantileFit::draw(Eigen::Index i) const {
  return GqrmParams::unflatten(draws.row(i).transpose(), posterior_median.n_sites(),
                               posterior_median.n_years());
}

// ---------------------------------------------------------------------------

GqrmSampler::GqrmSampler(GqrmData data, double tau, GqrmPriors priors, McmcConfig config)
    : data_(std::move(data)), tau_(tau), priors_(priors), config_(config), rng_(config.seed) {
  require_tau(tau);
  data_.validate();
  if (config_.burn_in < 0 || config_.draws < 1 || config_.thin < 1 || config_.adapt_every < 1) {
    throw Error("invalid_config", "MCMC sizes must be positive");
  }
  const std::size_t s = data_.n_sites();
  dist_.resize(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s));
  double dmin = std::numeric_limits<double>::infinity(), dmax = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      const double d = distance(data_.locations[i], data_.locations[j]);
      dist_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d;
      if (i != j) {
        dmin = std::min(dmin, d);
        dmax = std::max(dmax, d);
      }
    }
  }
  if (!(dmin > 0.0)) throw Error("duplicate_location", "two stations share a location");
  decay_lo_ = 3.0 / dmax;
  decay_hi_ = 3.0 / dmin;
  if (!(decay_hi_ > decay_lo_)) decay_hi_ = decay_lo_ * (1.0 + 1e-9) + 1e-12;

  const int len = data_.season_length;
  sin_.resize(static_cast<std::size_t>(len) + 1);
  cos_.resize(static_cast<std::size_t>(len) + 1);
  for (int ell = 0; ell <= len; ++ell) {
    sin_[static_cast<std::size_t>(ell)] = std::sin(kTwoPi * ell / kHarmonicPeriod);
    cos_[static_cast<std::size_t>(ell)] = std::cos(kTwoPi * ell / kHarmonicPeriod);
  }
  const std::size_t n_obs = s * static_cast<std::size_t>(data_.n_years()) *
                            static_cast<std::size_t>(len - 1);
  resid_.assign(n_obs, 0.0);
  mix_.assign(n_obs, 1.0);
  site_checkloss_.assign(s, 0.0);
  prec_sum_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s), data_.n_years());
  resp_sum_ = prec_sum_;
  ar_adapt_.assign(s, Adaptive{std::log(0.2)});
  scale_adapt_.assign(s, Adaptive{std::log(0.2)});
  draws_.resize(config_.draws,
                static_cast<Eigen::Index>(GqrmParams::names(s, data_.years.size()).size()));
  initialize();
}

void GqrmSampler::initialize() {
  const std::size_t s_n = data_.n_sites();
  const int t_n = data_.n_years();
  p_ = GqrmParams::zeros(s_n, static_cast<std::size_t>(t_n));
  std::vector<double> all(data_.y.data(), data_.y.data() + data_.y.size());
  p_.beta0 = quantile_type7(all, tau_);
  const double z_rho = 2.0 * std::atanh(0.5);
  p_.ar_logit.setConstant(z_rho);
  std::vector<double> r;
  for (std::size_t s = 0; s < s_n; ++s) {
    compute_site_residuals(s, 0.5, r);
    const double scale = site_checkloss(r) / static_cast<double>(r.size());
    p_.log_scale(static_cast<Eigen::Index>(s)) = std::log(std::max(scale, 1e-3));
  }
  const double mid = std::sqrt(decay_lo_ * decay_hi_);
  p_.scale_field = {p_.log_scale.mean(), 1.0, mid};
  p_.ar_field = {z_rho, 1.0, mid};
  p_.intercept_field = {0.0, 1.0, mid};
  p_.trend_field = {0.0, 1.0, mid};
  p_.year_variance = priors_.fixed_year_variance.value_or(1.0);
  p_.site_year_variance = priors_.fixed_site_year_variance.value_or(1.0);
  gp_scale_ = make_cache(mid);
  gp_ar_ = gp_scale_;
  gp_intercept_ = gp_scale_;
  gp_trend_ = gp_scale_;
  for (auto* a : {&scale_decay_adapt_, &ar_decay_adapt_, &intercept_decay_adapt_,
                  &trend_decay_adapt_}) {
    *a = Adaptive{std::log(0.5)};
  }
}

std::size_t GqrmSampler::obs_index(std::size_t s, int t, int ell) const {
  const auto t_n = static_cast<std::size_t>(data_.n_years());
  const auto per = static_cast<std::size_t>(data_.season_length - 1);
  return (s * t_n + static_cast<std::size_t>(t - 1)) * per + static_cast<std::size_t>(ell - 2);
}

double GqrmSampler::harmonic_sin(int ell) const { return sin_[static_cast<std::size_t>(ell)]; }
double GqrmSampler::harmonic_cos(int ell) const { return cos_[static_cast<std::size_t>(ell)]; }

double GqrmSampler::site_year_constant(std::size_t s, int t) const {
  const auto si = static_cast<Eigen::Index>(s);
  const double tc = centered_year(t, data_.n_years());
  return p_.beta0 + p_.trend * tc + p_.beta_alt * data_.altitude_std[s] + p_.site_intercept(si) +
         p_.site_trend(si) * tc + p_.year_effect(t - 1) + p_.site_year_effect(si, t - 1);
}

void GqrmSampler::compute_site_residuals(std::size_t s, double rho,
                                         std::vector<double>& out) const {
  const int len = data_.season_length;
  out.resize(static_cast<std::size_t>(data_.n_years() * (len - 1)));
  std::size_t k = 0;
  for (int t = 1; t <= data_.n_years(); ++t) {
    const double c = site_year_constant(s, t);
    for (int ell = 2; ell <= len; ++ell) {
      out[k++] = data_.value(s, t, ell) - rho * data_.value(s, t, ell - 1) - (1.0 - rho) * c -
                 p_.beta_sin * (harmonic_sin(ell) - rho * harmonic_sin(ell - 1)) -
                 p_.beta_cos * (harmonic_cos(ell) - rho * harmonic_cos(ell - 1));
    }
  }
}

double GqrmSampler::site_checkloss(const std::vector<double>& resid) const {
  double c = 0.0;
  for (double u : resid) c += al_checkloss(u, tau_);
  return c;
}

void GqrmSampler::compute_residuals() {
  std::vector<double> r;
  const std::size_t per = static_cast<std::size_t>(data_.n_years() * (data_.season_length - 1));
  for (std::size_t s = 0; s < data_.n_sites(); ++s) {
    compute_site_residuals(s, p_.rho(s), r);
    std::copy(r.begin(), r.end(), resid_.begin() + static_cast<std::ptrdiff_t>(s * per));
    site_checkloss_[s] = site_checkloss(r);
  }
}

GqrmSampler::GpCache GqrmSampler::make_cache(double decay) const {
  const Eigen::Index n = dist_.rows();
  Eigen::MatrixXd r = (-decay * dist_.array()).exp().matrix();
  double jitter = 0.0;
  for (int attempt = 0; attempt < 6; ++attempt) {
    Eigen::MatrixXd rj = r;
    rj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(rj);
    if (llt.info() == Eigen::Success) {
      GpCache c;
      c.decay = decay;
      c.inverse = llt.solve(Eigen::MatrixXd::Identity(n, n));
      c.logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      return c;
    }
    jitter = jitter == 0.0 ? 1e-10 : jitter * 100.0;
  }
  throw Error("cholesky_failed", "exponential GP correlation is not positive definite");
}

double GqrmSampler::field_conditional_logprior(const Eigen::VectorXd& z, const FieldHyper& h,
                                               const GpCache& gp, std::size_t s,
                                               double value) const {
  // Full conditional of one GP coordinate given the others.
  const auto i = static_cast<Eigen::Index>(s);
  const double qii = gp.inverse(i, i);
  double off = 0.0;
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    if (j != i) off += gp.inverse(i, j) * (z(j) - h.mean);
  }
  const double cond_mean = h.mean - off / qii;
  const double d = value - cond_mean;
  return -0.5 * d * d * qii / h.variance;
}

bool GqrmSampler::metropolis(Adaptive& a, double log_ratio) {
  const bool accept = std::isfinite(log_ratio) && std::log(sample_uniform(rng_)) < log_ratio;
  ++a.proposed;
  if (accept) ++a.accepted;
  if (iteration_ >= config_.burn_in) {
    ++a.total_proposed;
    if (accept) ++a.total_accepted;
  }
  return accept;
}

void GqrmSampler::update_ar_field() {
  std::vector<double> r;
  for (std::size_t s = 0; s < data_.n_sites(); ++s) {
    const auto i = static_cast<Eigen::Index>(s);
    const double z_old = p_.ar_logit(i);
    const double z_new = z_old + std::exp(ar_adapt_[s].log_step) * sample_normal(rng_);
    compute_site_residuals(s, std::tanh(0.5 * z_new), r);
    const double c_new = site_checkloss(r);
    const double sigma = p_.sigma(s);
    const double log_ratio =
        -(c_new - site_checkloss_[s]) / sigma +
        field_conditional_logprior(p_.ar_logit, p_.ar_field, gp_ar_, s, z_new) -
        field_conditional_logprior(p_.ar_logit, p_.ar_field, gp_ar_, s, z_old);
    if (metropolis(ar_adapt_[s], log_ratio)) {
      p_.ar_logit(i) = z_new;
      site_checkloss_[s] = c_new;
      const std::size_t per = r.size();
      std::copy(r.begin(), r.end(), resid_.begin() + static_cast<std::ptrdiff_t>(s * per));
    }
  }
}

void GqrmSampler::update_scale_field() {
  const double n = static_cast<double>(data_.n_years() * (data_.season_length - 1));
  for (std::size_t s = 0; s < data_.n_sites(); ++s) {
    const auto i = static_cast<Eigen::Index>(s);
    const double z_old = p_.log_scale(i);
    const double z_new = z_old + std::exp(scale_adapt_[s].log_step) * sample_normal(rng_);
    // check(u / sigma) = check(u) / sigma, so the site likelihood only needs
    // the summed check loss.
    auto loglik = [&](double z) { return -n * z - site_checkloss_[s] * std::exp(-z); };
    const double log_ratio =
        loglik(z_new) - loglik(z_old) +
        field_conditional_logprior(p_.log_scale, p_.scale_field, gp_scale_, s, z_new) -
        field_conditional_logprior(p_.log_scale, p_.scale_field, gp_scale_, s, z_old);
    if (metropolis(scale_adapt_[s], log_ratio)) p_.log_scale(i) = z_new;
  }
}

void GqrmSampler::update_field_hyper(Eigen::VectorXd& z, FieldHyper& h, GpCache& gp,
                                     Adaptive& decay_adapt, bool sample_mean) {
  const double n = static_cast<double>(z.size());
  if (sample_mean) {
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(z.size());
    const double prec = ones.dot(gp.inverse * ones) / h.variance + 1.0 / priors_.mean_variance;
    const double m = (ones.dot(gp.inverse * z) / h.variance) / prec;
    h.mean = m + sample_normal(rng_) / std::sqrt(prec);
  }
  const Eigen::VectorXd centered = z.array() - h.mean;
  const double quad = centered.dot(gp.inverse * centered);
  h.variance = sample_inverse_gamma(rng_, priors_.ig_shape + 0.5 * n,
                                    priors_.ig_scale + 0.5 * quad);

  const double log_old = std::log(h.decay);
  const double log_new = log_old + std::exp(decay_adapt.log_step) * sample_normal(rng_);
  const double decay_new = std::exp(log_new);
  if (decay_new < decay_lo_ || decay_new > decay_hi_) {
    metropolis(decay_adapt, -std::numeric_limits<double>::infinity());
    return;
  }
  GpCache proposal = make_cache(decay_new);
  auto target = [&](const GpCache& c, double log_decay) {
    return -0.5 * c.logdet - 0.5 * centered.dot(c.inverse * centered) / h.variance + log_decay;
  };
  if (metropolis(decay_adapt, target(proposal, log_new) - target(gp, log_old))) {
    gp = std::move(proposal);
    h.decay = decay_new;
  }
}

void GqrmSampler::sample_mixture() {
  const double theta = (1.0 - 2.0 * tau_) / (tau_ * (1.0 - tau_));
  const double kappa2 = 2.0 / (tau_ * (1.0 - tau_));
  const std::size_t per = static_cast<std::size_t>(data_.n_years() * (data_.season_length - 1));
  for (std::size_t s = 0; s < data_.n_sites(); ++s) {
    const double sigma = p_.sigma(s);
    const double psi = theta * theta / (kappa2 * sigma) + 2.0 / sigma;
    for (std::size_t k = s * per; k < (s + 1) * per; ++k) {
      const double u = resid_[k];
      const double chi = std::max(u * u, 1e-20 * sigma * sigma) / (kappa2 * sigma);
      const double inv_w = sample_inverse_gaussian(rng_, std::sqrt(psi / chi), psi);
      mix_[k] = 1.0 / std::max(inv_w, 1e-300);
    }
  }
}

void GqrmSampler::accumulate_site_year() {
  const double theta = (1.0 - 2.0 * tau_) / (tau_ * (1.0 - tau_));
  const double kappa2 = 2.0 / (tau_ * (1.0 - tau_));
  for (std::size_t s = 0; s < data_.n_sites(); ++s) {
    const double sigma = p_.sigma(s);
    for (int t = 1; t <= data_.n_years(); ++t) {
      double a = 0.0, b = 0.0;
      for (int ell = 2; ell <= data_.season_length; ++ell) {
        const std::size_t k = obs_index(s, t, ell);
        const double v = kappa2 * sigma * mix_[k];
        a += 1.0 / v;
        b += (resid_[k] - theta * mix_[k]) / v;
      }
      prec_sum_(static_cast<Eigen::Index>(s), t - 1) = a;
      resp_sum_(static_cast<Eigen::Index>(s), t - 1) = b;
    }
  }
}

void GqrmSampler::update_global() {
  const double theta = (1.0 - 2.0 * tau_) / (tau_ * (1.0 - tau_));
  const double kappa2 = 2.0 / (tau_ * (1.0 - tau_));
  Eigen::Matrix<double, 5, 5> q = Eigen::Matrix<double, 5, 5>::Zero();
  Eigen::Matrix<double, 5, 1> h = Eigen::Matrix<double, 5, 1>::Zero();
  Eigen::Matrix<double, 5, 1> beta;
  beta << p_.beta0, p_.trend, p_.beta_sin, p_.beta_cos, p_.beta_alt;
  for (std::size_t s = 0; s < data_.n_sites(); ++s) {
    const double rho = p_.rho(s);
    const double sigma = p_.sigma(s);
    const double x = data_.altitude_std[s];
    for (int t = 1; t <= data_.n_years(); ++t) {
      const double tc = centered_year(t, data_.n_years());
      for (int ell = 2; ell <= data_.season_length; ++ell) {
        const std::size_t k = obs_index(s, t, ell);
        Eigen::Matrix<double, 5, 1> d;
        d << 1.0 - rho, (1.0 - rho) * tc, harmonic_sin(ell) - rho * harmonic_sin(ell - 1),
            harmonic_cos(ell) - rho * harmonic_cos(ell - 1), (1.0 - rho) * x;
        const double w = 1.0 / (kappa2 * sigma * mix_[k]);
        const double response = resid_[k] - theta * mix_[k] + d.dot(beta);
        q.noalias() += w * d * d.transpose();
        h.noalias() += w * response * d;
      }
    }
  }
  for (int j = 0; j < 5; ++j) {
    if (j == 0 && priors_.flat_intercept) continue;
    q(j, j) += 1.0 / priors_.coef_variance;
  }
  const Eigen::VectorXd b = sample_gaussian_canonical(rng_, q, h);
  p_.beta0 = b(0);
  p_.trend = b(1);
  p_.beta_sin = b(2);
  p_.beta_cos = b(3);
  p_.beta_alt = b(4);
}

void GqrmSampler::update_site_intercept() {
  const Eigen::Index n = static_cast<Eigen::Index>(data_.n_sites());
  Eigen::MatrixXd q = gp_intercept_.inverse / p_.intercept_field.variance;
  Eigen::VectorXd h = Eigen::VectorXd::Zero(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const double d = 1.0 - p_.rho(static_cast<std::size_t>(s));
    for (int t = 0; t < data_.n_years(); ++t) {
      q(s, s) += d * d * prec_sum_(s, t);
      h(s) += d * (resp_sum_(s, t) + d * p_.site_intercept(s) * prec_sum_(s, t));
    }
  }
  const Eigen::VectorXd next = sample_gaussian_canonical(rng_, q, h);
  for (Eigen::Index s = 0; s < n; ++s) {
    const double d = 1.0 - p_.rho(static_cast<std::size_t>(s));
    const double delta = next(s) - p_.site_intercept(s);
    for (int t = 0; t < data_.n_years(); ++t) resp_sum_(s, t) -= d * delta * prec_sum_(s, t);
  }
  p_.site_intercept = next;
}

void GqrmSampler::update_site_trend() {
  const Eigen::Index n = static_cast<Eigen::Index>(data_.n_sites());
  Eigen::MatrixXd q = gp_trend_.inverse / p_.trend_field.variance;
  Eigen::VectorXd h = Eigen::VectorXd::Zero(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const double rho = p_.rho(static_cast<std::size_t>(s));
    for (int t = 0; t < data_.n_years(); ++t) {
      const double d = (1.0 - rho) * centered_year(t + 1, data_.n_years());
      q(s, s) += d * d * prec_sum_(s, t);
      h(s) += d * (resp_sum_(s, t) + d * p_.site_trend(s) * prec_sum_(s, t));
    }
  }
  const Eigen::VectorXd next = sample_gaussian_canonical(rng_, q, h);
  for (Eigen::Index s = 0; s < n; ++s) {
    const double rho = p_.rho(static_cast<std::size_t>(s));
    const double delta = next(s) - p_.site_trend(s);
    for (int t = 0; t < data_.n_years(); ++t) {
      const double d = (1.0 - rho) * centered_year(t + 1, data_.n_years());
      resp_sum_(s, t) -= d * delta * prec_sum_(s, t);
    }
  }
  p_.site_trend = next;
}

void GqrmSampler::update_year_effects() {
  const Eigen::Index n = static_cast<Eigen::Index>(data_.n_sites());
  for (int t = 0; t < data_.n_years(); ++t) {
    double prec = 1.0 / p_.year_variance;
    double h = 0.0;
    for (Eigen::Index s = 0; s < n; ++s) {
      const double d = 1.0 - p_.rho(static_cast<std::size_t>(s));
      prec += d * d * prec_sum_(s, t);
      h += d * (resp_sum_(s, t) + d * p_.year_effect(t) * prec_sum_(s, t));
    }
    const double next = h / prec + sample_normal(rng_) / std::sqrt(prec);
    const double delta = next - p_.year_effect(t);
    for (Eigen::Index s = 0; s < n; ++s) {
      const double d = 1.0 - p_.rho(static_cast<std::size_t>(s));
      resp_sum_(s, t) -= d * delta * prec_sum_(s, t);
    }
    p_.year_effect(t) = next;
  }
}

void GqrmSampler::update_site_year_effects() {
  for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(data_.n_sites()); ++s) {
    const double d = 1.0 - p_.rho(static_cast<std::size_t>(s));
    for (int t = 0; t < data_.n_years(); ++t) {
      const double prec = 1.0 / p_.site_year_variance + d * d * prec_sum_(s, t);
      const double h = d * (resp_sum_(s, t) + d * p_.site_year_effect(s, t) * prec_sum_(s, t));
      const double next = h / prec + sample_normal(rng_) / std::sqrt(prec);
      resp_sum_(s, t) -= d * (next - p_.site_year_effect(s, t)) * prec_sum_(s, t);
      p_.site_year_effect(s, t) = next;
    }
  }
}

void GqrmSampler::update_variances() {
  const double a = priors_.ig_shape, b = priors_.ig_scale;
  if (priors_.fixed_year_variance) {
    p_.year_variance = *priors_.fixed_year_variance;
  } else {
    p_.year_variance = sample_inverse_gamma(rng_, a + 0.5 * static_cast<double>(p_.n_years()),
                                            b + 0.5 * p_.year_effect.squaredNorm());
  }
  if (priors_.fixed_site_year_variance) {
    p_.site_year_variance = *priors_.fixed_site_year_variance;
  } else {
    p_.site_year_variance =
        sample_inverse_gamma(rng_, a + 0.5 * static_cast<double>(p_.site_year_effect.size()),
                             b + 0.5 * p_.site_year_effect.squaredNorm());
  }
  update_field_hyper(p_.site_intercept, p_.intercept_field, gp_intercept_, intercept_decay_adapt_,
                     false);
  update_field_hyper(p_.site_trend, p_.trend_field, gp_trend_, trend_decay_adapt_, false);
}

void GqrmSampler::adapt() {
  const int batch = iteration_ / config_.adapt_every;
  const double delta = std::min(0.1, 1.0 / std::sqrt(static_cast<double>(batch)));
  auto tune = [&](Adaptive& a) {
    if (a.proposed > 0) {
      const double rate = static_cast<double>(a.accepted) / a.proposed;
      a.log_step += rate > config_.target_acceptance ? delta : -delta;
    }
    a.accepted = 0;
    a.proposed = 0;
  };
  for (auto& a : ar_adapt_) tune(a);
  for (auto& a : scale_adapt_) tune(a);
  for (auto* a : {&scale_decay_adapt_, &ar_decay_adapt_, &intercept_decay_adapt_,
                  &trend_decay_adapt_}) {
    tune(*a);
  }
}

void GqrmSampler::record() {
  draws_.row(kept_) = p_.flatten().transpose();
  ++kept_;
}

void GqrmSampler::step() {
  if (done()) return;
  compute_residuals();
  update_ar_field();
  update_scale_field();
  update_field_hyper(p_.log_scale, p_.scale_field, gp_scale_, scale_decay_adapt_, true);
  update_field_hyper(p_.ar_logit, p_.ar_field, gp_ar_, ar_decay_adapt_, true);
  sample_mixture();
  update_global();
  compute_residuals();
  accumulate_site_year();
  update_site_intercept();
  update_site_trend();
  update_year_effects();
  update_site_year_effects();
  update_variances();
  for (std::size_t s = 0; s < site_checkloss_.size(); ++s) {
    if (!std::isfinite(site_checkloss_[s])) {
      throw Error("nonfinite_likelihood", "AL likelihood became non-finite");
    }
  }
  ++iteration_;
  if (iteration_ <= config_.burn_in && iteration_ % config_.adapt_every == 0) adapt();
  if (iteration_ > config_.burn_in && (iteration_ - config_.burn_in) % config_.thin == 0) record();
}

bool GqrmSampler::done() const { return kept_ >= config_.draws; }

void GqrmSampler::run() {
  while (!done()) step();
}

void GqrmSampler::run_for(int iterations) {
  for (int i = 0; i < iterations && !done(); ++i) step();
}

QuantileFit GqrmSampler::result() const {
  if (kept_ == 0) throw Error("empty_chain", "no posterior draws recorded yet");
  QuantileFit f;
  f.tau = tau_;
  f.names = GqrmParams::names(data_.n_sites(), data_.years.size());
  f.draws = draws_.topRows(kept_);
  Eigen::VectorXd med(f.draws.cols());
  std::vector<double> col(static_cast<std::size_t>(kept_));
  auto& diag = f.diagnostics;
  for (Eigen::Index j = 0; j < f.draws.cols(); ++j) {
    for (int i = 0; i < kept_; ++i) col[static_cast<std::size_t>(i)] = f.draws(i, j);
    med(j) = median(col);
    if (!std::all_of(col.begin(), col.end(), [](double v) { return std::isfinite(v); })) {
      diag.diverged = true;
      diag.warnings.push_back("non-finite draws for " + f.names[static_cast<std::size_t>(j)]);
      continue;
    }
    const double rhat = split_rhat(col);
    if (std::isfinite(rhat) && rhat > diag.max_rhat) {
      diag.max_rhat = rhat;
      diag.max_rhat_parameter = f.names[static_cast<std::size_t>(j)];
    }
    const auto& name = f.names[static_cast<std::size_t>(j)];
    const bool summarized = j < 5 || name.rfind("ar_logit", 0) == 0 ||
                            name.rfind("log_scale", 0) == 0 ||
                            j >= f.draws.cols() - 12;
    if (summarized) diag.ess[name] = effective_sample_size(col);
  }
  f.posterior_median = GqrmParams::unflatten(med, data_.n_sites(), data_.years.size());
  auto rate = [](const Adaptive& a) {
    return a.total_proposed > 0 ? static_cast<double>(a.total_accepted) / a.total_proposed : 0.0;
  };
  double ar = 0.0, sc = 0.0;
  for (const auto& a : ar_adapt_) ar += rate(a);
  for (const auto& a : scale_adapt_) sc += rate(a);
  diag.acceptance["ar_logit"] = ar / static_cast<double>(ar_adapt_.size());
  diag.acceptance["log_scale"] = sc / static_cast<double>(scale_adapt_.size());
  diag.acceptance["scale_decay"] = rate(scale_decay_adapt_);
  diag.acceptance["ar_decay"] = rate(ar_decay_adapt_);
  diag.acceptance["intercept_decay"] = rate(intercept_decay_adapt_);
  diag.acceptance["trend_decay"] = rate(trend_decay_adapt_);
  if (diag.max_rhat > 1.1) {
    diag.diverged = true;
    diag.warnings.push_back("split R-hat " + fmt(diag.max_rhat) + " for " +
                            diag.max_rhat_parameter + " exceeds 1.1");
  }
  return f;
}

void GqrmSampler::save_checkpoint(std::ostream& os) const {
  os << kCheckpointMagic << "\n";
  os << "tau," << fmt(tau_) << "\n";
  os << "burn_in," << config_.burn_in << "\n";
  os << "draws," << config_.draws << "\n";
  os << "thin," << config_.thin << "\n";
  os << "target_acceptance," << fmt(config_.target_acceptance) << "\n";
  os << "adapt_every," << config_.adapt_every << "\n";
  os << "seed," << config_.seed << "\n";
  os << "iteration," << iteration_ << "\n";
  os << "kept," << kept_ << "\n";
  os << "sites," << data_.n_sites() << "\n";
  os << "years," << data_.years.size() << "\n";
  {
    std::ostringstream rs;
    rs << rng_;
    os << "rng," << rs.str() << "\n";
  }
  auto adaptive = [&](const std::string& name, const Adaptive& a) {
    os << "adapt," << name << "," << fmt(a.log_step) << "," << a.accepted << "," << a.proposed
       << "," << a.total_accepted << "," << a.total_proposed << "\n";
  };
  for (std::size_t s = 0; s < ar_adapt_.size(); ++s) adaptive("ar" + std::to_string(s), ar_adapt_[s]);
  for (std::size_t s = 0; s < scale_adapt_.size(); ++s) {
    adaptive("scale" + std::to_string(s), scale_adapt_[s]);
  }
  adaptive("scale_decay", scale_decay_adapt_);
  adaptive("ar_decay", ar_decay_adapt_);
  adaptive("intercept_decay", intercept_decay_adapt_);
  adaptive("trend_decay", trend_decay_adapt_);
  const Eigen::VectorXd state = p_.flatten();
  os << "state";
  for (Eigen::Index j = 0; j < state.size(); ++j) os << "," << fmt(state(j));
  os << "\n";
  const auto names = GqrmParams::names(data_.n_sites(), data_.years.size());
  os << "draws_begin";
  for (const auto& n : names) os << "," << n;
  os << "\n";
  for (int i = 0; i < kept_; ++i) {
    os << i;
    for (Eigen::Index j = 0; j < draws_.cols(); ++j) os << "," << fmt(draws_(i, j));
    os << "\n";
  }
}

GqrmSampler GqrmSampler::load_checkpoint(std::istream& is, GqrmData data, GqrmPriors priors) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) {
    throw Error("invalid_checkpoint", "unrecognized checkpoint header");
  }
  std::map<std::string, std::string> kv;
  std::map<std::string, std::vector<std::string_view>> adapt;
  std::vector<std::string> adapt_lines;
  std::string state_line;
  while (std::getline(is, line)) {
    if (line.rfind("draws_begin", 0) == 0) break;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error("invalid_checkpoint", "malformed line: " + line);
    const std::string key = line.substr(0, comma);
    if (key == "adapt") {
      adapt_lines.push_back(line);
    } else if (key == "state") {
      state_line = line;
    } else {
      kv[key] = line.substr(comma + 1);
    }
  }
  auto get = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw Error("invalid_checkpoint", "missing field " + k);
    return it->second;
  };
  McmcConfig cfg;
  cfg.burn_in = std::stoi(get("burn_in"));
  cfg.draws = std::stoi(get("draws"));
  cfg.thin = std::stoi(get("thin"));
  cfg.target_acceptance = parse_double(get("target_acceptance"));
  cfg.adapt_every = std::stoi(get("adapt_every"));
  cfg.seed = std::stoull(get("seed"));
  if (std::stoul(get("sites")) != data.n_sites() || std::stoul(get("years")) != data.years.size()) {
    throw Error("invalid_checkpoint", "checkpoint was written for a different panel");
  }
  GqrmSampler out(std::move(data), parse_double(get("tau")), priors, cfg);
  out.iteration_ = std::stoi(get("iteration"));
  out.kept_ = std::stoi(get("kept"));
  {
    std::istringstream rs(get("rng"));
    rs >> out.rng_;
    if (!rs) throw Error("invalid_checkpoint", "cannot restore RNG state");
  }
  for (const auto& l : adapt_lines) {
    const auto f = split(l, ',');
    if (f.size() != 7) throw Error("invalid_checkpoint", "malformed adaptive entry");
    const std::string name(f[1]);
    Adaptive* a = nullptr;
    if (name == "scale_decay") a = &out.scale_decay_adapt_;
    else if (name == "ar_decay") a = &out.ar_decay_adapt_;
    else if (name == "intercept_decay") a = &out.intercept_decay_adapt_;
    else if (name == "trend_decay") a = &out.trend_decay_adapt_;
    else if (name.rfind("ar", 0) == 0) a = &out.ar_adapt_.at(std::stoul(name.substr(2)));
    else if (name.rfind("scale", 0) == 0) a = &out.scale_adapt_.at(std::stoul(name.substr(5)));
    else throw Error("invalid_checkpoint", "unknown adaptive block " + name);
    a->log_step = parse_double(f[2]);
    a->accepted = std::stoi(std::string(f[3]));
    a->proposed = std::stoi(std::string(f[4]));
    a->total_accepted = std::stoi(std::string(f[5]));
    a->total_proposed = std::stoi(std::string(f[6]));
  }
  const auto sf = split(state_line, ',');
  Eigen::VectorXd state(static_cast<Eigen::Index>(sf.size()) - 1);
  for (std::size_t j = 1; j < sf.size(); ++j) state(static_cast<Eigen::Index>(j - 1)) = parse_double(sf[j]);
  out.p_ = GqrmParams::unflatten(state, out.data_.n_sites(), out.data_.years.size());
  out.gp_scale_ = out.make_cache(out.p_.scale_field.decay);
  out.gp_ar_ = out.make_cache(out.p_.ar_field.decay);
  out.gp_intercept_ = out.make_cache(out.p_.intercept_field.decay);
  out.gp_trend_ = out.make_cache(out.p_.trend_field.decay);
  for (int i = 0; i < out.kept_; ++i) {
    if (!std::getline(is, line)) throw Error("invalid_checkpoint", "truncated draw table");
    const auto f = split(line, ',');
    if (static_cast<Eigen::Index>(f.size()) != out.draws_.cols() + 1) {
      throw Error("invalid_checkpoint", "draw row has the wrong width");
    }
    for (std::size_t j = 1; j < f.size(); ++j) {
      out.draws_(i, static_cast<Eigen::Index>(j - 1)) = parse_double(f[j]);
    }
  }
  return out;
}

QuantileFit fit(const GqrmData& data, double tau, const McmcConfig& config,
                const GqrmPriors& priors) {
  GqrmSampler sampler(data, tau, priors, config);
  sampler.run();
  return sampler.result();
}

QStarTable plugin_quantiles(const GqrmParams& params, double tau, const GqrmData& data) {
  require_tau(tau);
  params.validate();
  if (params.n_sites() != data.n_sites() ||
      params.n_years() != static_cast<std::size_t>(data.n_years())) {
    throw Error("invalid_params", "parameters do not match the station panel");
  }
  QStarTable q;
  q.tau = tau;
  q.sites = data.sites;
  q.years = data.years;
  q.season_length = data.season_length;
  const int per = data.season_length - 1;
  q.values.resize(static_cast<Eigen::Index>(data.n_sites()), data.n_years() * per);
  for (std::size_t s = 0; s < data.n_sites(); ++s) {
    for (int t = 1; t <= data.n_years(); ++t) {
      for (int ell = 2; ell <= data.season_length; ++ell) {
        q.values(static_cast<Eigen::Index>(s), (t - 1) * per + ell - 2) = conditional_quantile(
            params, s, data.altitude_std[s], t, ell, data.value(s, t, ell - 1));
      }
    }
  }
  if (!q.values.allFinite()) throw Error("nonfinite_quantile", "plug-in quantile is not finite");
  return q;
}

QStarTable plugin_quantiles(const QuantileFit& fit, const GqrmData& data) {
  return plugin_quantiles(fit.posterior_median, fit.tau, data);
}

double empirical_coverage(const QStarTable& q, const GqrmData& data) {
  std::size_t below = 0, total = 0;
  for (std::size_t s = 0; s < data.n_sites(); ++s) {
    for (int t = 1; t <= data.n_years(); ++t) {
      for (int ell = 2; ell <= data.season_length; ++ell) {
        if (data.value(s, t, ell) <= q.at(s, t, ell)) ++below;
        ++total;
      }
    }
  }
  return static_cast<double>(below) / static_cast<double>(total);
}

}  // namespace heatrisk::gqrm

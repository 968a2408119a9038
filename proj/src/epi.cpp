#include "heatrisk/epi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "heatrisk/error.hpp"

namespace heatrisk::epi {

namespace {

constexpr double kMaxEta = 700.0;

double safe_exp(double x) { return std::exp(std::min(x, kMaxEta)); }

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

struct Component {
  double weight, mean, sd;
};

double mixture_cdf(std::span<const Component> mix, double q) {
  double p = 0.0;
  for (const auto& c : mix) {
    p += c.weight * (c.sd > 0.0 ? normal_cdf((q - c.mean) / c.sd) : (q >= c.mean ? 1.0 : 0.0));
  }
  return p;
}

double mixture_quantile(std::span<const Component> mix, double prob) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& c : mix) {
    lo = std::min(lo, c.mean - 12.0 * c.sd);
    hi = std::max(hi, c.mean + 12.0 * c.sd);
  }
  if (!(hi > lo)) return lo;
  for (int it = 0; it < 200 && hi - lo > 1e-12 * (1.0 + std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (mixture_cdf(mix, mid) < prob ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Summary summarize(std::span<const Component> mix) {
  Summary s;
  for (const auto& c : mix) s.mean += c.weight * c.mean;
  s.median = mixture_quantile(mix, 0.5);
  s.lower = mixture_quantile(mix, 0.025);
  s.upper = mixture_quantile(mix, 0.975);
  return s;
}

}  // namespace

double pc_prior_rate(double u, double alpha) {
  if (!(u > 0.0) || !(alpha > 0.0 && alpha < 1.0)) {
    throw Error("invalid_config", "PC prior needs u > 0 and alpha in (0,1)");
  }
  return -std::log(alpha) / u;
}

double rw2_penalty(std::span<const double> f, double tau) {
  double s = 0.0;
  for (std::size_t b = 2; b < f.size(); ++b) {
    const double d = f[b] - 2.0 * f[b - 1] + f[b - 2];
    s += d * d;
  }
  return 0.5 * tau * s;
}

double rw2_neg_log_prior(std::span<const double> f, double tau) {
  const double rank = f.size() >= 2 ? static_cast<double>(f.size() - 2) : 0.0;
  return rw2_penalty(f, tau) - 0.5 * rank * std::log(tau / (2.0 * std::numbers::pi));
}

Eigen::MatrixXd rw2_structure(int n_bins) {
  if (n_bins < 2) throw Error("invalid_argument", "RW2 needs at least two bins");
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(std::max(n_bins - 2, 0), n_bins);
  for (int i = 0; i + 2 < n_bins; ++i) {
    d(i, i) = 1.0;
    d(i, i + 1) = -2.0;
    d(i, i + 2) = 1.0;
  }
  return d.transpose() * d;
}

Binning Binning::equal_width(std::span<const double> values, int n_bins) {
  if (n_bins < 1) throw Error("invalid_argument", "need at least one bin");
  if (values.empty()) throw Error("invalid_argument", "no exposure values to bin");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  if (!std::isfinite(*mn) || !std::isfinite(*mx)) throw Error("invalid_argument", "non-finite exposure");
  if (!(*mx > *mn)) throw Error("constant_exposure", "exposure has no spread to bin");
  return {*mn, (*mx - *mn) / n_bins, n_bins};
}

int Binning::bin(double x) const {
  const int b = static_cast<int>(std::floor((x - lo) / width));
  return std::clamp(b, 0, n - 1);
}

void EpiSpec::validate() const {
  if (temperature && n_bins < 2) throw Error("invalid_config", "n_bins must be at least 2");
  if (!(pc_u > 0.0) || !(pc_alpha > 0.0 && pc_alpha < 1.0)) {
    throw Error("invalid_config", "PC prior needs u > 0 and alpha in (0,1)");
  }
  if (!(beta_variance > 0.0) || !(stratum_variance > 0.0)) {
    throw Error("invalid_config", "prior variances must be positive");
  }
  if (tau_points < 1) throw Error("invalid_config", "tau_points must be positive");
  if (fixed_tau && !(*fixed_tau > 0.0)) throw Error("invalid_config", "fixed tau must be positive");
}

void EpiData::validate() const {
  const std::size_t n = exposure.size();
  if (outcome.size() != n || holiday.size() != n || (!heatwave.empty() && heatwave.size() != n)) {
    throw Error("invalid_dataset", "epi columns differ in length");
  }
  if (stratum_start.size() < 2 || stratum_start.front() != 0 || stratum_start.back() != n) {
    throw Error("invalid_dataset", "stratum offsets do not cover the rows");
  }
  for (std::size_t j = 0; j + 1 < stratum_start.size(); ++j) {
    const std::size_t b = stratum_start[j], e = stratum_start[j + 1];
    if (e < b + 2) throw Error("invalid_dataset", "stratum " + std::to_string(j) + " has fewer than two rows");
    int cases = 0;
    for (std::size_t r = b; r < e; ++r) cases += outcome[r];
    if (cases != 1) throw Error("invalid_dataset", "stratum " + std::to_string(j) + " must have one case");
  }
  for (double x : exposure) {
    if (!std::isfinite(x)) throw Error("invalid_dataset", "non-finite exposure");
  }
}

EpiData EpiData::from_dataset(const cco::Dataset& data, std::size_t method,
                              std::optional<std::size_t> heatwave) {
  if (method >= data.methods.size()) throw Error("invalid_argument", "exposure column out of range");
  if (heatwave && *heatwave >= data.heatwave_ids.size()) {
    throw Error("invalid_argument", "heatwave column out of range");
  }
  EpiData out;
  out.exposure.reserve(data.rows.size());
  for (const auto& row : data.rows) {
    out.exposure.push_back(row.exposure[method]);
    out.outcome.push_back(row.is_case ? 1 : 0);
    out.holiday.push_back(row.holiday ? 1 : 0);
    if (heatwave) out.heatwave.push_back(row.heatwave[*heatwave]);
  }
  for (const auto& s : data.strata) out.stratum_start.push_back(s.first_row);
  out.stratum_start.push_back(data.rows.size());
  return out;
}

double conditional_loglik(std::span<const double> eta, std::size_t case_index) {
  if (case_index >= eta.size()) throw Error("invalid_argument", "case index out of range");
  return eta[case_index] - log_sum_exp(eta);
}

// Gradient, and optionally the Hessian pieces, at one latent vector. The
// curve enters through f-space coordinates [fixed, f_1..f_B].
struct EpiPosterior::Local {
  double objective = 0.0;
  Eigen::VectorXd grad;                                   // latent coordinates
  Eigen::MatrixXd hf;                                     // f-space likelihood Hessian (Schur-reduced)
  std::vector<std::vector<std::pair<int, double>>> h;     // per stratum, f-space coupling to u_j
  Eigen::VectorXd d;                                      // per stratum u_j diagonal
};

EpiPosterior::EpiPosterior(const EpiData& data, const EpiSpec& spec) : data_(data), spec_(spec) {
  spec_.validate();
  data_.validate();
  if (spec_.heatwave && data_.heatwave.empty()) {
    throw Error("invalid_config", "heatwave model requested without a heatwave column");
  }
  n_fixed_ = (spec_.likelihood == Likelihood::Poisson ? 2 : 1) + (spec_.heatwave ? 1 : 0);
  n_strata_effects_ = spec_.likelihood == Likelihood::Poisson ? data_.n_strata() : 0;
  stratum_of_.resize(data_.n_rows());
  for (std::size_t j = 0; j < data_.n_strata(); ++j) {
    for (std::size_t r = data_.stratum_start[j]; r < data_.stratum_start[j + 1]; ++r) stratum_of_[r] = j;
  }
  if (spec_.temperature) {
    binning_ = Binning::equal_width(data_.exposure, spec_.n_bins);
    bins_.resize(data_.n_rows());
    for (std::size_t r = 0; r < data_.n_rows(); ++r) bins_[r] = binning_.bin(data_.exposure[r]);
    const int nb = spec_.n_bins;
    n_basis_ = static_cast<std::size_t>(nb - 1);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd::Ones(nb, 1));
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(nb, nb);
    z_ = q.rightCols(nb - 1);
    penalty_ = z_.transpose() * rw2_structure(nb) * z_;
    pc_rate_ = pc_prior_rate(spec_.pc_u, spec_.pc_alpha);
  }
}

std::vector<std::string> EpiPosterior::fixed_names() const {
  std::vector<std::string> names;
  if (spec_.likelihood == Likelihood::Poisson) names.push_back("intercept");
  names.push_back("holiday");
  if (spec_.heatwave) names.push_back("heatwave");
  return names;
}

double EpiPosterior::fixed_value(std::size_t r, std::size_t i) const {
  if (spec_.likelihood == Likelihood::Poisson) {
    if (i == 0) return 1.0;
    --i;
  }
  return i == 0 ? data_.holiday[r] : data_.heatwave[r];
}

Eigen::VectorXd EpiPosterior::initial() const {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
  if (spec_.likelihood == Likelihood::Poisson) {
    x(0) = std::log(static_cast<double>(data_.n_strata()) / static_cast<double>(data_.n_rows()));
  }
  return x;
}

Eigen::VectorXd EpiPosterior::curve(const Eigen::VectorXd& x) const {
  if (!spec_.temperature) return {};
  return z_ * x.segment(static_cast<Eigen::Index>(n_fixed_), static_cast<Eigen::Index>(n_basis_));
}

void EpiPosterior::linear_predictor(const Eigen::VectorXd& x, std::vector<double>& eta) const {
  if (static_cast<std::size_t>(x.size()) != dim()) throw Error("invalid_argument", "latent vector has wrong size");
  const Eigen::VectorXd f = curve(x);
  eta.assign(data_.n_rows(), 0.0);
  const auto uoff = static_cast<Eigen::Index>(n_fixed_ + n_basis_);
  for (std::size_t r = 0; r < data_.n_rows(); ++r) {
    double e = 0.0;
    for (std::size_t i = 0; i < n_fixed_; ++i) e += fixed_value(r, i) * x(static_cast<Eigen::Index>(i));
    if (spec_.temperature) e += f(bins_[r]);
    if (n_strata_effects_ > 0) e += x(uoff + static_cast<Eigen::Index>(stratum_of_[r]));
    eta[r] = e;
  }
}

EpiPosterior::Local EpiPosterior::evaluate(const Eigen::VectorXd& x, double tau,
                                           bool second_order) const {
  std::vector<double> eta;
  linear_predictor(x, eta);
  const auto nf = static_cast<Eigen::Index>(n_fixed_);
  const auto ng = static_cast<Eigen::Index>(n_basis_);
  const Eigen::Index nbins = spec_.temperature ? spec_.n_bins : 0;
  const Eigen::Index pdim = nf + nbins;
  const Eigen::Index uoff = nf + ng;
  const bool poisson = spec_.likelihood == Likelihood::Poisson;

  Local out;
  out.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
  Eigen::VectorXd gf = Eigen::VectorXd::Zero(pdim);
  if (second_order) {
    out.hf = Eigen::MatrixXd::Zero(pdim, pdim);
    if (poisson) {
      out.h.resize(data_.n_strata());
      out.d = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data_.n_strata()));
    }
  }

  std::vector<std::pair<int, double>> entries;
  std::vector<double> weight;
  for (std::size_t j = 0; j < data_.n_strata(); ++j) {
    const std::size_t b = data_.stratum_start[j], e = data_.stratum_start[j + 1];
    weight.assign(e - b, 0.0);
    if (poisson) {
      for (std::size_t r = b; r < e; ++r) {
        const double mu = safe_exp(eta[r]);
        weight[r - b] = mu;
        out.objective += mu - data_.outcome[r] * eta[r];
      }
    } else {
      const std::span<const double> seg(eta.data() + b, e - b);
      const double lse = log_sum_exp(seg);
      for (std::size_t r = b; r < e; ++r) {
        weight[r - b] = std::exp(eta[r] - lse);
        if (data_.outcome[r]) out.objective += lse - eta[r];
      }
    }
    entries.clear();
    double gu = 0.0;
    for (std::size_t r = b; r < e; ++r) {
      const double w = weight[r - b];
      const double resid = w - data_.outcome[r];
      gu += resid;
      const std::size_t first = entries.size();
      for (Eigen::Index i = 0; i < nf; ++i) {
        const double v = fixed_value(r, static_cast<std::size_t>(i));
        if (v != 0.0) entries.emplace_back(static_cast<int>(i), v);
      }
      if (spec_.temperature) entries.emplace_back(static_cast<int>(nf + bins_[r]), 1.0);
      for (std::size_t k = first; k < entries.size(); ++k) {
        gf(entries[k].first) += resid * entries[k].second;
      }
      if (second_order) {
        for (std::size_t k = first; k < entries.size(); ++k) {
          for (std::size_t l = first; l < entries.size(); ++l) {
            out.hf(entries[k].first, entries[l].first) += w * entries[k].second * entries[l].second;
          }
        }
      }
      // Reuse entry values weighted by the row mass for the coupling vector.
      for (std::size_t k = first; k < entries.size(); ++k) entries[k].second *= w;
    }
    if (poisson) out.grad(uoff + static_cast<Eigen::Index>(j)) = gu;
    if (!second_order) continue;
    // Merge duplicate indices of sum_r w_r a_r.
    std::sort(entries.begin(), entries.end());
    std::vector<std::pair<int, double>> merged;
    for (const auto& en : entries) {
      if (!merged.empty() && merged.back().first == en.first) {
        merged.back().second += en.second;
      } else {
        merged.push_back(en);
      }
    }
    if (poisson) {
      double dj = 0.0;
      for (double w : weight) dj += w;
      out.d(static_cast<Eigen::Index>(j)) = dj;
      out.h[j] = std::move(merged);
    } else {
      for (const auto& [k, vk] : merged) {
        for (const auto& [l, vl] : merged) out.hf(k, l) -= vk * vl;
      }
    }
  }

  // Priors.
  for (Eigen::Index i = 0; i < nf; ++i) {
    out.objective += 0.5 * x(i) * x(i) / spec_.beta_variance;
    out.grad(i) = gf(i) + x(i) / spec_.beta_variance;
  }
  if (spec_.temperature) {
    const Eigen::VectorXd g = x.segment(nf, ng);
    const Eigen::VectorXd pg = penalty_ * g;
    out.objective += 0.5 * tau * g.dot(pg);
    out.grad.segment(nf, ng) = z_.transpose() * gf.segment(nf, nbins) + tau * pg;
  }
  for (std::size_t j = 0; j < n_strata_effects_; ++j) {
    const double u = x(uoff + static_cast<Eigen::Index>(j));
    out.objective += 0.5 * u * u / spec_.stratum_variance;
    out.grad(uoff + static_cast<Eigen::Index>(j)) += u / spec_.stratum_variance;
    if (second_order) out.d(static_cast<Eigen::Index>(j)) += 1.0 / spec_.stratum_variance;
  }
  if (second_order && poisson) {
    for (std::size_t j = 0; j < out.h.size(); ++j) {
      const double inv = 1.0 / out.d(static_cast<Eigen::Index>(j));
      for (const auto& [k, vk] : out.h[j]) {
        for (const auto& [l, vl] : out.h[j]) out.hf(k, l) -= vk * vl * inv;
      }
    }
  }
  return out;
}

double EpiPosterior::value(const Eigen::VectorXd& x, double tau) const {
  std::vector<double> eta;
  linear_predictor(x, eta);
  double obj = 0.0;
  if (spec_.likelihood == Likelihood::Poisson) {
    for (std::size_t r = 0; r < eta.size(); ++r) obj += safe_exp(eta[r]) - data_.outcome[r] * eta[r];
  } else {
    for (std::size_t j = 0; j < data_.n_strata(); ++j) {
      const std::size_t b = data_.stratum_start[j], e = data_.stratum_start[j + 1];
      std::size_t c = b;
      while (!data_.outcome[c]) ++c;
      obj -= conditional_loglik(std::span<const double>(eta.data() + b, e - b), c - b);
    }
  }
  const auto nf = static_cast<Eigen::Index>(n_fixed_);
  for (Eigen::Index i = 0; i < nf; ++i) obj += 0.5 * x(i) * x(i) / spec_.beta_variance;
  if (spec_.temperature) {
    const Eigen::VectorXd g = x.segment(nf, static_cast<Eigen::Index>(n_basis_));
    obj += 0.5 * tau * g.dot(penalty_ * g);
  }
  const auto uoff = static_cast<Eigen::Index>(n_fixed_ + n_basis_);
  for (std::size_t j = 0; j < n_strata_effects_; ++j) {
    const double u = x(uoff + static_cast<Eigen::Index>(j));
    obj += 0.5 * u * u / spec_.stratum_variance;
  }
  return obj;
}

Eigen::VectorXd EpiPosterior::gradient(const Eigen::VectorXd& x, double tau) const {
  return evaluate(x, tau, false).grad;
}

EpiPosterior::Mode EpiPosterior::mode(double tau, const Eigen::VectorXd& start) const {
  if (spec_.temperature && !(tau > 0.0 && std::isfinite(tau))) {
    throw Error("invalid_argument", "tau must be positive");
  }
  const auto nf = static_cast<Eigen::Index>(n_fixed_);
  const auto ng = static_cast<Eigen::Index>(n_basis_);
  const Eigen::Index na = nf + ng;
  const Eigen::Index nbins = spec_.temperature ? spec_.n_bins : 0;
  const Eigen::Index uoff = na;

  // Latent a-block to f-space: blockdiag(I, Z).
  auto to_f = [&](const Eigen::VectorXd& a) {
    Eigen::VectorXd v(nf + nbins);
    v.head(nf) = a.head(nf);
    if (nbins > 0) v.tail(nbins) = z_ * a.tail(ng);
    return v;
  };
  auto from_f = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd a(na);
    a.head(nf) = v.head(nf);
    if (nbins > 0) a.tail(ng) = z_.transpose() * v.tail(nbins);
    return a;
  };

  Mode m;
  m.x = start.size() == static_cast<Eigen::Index>(dim()) ? start : initial();
  double obj = value(m.x, tau);
  Eigen::LLT<Eigen::MatrixXd> llt;
  Local loc;
  bool converged = false;
  for (int it = 0; it < 200; ++it) {
    loc = evaluate(m.x, tau, true);
    // Reduced Hessian of the a-block.
    Eigen::MatrixXd s(na, na);
    s.topLeftCorner(nf, nf) = loc.hf.topLeftCorner(nf, nf);
    if (nbins > 0) {
      const Eigen::MatrixXd fg = loc.hf.topRightCorner(nf, nbins) * z_;
      s.topRightCorner(nf, ng) = fg;
      s.bottomLeftCorner(ng, nf) = fg.transpose();
      s.bottomRightCorner(ng, ng) = z_.transpose() * loc.hf.bottomRightCorner(nbins, nbins) * z_ + tau * penalty_;
    }
    s.diagonal().head(nf).array() += 1.0 / spec_.beta_variance;
    llt.compute(s);
    if (llt.info() != Eigen::Success) {
      s.diagonal().array() += 1e-9 * (1.0 + s.diagonal().cwiseAbs().maxCoeff());
      llt.compute(s);
      if (llt.info() != Eigen::Success) throw Error("nonconvergence", "epi Hessian is not positive definite");
    }
    Eigen::VectorXd rhs = -loc.grad.head(na);
    if (n_strata_effects_ > 0) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(nf + nbins);
      for (std::size_t j = 0; j < n_strata_effects_; ++j) {
        const double scale = loc.grad(uoff + static_cast<Eigen::Index>(j)) / loc.d(static_cast<Eigen::Index>(j));
        for (const auto& [k, v] : loc.h[j]) acc(k) += v * scale;
      }
      rhs += from_f(acc);
    }
    Eigen::VectorXd step(static_cast<Eigen::Index>(dim()));
    step.head(na) = llt.solve(rhs);
    if (n_strata_effects_ > 0) {
      const Eigen::VectorXd df = to_f(step.head(na));
      for (std::size_t j = 0; j < n_strata_effects_; ++j) {
        double dot = 0.0;
        for (const auto& [k, v] : loc.h[j]) dot += v * df(k);
        const auto jj = static_cast<Eigen::Index>(j);
        step(uoff + jj) = (-loc.grad(uoff + jj) - dot) / loc.d(jj);
      }
    }
    const double slope = loc.grad.dot(step);
    if (-slope < 1e-15 * (1.0 + std::abs(obj)) || step.lpNorm<Eigen::Infinity>() < 1e-11) {
      converged = true;
      m.iterations = it;
      break;
    }
    double t = 1.0;
    bool accepted = false, stalled = false;
    for (int ls = 0; ls < 40; ++ls) {
      const Eigen::VectorXd trial = m.x + t * step;
      const double o = value(trial, tau);
      if (std::isfinite(o) && o <= obj + 1e-4 * t * slope) {
        m.x = trial;
        stalled = obj - o <= 1e-15 * std::abs(obj) && -slope < 1e-9 * (1.0 + std::abs(obj));
        obj = o;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (accepted && stalled) {
      converged = true;
      m.iterations = it;
      break;
    }
    if (!accepted) {
      // No decrease left at roundoff level.
      converged = -slope < 1e-9 * (1.0 + std::abs(obj)) || step.lpNorm<Eigen::Infinity>() * t < 1e-8;
      m.iterations = it;
      break;
    }
  }
  if (!converged) throw Error("nonconvergence", "epi posterior mode search did not converge");

  // Final curvature at the mode.
  loc = evaluate(m.x, tau, true);
  Eigen::MatrixXd s(na, na);
  s.topLeftCorner(nf, nf) = loc.hf.topLeftCorner(nf, nf);
  if (nbins > 0) {
    const Eigen::MatrixXd fg = loc.hf.topRightCorner(nf, nbins) * z_;
    s.topRightCorner(nf, ng) = fg;
    s.bottomLeftCorner(ng, nf) = fg.transpose();
    s.bottomRightCorner(ng, ng) = z_.transpose() * loc.hf.bottomRightCorner(nbins, nbins) * z_ + tau * penalty_;
  }
  s.diagonal().head(nf).array() += 1.0 / spec_.beta_variance;
  llt.compute(s);
  if (llt.info() != Eigen::Success) throw Error("nonconvergence", "epi Hessian is not positive definite");
  m.covariance = llt.solve(Eigen::MatrixXd::Identity(na, na));
  double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  for (Eigen::Index j = 0; j < loc.d.size(); ++j) logdet += std::log(loc.d(j));
  m.log_marginal = -obj - 0.5 * logdet;
  if (spec_.temperature) {
    const double rank = static_cast<double>(spec_.n_bins - 2);
    const double sigma = 1.0 / std::sqrt(tau);
    m.log_marginal += 0.5 * rank * std::log(tau) + std::log(pc_rate_) - pc_rate_ * sigma +
                      std::log(0.5 * sigma);
  }
  return m;
}

const Summary& EpiFit::coefficient(std::string_view name) const {
  for (std::size_t i = 0; i < fixed_names.size(); ++i) {
    if (fixed_names[i] == name) return fixed[i];
  }
  throw Error("invalid_argument", "no coefficient named '" + std::string(name) + "'");
}

EpiFit fit(const EpiData& data, const EpiSpec& spec) {
  const EpiPosterior post(data, spec);
  EpiFit out;
  out.spec = spec;
  out.binning = post.binning();
  out.fixed_names = post.fixed_names();
  out.n_strata = data.n_strata();
  out.n_rows = data.n_rows();

  std::vector<EpiPosterior::Mode> modes;
  Eigen::VectorXd warm = post.initial();
  if (!spec.temperature) {
    modes.push_back(post.mode(1.0, warm));
    out.log_tau = {0.0};
    out.weights = {1.0};
  } else if (spec.fixed_tau) {
    modes.push_back(post.mode(*spec.fixed_tau, warm));
    out.log_tau = {std::log(*spec.fixed_tau)};
    out.weights = {1.0};
    out.tau_mode = *spec.fixed_tau;
  } else {
    auto marginal = [&](double theta) {
      auto m = post.mode(std::exp(theta), warm);
      warm = m.x;
      return m.log_marginal;
    };
    // Golden-section search for the mode of the log tau marginal.
    constexpr double kLo = -4.0, kHi = 25.0;
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = kLo, b = kHi;
    double c = b - gr * (b - a), d = a + gr * (b - a);
    double fc = marginal(c), fd = marginal(d);
    while (b - a > 1e-3) {
      if (fc > fd) {
        b = d; d = c; fd = fc;
        c = b - gr * (b - a);
        fc = marginal(c);
      } else {
        a = c; c = d; fc = fd;
        d = a + gr * (b - a);
        fd = marginal(d);
      }
    }
    const double theta = 0.5 * (a + b);
    if (theta < kLo + 0.1 || theta > kHi - 0.1) {
      out.warnings.push_back("log tau mode at the search boundary");
    }
    out.tau_mode = std::exp(theta);
    constexpr double h = 0.25;
    const double f0 = marginal(theta), fp = marginal(theta + h), fm = marginal(theta - h);
    const double curv = -(fp - 2.0 * f0 + fm) / (h * h);
    const double sd = std::clamp(curv > 0.0 ? 1.0 / std::sqrt(curv) : 2.0, 0.05, 5.0);
    const int n = spec.tau_points;
    std::vector<double> logw;
    for (int k = 0; k < n; ++k) {
      const double th = n == 1 ? theta : theta + sd * (-3.5 + 7.0 * k / (n - 1));
      modes.push_back(post.mode(std::exp(th), warm));
      warm = modes.back().x;
      out.log_tau.push_back(th);
      logw.push_back(modes.back().log_marginal);
    }
    const double mx = *std::max_element(logw.begin(), logw.end());
    double total = 0.0;
    for (double lw : logw) total += std::exp(lw - mx);
    for (double lw : logw) out.weights.push_back(std::exp(lw - mx) / total);
  }

  const auto nf = static_cast<Eigen::Index>(post.n_fixed());
  const auto ng = static_cast<Eigen::Index>(post.n_basis());
  std::vector<Component> mix(modes.size());
  for (Eigen::Index i = 0; i < nf; ++i) {
    for (std::size_t k = 0; k < modes.size(); ++k) {
      mix[k] = {out.weights[k], modes[k].x(i), std::sqrt(std::max(modes[k].covariance(i, i), 0.0))};
    }
    out.fixed.push_back(summarize(mix));
  }
  if (spec.temperature) {
    const Eigen::MatrixXd& z = post.basis();
    std::vector<Eigen::VectorXd> means, sds;
    for (const auto& m : modes) {
      means.push_back(z * m.x.segment(nf, ng));
      const Eigen::MatrixXd zc = z * m.covariance.bottomRightCorner(ng, ng);
      sds.push_back(zc.cwiseProduct(z).rowwise().sum().cwiseMax(0.0).cwiseSqrt());
    }
    for (int b = 0; b < spec.n_bins; ++b) {
      for (std::size_t k = 0; k < modes.size(); ++k) mix[k] = {out.weights[k], means[k](b), sds[k](b)};
      out.curve.push_back(summarize(mix));
    }
  }
  const std::size_t first_ratio = spec.likelihood == Likelihood::Poisson ? 1 : 0;
  for (std::size_t i = first_ratio; i < out.fixed.size(); ++i) {
    if (std::abs(out.fixed[i].median) > 15.0) {
      out.separation = true;
      out.warnings.push_back("possible separation in " + out.fixed_names[i]);
    }
  }
  return out;
}

RiskCurve risk_curve(const EpiFit& fit) {
  if (fit.curve.empty()) throw Error("invalid_argument", "fit has no exposure curve");
  RiskCurve rc;
  int best = 0;
  for (int b = 1; b < static_cast<int>(fit.curve.size()); ++b) {
    if (fit.curve[b].median < fit.curve[best].median) best = b;
  }
  const double ref = fit.curve[best].median;
  rc.mmt_bin = best;
  rc.mmt = fit.binning.midpoint(best);
  for (int b = 0; b < static_cast<int>(fit.curve.size()); ++b) {
    rc.bin_mid.push_back(fit.binning.midpoint(b));
    rc.logrr_median.push_back(fit.curve[b].median - ref);
    rc.logrr_lower.push_back(fit.curve[b].lower - ref);
    rc.logrr_upper.push_back(fit.curve[b].upper - ref);
    rc.rr.push_back(std::exp(rc.logrr_median.back()));
  }
  return rc;
}

std::vector<HeatwaveResult> fit_heatwave_models(const cco::Dataset& data, std::size_t method,
                                                std::span<const std::size_t> heatwave_columns,
                                                bool with_temperature, EpiSpec spec) {
  spec.heatwave = true;
  spec.temperature = with_temperature;
  std::vector<HeatwaveResult> out;
  for (std::size_t col : heatwave_columns) {
    const EpiData ed = EpiData::from_dataset(data, method, col);
    HeatwaveResult res;
    res.method = data.methods[method];
    res.heatwave_id = data.heatwave_ids.at(col);
    res.with_temperature = with_temperature;
    std::size_t flagged = 0;
    for (auto f : ed.heatwave) flagged += f;
    res.prevalence = ed.heatwave.empty() ? 0.0 : static_cast<double>(flagged) / ed.heatwave.size();
    if (flagged == 0 || flagged == ed.heatwave.size()) {
      res.skipped = true;
      res.warning = flagged == 0 ? "no heatwave days among strata" : "every row is a heatwave day";
      out.push_back(std::move(res));
      continue;
    }
    const EpiFit f = fit(ed, spec);
    res.beta = f.coefficient("heatwave");
    res.rr = std::exp(res.beta.median);
    res.rr_lower = std::exp(res.beta.lower);
    res.rr_upper = std::exp(res.beta.upper);
    if (!f.warnings.empty()) res.warning = f.warnings.front();
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace heatrisk::epi

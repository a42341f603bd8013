#ifndef AREALRISK_METRICS_HPP
#define AREALRISK_METRICS_HPP

#include "arealrisk/error.hpp"
#include "arealrisk/estimators.hpp"
#include "arealrisk/model.hpp"
#include "arealrisk/rng.hpp"
#include "arealrisk/sampler.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

namespace arealrisk {

/// One-step-ahead temporal effect per retained draw:
/// alpha_{T+1} = rho alpha_T + delta, delta ~ N(0, omega).
inline Eigen::VectorXd forecast_alpha(const PosteriorSamples &s, Rng &rng) {
  if (!s.dynamic()) throw TypeError("forecasting requires samples from a dynamic model");
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto last = s.alpha.cols() - 1;
  Eigen::VectorXd out(s.alpha.rows());
  for (Eigen::Index d = 0; d < out.size(); ++d)
    out(d) = s.rho(d) * s.alpha(d, last) + std::sqrt(s.omega(d)) * normal(rng);
  return out;
}

/// Predicted relative-risk draws (draws x regions) for the slice following
/// the fitted period. `holdout` is the static slice of that period: its
/// covariates enter the linear predictor, its populations weight pbar for
/// r_CG, and its internally standardized E scales r_CG_tilde.
inline Eigen::MatrixXd forecast_risks(Estimator e, const PosteriorSamples &s,
                                      const Dataset &holdout, Rng &rng, int horizon = 1) {
  if (horizon != 1) throw DomainError("only one-step-ahead forecasts are supported");
  if (!s.dynamic()) throw TypeError("forecasting requires samples from a dynamic model");
  if (family_of(e) != s.spec.family)
    throw TypeError(to_string(e) + " is not defined for " + to_string(s.spec.family) +
                    " samples");
  if (holdout.dynamic() || holdout.region_ids != s.region_ids)
    throw DataError("hold-out slice must be a static slice over the fitted regions");

  const Eigen::VectorXd alpha_next = forecast_alpha(s, rng);
  Eigen::MatrixXd eta = s.beta * holdout.x.transpose() + s.phi;
  eta.colwise() += alpha_next;
  if (e == Estimator::r_is) return eta.array().exp().matrix();

  const auto link = s.spec.link;
  Eigen::MatrixXd p = eta.unaryExpr([link](double v) { return apply_link(link, v); });
  const auto I = p.cols();
  if (e == Estimator::r_cg_tilde) {
    const auto expected = internal_standardization(holdout);
    for (Eigen::Index i = 0; i < I; ++i)
      p.col(i) *= holdout.n[static_cast<std::size_t>(i)] / expected[static_cast<std::size_t>(i)];
    return p;
  }
  Eigen::VectorXd n(I);
  for (Eigen::Index i = 0; i < I; ++i) n(i) = holdout.n[static_cast<std::size_t>(i)];
  const Eigen::VectorXd pbar = (p * n) / n.sum();
  p.array().colwise() /= pbar.array();
  return p;
}

/// Sample CRPS of an empirical predictive distribution:
/// (1/M) sum |x_m - y| - (1/(2 M^2)) sum_m sum_m' |x_m - x_m'|.
inline double crps_empirical(std::span<const double> draws, double observed) {
  if (draws.empty()) throw DomainError("CRPS needs at least one draw");
  const double m = static_cast<double>(draws.size());
  double spread_to_obs = 0.0;
  double pairwise = 0.0;
  for (std::size_t a = 0; a < draws.size(); ++a) {
    spread_to_obs += std::abs(draws[a] - observed);
    for (std::size_t b = a + 1; b < draws.size(); ++b) pairwise += std::abs(draws[a] - draws[b]);
  }
  // each unordered pair appears twice in the double sum
  return spread_to_obs / m - pairwise / (m * m);
}

inline constexpr std::size_t kMaxCrpsDraws = 2000;

struct RegionForecast {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double observed = 0.0;
  double crps = 0.0;
  bool covered = false;
};

struct ForecastEvaluation {
  std::vector<RegionForecast> regions;
  double pmse = 0.0;
  double crps = 0.0;
  double coverage = 0.0;
};

/// Scores predictive draws (draws x regions) against observed raw risks.
/// CRPS uses at most 2,000 evenly thinned draws per region.
inline ForecastEvaluation evaluate_holdout(const Eigen::MatrixXd &predicted,
                                           std::span<const double> observed,
                                           double level = 0.9) {
  if (static_cast<std::size_t>(predicted.cols()) != observed.size())
    throw DomainError("predictions and observations are not conformable");
  if (predicted.rows() < 1) throw DomainError("no predictive draws");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("level must lie in (0, 1)");
  const auto M = static_cast<std::size_t>(predicted.rows());
  const std::size_t stride = (M + kMaxCrpsDraws - 1) / kMaxCrpsDraws;
  const double tail = 0.5 * (1.0 - level);

  ForecastEvaluation out;
  out.regions.resize(observed.size());
  std::vector<double> column(M);
  std::vector<double> thinned;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    auto &r = out.regions[i];
    thinned.clear();
    const double origin = predicted(0, static_cast<Eigen::Index>(i));
    double sum = 0.0;
    for (std::size_t d = 0; d < M; ++d) {
      const double v = predicted(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(i));
      column[d] = v;
      sum += v - origin;
      if (d % stride == 0) thinned.push_back(v);
    }
    r.observed = observed[i];
    r.mean = origin + sum / static_cast<double>(M);
    r.crps = crps_empirical(thinned, r.observed);
    std::sort(column.begin(), column.end());
    r.lower = quantile_sorted(column, tail);
    r.upper = quantile_sorted(column, 1.0 - tail);
    r.covered = r.lower <= r.observed && r.observed <= r.upper;
    out.pmse += (r.mean - r.observed) * (r.mean - r.observed);
    out.crps += r.crps;
    out.coverage += r.covered;
  }
  const double n = static_cast<double>(observed.size());
  out.pmse /= n;
  out.crps /= n;
  out.coverage /= n;
  return out;
}

} // namespace arealrisk

#endif // AREALRISK_METRICS_HPP

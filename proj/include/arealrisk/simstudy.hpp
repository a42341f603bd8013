#ifndef AREALRISK_SIMSTUDY_HPP
#define AREALRISK_SIMSTUDY_HPP

#include "arealrisk/error.hpp"
#include "arealrisk/estimators.hpp"
#include "arealrisk/graph.hpp"
#include "arealrisk/model.hpp"
#include "arealrisk/rng.hpp"
#include "arealrisk/sampler.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace arealrisk {

// ---------------------------------------------------------------------------
// Truth construction and data generation
// ---------------------------------------------------------------------------

struct HubBump {
  std::string region;
  double bump;
};

/// Baseline incidence everywhere, a bump at each hub, and a single
/// `neighbor_bump` for every non-hub region adjacent to at least one hub.
struct TruthRecipe {
  double baseline = 0.001;
  std::vector<HubBump> hubs; ///< empty: the three most populous regions
  double neighbor_bump = 0.0005;
};

struct TruthMap {
  std::vector<double> p;
  std::vector<double> r;
  std::string provenance;
};

/// r_i = p_i / pbar with pbar = sum n_i p_i / sum n_i.
inline std::vector<double> relative_risks(std::span<const double> p,
                                          std::span<const double> populations) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    num += populations[i] * p[i];
    den += populations[i];
  }
  const double pbar = num / den;
  std::vector<double> r(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) r[i] = p[i] / pbar;
  return r;
}

/// The three most populous regions with bumps 0.0015, 0.001 and 0.001.
inline std::vector<HubBump> default_hubs(const AdjacencyGraph &graph,
                                         std::span<const double> populations) {
  if (graph.size() < 3) throw ConfigError("default hubs need at least three regions");
  std::vector<std::size_t> order(graph.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return populations[a] > populations[b]; });
  return {{graph.region_id(order[0]), 0.0015},
          {graph.region_id(order[1]), 0.001},
          {graph.region_id(order[2]), 0.001}};
}

inline TruthMap truth_from_incidence(std::vector<double> p, std::span<const double> populations,
                                     std::string provenance) {
  if (p.size() != populations.size())
    throw DataError("incidence and populations are not conformable");
  for (double v : p)
    if (!(v > 0.0 && v < 1.0)) throw DomainError("true incidence must lie in (0, 1)");
  TruthMap t;
  t.r = relative_risks(p, populations);
  t.p = std::move(p);
  t.provenance = std::move(provenance);
  return t;
}

inline TruthMap build_truth(const AdjacencyGraph &graph, std::span<const double> populations,
                            const TruthRecipe &recipe) {
  if (populations.size() != graph.size())
    throw DataError("populations are not conformable with the adjacency structure");
  const auto hubs = recipe.hubs.empty() ? default_hubs(graph, populations) : recipe.hubs;
  std::vector<double> p(graph.size(), recipe.baseline);
  std::vector<bool> is_hub(graph.size(), false);
  std::vector<bool> near_hub(graph.size(), false);
  std::ostringstream provenance;
  provenance << "baseline=" << recipe.baseline << ";neighbor_bump=" << recipe.neighbor_bump
             << ";hubs=";
  for (std::size_t h = 0; h < hubs.size(); ++h) {
    const auto idx = graph.index_of(hubs[h].region);
    if (!idx) throw ConfigError("unknown hub region '" + hubs[h].region + "'");
    p[*idx] += hubs[h].bump;
    is_hub[*idx] = true;
    for (auto j : graph.neighbors(*idx)) near_hub[j] = true;
    provenance << (h ? "," : "") << hubs[h].region << ":" << hubs[h].bump;
  }
  for (std::size_t i = 0; i < graph.size(); ++i)
    if (near_hub[i] && !is_hub[i]) p[i] += recipe.neighbor_bump;
  return truth_from_incidence(std::move(p), populations, provenance.str());
}

namespace detail {
inline std::int64_t poisson_draw(double mean, Rng &rng) {
  if (!(mean > 0.0)) return 0;
  std::poisson_distribution<std::int64_t> pois(mean);
  return pois(rng);
}
} // namespace detail

/// Y_i ~ Po(n_i p_i), independently, as an intercept-only static dataset.
inline Dataset simulate_counts(const TruthMap &truth, std::span<const double> populations,
                               const std::vector<std::string> &region_ids, std::uint64_t seed) {
  if (truth.p.size() != populations.size() || region_ids.size() != populations.size())
    throw DataError("truth, populations and region ids are not conformable");
  Rng rng(seed);
  std::vector<std::int64_t> y(populations.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = detail::poisson_draw(populations[i] * truth.p[i], rng);
  return Dataset::make_static(region_ids, std::move(y),
                              std::vector<double>(populations.begin(), populations.end()));
}

/// Panel from the dynamic generative model: logit p_it = logit p_i + alpha_t,
/// alpha a stationary AR(1) with variance-parameterized innovations.
struct PanelTruth {
  Dataset data;
  std::vector<double> alpha;
  std::vector<double> p; ///< time-major cells
};

inline PanelTruth simulate_panel(const TruthMap &truth, std::span<const double> populations,
                                 const std::vector<std::string> &region_ids, std::size_t n_times,
                                 double rho, double omega, std::uint64_t seed,
                                 int first_year = 1) {
  if (n_times < 2) throw ConfigError("a panel needs at least two time points");
  if (!(std::abs(rho) < 1.0) || !(omega > 0.0))
    throw ConfigError("panel AR(1) needs |rho| < 1 and omega > 0");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  PanelTruth out;
  out.alpha.resize(n_times);
  out.alpha[0] = std::sqrt(omega / (1.0 - rho * rho)) * normal(rng);
  for (std::size_t t = 1; t < n_times; ++t)
    out.alpha[t] = rho * out.alpha[t - 1] + std::sqrt(omega) * normal(rng);
  const auto I = region_ids.size();
  std::vector<std::string> labels;
  std::vector<std::int64_t> y(I * n_times);
  std::vector<double> n(I * n_times);
  out.p.resize(I * n_times);
  for (std::size_t t = 0; t < n_times; ++t) {
    labels.push_back(std::to_string(first_year + static_cast<int>(t)));
    for (std::size_t i = 0; i < I; ++i) {
      const double logit = std::log(truth.p[i] / (1.0 - truth.p[i]));
      const double p = apply_link(Link::logit(), logit + out.alpha[t]);
      out.p[t * I + i] = p;
      n[t * I + i] = populations[i];
      y[t * I + i] = detail::poisson_draw(populations[i] * p, rng);
    }
  }
  out.data = Dataset::make_panel(region_ids, std::move(labels), std::move(y), std::move(n));
  return out;
}

/// Synthetic populations for a rows x cols lattice: log-normal around 45,000
/// with three large hubs spread over the grid.
inline std::vector<double> lattice_populations(std::size_t rows, std::size_t cols,
                                               std::uint64_t seed) {
  if (rows < 2 || cols < 2) throw ConfigError("lattice must be at least 2 x 2");
  Rng rng(seed);
  std::normal_distribution<double> normal(std::log(45000.0), 0.75);
  std::vector<double> pop(rows * cols);
  for (auto &v : pop) v = std::round(std::clamp(std::exp(normal(rng)), 8000.0, 400000.0));
  const std::size_t hubs[3][2] = {{rows / 4, cols / 4}, {rows / 4, (3 * cols) / 4},
                                  {(3 * rows) / 4, cols / 2}};
  const double sizes[3] = {1.41e6, 9.6e5, 8.7e5};
  for (int h = 0; h < 3; ++h) pop[hubs[h][0] * cols + hubs[h][1]] = sizes[h];
  return pop;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// sum_i (rhat_i - r_i)^2 / r_i
inline double loss_ratio(std::span<const double> r_hat, std::span<const double> r_true) {
  if (r_hat.size() != r_true.size()) throw DomainError("loss inputs are not conformable");
  double s = 0.0;
  for (std::size_t i = 0; i < r_hat.size(); ++i) {
    if (!(r_true[i] > 0.0)) throw DomainError("true relative risks must be positive");
    const double d = r_hat[i] - r_true[i];
    s += d * d / r_true[i];
  }
  return s;
}

/// sum_i (log rhat_i - log r_i)^2
inline double loss_bias(std::span<const double> r_hat, std::span<const double> r_true) {
  if (r_hat.size() != r_true.size()) throw DomainError("loss inputs are not conformable");
  double s = 0.0;
  for (std::size_t i = 0; i < r_hat.size(); ++i) {
    if (!(r_hat[i] > 0.0) || !(r_true[i] > 0.0))
      throw DomainError("log-scale loss needs strictly positive risks");
    const double d = std::log(r_hat[i]) - std::log(r_true[i]);
    s += d * d;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Replicated study
// ---------------------------------------------------------------------------

struct FitOutcome {
  std::vector<RiskSummary> summaries;
  std::vector<BlockAcceptance> acceptance;
};

/// Fits one model to one replicate and summarizes every estimator of its
/// family. Replaceable so the aggregation machinery can be tested with
/// deterministic estimators.
using Fitter = std::function<FitOutcome(const Dataset &, const AdjacencyGraph &, const ModelSpec &,
                                        std::span<const double> expected, std::uint64_t seed)>;

inline Fitter mcmc_fitter(SamplerConfig config, double level = 0.9) {
  return [config, level](const Dataset &d, const AdjacencyGraph &g, const ModelSpec &spec,
                         std::span<const double> expected, std::uint64_t seed) {
    auto cfg = config;
    cfg.seed = seed;
    const auto samples =
        run_chain(d, g, spec, cfg, std::vector<double>(expected.begin(), expected.end()));
    FitOutcome out;
    for (auto e : estimators_for(spec.family))
      out.summaries.push_back(summarize_risk(e, samples, d, expected, level));
    out.acceptance = samples.acceptance;
    return out;
  };
}

struct StudyConfig {
  std::size_t replicates = 100;
  std::vector<Link> links{Link::logit()};
  std::vector<double> population_scales{1.0};
  std::vector<Estimator> estimators{Estimator::r_is, Estimator::r_cg_tilde, Estimator::r_cg};
  SamplerConfig sampler;
  std::uint64_t master_seed = 1;
  std::size_t jobs = 1;
  double level = 0.9;

  void validate() const {
    if (replicates < 2) throw ConfigError("a study needs at least two replicates (B >= 2)");
    if (links.empty()) throw ConfigError("a study needs at least one link");
    if (population_scales.empty()) throw ConfigError("a study needs at least one population scale");
    for (double s : population_scales)
      if (!(s > 0.0)) throw ConfigError("population scales must be positive");
    if (estimators.empty()) throw ConfigError("a study needs at least one estimator");
    for (const auto &l : links) ModelSpec{Family::cg, l, Temporal::static_, {}}.validate();
    sampler.validate();
  }

  bool wants(Estimator e) const {
    return std::find(estimators.begin(), estimators.end(), e) != estimators.end();
  }
  bool wants_family(Family f) const {
    return std::any_of(estimators.begin(), estimators.end(),
                       [f](Estimator e) { return family_of(e) == f; });
  }
};

/// B x I results of one estimator in one study arm. Rows are replicates in
/// `replicate_indices` order; `replicate_seeds` identifies the datasets so
/// paired comparisons can be checked.
struct ReplicationBatch {
  Estimator estimator = Estimator::r_is;
  std::vector<std::size_t> replicate_indices;
  std::vector<std::uint64_t> replicate_seeds;
  Eigen::MatrixXd mean;
  Eigen::MatrixXd lower;
  Eigen::MatrixXd upper;
  Eigen::MatrixXd length;
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> coverage;
  std::vector<double> loss_ratio;
  std::vector<double> loss_bias;

  std::size_t replicates() const noexcept { return replicate_indices.size(); }
  double expected_loss_ratio() const {
    return std::accumulate(loss_ratio.begin(), loss_ratio.end(), 0.0) /
           static_cast<double>(loss_ratio.size());
  }
  double expected_loss_bias() const {
    return std::accumulate(loss_bias.begin(), loss_bias.end(), 0.0) /
           static_cast<double>(loss_bias.size());
  }
  double average_coverage() const { return coverage.cast<double>().mean(); }
  double average_length() const { return length.mean(); }
};

/// 1{lower <= r_true <= upper} for every replicate and region.
inline Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>
coverage_matrix(const Eigen::MatrixXd &lower, const Eigen::MatrixXd &upper,
                std::span<const double> r_true) {
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> out(lower.rows(), lower.cols());
  for (Eigen::Index b = 0; b < lower.rows(); ++b)
    for (Eigen::Index i = 0; i < lower.cols(); ++i) {
      const double r = r_true[static_cast<std::size_t>(i)];
      out(b, i) = lower(b, i) <= r && r <= upper(b, i);
    }
  return out;
}

struct IntervalComparison {
  double row_wise = 0.0;    ///< fraction of replicates with a shorter mean interval
  double column_wise = 0.0; ///< fraction of regions with a shorter mean interval
};

/// Paired length comparison of a CG estimator against r_IS. Ties count as
/// not shorter.
inline IntervalComparison interval_comparisons(const ReplicationBatch &cg,
                                               const ReplicationBatch &is) {
  if (cg.replicate_seeds != is.replicate_seeds)
    throw DomainError("interval comparisons need batches fitted to the same replicates");
  if (cg.length.rows() != is.length.rows() || cg.length.cols() != is.length.cols() ||
      cg.length.rows() == 0)
    throw DomainError("length matrices are not conformable");
  const Eigen::VectorXd cg_rows = cg.length.rowwise().mean();
  const Eigen::VectorXd is_rows = is.length.rowwise().mean();
  const Eigen::VectorXd cg_cols = cg.length.colwise().mean().transpose();
  const Eigen::VectorXd is_cols = is.length.colwise().mean().transpose();
  IntervalComparison out;
  out.row_wise = (cg_rows.array() < is_rows.array()).cast<double>().mean();
  out.column_wise = (cg_cols.array() < is_cols.array()).cast<double>().mean();
  return out;
}

struct AcceptanceRange {
  double min = 1.0;
  double max = 0.0;
  std::size_t blocks = 0;
  std::size_t outside = 0; ///< blocks outside the target band

  void add(double rate, double low, double high) {
    min = std::min(min, rate);
    max = std::max(max, rate);
    ++blocks;
    outside += rate < low || rate > high;
  }
};

struct ReplicateFailure {
  std::size_t replicate;
  std::string message;
};

/// All results for one (population scale, link) cell of the study.
struct StudyArm {
  double population_scale = 1.0;
  Link link;
  std::vector<ReplicationBatch> batches; ///< requested estimators, in config order
  std::vector<ReplicateFailure> failures;
  Eigen::MatrixXd counts; ///< B x I simulated counts of the used replicates
  double mle_loss_ratio = 0.0;
  double mle_loss_bias = 0.0;
  std::size_t mle_bias_replicates = 0; ///< replicates without zero counts
  AcceptanceRange is_acceptance;
  AcceptanceRange cg_acceptance;

  const ReplicationBatch *batch(Estimator e) const {
    for (const auto &b : batches)
      if (b.estimator == e) return &b;
    return nullptr;
  }
};

struct StudyReport {
  StudyConfig config;
  std::vector<std::string> region_ids;
  std::vector<double> populations;
  TruthMap truth;
  std::vector<StudyArm> arms;
};

namespace detail {
struct ReplicateResult {
  bool ok = false;
  std::string error;
  std::uint64_t seed = 0;
  std::vector<std::int64_t> counts;
  std::vector<double> mle;
  FitOutcome is_fit;
  std::vector<FitOutcome> cg_fits; ///< one per link
};

inline const RiskSummary &find_summary(const FitOutcome &f, Estimator e) {
  for (const auto &s : f.summaries)
    if (s.estimator == e) return s;
  throw TypeError("fit did not produce " + to_string(e));
}
} // namespace detail

/// Simulates B datasets per population scale from `truth`, fits every
/// requested model to each and aggregates losses, coverage and interval
/// lengths. Each replicate draws its data and chain seeds from
/// (master_seed, scale, replicate), so results do not depend on `jobs`.
inline StudyReport run_study(const AdjacencyGraph &graph, std::span<const double> populations,
                             const TruthMap &truth, const StudyConfig &config,
                             Fitter fitter = {}) {
  config.validate();
  if (populations.size() != graph.size() || truth.p.size() != graph.size())
    throw DataError("populations and truth must match the adjacency structure");
  if (!fitter) fitter = mcmc_fitter(config.sampler, config.level);

  const auto B = config.replicates;
  const auto S = config.population_scales.size();
  const auto I = graph.size();
  std::vector<detail::ReplicateResult> results(S * B);

  auto run_one = [&](std::size_t task) {
    const auto si = task / B;
    const auto b = task % B;
    auto &res = results[task];
    try {
      const double scale = config.population_scales[si];
      std::vector<double> pop(populations.begin(), populations.end());
      for (auto &v : pop) v *= scale;
      res.seed = derive_seed(derive_seed(config.master_seed, "scale", si), "replicate", b);
      const auto data = simulate_counts(truth, pop, graph.region_ids(), derive_seed(res.seed, "data"));
      res.counts = data.y;
      const auto expected = internal_standardization(data);
      res.mle = raw_risks(data, expected);
      if (config.wants_family(Family::is))
        res.is_fit = fitter(data, graph, ModelSpec{Family::is, Link::logit(), Temporal::static_, {}}, expected,
                            derive_seed(res.seed, "chain/is"));
      if (config.wants_family(Family::cg))
        for (const auto &link : config.links)
          res.cg_fits.push_back(fitter(data, graph, ModelSpec{Family::cg, link, Temporal::static_, {}}, expected,
                                       derive_seed(res.seed, "chain/cg/" + link.name())));
      res.ok = true;
    } catch (const std::exception &e) {
      res.ok = false;
      res.error = e.what();
    }
  };

  const std::size_t tasks = S * B;
  const std::size_t workers = std::max<std::size_t>(1, std::min(config.jobs, tasks));
  if (workers == 1) {
    for (std::size_t t = 0; t < tasks; ++t) run_one(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t t = next++; t < tasks; t = next++) run_one(t);
      });
    for (auto &th : pool) th.join();
  }

  StudyReport report;
  report.config = config;
  report.region_ids = graph.region_ids();
  report.populations.assign(populations.begin(), populations.end());
  report.truth = truth;

  for (std::size_t si = 0; si < S; ++si)
    for (std::size_t li = 0; li < config.links.size(); ++li) {
      StudyArm arm;
      arm.population_scale = config.population_scales[si];
      arm.link = config.links[li];
      std::vector<std::size_t> used;
      for (std::size_t b = 0; b < B; ++b) {
        const auto &res = results[si * B + b];
        if (res.ok)
          used.push_back(b);
        else
          arm.failures.push_back({b, res.error});
      }
      const auto U = static_cast<Eigen::Index>(used.size());
      arm.counts.resize(U, static_cast<Eigen::Index>(I));
      for (Eigen::Index u = 0; u < U; ++u)
        for (std::size_t i = 0; i < I; ++i)
          arm.counts(u, static_cast<Eigen::Index>(i)) =
              static_cast<double>(results[si * B + used[static_cast<std::size_t>(u)]].counts[i]);

      for (auto e : config.estimators) {
        ReplicationBatch batch;
        batch.estimator = e;
        batch.replicate_indices = used;
        batch.mean.resize(U, static_cast<Eigen::Index>(I));
        batch.lower.resizeLike(batch.mean);
        batch.upper.resizeLike(batch.mean);
        for (Eigen::Index u = 0; u < U; ++u) {
          const auto &res = results[si * B + used[static_cast<std::size_t>(u)]];
          batch.replicate_seeds.push_back(res.seed);
          const auto &fit = e == Estimator::r_is ? res.is_fit : res.cg_fits[li];
          const auto &summary = detail::find_summary(fit, e);
          for (std::size_t i = 0; i < I; ++i) {
            const auto &cell = summary.at(i);
            const auto col = static_cast<Eigen::Index>(i);
            batch.mean(u, col) = cell.mean;
            batch.lower(u, col) = cell.lower;
            batch.upper(u, col) = cell.upper;
          }
          const auto means = summary.column(&CellSummary::mean);
          batch.loss_ratio.push_back(loss_ratio(means, truth.r));
          batch.loss_bias.push_back(loss_bias(means, truth.r));
        }
        batch.length = batch.upper - batch.lower;
        batch.coverage = coverage_matrix(batch.lower, batch.upper, truth.r);
        arm.batches.push_back(std::move(batch));
      }

      double ratio_sum = 0.0;
      double bias_sum = 0.0;
      for (auto b : used) {
        const auto &res = results[si * B + b];
        ratio_sum += loss_ratio(res.mle, truth.r);
        if (std::all_of(res.mle.begin(), res.mle.end(), [](double v) { return v > 0.0; })) {
          bias_sum += loss_bias(res.mle, truth.r);
          ++arm.mle_bias_replicates;
        }
        const auto low = config.sampler.target_low;
        const auto high = config.sampler.target_high;
        for (const auto &a : res.is_fit.acceptance) arm.is_acceptance.add(a.rate, low, high);
        if (!res.cg_fits.empty())
          for (const auto &a : res.cg_fits[li].acceptance) arm.cg_acceptance.add(a.rate, low, high);
      }
      arm.mle_loss_ratio = used.empty() ? 0.0 : ratio_sum / static_cast<double>(used.size());
      arm.mle_loss_bias =
          arm.mle_bias_replicates ? bias_sum / static_cast<double>(arm.mle_bias_replicates) : 0.0;
      report.arms.push_back(std::move(arm));
    }
  return report;
}

} // namespace arealrisk

#endif // AREALRISK_SIMSTUDY_HPP

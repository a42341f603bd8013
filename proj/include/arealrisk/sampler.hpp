#ifndef AREALRISK_SAMPLER_HPP
#define AREALRISK_SAMPLER_HPP

#include "arealrisk/error.hpp"
#include "arealrisk/graph.hpp"
#include "arealrisk/model.hpp"
#include "arealrisk/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace arealrisk {

struct SamplerConfig {
  std::size_t n_iterations = 25000;
  std::size_t burn_in = 5000;
  std::size_t thin = 2;
  std::uint64_t seed = 1;
  std::size_t adapt_window = 100;
  double target_low = 0.15;
  double target_high = 0.40;
  bool adapt_only_during_burn_in = true;
  double initial_scale = 0.1;

  void validate() const {
    if (n_iterations == 0 || thin == 0 || adapt_window == 0)
      throw ConfigError("iterations, thin and adapt_window must be positive");
    if (burn_in >= n_iterations) throw ConfigError("burn_in must be smaller than iterations");
    if (!(0.0 < target_low && target_low < target_high && target_high < 1.0))
      throw ConfigError("target acceptance band must satisfy 0 < low < high < 1");
    if (!(initial_scale > 0.0)) throw ConfigError("initial proposal scale must be positive");
  }

  std::size_t n_draws() const { return (n_iterations - burn_in) / thin; }
};

/// Random-walk proposal scale plus acceptance bookkeeping for one scalar
/// Metropolis update.
struct MetropolisBlock {
  double scale = 0.1;
  std::uint64_t proposed = 0;
  std::uint64_t accepted = 0;
  std::uint64_t window_proposed = 0;
  std::uint64_t window_accepted = 0;
  std::uint64_t retained_proposed = 0; ///< after burn-in
  std::uint64_t retained_accepted = 0;

  void record(bool accept, bool after_burn_in) {
    ++proposed;
    ++window_proposed;
    accepted += accept;
    window_accepted += accept;
    if (after_burn_in) {
      ++retained_proposed;
      retained_accepted += accept;
    }
  }

  double window_rate() const {
    return window_proposed ? static_cast<double>(window_accepted) / window_proposed : 0.0;
  }

  /// Post-burn-in acceptance rate, or the whole-run rate before burn-in ends.
  double acceptance_rate() const {
    if (retained_proposed) return static_cast<double>(retained_accepted) / retained_proposed;
    return proposed ? static_cast<double>(accepted) / proposed : 0.0;
  }
};

/// Multiplies the scale by 0.8 when the windowed acceptance is below the
/// band, by 1.25 when above it, then resets the window.
inline void adapt_scale(MetropolisBlock &block, double low, double high) {
  if (block.window_proposed > 0) {
    const double rate = block.window_rate();
    if (rate < low)
      block.scale *= 0.8;
    else if (rate > high)
      block.scale *= 1.25;
  }
  block.window_proposed = 0;
  block.window_accepted = 0;
}

/// Current state of one chain. `alpha` is empty for static models.
struct ChainState {
  std::vector<double> beta;
  std::vector<double> phi;
  double tau = 1.0;
  std::vector<double> alpha;
  double rho = 0.5;
  double omega = 0.1;

  std::vector<MetropolisBlock> beta_blocks;
  std::vector<MetropolisBlock> phi_blocks;
  std::vector<MetropolisBlock> alpha_blocks;
  MetropolisBlock rho_block;
  std::uint64_t nonfinite_proposals = 0;

  bool dynamic() const noexcept { return !alpha.empty(); }

  static ChainState initial(const Dataset &d, const ModelSpec &spec, double initial_scale) {
    ChainState s;
    s.beta.assign(d.n_covariates(), 0.0);
    s.phi.assign(d.n_regions(), 0.0);
    MetropolisBlock block;
    block.scale = initial_scale;
    s.beta_blocks.assign(d.n_covariates(), block);
    s.phi_blocks.assign(d.n_regions(), block);
    if (spec.temporal == Temporal::dynamic_ar1) {
      s.alpha.assign(d.n_times(), 0.0);
      s.alpha_blocks.assign(d.n_times(), block);
    }
    s.rho_block = block;
    return s;
  }

  template <typename F> void for_each_block(F &&f) {
    for (auto &b : beta_blocks) f(b);
    for (auto &b : phi_blocks) f(b);
    for (auto &b : alpha_blocks) f(b);
    if (dynamic()) f(rho_block);
  }
};

inline void adapt_proposals(ChainState &state, const SamplerConfig &config) {
  state.for_each_block(
      [&](MetropolisBlock &b) { adapt_scale(b, config.target_low, config.target_high); });
}

/// Accept with probability min(1, exp(log_ratio)). A non-negative ratio is
/// accepted without consuming a uniform.
inline bool metropolis_accept(double log_ratio, Rng &rng) {
  if (std::isnan(log_ratio)) return false;
  if (log_ratio >= 0.0) return true;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  return std::log(unif(rng)) < log_ratio;
}

struct GammaParams {
  double shape;
  double rate;
};

/// Inverse-gamma with density proportional to x^{-shape-1} exp(-scale / x).
struct InverseGammaParams {
  double shape;
  double scale;
};

/// tau | phi ~ Gamma(a + I/2, b + S(phi)/2), rate parameterization.
inline GammaParams tau_conditional(const AdjacencyGraph &graph, std::span<const double> phi,
                                   const GammaPrior &prior) {
  return {prior.shape + 0.5 * static_cast<double>(graph.size()),
          prior.rate + 0.5 * car_pairwise_sum(graph, phi)};
}

/// Quadratic form of the stationary AR(1) prior:
/// (1 - rho^2) alpha_1^2 + sum_{t>=2} (alpha_t - rho alpha_{t-1})^2.
inline double ar1_quadratic(std::span<const double> alpha, double rho) {
  double q = (1.0 - rho * rho) * alpha[0] * alpha[0];
  for (std::size_t t = 1; t < alpha.size(); ++t) {
    const double d = alpha[t] - rho * alpha[t - 1];
    q += d * d;
  }
  return q;
}

/// Log density of alpha under alpha_1 ~ N(0, omega / (1 - rho^2)) and
/// alpha_t = rho alpha_{t-1} + delta_t, delta_t ~ N(0, omega). `omega` is a
/// variance.
inline double ar1_log_density(std::span<const double> alpha, double rho, double omega) {
  const double T = static_cast<double>(alpha.size());
  return -0.5 * T * std::log(2.0 * std::numbers::pi * omega) +
         0.5 * std::log(1.0 - rho * rho) - 0.5 * ar1_quadratic(alpha, rho) / omega;
}

/// omega | alpha, rho under pi(rho, omega) proportional to 1/omega.
inline InverseGammaParams omega_conditional(std::span<const double> alpha, double rho) {
  return {0.5 * static_cast<double>(alpha.size()), 0.5 * ar1_quadratic(alpha, rho)};
}

/// Unnormalized joint log posterior: likelihood + CAR kernel + Gamma prior on
/// tau + flat prior on beta (+ AR(1) prior on alpha and 1/omega prior).
inline double joint_log_posterior(const Dataset &d, const AdjacencyGraph &graph,
                                  const ModelSpec &spec, std::span<const double> expected,
                                  const ChainState &s) {
  double lp = spec.family == Family::cg ? log_likelihood_cg(d, s.beta, s.phi, spec.link, s.alpha)
                                        : log_likelihood_is(d, expected, s.beta, s.phi, s.alpha);
  lp += car_log_kernel(graph, s.phi, s.tau);
  const auto &[a, b] = spec.tau_prior;
  lp += a * std::log(b) - std::lgamma(a) + (a - 1.0) * std::log(s.tau) - b * s.tau;
  if (s.dynamic()) lp += ar1_log_density(s.alpha, s.rho, s.omega) - std::log(s.omega);
  return lp;
}

struct BlockAcceptance {
  std::string block;
  double rate;
  double scale;
  std::uint64_t proposed;
};

/// Retained draws of one chain, indexed (draw, parameter).
struct PosteriorSamples {
  ModelSpec spec;
  SamplerConfig config;
  std::vector<std::string> region_ids;
  std::vector<std::string> time_labels;
  std::vector<std::string> covariate_names;
  std::vector<double> expected; ///< E used by an IS fit; empty for CG

  Eigen::MatrixXd beta;
  Eigen::MatrixXd phi;
  Eigen::VectorXd tau;
  Eigen::MatrixXd alpha;
  Eigen::VectorXd rho;
  Eigen::VectorXd omega;

  std::vector<BlockAcceptance> acceptance;
  std::uint64_t nonfinite_proposals = 0;

  std::size_t n_draws() const noexcept { return static_cast<std::size_t>(tau.size()); }
  bool dynamic() const noexcept { return spec.temporal == Temporal::dynamic_ar1; }
};

/// Metropolis-within-Gibbs sweeps for the IS and CG families, static or with
/// AR(1) temporal effects. The sampler holds references to the dataset and
/// graph, which must outlive it.
class GibbsSampler {
public:
  GibbsSampler(const Dataset &d, const AdjacencyGraph &graph, ModelSpec spec,
               std::vector<double> expected = {})
      : data_(d), graph_(graph), spec_(spec), expected_(std::move(expected)) {
    spec_.validate();
    if (d.region_ids != graph.region_ids())
      throw DataError("dataset regions are not aligned with the adjacency structure");
    if (spec_.temporal == Temporal::static_ && d.dynamic())
      throw FitError("a static model needs a single time slice; the dataset has " +
                     std::to_string(d.n_times()) + " time points");
    if (spec_.temporal == Temporal::dynamic_ar1 && d.n_times() < 2)
      throw FitError("the dynamic model needs at least two time points");
    if (spec_.family == Family::is) {
      if (expected_.empty()) expected_ = internal_standardization(d);
      if (expected_.size() != d.n_cells()) throw DomainError("expected counts have the wrong length");
      for (double e : expected_)
        if (!(e > 0.0)) throw DomainError("expected counts must be positive");
    }
  }

  const Dataset &dataset() const noexcept { return data_; }
  const AdjacencyGraph &graph() const noexcept { return graph_; }
  const ModelSpec &spec() const noexcept { return spec_; }
  const std::vector<double> &expected() const noexcept { return expected_; }

  double eta(const ChainState &s, std::size_t i, std::size_t t) const {
    return linear_predictor(data_, s.beta, s.phi, s.alpha, i, t);
  }

  double cell_loglik(std::size_t c, double eta_value) const {
    return spec_.family == Family::cg
               ? kernel::cg_cell(data_.y[c], data_.n[c], eta_value, spec_.link)
               : kernel::is_cell(data_.y[c], expected_[c], eta_value);
  }

  /// log f(phi_i = value | rest), up to a constant.
  double log_target_phi(const ChainState &s, std::size_t i, double value) const {
    const double diff = value - neighbor_mean(graph_, s.phi, i);
    double lp = -0.5 * s.tau * static_cast<double>(graph_.degree(i)) * diff * diff;
    const double shift = value - s.phi[i];
    for (std::size_t t = 0; t < data_.n_times(); ++t)
      lp += cell_loglik(data_.cell(i, t), eta(s, i, t) + shift);
    return lp;
  }

  /// log f(beta_k = value | rest), flat prior.
  double log_target_beta(const ChainState &s, std::size_t k, double value) const {
    const double shift = value - s.beta[k];
    const auto col = static_cast<Eigen::Index>(k);
    double lp = 0.0;
    for (std::size_t t = 0; t < data_.n_times(); ++t)
      for (std::size_t i = 0; i < data_.n_regions(); ++i) {
        const auto c = data_.cell(i, t);
        lp += cell_loglik(c, eta(s, i, t) + shift * data_.x(static_cast<Eigen::Index>(c), col));
      }
    return lp;
  }

  /// log f(alpha_t = value | rest): time slice likelihood plus the AR(1) prior.
  double log_target_alpha(const ChainState &s, std::size_t t, double value) const {
    const double shift = value - s.alpha[t];
    double lp = 0.0;
    for (std::size_t i = 0; i < data_.n_regions(); ++i)
      lp += cell_loglik(data_.cell(i, t), eta(s, i, t) + shift);
    std::vector<double> alpha = s.alpha;
    alpha[t] = value;
    return lp - 0.5 * ar1_quadratic(alpha, s.rho) / s.omega;
  }

  /// log f(rho = value | rest) on (-1, 1), flat prior; -inf outside.
  double log_target_rho(const ChainState &s, double value) const {
    if (!(std::abs(value) < 1.0)) return -std::numeric_limits<double>::infinity();
    return 0.5 * std::log(1.0 - value * value) - 0.5 * ar1_quadratic(s.alpha, value) / s.omega;
  }

  void update_phi_block(ChainState &s, Rng &rng, bool after_burn_in) const {
    std::normal_distribution<double> step(0.0, 1.0);
    for (std::size_t i = 0; i < data_.n_regions(); ++i) {
      auto &block = s.phi_blocks[i];
      const double proposal = s.phi[i] + block.scale * step(rng);
      const bool accept = metropolis_step(
          s, rng, log_target_phi(s, i, proposal), [&] { return log_target_phi(s, i, s.phi[i]); });
      block.record(accept, after_burn_in);
      if (accept) s.phi[i] = proposal;
    }
    center(s);
  }

  void update_beta(ChainState &s, Rng &rng, bool after_burn_in) const {
    std::normal_distribution<double> step(0.0, 1.0);
    for (std::size_t k = 0; k < s.beta.size(); ++k) {
      auto &block = s.beta_blocks[k];
      const double proposal = s.beta[k] + block.scale * step(rng);
      const bool accept =
          metropolis_step(s, rng, log_target_beta(s, k, proposal),
                          [&] { return log_target_beta(s, k, s.beta[k]); });
      block.record(accept, after_burn_in);
      if (accept) s.beta[k] = proposal;
    }
  }

  void update_tau(ChainState &s, Rng &rng) const {
    const auto [shape, rate] = tau_conditional(graph_, s.phi, spec_.tau_prior);
    std::gamma_distribution<double> gamma(shape, 1.0 / rate);
    s.tau = gamma(rng);
  }

  /// alpha_t one at a time, then rho by random walk on (-1, 1), then an exact
  /// inverse-gamma draw of omega.
  void update_temporal(ChainState &s, Rng &rng, bool after_burn_in) const {
    std::normal_distribution<double> step(0.0, 1.0);
    for (std::size_t t = 0; t < s.alpha.size(); ++t) {
      auto &block = s.alpha_blocks[t];
      const double proposal = s.alpha[t] + block.scale * step(rng);
      const bool accept =
          metropolis_step(s, rng, log_target_alpha(s, t, proposal),
                          [&] { return log_target_alpha(s, t, s.alpha[t]); });
      block.record(accept, after_burn_in);
      if (accept) s.alpha[t] = proposal;
    }

    const double rho_proposal = s.rho + s.rho_block.scale * step(rng);
    bool accept = false;
    if (std::abs(rho_proposal) < 1.0)
      accept = metropolis_step(s, rng, log_target_rho(s, rho_proposal),
                               [&] { return log_target_rho(s, s.rho); });
    s.rho_block.record(accept, after_burn_in);
    if (accept) s.rho = rho_proposal;

    // Q = 0 only while no alpha move has been accepted since the all-zero
    // start; the conditional is improper there, so omega keeps its value.
    const auto [shape, scale] = omega_conditional(s.alpha, s.rho);
    if (scale > 0.0) {
      std::gamma_distribution<double> gamma(shape, 1.0);
      s.omega = scale / gamma(rng);
    }
  }

  /// One full sweep: phi block, beta, tau, then the temporal block.
  void sweep(ChainState &s, Rng &rng, bool after_burn_in) const {
    update_phi_block(s, rng, after_burn_in);
    update_beta(s, rng, after_burn_in);
    update_tau(s, rng);
    if (s.dynamic()) update_temporal(s, rng, after_burn_in);
  }

  /// Subtracts mean(phi) from phi and adds it to the intercept. The
  /// likelihood and the CAR kernel are unchanged by this shift.
  static void center(ChainState &s) {
    double mean = 0.0;
    for (double v : s.phi) mean += v;
    mean /= static_cast<double>(s.phi.size());
    for (double &v : s.phi) v -= mean;
    s.beta[0] += mean;
  }

private:
  template <typename CurrentTarget>
  static bool metropolis_step(ChainState &s, Rng &rng, double proposed_target,
                              CurrentTarget &&current_target) {
    if (!std::isfinite(proposed_target)) {
      ++s.nonfinite_proposals;
      return false;
    }
    return metropolis_accept(proposed_target - current_target(), rng);
  }

  const Dataset &data_;
  const AdjacencyGraph &graph_;
  ModelSpec spec_;
  std::vector<double> expected_;
};

namespace detail {
inline bool state_finite(const ChainState &s) {
  auto finite = [](const std::vector<double> &v) {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  };
  return finite(s.beta) && finite(s.phi) && finite(s.alpha) && std::isfinite(s.tau) &&
         s.tau > 0.0 && std::isfinite(s.rho) && std::isfinite(s.omega) && s.omega > 0.0;
}

inline std::string describe_state(const ChainState &s) {
  std::ostringstream out;
  out << "tau=" << s.tau << " beta=[";
  for (std::size_t k = 0; k < s.beta.size(); ++k) out << (k ? "," : "") << s.beta[k];
  out << "]";
  if (s.dynamic()) out << " rho=" << s.rho << " omega=" << s.omega;
  return out.str();
}
} // namespace detail

/// Runs one chain and returns the thinned post-burn-in draws. Adaptation is
/// applied every `adapt_window` sweeps during burn-in and frozen afterwards
/// unless `adapt_only_during_burn_in` is false.
inline PosteriorSamples run_chain(const Dataset &d, const AdjacencyGraph &graph,
                                  const ModelSpec &spec, const SamplerConfig &config,
                                  std::vector<double> expected = {}) {
  config.validate();
  check_covariate_rank(d);
  const GibbsSampler sampler(d, graph, spec, std::move(expected));
  Rng rng(config.seed);
  auto state = ChainState::initial(d, spec, config.initial_scale);

  PosteriorSamples out;
  out.spec = spec;
  out.config = config;
  out.region_ids = d.region_ids;
  out.time_labels = d.times;
  out.covariate_names = d.covariate_names;
  out.expected = sampler.expected();
  const auto draws = static_cast<Eigen::Index>(config.n_draws());
  const bool dynamic = spec.temporal == Temporal::dynamic_ar1;
  out.beta.resize(draws, static_cast<Eigen::Index>(d.n_covariates()));
  out.phi.resize(draws, static_cast<Eigen::Index>(d.n_regions()));
  out.tau.resize(draws);
  if (dynamic) {
    out.alpha.resize(draws, static_cast<Eigen::Index>(d.n_times()));
    out.rho.resize(draws);
    out.omega.resize(draws);
  }

  Eigen::Index stored = 0;
  for (std::size_t iter = 1; iter <= config.n_iterations; ++iter) {
    const bool after_burn_in = iter > config.burn_in;
    sampler.sweep(state, rng, after_burn_in);
    if (!detail::state_finite(state))
      throw FitError("non-finite chain state at iteration " + std::to_string(iter) + ": " +
                     detail::describe_state(state));
    if (iter % config.adapt_window == 0 && (!after_burn_in || !config.adapt_only_during_burn_in))
      adapt_proposals(state, config);
    if (after_burn_in && (iter - config.burn_in) % config.thin == 0 && stored < draws) {
      for (std::size_t k = 0; k < state.beta.size(); ++k)
        out.beta(stored, static_cast<Eigen::Index>(k)) = state.beta[k];
      for (std::size_t i = 0; i < state.phi.size(); ++i)
        out.phi(stored, static_cast<Eigen::Index>(i)) = state.phi[i];
      out.tau(stored) = state.tau;
      if (dynamic) {
        for (std::size_t t = 0; t < state.alpha.size(); ++t)
          out.alpha(stored, static_cast<Eigen::Index>(t)) = state.alpha[t];
        out.rho(stored) = state.rho;
        out.omega(stored) = state.omega;
      }
      ++stored;
    }
  }

  auto report = [&](std::string name, const MetropolisBlock &b) {
    out.acceptance.push_back({std::move(name), b.acceptance_rate(), b.scale, b.proposed});
  };
  for (std::size_t k = 0; k < state.beta.size(); ++k)
    report("beta[" + d.covariate_names[k] + "]", state.beta_blocks[k]);
  for (std::size_t i = 0; i < state.phi.size(); ++i)
    report("phi[" + d.region_ids[i] + "]", state.phi_blocks[i]);
  if (dynamic) {
    for (std::size_t t = 0; t < state.alpha.size(); ++t)
      report("alpha[" + d.times[t] + "]", state.alpha_blocks[t]);
    report("rho", state.rho_block);
  }
  out.nonfinite_proposals = state.nonfinite_proposals;
  return out;
}

} // namespace arealrisk

#endif // AREALRISK_SAMPLER_HPP

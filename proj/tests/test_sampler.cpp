#include "instances.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

using namespace arealrisk;
using testing_support::ids;
using testing_support::short_chain;
using testing_support::oracle_joint;
using testing_support::random_instance;

TEST(SamplerConfig, Validation) {
  SamplerConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.n_draws(), 10000u);
  c.burn_in = c.n_iterations;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SamplerConfig{};
  c.thin = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Adaptation, ScaleRule) {
  MetropolisBlock b;
  b.scale = 1.0;
  b.window_proposed = 100;
  b.window_accepted = 5;
  adapt_scale(b, 0.15, 0.40);
  EXPECT_DOUBLE_EQ(b.scale, 0.8);
  b.window_proposed = 100;
  b.window_accepted = 25;
  adapt_scale(b, 0.15, 0.40);
  EXPECT_DOUBLE_EQ(b.scale, 0.8);
  b.window_proposed = 100;
  b.window_accepted = 60;
  adapt_scale(b, 0.15, 0.40);
  EXPECT_DOUBLE_EQ(b.scale, 1.0);
  EXPECT_EQ(b.window_proposed, 0u);
}

TEST(Metropolis, IdentityProposalAccepted) {
  Rng rng(1);
  for (int k = 0; k < 1000; ++k) EXPECT_TRUE(metropolis_accept(0.0, rng));
  EXPECT_FALSE(metropolis_accept(std::nan(""), rng));
}

TEST(Metropolis, IdentityProposalThroughTargets) {
  std::mt19937_64 rng(2);
  auto r = random_instance(rng, true, Family::cg);
  const GibbsSampler sampler(r.data, r.rg.graph, r.spec);
  EXPECT_EQ(sampler.log_target_phi(r.state, 1, r.state.phi[1]) -
                sampler.log_target_phi(r.state, 1, r.state.phi[1]),
            0.0);
  EXPECT_EQ(sampler.log_target_beta(r.state, 0, r.state.beta[0]) -
                sampler.log_target_beta(r.state, 0, r.state.beta[0]),
            0.0);
}

TEST(FullConditional, PhiBetaAlphaRhoMatchJointDifferences) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const bool dynamic = rep % 2 == 1;
    const Family family = (rep / 2) % 2 ? Family::is : Family::cg;
    auto r = random_instance(rng, dynamic, family);
    const GibbsSampler sampler(r.data, r.rg.graph, r.spec, r.expected);
    auto joint_with = [&](auto mutate) {
      auto s = r.state;
      mutate(s);
      return oracle_joint(r.data, r.rg.w, r.spec, r.expected, s);
    };

    const std::size_t i = static_cast<std::size_t>(rep) % r.data.n_regions();
    const double a = r.state.phi[i] + 0.7 * unit(rng), b = r.state.phi[i] + 0.7 * unit(rng);
    EXPECT_NEAR(sampler.log_target_phi(r.state, i, a) - sampler.log_target_phi(r.state, i, b),
                joint_with([&](ChainState &s) { s.phi[i] = a; }) -
                    joint_with([&](ChainState &s) { s.phi[i] = b; }),
                1e-9)
        << "phi, rep " << rep;

    for (std::size_t k = 0; k < 2; ++k) {
      const double ba = r.state.beta[k] + 0.5 * unit(rng), bb = r.state.beta[k] + 0.5 * unit(rng);
      EXPECT_NEAR(sampler.log_target_beta(r.state, k, ba) - sampler.log_target_beta(r.state, k, bb),
                  joint_with([&](ChainState &s) { s.beta[k] = ba; }) -
                      joint_with([&](ChainState &s) { s.beta[k] = bb; }),
                  1e-9)
          << "beta " << k << ", rep " << rep;
    }

    if (dynamic) {
      const std::size_t t = static_cast<std::size_t>(rep) % 4;
      const double aa = r.state.alpha[t] + 0.4 * unit(rng), ab = r.state.alpha[t] + 0.4 * unit(rng);
      EXPECT_NEAR(sampler.log_target_alpha(r.state, t, aa) - sampler.log_target_alpha(r.state, t, ab),
                  joint_with([&](ChainState &s) { s.alpha[t] = aa; }) -
                      joint_with([&](ChainState &s) { s.alpha[t] = ab; }),
                  1e-9)
          << "alpha " << t << ", rep " << rep;
      const double ra = 0.95 * unit(rng), rb = 0.95 * unit(rng);
      EXPECT_NEAR(sampler.log_target_rho(r.state, ra) - sampler.log_target_rho(r.state, rb),
                  joint_with([&](ChainState &s) { s.rho = ra; }) -
                      joint_with([&](ChainState &s) { s.rho = rb; }),
                  1e-9)
          << "rho, rep " << rep;
    }
  }
}

TEST(FullConditional, LibraryJointMatchesOracleJoint) {
  std::mt19937_64 rng(32);
  for (int rep = 0; rep < 40; ++rep) {
    auto r = random_instance(rng, rep % 2 == 1, rep % 4 < 2 ? Family::cg : Family::is);
    const double lib = joint_log_posterior(r.data, r.rg.graph, r.spec, r.expected, r.state);
    const double ora = oracle_joint(r.data, r.rg.w, r.spec, r.expected, r.state);
    EXPECT_NEAR(lib, ora, 1e-9 * std::max(1.0, std::abs(ora)));
  }
}

TEST(FullConditional, PhiTargetOnThreeRegionChain) {
  const auto g = testing_support::path_graph(3);
  const auto d = Dataset::make_static(ids(3), {4, 9, 2}, {1000, 1500, 800});
  ModelSpec spec;
  const GibbsSampler sampler(d, g, spec);
  auto s = ChainState::initial(d, spec, 0.1);
  s.beta = {-4.5};
  s.phi = {0.1, -0.2, 0.1};
  s.tau = 2.0;
  for (double a : {-0.5, 0.0, 0.3}) {
    auto sa = s, sb = s;
    sa.phi[1] = a;
    sb.phi[1] = 0.8;
    EXPECT_NEAR(sampler.log_target_phi(s, 1, a) - sampler.log_target_phi(s, 1, 0.8),
                joint_log_posterior(d, g, spec, {}, sa) - joint_log_posterior(d, g, spec, {}, sb),
                1e-9);
  }
}

TEST(FullConditional, LargeTauPinsPhiToNeighborMean) {
  const auto g = testing_support::path_graph(3);
  const auto d = Dataset::make_static(ids(3), {4, 9, 2}, {1000, 1500, 800});
  ModelSpec spec;
  const GibbsSampler sampler(d, g, spec);
  auto s = ChainState::initial(d, spec, 0.1);
  s.beta = {-4.5};
  s.phi = {0.2, 0.0, -0.2};
  double previous = 0.0;
  for (double tau : {1.0, 1e2, 1e4, 1e6}) {
    s.tau = tau;
    const double centre = neighbor_mean(g, s.phi, 1);
    const double gap = sampler.log_target_phi(s, 1, centre + 0.1) - sampler.log_target_phi(s, 1, centre);
    EXPECT_LT(gap, previous);
    previous = gap;
  }
  EXPECT_LT(previous, -1e3);
}

TEST(FullConditional, AlphaDecouplesWhenRhoIsZero) {
  const auto g = testing_support::path_graph(3);
  const auto d = Dataset::make_panel(ids(3), {"1", "2", "3"}, {4, 9, 2, 5, 7, 3, 1, 8, 6},
                                     {1000, 1500, 800, 1000, 1500, 800, 1000, 1500, 800});
  ModelSpec spec;
  spec.temporal = Temporal::dynamic_ar1;
  const GibbsSampler sampler(d, g, spec);
  auto s = ChainState::initial(d, spec, 0.1);
  s.beta = {-5.0};
  s.rho = 0.0;
  s.omega = 0.3;
  for (double a : {-0.4, 0.2}) {
    double lik = 0.0, lik0 = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      lik += kernel::cg_cell(d.y[d.cell(i, 1)], d.n[d.cell(i, 1)], s.beta[0] + a, spec.link);
      lik0 += kernel::cg_cell(d.y[d.cell(i, 1)], d.n[d.cell(i, 1)], s.beta[0], spec.link);
    }
    EXPECT_NEAR(sampler.log_target_alpha(s, 1, a) - sampler.log_target_alpha(s, 1, 0.0),
                (lik - lik0) - 0.5 * a * a / s.omega, 1e-12);
  }
}

TEST(TauConditional, Parameters) {
  const auto g4 = AdjacencyGraph::lattice(2, 2);
  const auto p = tau_conditional(g4, std::vector<double>(4, 0.7), GammaPrior{});
  EXPECT_DOUBLE_EQ(p.shape, 3.0);
  EXPECT_DOUBLE_EQ(p.rate, 1.0);
  const auto edge = AdjacencyGraph::from_edges({}, {{"A", "B"}});
  const auto q = tau_conditional(edge, std::vector<double>{1.0, -1.0}, GammaPrior{});
  EXPECT_DOUBLE_EQ(q.shape, 2.0);
  EXPECT_DOUBLE_EQ(q.rate, 3.0);
}

TEST(TauConditional, GibbsDrawMoments) {
  const auto edge = AdjacencyGraph::from_edges({}, {{"A", "B"}});
  const auto d = Dataset::make_static({"A", "B"}, {1, 2}, {100, 100});
  ModelSpec spec;
  const GibbsSampler sampler(d, edge, spec);
  auto s = ChainState::initial(d, spec, 0.1);
  s.phi = {1.0, -1.0};
  Rng rng(77);
  const int N = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int k = 0; k < N; ++k) {
    sampler.update_tau(s, rng);
    sum += s.tau;
    sumsq += s.tau * s.tau;
  }
  const double mean = sum / N;
  const double var = sumsq / N - mean * mean;
  const double shape = 2.0, rate = 3.0;
  const double true_mean = shape / rate, true_var = shape / (rate * rate);
  EXPECT_LT(std::abs(mean - true_mean), 3.0 * std::sqrt(true_var / N));
  // standard error of the sample variance from the Gamma fourth central moment
  const double mu4 = 3.0 * shape * (shape + 2.0) / std::pow(rate, 4);
  EXPECT_LT(std::abs(var - true_var), 3.0 * std::sqrt((mu4 - true_var * true_var) / N));
}

TEST(OmegaConditional, MatchesGridIntegration) {
  const std::vector<double> alpha{0.3, -0.1, 0.25, 0.4};
  const double rho = 0.6;
  const auto [shape, scale] = omega_conditional(alpha, rho);
  EXPECT_DOUBLE_EQ(shape, 2.0);
  // unnormalized conditional: AR(1) density times the 1/omega prior
  auto kernel = [&](double omega) {
    return std::exp(oracle::ar1_log_density(alpha, rho, omega) - std::log(omega));
  };
  // substitute omega = exp(u) so the heavy right tail is integrable on a grid
  auto in_u = [&](double u) { return kernel(std::exp(u)) * std::exp(u); };
  const double z = oracle::simpson(in_u, -15.0, 15.0, 20000);
  const double mean = oracle::simpson([&](double u) { return in_u(u) * std::exp(u); }, -15.0, 15.0, 20000) / z;
  EXPECT_NEAR(mean, scale / (shape - 1.0), 1e-6 * mean);
  for (double omega : {0.02, 0.08, 0.2, 0.7}) {
    const double ig = shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(omega) -
                      scale / omega;
    EXPECT_NEAR(kernel(omega) / z, std::exp(ig), 1e-6 * std::exp(ig));
  }
}

TEST(Centering, ShiftMovesIntoIntercept) {
  const auto g = testing_support::path_graph(4);
  const auto d = Dataset::make_static(ids(4), {1, 2, 3, 4}, {100, 100, 100, 100});
  ModelSpec spec;
  auto s = ChainState::initial(d, spec, 0.1);
  s.beta = {-3.0};
  s.phi = {0.5, 0.7, 0.1, 0.3};
  const double before = log_likelihood_cg(d, s.beta, s.phi, spec.link);
  GibbsSampler::center(s);
  EXPECT_NEAR(std::accumulate(s.phi.begin(), s.phi.end(), 0.0), 0.0, 1e-15);
  EXPECT_NEAR(s.beta[0], -2.6, 1e-15);
  EXPECT_NEAR(log_likelihood_cg(d, s.beta, s.phi, spec.link), before, 1e-10);
}

TEST(RunChain, DrawCountsCenteringAndDeterminism) {
  const auto g = AdjacencyGraph::lattice(3, 3);
  const auto d = Dataset::make_static(g.region_ids(), {3, 5, 1, 7, 9, 2, 4, 0, 6},
                                      std::vector<double>(9, 2000.0));
  SamplerConfig c = short_chain(5, 1500, 500);
  c.thin = 3;
  for (auto family : {Family::cg, Family::is}) {
    const ModelSpec spec{family, Link::logit(), Temporal::static_, {}};
    const auto a = run_chain(d, g, spec, c);
    const auto b = run_chain(d, g, spec, c);
    EXPECT_EQ(a.n_draws(), 333u);
    EXPECT_EQ(a.phi, b.phi);
    EXPECT_EQ(a.beta, b.beta);
    EXPECT_EQ(a.tau, b.tau);
    for (Eigen::Index k = 0; k < a.phi.rows(); ++k) EXPECT_LT(std::abs(a.phi.row(k).sum()), 1e-10);
    ASSERT_EQ(a.acceptance.size(), b.acceptance.size());
    for (std::size_t k = 0; k < a.acceptance.size(); ++k) {
      EXPECT_EQ(a.acceptance[k].block, b.acceptance[k].block);
      EXPECT_EQ(a.acceptance[k].rate, b.acceptance[k].rate);
    }
    c.seed = 6;
    EXPECT_NE(run_chain(d, g, spec, c).phi, a.phi);
    c.seed = 5;
  }
}

TEST(RunChain, DynamicShapesAndConstraints) {
  const auto g = AdjacencyGraph::lattice(2, 3);
  std::vector<std::int64_t> y;
  for (int k = 0; k < 18; ++k) y.push_back(3 + k % 5);
  const auto d = Dataset::make_panel(g.region_ids(), {"1", "2", "3"}, y, std::vector<double>(18, 3000.0));
  const ModelSpec spec{Family::cg, Link::cloglog(), Temporal::dynamic_ar1, {}};
  const auto s = run_chain(d, g, spec, short_chain(8, 1200, 400));
  EXPECT_EQ(s.alpha.cols(), 3);
  EXPECT_EQ(s.rho.size(), static_cast<Eigen::Index>(s.n_draws()));
  EXPECT_TRUE((s.rho.array().abs() < 1.0).all());
  EXPECT_TRUE((s.omega.array() > 0.0).all());
  EXPECT_TRUE((s.tau.array() > 0.0).all());
  EXPECT_EQ(s.acceptance.back().block, "rho");
}

TEST(RunChain, StandardizedDynamicFitSurvivesRejectedFirstSweep) {
  // sharp likelihood: every alpha proposal from the zero start can be rejected
  const auto dir = std::filesystem::path(AREALRISK_SOURCE_DIR) / "data" / "lattice10";
  const auto g = load_adjacency(dir / "adjacency.csv");
  const auto d = align_to(load_dataset(dir / "panel.csv"), g);
  const ModelSpec spec{Family::is, Link::logit(), Temporal::dynamic_ar1, {}};
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto s = run_chain(d, g, spec, short_chain(seed, 60, 20));
    EXPECT_TRUE((s.omega.array() > 0.0).all()) << "seed " << seed;
  }
}

TEST(RunChain, ShapeErrors) {
  const auto g = AdjacencyGraph::lattice(2, 2);
  const auto panel = Dataset::make_panel(g.region_ids(), {"1", "2"}, {1, 2, 3, 4, 5, 6, 7, 8},
                                         std::vector<double>(8, 100.0));
  EXPECT_THROW(run_chain(panel, g, ModelSpec{}, short_chain(1)), FitError);
  const auto single = Dataset::make_panel(g.region_ids(), {"1"}, {1, 2, 3, 4}, std::vector<double>(4, 100.0));
  ModelSpec dyn;
  dyn.temporal = Temporal::dynamic_ar1;
  EXPECT_THROW(run_chain(single, g, dyn, short_chain(1)), FitError);
  const auto other = AdjacencyGraph::from_edges({}, {{"x", "y"}, {"y", "z"}, {"z", "w"}});
  const auto d = Dataset::make_static(g.region_ids(), {1, 2, 3, 4}, std::vector<double>(4, 100.0));
  EXPECT_THROW(run_chain(d, other, ModelSpec{}, short_chain(1)), DataError);
}

TEST(RunChain, InterceptDriftsNegativeWithZeroCounts) {
  const auto g = testing_support::path_graph(3);
  const auto d = Dataset::make_static(ids(3), {0, 0, 0}, {100, 100, 100});
  const auto s = run_chain(d, g, ModelSpec{}, short_chain(9, 10000, 2000));
  EXPECT_LT(s.beta.col(0).mean(), 0.0);
  EXPECT_LT(s.beta.col(0).mean(), -3.0);
}

TEST(RunChain, GenerativeInterceptRecoversPooledIncidence) {
  const auto g = AdjacencyGraph::lattice(5, 6);
  const std::vector<double> n(30, 1e4);
  TruthMap truth{std::vector<double>(30, 0.01), std::vector<double>(30, 1.0), "constant"};
  const auto d = simulate_counts(truth, n, g.region_ids(), 101);
  const auto s = run_chain(d, g, ModelSpec{}, short_chain(102, 6000, 2000));
  const auto p = incidence_draws(s, d);
  Eigen::VectorXd pooled = p.rowwise().mean(); // equal populations
  std::vector<double> v(pooled.data(), pooled.data() + pooled.size());
  std::sort(v.begin(), v.end());
  EXPECT_LE(quantile_sorted(v, 0.05), 0.01);
  EXPECT_GE(quantile_sorted(v, 0.95), 0.01);
}

TEST(RunChain, StandardizedRisksNearOneForConstantTruth) {
  const auto g = AdjacencyGraph::lattice(5, 6);
  const std::vector<double> n(30, 1e4);
  TruthMap truth{std::vector<double>(30, 0.01), std::vector<double>(30, 1.0), "constant"};
  const auto d = simulate_counts(truth, n, g.region_ids(), 101);
  const ModelSpec spec{Family::is, Link::logit(), Temporal::static_, {}};
  const auto s = run_chain(d, g, spec, short_chain(103, 6000, 2000));
  const Eigen::VectorXd mean = risk_is(s, d).colwise().mean().transpose();
  const auto raw = raw_risks(d, internal_standardization(d));
  double spread_model = 0.0, spread_raw = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    EXPECT_NEAR(mean(i), 1.0, 0.25) << i;
    spread_model += (mean(i) - 1.0) * (mean(i) - 1.0);
    spread_raw += (raw[static_cast<std::size_t>(i)] - 1.0) * (raw[static_cast<std::size_t>(i)] - 1.0);
  }
  EXPECT_NEAR(mean.mean(), 1.0, 0.03);
  EXPECT_LT(spread_model, spread_raw);
}

TEST(RunChain, PosteriorRecoveryOfBeta) {
  const auto g = AdjacencyGraph::lattice(5, 5);
  const std::size_t I = g.size();
  const double beta0 = -4.6, beta1 = 0.5;
  int covered0 = 0, covered1 = 0;
  const int R = 50;
  for (int rep = 0; rep < R; ++rep) {
    Rng rng(derive_seed(2024, "recovery", static_cast<std::uint64_t>(rep)));
    std::normal_distribution<double> normal;
    std::vector<std::int64_t> y(I);
    std::vector<double> n(I, 5000.0);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(I), 2);
    for (std::size_t i = 0; i < I; ++i) {
      x(static_cast<Eigen::Index>(i), 0) = 1.0;
      x(static_cast<Eigen::Index>(i), 1) = normal(rng);
      const double p = oracle::logit_inverse(beta0 + beta1 * x(static_cast<Eigen::Index>(i), 1));
      std::poisson_distribution<std::int64_t> pois(n[i] * p);
      y[i] = pois(rng);
    }
    auto d = Dataset::make_static(g.region_ids(), y, n);
    d.x = x;
    d.covariate_names = {"(intercept)", "z"};
    const auto s = run_chain(d, g, ModelSpec{}, short_chain(derive_seed(7, "chain", static_cast<std::uint64_t>(rep)), 4000, 1000));
    for (int k = 0; k < 2; ++k) {
      std::vector<double> v(s.beta.col(k).data(), s.beta.col(k).data() + s.beta.rows());
      std::sort(v.begin(), v.end());
      const double truth = k == 0 ? beta0 : beta1;
      const bool hit = quantile_sorted(v, 0.05) <= truth && truth <= quantile_sorted(v, 0.95);
      (k == 0 ? covered0 : covered1) += hit;
    }
  }
  EXPECT_GE(covered0, 40) << covered0 << "/50";
  EXPECT_GE(covered1, 40) << covered1 << "/50";
}

TEST(RunChain, AdaptationReachesTargetBand) {
  const auto g = AdjacencyGraph::lattice(6, 6);
  const auto pop = lattice_populations(6, 6, 4);
  const auto truth = build_truth(g, pop, TruthRecipe{});
  const auto d = simulate_counts(truth, pop, g.region_ids(), 5);
  for (auto family : {Family::cg, Family::is}) {
    const auto s = run_chain(d, g, ModelSpec{family, Link::logit(), Temporal::static_, {}},
                             short_chain(6, 8000, 4000));
    for (const auto &a : s.acceptance) {
      EXPECT_GE(a.rate, 0.15) << a.block;
      EXPECT_LE(a.rate, 0.40) << a.block;
    }
  }
}

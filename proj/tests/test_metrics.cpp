#include "helpers.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace arealrisk;
using testing_support::ids;
using testing_support::short_chain;

namespace {

/// Dynamic samples with every draw sharing (rho, omega, alpha_T).
PosteriorSamples fixed_dynamic(std::size_t draws, double rho, double omega, double alpha_last,
                               Family family = Family::cg) {
  PosteriorSamples s;
  s.spec.family = family;
  s.spec.temporal = Temporal::dynamic_ar1;
  s.region_ids = {"A", "B"};
  s.time_labels = {"1", "2"};
  s.covariate_names = {"(intercept)"};
  const auto D = static_cast<Eigen::Index>(draws);
  s.beta = Eigen::MatrixXd::Constant(D, 1, -3.0);
  s.phi = Eigen::MatrixXd::Zero(D, 2);
  s.tau = Eigen::VectorXd::Ones(D);
  s.alpha = Eigen::MatrixXd::Constant(D, 2, alpha_last);
  s.rho = Eigen::VectorXd::Constant(D, rho);
  s.omega = Eigen::VectorXd::Constant(D, omega);
  return s;
}

} // namespace

TEST(ForecastAlpha, RandomWalkLimit) {
  const auto s = fixed_dynamic(50, 1.0, 1e-300, 0.37);
  Rng rng(1);
  const auto a = forecast_alpha(s, rng);
  for (Eigen::Index d = 0; d < a.size(); ++d) EXPECT_NEAR(a(d), 0.37, 1e-140);
}

TEST(ForecastAlpha, NoMemoryWhenRhoIsZero) {
  const int N = 100000;
  const auto s = fixed_dynamic(N, 0.0, 0.04, 5.0);
  Rng rng(2);
  const auto a = forecast_alpha(s, rng);
  const double mean = a.mean();
  const double var = (a.array() - mean).square().mean();
  EXPECT_LT(std::abs(mean), 3.0 * std::sqrt(0.04 / N));
  EXPECT_NEAR(var, 0.04, 3.0 * 0.04 * std::sqrt(2.0 / N));
}

TEST(ForecastAlpha, MeanIsRhoTimesLastAlpha) {
  const int N = 100000;
  const double rho = 0.8, omega = 0.09, last = -0.6;
  const auto s = fixed_dynamic(N, rho, omega, last);
  Rng rng(3);
  const auto a = forecast_alpha(s, rng);
  EXPECT_LT(std::abs(a.mean() - rho * last), 3.0 * std::sqrt(omega / N));
}

TEST(ForecastAlpha, StaticSamplesRejected) {
  PosteriorSamples s;
  Rng rng(1);
  EXPECT_THROW(forecast_alpha(s, rng), TypeError);
}

TEST(ForecastRisks, GenerativeRiskIdentityUsesHoldoutPopulations) {
  const auto s = fixed_dynamic(300, 0.5, 0.2, 0.1);
  const auto holdout = Dataset::make_static({"A", "B"}, {4, 9}, {1000, 3000});
  Rng rng(4);
  const auto r = forecast_risks(Estimator::r_cg, s, holdout, rng);
  for (Eigen::Index d = 0; d < r.rows(); ++d)
    EXPECT_NEAR((1000.0 * r(d, 0) + 3000.0 * r(d, 1)) / 4000.0, 1.0, 1e-12);
  EXPECT_THROW(forecast_risks(Estimator::r_is, s, holdout, rng), TypeError);
  EXPECT_THROW(forecast_risks(Estimator::r_cg, s, holdout, rng, 2), DomainError);
}

TEST(Crps, Examples) {
  EXPECT_DOUBLE_EQ(crps_empirical(std::vector<double>{1.5, 1.5, 1.5}, 1.5), 0.0);
  EXPECT_DOUBLE_EQ(crps_empirical(std::vector<double>{0.0, 2.0}, 1.0), 0.5);
  EXPECT_THROW(crps_empirical(std::vector<double>{}, 1.0), DomainError);
}

TEST(Crps, MatchesBrierIntegral) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> draws(5);
    for (auto &v : draws) v = normal(rng);
    const double y = 1.5 * normal(rng);
    EXPECT_NEAR(crps_empirical(draws, y), oracle::crps_brier_integral(draws, y), 1e-6);
  }
}

TEST(Crps, PermutationInvarianceAndHomogeneity) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal;
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<double> draws(40);
    for (auto &v : draws) v = normal(rng);
    const double y = normal(rng);
    const double base = crps_empirical(draws, y);
    EXPECT_GE(base, 0.0);
    auto shuffled = draws;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_NEAR(crps_empirical(shuffled, y), base, 1e-12);
    const double c = 0.1 + std::abs(normal(rng)) * 3.0;
    auto scaled = draws;
    for (auto &v : scaled) v *= c;
    EXPECT_NEAR(crps_empirical(scaled, c * y), c * base, 1e-12 * (1.0 + c * base));
  }
}

TEST(EvaluateHoldout, PerfectForecasts) {
  const std::vector<double> observed{0.8, 1.1, 1.4};
  Eigen::MatrixXd draws(200, 3);
  for (Eigen::Index i = 0; i < 3; ++i) draws.col(i).setConstant(observed[static_cast<std::size_t>(i)]);
  const auto ev = evaluate_holdout(draws, observed);
  EXPECT_DOUBLE_EQ(ev.pmse, 0.0);
  EXPECT_DOUBLE_EQ(ev.crps, 0.0);
  EXPECT_DOUBLE_EQ(ev.coverage, 1.0);
}

TEST(EvaluateHoldout, VacuousIntervalsCoverEverything) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> wide(0.0, 1e8);
  Eigen::MatrixXd draws(2000, 4);
  for (Eigen::Index k = 0; k < draws.size(); ++k) draws(k) = wide(rng);
  const auto ev = evaluate_holdout(draws, std::vector<double>{0.5, 1.0, 1.5, 2.0});
  EXPECT_DOUBLE_EQ(ev.coverage, 1.0);
  EXPECT_GE(ev.crps, 0.0);
}

TEST(EvaluateHoldout, PmseBoundedBelowBySquaredBias) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal;
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t I = 6;
    Eigen::MatrixXd draws(500, static_cast<Eigen::Index>(I));
    std::vector<double> observed(I);
    for (Eigen::Index k = 0; k < draws.size(); ++k) draws(k) = 1.0 + 0.3 * normal(rng);
    for (auto &v : observed) v = 1.0 + 0.5 * normal(rng);
    const auto ev = evaluate_holdout(draws, observed);
    const double bias = (draws.colwise().mean().sum() - std::accumulate(observed.begin(), observed.end(), 0.0)) /
                        static_cast<double>(I);
    EXPECT_GE(ev.pmse + 1e-12, bias * bias);
    EXPECT_GE(ev.coverage, 0.0);
    EXPECT_LE(ev.coverage, 1.0);
  }
}

TEST(EvaluateHoldout, CrpsThinsLongChains) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd draws(10000, 1);
  for (Eigen::Index k = 0; k < draws.size(); ++k) draws(k) = normal(rng);
  const auto ev = evaluate_holdout(draws, std::vector<double>{0.3});
  std::vector<double> thinned;
  for (Eigen::Index k = 0; k < 10000; k += 5) thinned.push_back(draws(k));
  EXPECT_EQ(thinned.size(), kMaxCrpsDraws);
  EXPECT_DOUBLE_EQ(ev.crps, crps_empirical(thinned, 0.3));
}

TEST(Forecast, DynamicFitProducesOneRowPerRegion) {
  const auto g = AdjacencyGraph::lattice(3, 3);
  const auto pop = lattice_populations(3, 3, 2);
  const auto truth = build_truth(g, pop, TruthRecipe{});
  const auto panel = simulate_panel(truth, pop, g.region_ids(), 5, 0.9, 0.01, 3);
  const auto train = panel.data.leading_times(4);
  const auto held = panel.data.time_slice(4);
  const auto s = run_chain(train, g, ModelSpec{Family::cg, Link::logit(), Temporal::dynamic_ar1, {}},
                           short_chain(10, 1500, 500));
  Rng rng(11);
  for (auto e : {Estimator::r_cg_tilde, Estimator::r_cg}) {
    const auto pred = forecast_risks(e, s, held, rng);
    const auto ev = evaluate_holdout(pred, raw_risks(held, internal_standardization(held)));
    EXPECT_EQ(ev.regions.size(), 9u);
    EXPECT_GE(ev.crps, 0.0);
    EXPECT_TRUE(std::isfinite(ev.pmse));
  }
}

#ifndef AREALRISK_ESTIMATORS_HPP
#define AREALRISK_ESTIMATORS_HPP

#include "arealrisk/csv.hpp"
#include "arealrisk/error.hpp"
#include "arealrisk/model.hpp"
#include "arealrisk/sampler.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace arealrisk {

/// The three relative-risk estimators:
///  - r_is:       exp(X'beta + phi) from the internally standardized model
///  - r_cg_tilde: n p / E from the generative model (linear in p)
///  - r_cg:       p / pbar with pbar the population-weighted mean incidence
enum class Estimator { r_is, r_cg_tilde, r_cg };

inline std::string to_string(Estimator e) {
  switch (e) {
  case Estimator::r_is: return "r_IS";
  case Estimator::r_cg_tilde: return "r_CG_tilde";
  case Estimator::r_cg: return "r_CG";
  }
  return "unknown";
}

inline Estimator parse_estimator(const std::string &name) {
  if (name == "r_IS") return Estimator::r_is;
  if (name == "r_CG_tilde") return Estimator::r_cg_tilde;
  if (name == "r_CG") return Estimator::r_cg;
  throw ConfigError("unknown estimator '" + name + "'");
}

inline Family family_of(Estimator e) { return e == Estimator::r_is ? Family::is : Family::cg; }

inline std::vector<Estimator> estimators_for(Family f) {
  if (f == Family::is) return {Estimator::r_is};
  return {Estimator::r_cg_tilde, Estimator::r_cg};
}

namespace detail {
inline void require_family(const PosteriorSamples &s, Family f, const char *what) {
  if (s.spec.family != f)
    throw TypeError(std::string(what) + " requires samples from the " + to_string(f) +
                    " family, got " + to_string(s.spec.family));
}

inline void require_conformable(const PosteriorSamples &s, const Dataset &d) {
  if (s.region_ids != d.region_ids) throw DataError("samples and dataset regions differ");
  if (s.dynamic() ? s.time_labels != d.times : d.dynamic())
    throw DataError("samples and dataset time points differ");
}
} // namespace detail

/// Linear predictor per (draw, cell).
inline Eigen::MatrixXd linear_predictor_draws(const PosteriorSamples &s, const Dataset &d) {
  detail::require_conformable(s, d);
  const auto draws = static_cast<Eigen::Index>(s.n_draws());
  const auto I = static_cast<Eigen::Index>(d.n_regions());
  Eigen::MatrixXd eta(draws, static_cast<Eigen::Index>(d.n_cells()));
  // (draws x p) * (p x cells) gives X beta for every draw and cell.
  eta.noalias() = s.beta * d.x.transpose();
  for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(d.n_times()); ++t) {
    eta.middleCols(t * I, I) += s.phi;
    if (s.dynamic()) eta.middleCols(t * I, I).colwise() += s.alpha.col(t);
  }
  return eta;
}

/// Incidence draws p_it = link(eta_it) for a generative-model fit.
inline Eigen::MatrixXd incidence_draws(const PosteriorSamples &s, const Dataset &d) {
  detail::require_family(s, Family::cg, "incidence_draws");
  Eigen::MatrixXd p = linear_predictor_draws(s, d);
  const auto link = s.spec.link;
  return p.unaryExpr([link](double eta) { return apply_link(link, eta); });
}

/// Smoothing factors exp(phi_i) per draw.
inline Eigen::MatrixXd smoothing_factors(const PosteriorSamples &s) {
  return s.phi.array().exp().matrix();
}

inline Eigen::MatrixXd risk_is(const PosteriorSamples &s, const Dataset &d) {
  detail::require_family(s, Family::is, "risk_is");
  return linear_predictor_draws(s, d).array().exp().matrix();
}

/// n_it p_it / E_it per draw.
inline Eigen::MatrixXd risk_cg_tilde(const PosteriorSamples &s, const Dataset &d,
                                     std::span<const double> expected) {
  detail::require_family(s, Family::cg, "risk_cg_tilde");
  if (expected.size() != d.n_cells()) throw DomainError("expected counts have the wrong length");
  Eigen::MatrixXd r = incidence_draws(s, d);
  for (Eigen::Index c = 0; c < r.cols(); ++c) {
    const double e = expected[static_cast<std::size_t>(c)];
    if (!(e > 0.0)) throw DomainError("expected counts must be positive");
    r.col(c) *= d.n[static_cast<std::size_t>(c)] / e;
  }
  return r;
}

/// p_it / pbar_t per draw, pbar_t = sum_i n_it p_it / sum_i n_it.
inline Eigen::MatrixXd risk_cg_true(const PosteriorSamples &s, const Dataset &d) {
  detail::require_family(s, Family::cg, "risk_cg_true");
  Eigen::MatrixXd r = incidence_draws(s, d);
  const auto I = static_cast<Eigen::Index>(d.n_regions());
  for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(d.n_times()); ++t) {
    Eigen::VectorXd n(I);
    for (Eigen::Index i = 0; i < I; ++i) n(i) = d.n[static_cast<std::size_t>(t * I + i)];
    auto slice = r.middleCols(t * I, I);
    const Eigen::VectorXd pbar = (slice * n) / n.sum();
    slice.array().colwise() /= pbar.array();
  }
  return r;
}

inline Eigen::MatrixXd risk_draws(Estimator e, const PosteriorSamples &s, const Dataset &d,
                                  std::span<const double> expected) {
  switch (e) {
  case Estimator::r_is: return risk_is(s, d);
  case Estimator::r_cg_tilde: return risk_cg_tilde(s, d, expected);
  case Estimator::r_cg: return risk_cg_true(s, d);
  }
  throw TypeError("unknown estimator");
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

/// Quantile of sorted data by linear interpolation between order statistics
/// (position (M - 1) q, zero-based).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DomainError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

struct CellSummary {
  double mean = 0.0;
  double median = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double length = 0.0;
  double prob_above_one = 0.0; ///< P(r > 1 | data)

  bool operator==(const CellSummary &) const = default;
};

/// Posterior summaries of one estimator over every (region, time) cell.
struct RiskSummary {
  Estimator estimator = Estimator::r_is;
  double level = 0.9;
  std::vector<std::string> region_ids;
  std::vector<std::string> times; ///< empty for static fits
  std::vector<CellSummary> cells; ///< time-major, like Dataset

  std::size_t n_times() const noexcept { return times.empty() ? 1 : times.size(); }
  const CellSummary &at(std::size_t i, std::size_t t = 0) const {
    return cells.at(t * region_ids.size() + i);
  }
  std::vector<double> column(double CellSummary::*field) const {
    std::vector<double> out;
    out.reserve(cells.size());
    for (const auto &c : cells) out.push_back(c.*field);
    return out;
  }
};

inline constexpr std::size_t kMinSummaryDraws = 100;

/// Mean, median and the equal-tailed `level` interval of every column.
inline std::vector<CellSummary> summarize(const Eigen::MatrixXd &draws, double level = 0.9) {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("credible level must lie in (0, 1)");
  if (static_cast<std::size_t>(draws.rows()) < kMinSummaryDraws)
    throw DomainError("at least " + std::to_string(kMinSummaryDraws) +
                      " draws are required for a summary, got " + std::to_string(draws.rows()));
  const double tail = 0.5 * (1.0 - level);
  std::vector<CellSummary> out(static_cast<std::size_t>(draws.cols()));
  std::vector<double> sorted(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index c = 0; c < draws.cols(); ++c) {
    // deviations from the first draw keep the mean of a constant column exact
    const double origin = draws(0, c);
    std::size_t above = 0;
    double sum = 0.0;
    for (Eigen::Index r = 0; r < draws.rows(); ++r) {
      const double v = draws(r, c);
      sorted[static_cast<std::size_t>(r)] = v;
      sum += v - origin;
      above += v > 1.0;
    }
    std::sort(sorted.begin(), sorted.end());
    auto &cell = out[static_cast<std::size_t>(c)];
    cell.mean = origin + sum / static_cast<double>(draws.rows());
    cell.median = quantile_sorted(sorted, 0.5);
    cell.lower = quantile_sorted(sorted, tail);
    cell.upper = quantile_sorted(sorted, 1.0 - tail);
    cell.length = cell.upper - cell.lower;
    cell.prob_above_one = static_cast<double>(above) / static_cast<double>(draws.rows());
  }
  return out;
}

inline RiskSummary summarize_risk(Estimator e, const PosteriorSamples &s, const Dataset &d,
                                  std::span<const double> expected, double level = 0.9) {
  RiskSummary out;
  out.estimator = e;
  out.level = level;
  out.region_ids = d.region_ids;
  out.times = d.times;
  out.cells = summarize(risk_draws(e, s, d, expected), level);
  return out;
}

struct ShrinkagePair {
  std::string region;
  double raw;
  double smoothed;
};

/// Raw Y/E against posterior-mean smoothed risk, one row per cell.
inline std::vector<ShrinkagePair> shrinkage_data(const RiskSummary &summary,
                                                 std::span<const double> raw) {
  if (raw.size() != summary.cells.size())
    throw DomainError("raw risks are not conformable with the summary");
  std::vector<ShrinkagePair> out;
  out.reserve(raw.size());
  for (std::size_t c = 0; c < raw.size(); ++c)
    out.push_back({summary.region_ids[c % summary.region_ids.size()], raw[c],
                   summary.cells[c].mean});
  return out;
}

/// Y/E per cell.
inline std::vector<double> raw_risks(const Dataset &d, std::span<const double> expected) {
  std::vector<double> out(d.n_cells());
  for (std::size_t c = 0; c < out.size(); ++c)
    out[c] = static_cast<double>(d.y[c]) / expected[c];
  return out;
}

// ---------------------------------------------------------------------------
// Summary CSV and GeoJSON join properties
// ---------------------------------------------------------------------------

/// `region,time(optional),estimator,mean,median,lo90,hi90,length,p_exceed1`
inline void write_summary_csv(std::ostream &out, const std::vector<RiskSummary> &summaries) {
  const bool timed = !summaries.empty() && !summaries.front().times.empty();
  std::vector<std::string> header{"region"};
  if (timed) header.push_back("time");
  for (const char *h : {"estimator", "mean", "median", "lo90", "hi90", "length", "p_exceed1"})
    header.emplace_back(h);
  csv::write_row(out, header);
  for (const auto &s : summaries)
    for (std::size_t t = 0; t < s.n_times(); ++t)
      for (std::size_t i = 0; i < s.region_ids.size(); ++i) {
        const auto &c = s.at(i, t);
        std::vector<std::string> row{s.region_ids[i]};
        if (timed) row.push_back(s.times[t]);
        row.push_back(to_string(s.estimator));
        for (double v : {c.mean, c.median, c.lower, c.upper, c.length, c.prob_above_one})
          row.push_back(csv::format_double(v));
        csv::write_row(out, row);
      }
}

/// Inverse of write_summary_csv. Rows of one estimator must be contiguous.
inline std::vector<RiskSummary> read_summary_csv(std::istream &in,
                                                 const std::string &source = "<stream>") {
  const auto table = csv::read(in, source);
  const bool timed = table.column("time").has_value();
  const std::vector<std::string> expected_header =
      timed ? std::vector<std::string>{"region", "time", "estimator", "mean", "median", "lo90",
                                       "hi90", "length", "p_exceed1"}
            : std::vector<std::string>{"region", "estimator", "mean", "median", "lo90", "hi90",
                                       "length", "p_exceed1"};
  if (table.header != expected_header) throw DataError(source + ": unexpected summary header");
  const std::size_t off = timed ? 1 : 0;
  std::vector<RiskSummary> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto &row = table.rows[r];
    const auto ctx = source + ":" + std::to_string(table.line_numbers[r]);
    const auto estimator = parse_estimator(row[1 + off]);
    if (out.empty() || out.back().estimator != estimator) {
      out.emplace_back();
      out.back().estimator = estimator;
    }
    auto &s = out.back();
    if (std::find(s.region_ids.begin(), s.region_ids.end(), row[0]) == s.region_ids.end())
      s.region_ids.push_back(row[0]);
    if (timed && (s.times.empty() || s.times.back() != row[1])) {
      if (std::find(s.times.begin(), s.times.end(), row[1]) == s.times.end())
        s.times.push_back(row[1]);
    }
    CellSummary c;
    c.mean = csv::parse_double(row[2 + off], ctx);
    c.median = csv::parse_double(row[3 + off], ctx);
    c.lower = csv::parse_double(row[4 + off], ctx);
    c.upper = csv::parse_double(row[5 + off], ctx);
    c.length = csv::parse_double(row[6 + off], ctx);
    c.prob_above_one = csv::parse_double(row[7 + off], ctx);
    s.cells.push_back(c);
  }
  return out;
}

inline nlohmann::ordered_json to_json(const CellSummary &c) {
  return {{"mean", c.mean},   {"median", c.median}, {"lo90", c.lower},
          {"hi90", c.upper},  {"length", c.length}, {"p_exceed1", c.prob_above_one}};
}

/// Properties keyed by region id, for joining onto an external boundary file:
/// {"key": "region", "properties": {"<id>": {"<estimator>": {...}}}}. Dynamic
/// summaries nest one level deeper by time label.
inline nlohmann::ordered_json geojson_properties(const std::vector<RiskSummary> &summaries) {
  nlohmann::ordered_json props = nlohmann::ordered_json::object();
  for (const auto &s : summaries)
    for (std::size_t i = 0; i < s.region_ids.size(); ++i) {
      auto &region = props[s.region_ids[i]];
      if (s.times.empty()) {
        region[to_string(s.estimator)] = to_json(s.at(i));
      } else {
        for (std::size_t t = 0; t < s.times.size(); ++t)
          region[to_string(s.estimator)][s.times[t]] = to_json(s.at(i, t));
      }
    }
  nlohmann::ordered_json out;
  out["key"] = "region";
  out["properties"] = std::move(props);
  return out;
}

} // namespace arealrisk

#endif // AREALRISK_ESTIMATORS_HPP

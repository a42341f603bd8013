#ifndef AREALRISK_MODEL_HPP
#define AREALRISK_MODEL_HPP

#include "arealrisk/csv.hpp"
#include "arealrisk/error.hpp"
#include "arealrisk/graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace arealrisk {

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// Counts, populations at risk and covariates over I regions, optionally
/// observed over T time points.
///
/// Cells are stored time-major: cell(i, t) = t * I + i. A static dataset has
/// an empty `times` vector and I cells. Column 0 of `x` is always the
/// intercept; further columns come from the `x1..xk` fields of the input.
struct Dataset {
  std::vector<std::string> region_ids;
  std::vector<std::string> times;
  std::vector<std::int64_t> y;
  std::vector<double> n;
  Eigen::MatrixXd x;
  std::vector<std::string> covariate_names{"(intercept)"};

  std::size_t n_regions() const noexcept { return region_ids.size(); }
  std::size_t n_times() const noexcept { return times.empty() ? 1 : times.size(); }
  std::size_t n_cells() const noexcept { return n_regions() * n_times(); }
  std::size_t n_covariates() const noexcept { return static_cast<std::size_t>(x.cols()); }
  bool dynamic() const noexcept { return !times.empty(); }
  std::size_t cell(std::size_t i, std::size_t t = 0) const noexcept {
    return t * n_regions() + i;
  }

  /// Intercept-only static dataset.
  static Dataset make_static(std::vector<std::string> ids, std::vector<std::int64_t> counts,
                             std::vector<double> populations) {
    Dataset d;
    d.region_ids = std::move(ids);
    d.y = std::move(counts);
    d.n = std::move(populations);
    d.x = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(d.y.size()), 1);
    d.validate();
    return d;
  }

  /// Intercept-only panel; `counts` and `populations` are time-major.
  static Dataset make_panel(std::vector<std::string> ids, std::vector<std::string> time_labels,
                            std::vector<std::int64_t> counts, std::vector<double> populations) {
    Dataset d;
    d.region_ids = std::move(ids);
    d.times = std::move(time_labels);
    d.y = std::move(counts);
    d.n = std::move(populations);
    d.x = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(d.y.size()), 1);
    d.validate();
    return d;
  }

  void validate() const {
    if (region_ids.empty()) throw DataError("dataset has no regions");
    if (y.size() != n_cells() || n.size() != n_cells() ||
        static_cast<std::size_t>(x.rows()) != n_cells())
      throw DataError("dataset fields are not conformable with " +
                      std::to_string(n_regions()) + " regions x " + std::to_string(n_times()) +
                      " times");
    if (x.cols() < 1) throw DataError("covariate matrix must include the intercept column");
    if (covariate_names.size() != n_covariates())
      throw DataError("covariate names do not match covariate columns");
    for (std::size_t c = 0; c < n_cells(); ++c) {
      const auto &id = region_ids[c % n_regions()];
      if (y[c] < 0) throw DataError("negative count for region '" + id + "'");
      if (!(n[c] > 0.0) || !std::isfinite(n[c]))
        throw DataError("population must be positive for region '" + id + "'");
      if (!x.row(static_cast<Eigen::Index>(c)).allFinite())
        throw DataError("non-finite covariate for region '" + id + "'");
    }
  }

  /// Static dataset holding a single time slice.
  Dataset time_slice(std::size_t t) const {
    if (t >= n_times()) throw DataError("time index out of range");
    Dataset d;
    d.region_ids = region_ids;
    d.covariate_names = covariate_names;
    const auto I = n_regions();
    d.y.assign(y.begin() + t * I, y.begin() + (t + 1) * I);
    d.n.assign(n.begin() + t * I, n.begin() + (t + 1) * I);
    d.x = x.middleRows(static_cast<Eigen::Index>(t * I), static_cast<Eigen::Index>(I));
    return d;
  }

  /// Panel restricted to the first `count` time points.
  Dataset leading_times(std::size_t count) const {
    if (!dynamic() || count == 0 || count > times.size())
      throw DataError("invalid number of leading time points");
    Dataset d;
    d.region_ids = region_ids;
    d.covariate_names = covariate_names;
    d.times.assign(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(count));
    const auto cells = count * n_regions();
    d.y.assign(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(cells));
    d.n.assign(n.begin(), n.begin() + static_cast<std::ptrdiff_t>(cells));
    d.x = x.topRows(static_cast<Eigen::Index>(cells));
    return d;
  }

  std::optional<std::size_t> time_index(const std::string &label) const {
    const auto it = std::find(times.begin(), times.end(), label);
    if (it == times.end()) return std::nullopt;
    return static_cast<std::size_t>(it - times.begin());
  }
};

/// Reads `region,year(optional),y,n,x1,...,xk`. Without a `year` column the
/// dataset is static; with it every (region, year) pair must appear exactly
/// once. Years are ordered numerically when all labels are numeric.
inline Dataset read_dataset(std::istream &in, const std::string &source = "<stream>") {
  const auto table = csv::read(in, source);
  const auto region_col = table.column("region");
  const auto y_col = table.column("y");
  const auto n_col = table.column("n");
  const auto year_col = table.column("year");
  if (!region_col || !y_col || !n_col)
    throw DataError(source + ": header must contain region, y and n columns");
  std::vector<std::size_t> cov_cols;
  Dataset d;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c == *region_col || c == *y_col || c == *n_col || (year_col && c == *year_col)) continue;
    cov_cols.push_back(c);
    d.covariate_names.push_back(table.header[c]);
  }

  std::map<std::string, std::size_t> region_index;
  std::vector<std::string> year_labels;
  std::map<std::string, std::size_t> year_index;
  for (const auto &row : table.rows) {
    if (region_index.emplace(row[*region_col], d.region_ids.size()).second)
      d.region_ids.push_back(row[*region_col]);
    if (year_col && year_index.emplace(row[*year_col], year_labels.size()).second)
      year_labels.push_back(row[*year_col]);
  }
  if (year_col) {
    const bool numeric = std::all_of(year_labels.begin(), year_labels.end(), [](const auto &s) {
      double v;
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      return ec == std::errc() && p == s.data() + s.size();
    });
    if (numeric)
      std::stable_sort(year_labels.begin(), year_labels.end(), [](const auto &a, const auto &b) {
        return std::stod(a) < std::stod(b);
      });
    else
      std::stable_sort(year_labels.begin(), year_labels.end());
    for (std::size_t t = 0; t < year_labels.size(); ++t) year_index[year_labels[t]] = t;
    d.times = year_labels;
  }

  const auto I = d.region_ids.size();
  const auto cells = I * d.n_times();
  if (table.rows.size() != cells)
    throw DataError(source + ": expected " + std::to_string(cells) + " rows (" +
                    std::to_string(I) + " regions x " + std::to_string(d.n_times()) +
                    " times), found " + std::to_string(table.rows.size()));
  d.y.assign(cells, -1);
  d.n.assign(cells, 0.0);
  d.x = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(cells),
                              static_cast<Eigen::Index>(1 + cov_cols.size()));
  std::vector<bool> filled(cells, false);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto &row = table.rows[r];
    const auto ctx = source + ":" + std::to_string(table.line_numbers[r]);
    const auto i = region_index.at(row[*region_col]);
    const auto t = year_col ? year_index.at(row[*year_col]) : 0;
    const auto c = t * I + i;
    if (filled[c])
      throw DataError(ctx + ": duplicate row for region '" + row[*region_col] + "'");
    filled[c] = true;
    d.y[c] = csv::parse_int(row[*y_col], ctx);
    d.n[c] = csv::parse_double(row[*n_col], ctx);
    for (std::size_t k = 0; k < cov_cols.size(); ++k)
      d.x(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k + 1)) =
          csv::parse_double(row[cov_cols[k]], ctx);
  }
  d.validate();
  return d;
}

inline Dataset load_dataset(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_dataset(in, path.string());
}

inline void write_dataset(const Dataset &d, std::ostream &out) {
  std::vector<std::string> header{"region"};
  if (d.dynamic()) header.push_back("year");
  header.push_back("y");
  header.push_back("n");
  for (std::size_t k = 1; k < d.covariate_names.size(); ++k) header.push_back(d.covariate_names[k]);
  csv::write_row(out, header);
  for (std::size_t t = 0; t < d.n_times(); ++t)
    for (std::size_t i = 0; i < d.n_regions(); ++i) {
      const auto c = d.cell(i, t);
      std::vector<std::string> row{d.region_ids[i]};
      if (d.dynamic()) row.push_back(d.times[t]);
      row.push_back(std::to_string(d.y[c]));
      row.push_back(csv::format_double(d.n[c]));
      for (Eigen::Index k = 1; k < d.x.cols(); ++k)
        row.push_back(csv::format_double(d.x(static_cast<Eigen::Index>(c), k)));
      csv::write_row(out, row);
    }
}

/// Reorders the dataset's regions to the graph's region order. The two region
/// sets must match exactly.
inline Dataset align_to(const Dataset &d, const AdjacencyGraph &graph) {
  if (d.n_regions() != graph.size())
    throw DataError("dataset has " + std::to_string(d.n_regions()) +
                    " regions but the adjacency structure has " + std::to_string(graph.size()));
  std::vector<std::size_t> source(graph.size());
  for (std::size_t i = 0; i < d.n_regions(); ++i) {
    const auto g = graph.index_of(d.region_ids[i]);
    if (!g) throw DataError("region '" + d.region_ids[i] + "' is not in the adjacency structure");
    source[*g] = i;
  }
  Dataset out = d;
  out.region_ids = graph.region_ids();
  for (std::size_t t = 0; t < d.n_times(); ++t)
    for (std::size_t g = 0; g < graph.size(); ++g) {
      const auto from = d.cell(source[g], t);
      const auto to = d.cell(g, t);
      out.y[to] = d.y[from];
      out.n[to] = d.n[from];
      out.x.row(static_cast<Eigen::Index>(to)) = d.x.row(static_cast<Eigen::Index>(from));
    }
  return out;
}

/// Throws FitError when the covariate matrix is rank deficient.
inline void check_covariate_rank(const Dataset &d) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.x);
  if (qr.rank() < d.x.cols())
    throw FitError("covariate matrix is rank deficient (rank " + std::to_string(qr.rank()) +
                   " < " + std::to_string(d.x.cols()) + " columns)");
}

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

enum class Family { is, cg };
enum class LinkKind { logit, cloglog, skewed_logit };
enum class Temporal { static_, dynamic_ar1 };

inline std::string to_string(Family f) { return f == Family::is ? "is" : "cg"; }
inline std::string to_string(Temporal t) {
  return t == Temporal::static_ ? "static" : "dynamic_ar1";
}

/// Link from the linear predictor to incidence in the generative model.
struct Link {
  LinkKind kind = LinkKind::logit;
  double c0 = 0.0; ///< skewed logit only

  static Link logit() { return {LinkKind::logit, 0.0}; }
  static Link cloglog() { return {LinkKind::cloglog, 0.0}; }
  static Link skewed_logit(double c0) { return {LinkKind::skewed_logit, c0}; }

  std::string name() const {
    switch (kind) {
    case LinkKind::logit: return "logit";
    case LinkKind::cloglog: return "cloglog";
    case LinkKind::skewed_logit: return "skewed_logit";
    }
    return "unknown";
  }

  /// Parses a link name; `skewed_logit` requires `c0`.
  static Link parse(std::string_view name, std::optional<double> c0 = std::nullopt) {
    if (name == "logit") return logit();
    if (name == "cloglog") return cloglog();
    if (name == "skewed_logit") {
      if (!c0) throw ConfigError("missing key: c0 (required by link skewed_logit)");
      if (!(*c0 > 0.0)) throw ConfigError("c0 must be positive");
      return skewed_logit(*c0);
    }
    throw ConfigError("unknown link '" + std::string(name) + "'");
  }

  bool operator==(const Link &) const = default;
};

struct GammaPrior {
  double shape = 1.0;
  double rate = 1.0;
};

struct ModelSpec {
  Family family = Family::cg;
  Link link = Link::logit();
  Temporal temporal = Temporal::static_;
  GammaPrior tau_prior;

  void validate() const {
    if (link.kind == LinkKind::skewed_logit && !(link.c0 > 0.0))
      throw ConfigError("skewed_logit link requires c0 > 0");
    if (!(tau_prior.shape > 0.0) || !(tau_prior.rate > 0.0))
      throw ConfigError("tau prior shape and rate must be positive");
  }
};

// ---------------------------------------------------------------------------
// Standardization, links, likelihoods
// ---------------------------------------------------------------------------

/// Expected counts by internal standardization, one time slice at a time:
/// E_it = n_it * (sum_i Y_it / sum_i n_it).
inline std::vector<double> internal_standardization(const Dataset &d) {
  const auto I = d.n_regions();
  std::vector<double> e(d.n_cells());
  for (std::size_t t = 0; t < d.n_times(); ++t) {
    double total_y = 0.0;
    double total_n = 0.0;
    for (std::size_t i = 0; i < I; ++i) {
      total_y += static_cast<double>(d.y[d.cell(i, t)]);
      total_n += d.n[d.cell(i, t)];
    }
    if (!(total_y > 0.0))
      throw DataError("all counts are zero" +
                      (d.dynamic() ? " in time slice '" + d.times[t] + "'" : std::string()) +
                      "; internal standardization is undefined");
    const double rate = total_y / total_n;
    for (std::size_t i = 0; i < I; ++i) e[d.cell(i, t)] = d.n[d.cell(i, t)] * rate;
  }
  return e;
}

inline constexpr double kProbabilityFloor = 1e-12;

namespace detail {
inline double expit(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}
} // namespace detail

/// Incidence implied by the linear predictor, clamped to [1e-12, 1 - 1e-12].
inline double apply_link(const Link &link, double eta) {
  double p = 0.0;
  switch (link.kind) {
  case LinkKind::logit: p = detail::expit(eta); break;
  case LinkKind::cloglog: p = -std::expm1(-std::exp(eta)); break;
  case LinkKind::skewed_logit: p = detail::expit(eta + std::log(link.c0)); break;
  }
  return std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
}

inline double log_factorial(std::int64_t k) { return std::lgamma(static_cast<double>(k) + 1.0); }

namespace kernel {
// Per-cell log-likelihood terms with data-only constants dropped. The
// sampler's Metropolis targets are built from these.

/// -n p + y log p, p = link(eta)
inline double cg_cell(std::int64_t y, double n, double eta, const Link &link) {
  const double p = apply_link(link, eta);
  return -n * p + (y > 0 ? static_cast<double>(y) * std::log(p) : 0.0);
}

/// -E exp(eta) + y eta
inline double is_cell(std::int64_t y, double e, double eta) {
  return -e * std::exp(eta) + static_cast<double>(y) * eta;
}
} // namespace kernel

/// X_it' beta + phi_i (+ alpha_t when `alpha` is non-empty).
inline double linear_predictor(const Dataset &d, std::span<const double> beta,
                               std::span<const double> phi, std::span<const double> alpha,
                               std::size_t i, std::size_t t = 0) {
  const auto c = static_cast<Eigen::Index>(d.cell(i, t));
  double eta = phi[i];
  for (std::size_t k = 0; k < beta.size(); ++k)
    eta += d.x(c, static_cast<Eigen::Index>(k)) * beta[k];
  if (!alpha.empty()) eta += alpha[t];
  return eta;
}

namespace detail {
inline void check_shapes(const Dataset &d, std::span<const double> beta,
                         std::span<const double> phi, std::span<const double> alpha) {
  if (beta.size() != d.n_covariates()) throw DomainError("beta has the wrong length");
  if (phi.size() != d.n_regions()) throw DomainError("phi has the wrong length");
  if (!alpha.empty() && alpha.size() != d.n_times())
    throw DomainError("alpha has the wrong length");
}
} // namespace detail

/// Poisson log-likelihood of the generative model, Y_it ~ Po(n_it p_it),
/// constants included.
inline double log_likelihood_cg(const Dataset &d, std::span<const double> beta,
                                std::span<const double> phi, const Link &link,
                                std::span<const double> alpha = {}) {
  detail::check_shapes(d, beta, phi, alpha);
  double ll = 0.0;
  for (std::size_t t = 0; t < d.n_times(); ++t)
    for (std::size_t i = 0; i < d.n_regions(); ++i) {
      const auto c = d.cell(i, t);
      const double mu = d.n[c] * apply_link(link, linear_predictor(d, beta, phi, alpha, i, t));
      ll += -mu - log_factorial(d.y[c]);
      if (d.y[c] > 0) ll += static_cast<double>(d.y[c]) * std::log(mu);
    }
  return ll;
}

/// Poisson log-likelihood of the internally standardized model,
/// Y_it ~ Po(E_it exp(eta_it)), constants included.
inline double log_likelihood_is(const Dataset &d, std::span<const double> e,
                                std::span<const double> beta, std::span<const double> phi,
                                std::span<const double> alpha = {}) {
  detail::check_shapes(d, beta, phi, alpha);
  if (e.size() != d.n_cells()) throw DomainError("expected counts have the wrong length");
  double ll = 0.0;
  for (std::size_t t = 0; t < d.n_times(); ++t)
    for (std::size_t i = 0; i < d.n_regions(); ++i) {
      const auto c = d.cell(i, t);
      if (!(e[c] > 0.0)) throw DomainError("expected counts must be positive");
      const double eta = linear_predictor(d, beta, phi, alpha, i, t);
      ll += -e[c] * std::exp(eta) - log_factorial(d.y[c]);
      if (d.y[c] > 0) ll += static_cast<double>(d.y[c]) * (std::log(e[c]) + eta);
    }
  return ll;
}

} // namespace arealrisk

#endif // AREALRISK_MODEL_HPP

#ifndef AREALRISK_TOOLS_CLI_HPP
#define AREALRISK_TOOLS_CLI_HPP

// Command-line front end: fit, simulate, study, forecast and compare.
// Every subcommand writes its artifacts into --out and exits 0 only when all
// of them were written and validated.

#include "arealrisk/arealrisk.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace arealrisk::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Artifact writers
// ---------------------------------------------------------------------------

inline void write_text(const fs::path &path, const std::string &content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << content;
  if (content.empty() || content.back() != '\n') out << '\n';
  if (!out) throw ConfigError("failed writing " + path.string());
}

inline std::string read_text(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes the JSON document after checking its required top-level keys, then
/// re-parses the file and checks it reproduces the document.
inline void write_json(const fs::path &path, const ordered_json &doc,
                       const std::vector<std::string> &required) {
  for (const auto &key : required)
    if (!doc.contains(key))
      throw Error("schema_error", path.filename().string() + " is missing key '" + key + "'");
  write_text(path, doc.dump(2));
  if (ordered_json::parse(read_text(path)) != doc)
    throw Error("schema_error", path.string() + " did not round-trip");
}

inline void write_summaries(const fs::path &path, const std::vector<RiskSummary> &summaries) {
  std::ostringstream out;
  write_summary_csv(out, summaries);
  write_text(path, out.str());
  std::istringstream back(read_text(path));
  const auto parsed = read_summary_csv(back, path.string());
  bool same = parsed.size() == summaries.size();
  for (std::size_t k = 0; same && k < parsed.size(); ++k)
    same = parsed[k].estimator == summaries[k].estimator &&
           parsed[k].region_ids == summaries[k].region_ids &&
           parsed[k].times == summaries[k].times && parsed[k].cells == summaries[k].cells;
  if (!same) throw Error("schema_error", path.string() + " did not round-trip");
}

// ---------------------------------------------------------------------------
// Shared option groups
// ---------------------------------------------------------------------------

struct SamplerOptions {
  std::size_t iterations = 25000;
  std::size_t burn_in = 5000;
  std::size_t thin = 2;
  std::size_t adapt_window = 100;

  void add_to(CLI::App *app) {
    app->add_option("--iterations", iterations, "Total MCMC sweeps");
    app->add_option("--burn-in", burn_in, "Sweeps discarded (and used for adaptation)");
    app->add_option("--thin", thin, "Keep every k-th post-burn-in sweep");
    app->add_option("--adapt-window", adapt_window, "Sweeps between proposal adaptations");
  }

  SamplerConfig config(std::uint64_t seed) const {
    SamplerConfig c;
    c.n_iterations = iterations;
    c.burn_in = burn_in;
    c.thin = thin;
    c.adapt_window = adapt_window;
    c.seed = seed;
    c.validate();
    return c;
  }
};

struct LinkOptions {
  std::string link = "logit";
  double c0 = 0.0;
  CLI::Option *c0_option = nullptr;

  void add_to(CLI::App *app) {
    app->add_option("--link", link, "logit | cloglog | skewed_logit")
        ->check(CLI::IsMember({"logit", "cloglog", "skewed_logit"}));
    c0_option = app->add_option("--c0", c0, "Skewed-logit constant (required for skewed_logit)");
  }

  std::optional<double> c0_value() const {
    if (c0_option && c0_option->count() > 0) return c0;
    return std::nullopt;
  }

  Link parse(const std::string &name) const { return Link::parse(name, c0_value()); }
};

struct TruthOptions {
  std::size_t lattice = 10;
  std::string adjacency;
  std::string populations;
  double baseline = 0.001;
  std::string hubs = "auto";
  double neighbor_bump = 0.0005;

  void add_to(CLI::App *app) {
    app->add_option("--lattice", lattice, "Side of a synthetic square lattice when no adjacency file is given");
    app->add_option("--adjacency", adjacency, "Adjacency file (edge list or matrix)");
    app->add_option("--populations", populations, "CSV region,n (required with --adjacency)");
    app->add_option("--baseline", baseline, "Baseline incidence");
    app->add_option("--hubs", hubs, "'auto' or region:bump,region:bump,...");
    app->add_option("--neighbor-bump", neighbor_bump, "Incidence added to hub neighbors");
  }

  struct Setup {
    AdjacencyGraph graph;
    std::vector<double> populations;
    TruthMap truth;
  };

  Setup build(std::uint64_t seed) const {
    Setup s;
    if (adjacency.empty()) {
      s.graph = AdjacencyGraph::lattice(lattice, lattice);
      s.populations = lattice_populations(lattice, lattice, derive_seed(seed, "populations"));
    } else {
      if (populations.empty()) throw ConfigError("missing key: populations (required with adjacency)");
      s.graph = load_adjacency(adjacency);
      s.populations = read_populations(populations, s.graph);
    }
    TruthRecipe recipe;
    recipe.baseline = baseline;
    recipe.neighbor_bump = neighbor_bump;
    recipe.hubs = parse_hubs(hubs);
    s.truth = build_truth(s.graph, s.populations, recipe);
    return s;
  }

  static std::vector<HubBump> parse_hubs(const std::string &spec) {
    std::vector<HubBump> out;
    if (spec == "auto" || spec.empty()) return out;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto colon = item.rfind(':');
      if (colon == std::string::npos) throw ConfigError("hub '" + item + "' must be region:bump");
      out.push_back({csv::trim(item.substr(0, colon)),
                     csv::parse_double(csv::trim(item.substr(colon + 1)), "hubs")});
    }
    return out;
  }

  static std::vector<double> read_populations(const fs::path &path, const AdjacencyGraph &graph) {
    const auto table = csv::read_file(path);
    const auto rc = table.column("region");
    const auto nc = table.column("n");
    if (!rc || !nc) throw DataError(path.string() + ": header must contain region and n");
    std::vector<double> pop(graph.size(), -1.0);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      const auto idx = graph.index_of(table.rows[r][*rc]);
      if (!idx) throw DataError("population region '" + table.rows[r][*rc] + "' is not in the adjacency structure");
      pop[*idx] = csv::parse_double(table.rows[r][*nc], path.string());
    }
    for (std::size_t i = 0; i < pop.size(); ++i)
      if (!(pop[i] > 0.0)) throw DataError("missing or non-positive population for '" + graph.region_id(i) + "'");
    return pop;
  }
};

inline void require_keys(std::initializer_list<std::pair<const char *, const std::string *>> keys) {
  for (const auto &[name, value] : keys)
    if (value->empty()) throw ConfigError(std::string("missing key: ") + name);
}

inline ordered_json config_json(const SamplerConfig &c) {
  return {{"iterations", c.n_iterations}, {"burn_in", c.burn_in},       {"thin", c.thin},
          {"adapt_window", c.adapt_window}, {"target_low", c.target_low}, {"target_high", c.target_high},
          {"seed", c.seed},                 {"draws", c.n_draws()}};
}

inline ordered_json link_json(const Link &l) {
  ordered_json j{{"name", l.name()}};
  if (l.kind == LinkKind::skewed_logit) j["c0"] = l.c0;
  return j;
}

inline void warn_disconnected(const AdjacencyGraph &g, std::ostream &err) {
  if (!g.connected())
    err << "warning: adjacency structure has " << g.component_count()
        << " connected components; phi is centered with a single global constraint\n";
}

inline Dataset load_aligned(const std::string &data_path, const AdjacencyGraph &graph) {
  return align_to(load_dataset(data_path), graph);
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitOptions {
  std::string data, adjacency, out, family = "cg", temporal = "static", time;
  bool dump_draws = false;
  std::uint64_t seed = 1;
  LinkOptions link;
  SamplerOptions sampler;
};

inline ordered_json sampler_metadata(const PosteriorSamples &s, const std::string &seed_label) {
  ordered_json acc = ordered_json::array();
  for (const auto &a : s.acceptance)
    acc.push_back({{"block", a.block}, {"rate", a.rate}, {"scale", a.scale}});
  ordered_json means;
  ordered_json beta;
  for (std::size_t k = 0; k < s.covariate_names.size(); ++k)
    beta[s.covariate_names[k]] = s.beta.col(static_cast<Eigen::Index>(k)).mean();
  means["beta"] = beta;
  means["tau"] = s.tau.mean();
  if (s.dynamic()) {
    means["rho"] = s.rho.mean();
    means["omega"] = s.omega.mean();
  }
  return {{"family", to_string(s.spec.family)},
          {"link", link_json(s.spec.link)},
          {"temporal", to_string(s.spec.temporal)},
          {"chain", seed_label},
          {"sampler", config_json(s.config)},
          {"nonfinite_proposals", s.nonfinite_proposals},
          {"posterior_means", means},
          {"acceptance", acc}};
}

inline void write_draws(const fs::path &path, const PosteriorSamples &s) {
  std::ostringstream out;
  out << "draw,parameter,value\n";
  for (Eigen::Index d = 0; d < static_cast<Eigen::Index>(s.n_draws()); ++d) {
    auto emit = [&](const std::string &name, double v) {
      out << d << ',' << name << ',' << csv::format_double(v) << '\n';
    };
    for (std::size_t k = 0; k < s.covariate_names.size(); ++k)
      emit("beta[" + s.covariate_names[k] + "]", s.beta(d, static_cast<Eigen::Index>(k)));
    for (std::size_t i = 0; i < s.region_ids.size(); ++i)
      emit("phi[" + s.region_ids[i] + "]", s.phi(d, static_cast<Eigen::Index>(i)));
    emit("tau", s.tau(d));
    if (s.dynamic()) {
      for (std::size_t t = 0; t < s.time_labels.size(); ++t)
        emit("alpha[" + s.time_labels[t] + "]", s.alpha(d, static_cast<Eigen::Index>(t)));
      emit("rho", s.rho(d));
      emit("omega", s.omega(d));
    }
  }
  write_text(path, out.str());
}

inline void write_shrinkage(const fs::path &path, const std::vector<RiskSummary> &summaries,
                            const std::vector<double> &raw) {
  std::ostringstream out;
  const bool timed = !summaries.front().times.empty();
  out << (timed ? "region,time,estimator,raw,smoothed\n" : "region,estimator,raw,smoothed\n");
  for (const auto &s : summaries) {
    const auto pairs = shrinkage_data(s, raw);
    for (std::size_t c = 0; c < pairs.size(); ++c) {
      out << pairs[c].region << ',';
      if (timed) out << s.times[c / s.region_ids.size()] << ',';
      out << to_string(s.estimator) << ',' << csv::format_double(pairs[c].raw) << ','
          << csv::format_double(pairs[c].smoothed) << '\n';
    }
  }
  write_text(path, out.str());
}

inline Dataset select_static_slice(const Dataset &d, const std::string &time) {
  if (!time.empty()) {
    const auto idx = d.time_index(time);
    if (!idx) throw DataError("time '" + time + "' is not in the dataset");
    return d.time_slice(*idx);
  }
  if (d.dynamic()) {
    if (d.n_times() == 1) return d.time_slice(0);
    throw ConfigError("the dataset is a panel; pass --time to fit a static model to one slice "
                      "or --temporal dynamic");
  }
  return d;
}

inline void cmd_fit(const FitOptions &o, std::ostream &err) {
  require_keys({{"data", &o.data}, {"adjacency", &o.adjacency}, {"out", &o.out}});
  const auto graph = load_adjacency(o.adjacency);
  warn_disconnected(graph, err);
  auto data = load_aligned(o.data, graph);
  ModelSpec spec;
  spec.family = o.family == "is" ? Family::is : Family::cg;
  spec.link = o.link.parse(o.link.link);
  spec.temporal = o.temporal == "dynamic" ? Temporal::dynamic_ar1 : Temporal::static_;
  if (spec.temporal == Temporal::static_)
    data = select_static_slice(data, o.time);
  else if (!o.time.empty())
    throw ConfigError("--time selects a slice for static fits only");
  spec.validate();

  const std::string label = "chain/" + to_string(spec.family);
  const auto samples = run_chain(data, graph, spec, o.sampler.config(derive_seed(o.seed, label)));
  const auto expected = internal_standardization(data);
  std::vector<RiskSummary> summaries;
  for (auto e : estimators_for(spec.family))
    summaries.push_back(summarize_risk(e, samples, data, expected));

  const fs::path out(o.out);
  fs::create_directories(out);
  write_summaries(out / "summary.csv", summaries);
  write_json(out / "risk_properties.json", geojson_properties(summaries), {"key", "properties"});
  write_json(out / "sampler_metadata.json", sampler_metadata(samples, label),
             {"family", "link", "temporal", "sampler", "acceptance"});
  write_shrinkage(out / "shrinkage.csv", summaries, raw_risks(data, expected));
  if (o.dump_draws) write_draws(out / "draws.csv", samples);
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateOptions {
  TruthOptions truth;
  std::string out;
  std::size_t years = 0;
  double rho = 0.9;
  double omega = 0.01;
  int first_year = 1;
  double population_scale = 1.0;
  std::uint64_t seed = 1;
};

inline void cmd_simulate(const SimulateOptions &o) {
  require_keys({{"out", &o.out}});
  auto setup = o.truth.build(o.seed);
  if (!(o.population_scale > 0.0)) throw ConfigError("population scale must be positive");
  for (auto &v : setup.populations) v *= o.population_scale;
  const fs::path out(o.out);
  fs::create_directories(out);

  std::ostringstream adj;
  write_adjacency(setup.graph, adj);
  write_text(out / "adjacency.csv", adj.str());

  std::ostringstream pop;
  pop << "region,n\n";
  for (std::size_t i = 0; i < setup.graph.size(); ++i)
    pop << setup.graph.region_id(i) << ',' << csv::format_double(setup.populations[i]) << '\n';
  write_text(out / "populations.csv", pop.str());

  std::ostringstream truth;
  truth << "region,n,p,r\n";
  for (std::size_t i = 0; i < setup.graph.size(); ++i)
    truth << setup.graph.region_id(i) << ',' << csv::format_double(setup.populations[i]) << ','
          << csv::format_double(setup.truth.p[i]) << ',' << csv::format_double(setup.truth.r[i])
          << '\n';
  write_text(out / "truth.csv", truth.str());

  std::ostringstream data;
  if (o.years == 0) {
    write_dataset(simulate_counts(setup.truth, setup.populations, setup.graph.region_ids(),
                                  derive_seed(o.seed, "data")),
                  data);
  } else {
    const auto panel = simulate_panel(setup.truth, setup.populations, setup.graph.region_ids(),
                                      o.years, o.rho, o.omega, derive_seed(o.seed, "panel"),
                                      o.first_year);
    write_dataset(panel.data, data);
    std::ostringstream alpha;
    alpha << "year,alpha\n";
    for (std::size_t t = 0; t < panel.alpha.size(); ++t)
      alpha << panel.data.times[t] << ',' << csv::format_double(panel.alpha[t]) << '\n';
    write_text(out / "alpha.csv", alpha.str());
  }
  write_text(out / "data.csv", data.str());
}

// ---------------------------------------------------------------------------
// study
// ---------------------------------------------------------------------------

struct StudyOptions {
  TruthOptions truth;
  std::string out;
  std::size_t replicates = 100;
  std::vector<std::string> estimators{"r_IS", "r_CG_tilde", "r_CG"};
  std::vector<std::string> links{"logit"};
  std::vector<double> population_scales{1.0};
  std::size_t jobs = 1;
  std::uint64_t seed = 1;
  LinkOptions link;
  SamplerOptions sampler;
};

inline ordered_json acceptance_json(const AcceptanceRange &a) {
  if (a.blocks == 0) return nullptr;
  return {{"min", a.min}, {"max", a.max}, {"blocks", a.blocks}, {"outside_band", a.outside}};
}

inline ordered_json study_json(const StudyReport &r) {
  ordered_json cfg{{"replicates", r.config.replicates},
                   {"master_seed", r.config.master_seed},
                   {"level", r.config.level},
                   {"sampler", config_json(r.config.sampler)}};
  ordered_json links = ordered_json::array();
  for (const auto &l : r.config.links) links.push_back(link_json(l));
  cfg["links"] = links;
  cfg["population_scales"] = r.config.population_scales;
  ordered_json est = ordered_json::array();
  for (auto e : r.config.estimators) est.push_back(to_string(e));
  cfg["estimators"] = est;

  ordered_json truth = ordered_json::array();
  for (std::size_t i = 0; i < r.region_ids.size(); ++i)
    truth.push_back({{"region", r.region_ids[i]},
                     {"n", r.populations[i]},
                     {"p", r.truth.p[i]},
                     {"r", r.truth.r[i]}});

  ordered_json arms = ordered_json::array();
  for (const auto &arm : r.arms) {
    ordered_json failures = ordered_json::array();
    for (const auto &f : arm.failures)
      failures.push_back({{"replicate", f.replicate}, {"message", f.message}});
    const auto *is = arm.batch(Estimator::r_is);
    ordered_json rows = ordered_json::array();
    for (const auto &b : arm.batches) {
      ordered_json row{{"estimator", to_string(b.estimator)},
                       {"expected_loss_ratio", b.expected_loss_ratio()},
                       {"expected_loss_bias", b.expected_loss_bias()},
                       {"average_coverage", b.average_coverage()},
                       {"average_length", b.average_length()},
                       {"row_wise_shorter_than_r_IS", nullptr},
                       {"column_wise_shorter_than_r_IS", nullptr}};
      if (is && b.estimator != Estimator::r_is) {
        const auto cmp = interval_comparisons(b, *is);
        row["row_wise_shorter_than_r_IS"] = cmp.row_wise;
        row["column_wise_shorter_than_r_IS"] = cmp.column_wise;
      }
      rows.push_back(row);
    }
    arms.push_back({{"population_scale", arm.population_scale},
                    {"link", link_json(arm.link)},
                    {"replicates_used", arm.counts.rows()},
                    {"failures", failures},
                    {"estimators", rows},
                    {"mle", {{"expected_loss_ratio", arm.mle_loss_ratio},
                             {"expected_loss_bias", arm.mle_bias_replicates > 0
                                                        ? ordered_json(arm.mle_loss_bias)
                                                        : ordered_json(nullptr)},
                             {"bias_replicates_used", arm.mle_bias_replicates}}},
                    {"acceptance", {{"is", acceptance_json(arm.is_acceptance)},
                                    {"cg", acceptance_json(arm.cg_acceptance)}}}});
  }
  return {{"config", cfg}, {"truth", {{"provenance", r.truth.provenance}, {"regions", truth}}},
          {"arms", arms}};
}

inline void write_long_matrices(const fs::path &coverage_path, const fs::path &lengths_path,
                                const StudyReport &r) {
  std::ostringstream cov, len;
  cov << "population_scale,link,estimator,replicate,region,covered\n";
  len << "population_scale,link,estimator,replicate,region,length\n";
  for (const auto &arm : r.arms)
    for (const auto &b : arm.batches)
      for (std::size_t u = 0; u < b.replicates(); ++u)
        for (std::size_t i = 0; i < r.region_ids.size(); ++i) {
          const auto prefix = csv::format_double(arm.population_scale) + ',' + arm.link.name() +
                              ',' + to_string(b.estimator) + ',' +
                              std::to_string(b.replicate_indices[u]) + ',' + r.region_ids[i] + ',';
          const auto ui = static_cast<Eigen::Index>(u);
          const auto ii = static_cast<Eigen::Index>(i);
          cov << prefix << static_cast<int>(b.coverage(ui, ii)) << '\n';
          len << prefix << csv::format_double(b.length(ui, ii)) << '\n';
        }
  write_text(coverage_path, cov.str());
  write_text(lengths_path, len.str());
}

inline StudyConfig study_config(const StudyOptions &o) {
  StudyConfig c;
  c.replicates = o.replicates;
  c.links.clear();
  for (const auto &l : o.links) c.links.push_back(o.link.parse(l));
  c.population_scales = o.population_scales;
  c.estimators.clear();
  for (const auto &e : o.estimators) c.estimators.push_back(parse_estimator(e));
  c.sampler = o.sampler.config(0);
  c.master_seed = o.seed;
  c.jobs = o.jobs;
  c.validate();
  return c;
}

inline void cmd_study(const StudyOptions &o) {
  require_keys({{"out", &o.out}});
  const auto config = study_config(o);
  const auto setup = o.truth.build(o.seed);
  const auto report = run_study(setup.graph, setup.populations, setup.truth, config);
  const fs::path out(o.out);
  fs::create_directories(out);
  write_json(out / "study_report.json", study_json(report), {"config", "truth", "arms"});
  write_long_matrices(out / "coverage.csv", out / "lengths.csv", report);
}

// ---------------------------------------------------------------------------
// forecast
// ---------------------------------------------------------------------------

struct ForecastOptions {
  std::string data, adjacency, out, holdout, family = "both";
  std::uint64_t seed = 1;
  LinkOptions link;
  SamplerOptions sampler;
};

inline void cmd_forecast(const ForecastOptions &o, std::ostream &err) {
  require_keys({{"data", &o.data}, {"adjacency", &o.adjacency}, {"out", &o.out}});
  const auto graph = load_adjacency(o.adjacency);
  warn_disconnected(graph, err);
  const auto data = load_aligned(o.data, graph);
  if (!data.dynamic()) throw DataError("forecasting needs a panel dataset with a year column");
  if (data.n_times() < 3) throw DataError("forecasting needs at least three time points");
  const std::string holdout_label = o.holdout.empty() ? data.times.back() : o.holdout;
  const auto h = data.time_index(holdout_label);
  if (!h) throw DataError("hold-out time '" + holdout_label + "' is not in the dataset");
  if (*h < 2) throw DataError("hold-out time must leave at least two fitted time points");

  const auto train = data.leading_times(*h);
  const auto last = train.time_slice(*h - 1);
  const auto held = data.time_slice(*h);
  const auto e_train = internal_standardization(train);
  const auto e_last = internal_standardization(last);
  const auto observed = raw_risks(held, internal_standardization(held));
  const auto link = o.link.parse(o.link.link);

  std::vector<Family> families;
  if (o.family != "cg") families.push_back(Family::is);
  if (o.family != "is") families.push_back(Family::cg);

  ordered_json rows = ordered_json::array();
  for (auto fam : families) {
    const ModelSpec dyn{fam, link, Temporal::dynamic_ar1, {}};
    const ModelSpec stat{fam, link, Temporal::static_, {}};
    const auto ds = run_chain(train, graph, dyn,
                              o.sampler.config(derive_seed(o.seed, "chain/dynamic/" + to_string(fam))));
    const auto ss = run_chain(last, graph, stat,
                              o.sampler.config(derive_seed(o.seed, "chain/static/" + to_string(fam))));
    for (auto e : estimators_for(fam)) {
      const auto dsum = summarize_risk(e, ds, train, e_train);
      const auto ssum = summarize_risk(e, ss, last, e_last);
      Rng rng(derive_seed(o.seed, "forecast/" + to_string(e)));
      const auto eval = evaluate_holdout(forecast_risks(e, ds, held, rng), observed);

      double avg_d = 0.0, avg_s = 0.0;
      std::size_t shorter = 0;
      ordered_json regions = ordered_json::array();
      for (std::size_t i = 0; i < graph.size(); ++i) {
        const double ld = dsum.at(i, *h - 1).length;
        const double ls = ssum.at(i).length;
        avg_d += ld;
        avg_s += ls;
        shorter += ld < ls;
        const auto &r = eval.regions[i];
        regions.push_back({{"region", graph.region_id(i)},
                           {"mean", r.mean},
                           {"lo90", r.lower},
                           {"hi90", r.upper},
                           {"observed", r.observed},
                           {"crps", r.crps},
                           {"covered", r.covered},
                           {"length_dynamic", ld},
                           {"length_static", ls}});
      }
      const double I = static_cast<double>(graph.size());
      rows.push_back(
          {{"estimator", to_string(e)},
           {"rho_mean", ds.rho.mean()},
           {"omega_mean", ds.omega.mean()},
           {"last_fitted_lengths",
            {{"average_dynamic", avg_d / I},
             {"average_static", avg_s / I},
             {"fraction_dynamic_shorter", static_cast<double>(shorter) / I}}},
           {"prediction", {{"pmse", eval.pmse}, {"crps", eval.crps}, {"coverage", eval.coverage}}},
           {"regions", regions}});
    }
  }
  ordered_json doc{{"holdout", holdout_label},
                   {"fitted_times", train.times},
                   {"last_fitted", train.times.back()},
                   {"link", link_json(link)},
                   {"sampler", config_json(o.sampler.config(o.seed))},
                   {"estimators", rows}};
  const fs::path out(o.out);
  fs::create_directories(out);
  write_json(out / "forecast_report.json", doc, {"holdout", "estimators"});
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareOptions {
  std::string data, adjacency, out, time;
  std::uint64_t seed = 1;
  LinkOptions link;
  SamplerOptions sampler;
};

/// Fits both static models to one slice and counts, per CG estimator, the
/// regions whose credible interval is shorter than r_IS's.
inline void cmd_compare(const CompareOptions &o, std::ostream &err) {
  require_keys({{"data", &o.data}, {"adjacency", &o.adjacency}, {"out", &o.out}});
  const auto graph = load_adjacency(o.adjacency);
  warn_disconnected(graph, err);
  const auto data = select_static_slice(load_aligned(o.data, graph), o.time);
  const auto link = o.link.parse(o.link.link);
  const auto expected = internal_standardization(data);
  const auto is = run_chain(data, graph, ModelSpec{Family::is, link, Temporal::static_, {}},
                            o.sampler.config(derive_seed(o.seed, "chain/is")));
  const auto cg = run_chain(data, graph, ModelSpec{Family::cg, link, Temporal::static_, {}},
                            o.sampler.config(derive_seed(o.seed, "chain/cg")));
  std::vector<RiskSummary> summaries{summarize_risk(Estimator::r_is, is, data, expected),
                                     summarize_risk(Estimator::r_cg_tilde, cg, data, expected),
                                     summarize_risk(Estimator::r_cg, cg, data, expected)};
  ordered_json rows = ordered_json::array();
  for (const auto &s : summaries) {
    std::size_t shorter = 0;
    double total = 0.0;
    for (std::size_t i = 0; i < graph.size(); ++i) {
      total += s.at(i).length;
      shorter += s.at(i).length < summaries[0].at(i).length;
    }
    ordered_json row{{"estimator", to_string(s.estimator)},
                     {"average_length", total / static_cast<double>(graph.size())},
                     {"regions_shorter_than_r_IS", nullptr}};
    if (s.estimator != Estimator::r_is) row["regions_shorter_than_r_IS"] = shorter;
    rows.push_back(row);
  }
  const fs::path out(o.out);
  fs::create_directories(out);
  write_summaries(out / "summary.csv", summaries);
  write_json(out / "comparison.json",
             {{"regions", graph.size()}, {"link", link_json(link)}, {"estimators", rows}},
             {"regions", "estimators"});
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline void print_error(std::ostream &err, const std::string &code, const std::string &message) {
  err << ordered_json{{"error", {{"code", code}, {"message", message}}}}.dump() << '\n';
}

inline int run(int argc, const char *const *argv, std::ostream &out = std::cout,
               std::ostream &err = std::cerr) {
  CLI::App app{"Bayesian disease mapping with internally standardized and generative "
               "Poisson-CAR models",
               "arealrisk"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "INI file; [fit], [study], ... sections hold subcommand keys");
  bool print_config = false;
  app.add_flag("--print-config", print_config, "Print the effective configuration and exit")
      ->configurable(false);
  app.require_subcommand(0, 1);
  app.fallthrough();

  auto seed_option = [](CLI::App *sub, std::uint64_t &seed) {
    sub->add_option("--seed", seed, "Master seed")->envname("AREALRISK_SEED");
  };

  FitOptions fit;
  auto *fit_cmd = app.add_subcommand("fit", "Fit one model and summarize relative risks");
  fit_cmd->add_option("--data", fit.data, "Dataset CSV");
  fit_cmd->add_option("--adjacency", fit.adjacency, "Adjacency CSV");
  fit_cmd->add_option("--out", fit.out, "Output directory");
  fit_cmd->add_option("--family", fit.family, "is | cg")->check(CLI::IsMember({"is", "cg"}));
  fit_cmd->add_option("--temporal", fit.temporal, "static | dynamic")
      ->check(CLI::IsMember({"static", "dynamic"}));
  fit_cmd->add_option("--time", fit.time, "Time slice for a static fit to a panel");
  fit_cmd->add_flag("--dump-draws", fit.dump_draws, "Also write draws.csv");
  seed_option(fit_cmd, fit.seed);
  fit.link.add_to(fit_cmd);
  fit.sampler.add_to(fit_cmd);

  SimulateOptions sim;
  auto *sim_cmd = app.add_subcommand("simulate", "Simulate counts from a hub-recipe truth map");
  sim_cmd->add_option("--out", sim.out, "Output directory");
  sim_cmd->add_option("--years", sim.years, "Number of years for a panel (0: static)");
  sim_cmd->add_option("--rho", sim.rho, "AR(1) coefficient of the panel's temporal effect");
  sim_cmd->add_option("--omega", sim.omega, "Innovation variance of the temporal effect");
  sim_cmd->add_option("--first-year", sim.first_year, "Label of the first year");
  sim_cmd->add_option("--population-scale", sim.population_scale, "Multiply populations");
  seed_option(sim_cmd, sim.seed);
  sim.truth.add_to(sim_cmd);

  StudyOptions study;
  auto *study_cmd = app.add_subcommand("study", "Replicated simulation study");
  study_cmd->add_option("--out", study.out, "Output directory");
  study_cmd->add_option("--B", study.replicates, "Number of replicates");
  study_cmd->add_option("--estimators", study.estimators, "Subset of r_IS,r_CG_tilde,r_CG")
      ->delimiter(',');
  study_cmd->add_option("--links", study.links, "Links for the generative model")
      ->delimiter(',');
  study_cmd->add_option("--population-scale", study.population_scales,
                        "Population multipliers (e.g. 1,0.1)")
      ->delimiter(',');
  study_cmd->add_option("--jobs", study.jobs, "Replicates fitted concurrently");
  study_cmd->add_option("--c0", study.link.c0, "Skewed-logit constant");
  study.link.c0_option = study_cmd->get_option("--c0");
  seed_option(study_cmd, study.seed);
  study.truth.add_to(study_cmd);
  study.sampler.add_to(study_cmd);

  ForecastOptions fc;
  auto *fc_cmd = app.add_subcommand("forecast", "Fit dynamic models and forecast a held-out year");
  fc_cmd->add_option("--data", fc.data, "Panel dataset CSV");
  fc_cmd->add_option("--adjacency", fc.adjacency, "Adjacency CSV");
  fc_cmd->add_option("--out", fc.out, "Output directory");
  fc_cmd->add_option("--holdout", fc.holdout, "Held-out year (default: last)");
  fc_cmd->add_option("--family", fc.family, "is | cg | both")
      ->check(CLI::IsMember({"is", "cg", "both"}));
  seed_option(fc_cmd, fc.seed);
  fc.link.add_to(fc_cmd);
  fc.sampler.add_to(fc_cmd);

  CompareOptions cmp;
  auto *cmp_cmd = app.add_subcommand("compare", "Fit both static models and compare intervals");
  cmp_cmd->add_option("--data", cmp.data, "Dataset CSV");
  cmp_cmd->add_option("--adjacency", cmp.adjacency, "Adjacency CSV");
  cmp_cmd->add_option("--out", cmp.out, "Output directory");
  cmp_cmd->add_option("--time", cmp.time, "Time slice of a panel");
  seed_option(cmp_cmd, cmp.seed);
  cmp.link.add_to(cmp_cmd);
  cmp.sampler.add_to(cmp_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    print_error(err, "usage_error", e.what());
    return 2;
  }

  if (print_config) {
    out << app.config_to_str(true, true);
    return 0;
  }

  try {
    if (*fit_cmd)
      cmd_fit(fit, err);
    else if (*sim_cmd)
      cmd_simulate(sim);
    else if (*study_cmd)
      cmd_study(study);
    else if (*fc_cmd)
      cmd_forecast(fc, err);
    else if (*cmp_cmd)
      cmd_compare(cmp, err);
    else {
      print_error(err, "usage_error", "a subcommand is required\n" + app.help());
      return 2;
    }
  } catch (const Error &e) {
    print_error(err, e.code(), e.what());
    return 1;
  } catch (const std::exception &e) {
    print_error(err, "internal_error", e.what());
    return 1;
  }
  return 0;
}

} // namespace arealrisk::cli

#endif // AREALRISK_TOOLS_CLI_HPP

#ifndef AREALRISK_TESTS_HELPERS_HPP
#define AREALRISK_TESTS_HELPERS_HPP

#include "arealrisk/arealrisk.hpp"

#include <random>
#include <string>
#include <vector>

namespace testing_support {

inline std::vector<std::string> ids(std::size_t n, const std::string &prefix = "R") {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

/// Connected random graph: a random spanning tree plus extra edges with
/// probability `extra`. Returned as a dense matrix and a graph.
struct RandomGraph {
  std::vector<std::vector<int>> w;
  arealrisk::AdjacencyGraph graph;
};

inline RandomGraph random_graph(std::size_t n, std::mt19937_64 &rng, double extra = 0.3) {
  std::vector<std::vector<int>> w(n, std::vector<int>(n, 0));
  for (std::size_t i = 1; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> parent(0, i - 1);
    const auto j = parent(rng);
    w[i][j] = w[j][i] = 1;
  }
  std::bernoulli_distribution coin(extra);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (coin(rng)) w[i][j] = w[j][i] = 1;
  return {w, arealrisk::AdjacencyGraph::from_matrix(ids(n), w)};
}

inline arealrisk::AdjacencyGraph path_graph(std::size_t n) {
  std::vector<arealrisk::AdjacencyGraph::Edge> edges;
  const auto names = ids(n);
  for (std::size_t i = 0; i + 1 < n; ++i) edges.emplace_back(names[i], names[i + 1]);
  return arealrisk::AdjacencyGraph::from_edges(names, edges);
}

/// Fast sampler settings for tests that only need a short chain.
inline arealrisk::SamplerConfig short_chain(std::uint64_t seed, std::size_t iterations = 3000,
                                            std::size_t burn_in = 1000) {
  arealrisk::SamplerConfig c;
  c.n_iterations = iterations;
  c.burn_in = burn_in;
  c.thin = 2;
  c.seed = seed;
  return c;
}

} // namespace testing_support

#endif // AREALRISK_TESTS_HELPERS_HPP

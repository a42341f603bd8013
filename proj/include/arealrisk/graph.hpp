#ifndef AREALRISK_GRAPH_HPP
#define AREALRISK_GRAPH_HPP

#include "arealrisk/csv.hpp"
#include "arealrisk/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace arealrisk {

/// Binary, symmetric neighbor structure over areal units.
///
/// Stored in compressed-row form. Construction enforces symmetry, the absence
/// of self-loops and that every region has at least one neighbor, so the
/// neighbor mean used by the CAR full conditional is always defined. The
/// object is immutable after construction.
class AdjacencyGraph {
public:
  using Edge = std::pair<std::string, std::string>;

  AdjacencyGraph() = default;

  /// Builds a graph from an undirected edge list. `region_ids` fixes the
  /// region order; regions that appear only in `edges` are appended in order
  /// of first appearance. Duplicate and reversed edges collapse to one.
  static AdjacencyGraph from_edges(std::vector<std::string> region_ids,
                                   const std::vector<Edge> &edges) {
    AdjacencyGraph g;
    for (auto &id : region_ids) g.add_region(id);
    for (const auto &[a, b] : edges) {
      g.add_region(a);
      g.add_region(b);
    }
    const std::size_t n = g.ids_.size();
    std::vector<std::vector<std::size_t>> lists(n);
    for (const auto &[a, b] : edges) {
      const auto i = g.index_.at(a);
      const auto j = g.index_.at(b);
      if (i == j) throw StructuralError("self-loop on region '" + a + "'");
      lists[i].push_back(j);
      lists[j].push_back(i);
    }
    g.finalize(std::move(lists));
    return g;
  }

  /// Builds a graph from a dense 0/1 matrix; `w[i][j]` must equal `w[j][i]`.
  static AdjacencyGraph from_matrix(std::vector<std::string> region_ids,
                                    const std::vector<std::vector<int>> &w) {
    const std::size_t n = region_ids.size();
    if (w.size() != n) throw StructuralError("adjacency matrix is not square");
    AdjacencyGraph g;
    for (auto &id : region_ids) {
      if (g.index_.count(id)) throw StructuralError("duplicate region id '" + id + "'");
      g.add_region(id);
    }
    std::vector<std::vector<std::size_t>> lists(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (w[i].size() != n) throw StructuralError("adjacency matrix is not square");
      for (std::size_t j = 0; j < n; ++j) {
        const int v = w[i][j];
        if (v != 0 && v != 1)
          throw StructuralError("adjacency weights must be 0 or 1 (region '" +
                                region_ids[i] + "')");
        if (w[j].size() != n || v != w[j][i])
          throw StructuralError("adjacency matrix is not symmetric at ('" + region_ids[i] +
                                "', '" + region_ids[j] + "')");
        if (i == j && v) throw StructuralError("self-loop on region '" + region_ids[i] + "'");
        if (v) lists[i].push_back(j);
      }
    }
    g.finalize(std::move(lists));
    return g;
  }

  /// Rook-contiguity lattice with ids "r<row>c<col>", row-major order.
  static AdjacencyGraph lattice(std::size_t rows, std::size_t cols) {
    std::vector<std::string> ids;
    std::vector<Edge> edges;
    auto name = [](std::size_t r, std::size_t c) {
      return "r" + std::to_string(r) + "c" + std::to_string(c);
    };
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        ids.push_back(name(r, c));
        if (c + 1 < cols) edges.emplace_back(name(r, c), name(r, c + 1));
        if (r + 1 < rows) edges.emplace_back(name(r, c), name(r + 1, c));
      }
    return from_edges(std::move(ids), edges);
  }

  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string> &region_ids() const noexcept { return ids_; }
  const std::string &region_id(std::size_t i) const { return ids_.at(i); }

  std::optional<std::size_t> index_of(const std::string &id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::span<const std::size_t> neighbors(std::size_t i) const {
    return {adjacency_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }

  /// w_{i+}
  std::size_t degree(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }

  bool adjacent(std::size_t i, std::size_t j) const {
    const auto nb = neighbors(i);
    return std::binary_search(nb.begin(), nb.end(), j);
  }

  std::size_t edge_count() const noexcept { return adjacency_.size() / 2; }
  std::size_t component_count() const noexcept { return components_; }
  bool connected() const noexcept { return components_ == 1; }

  /// Undirected edges as (i, j) index pairs with i < j.
  std::vector<std::pair<std::size_t, std::size_t>> edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    out.reserve(edge_count());
    for (std::size_t i = 0; i < size(); ++i)
      for (auto j : neighbors(i))
        if (i < j) out.emplace_back(i, j);
    return out;
  }

private:
  void add_region(const std::string &id) {
    if (index_.emplace(id, ids_.size()).second) ids_.push_back(id);
  }

  void finalize(std::vector<std::vector<std::size_t>> lists) {
    const std::size_t n = ids_.size();
    if (n == 0) throw StructuralError("adjacency structure has no regions");
    offsets_.assign(n + 1, 0);
    adjacency_.clear();
    for (std::size_t i = 0; i < n; ++i) {
      auto &l = lists[i];
      std::sort(l.begin(), l.end());
      l.erase(std::unique(l.begin(), l.end()), l.end());
      if (l.empty()) throw StructuralError("region '" + ids_[i] + "' has no neighbors (island)");
      adjacency_.insert(adjacency_.end(), l.begin(), l.end());
      offsets_[i + 1] = adjacency_.size();
    }
    components_ = count_components();
  }

  std::size_t count_components() const {
    std::vector<std::size_t> label(size(), size());
    std::size_t count = 0;
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < size(); ++s) {
      if (label[s] != size()) continue;
      label[s] = count;
      stack.push_back(s);
      while (!stack.empty()) {
        const auto v = stack.back();
        stack.pop_back();
        for (auto u : neighbors(v))
          if (label[u] == size()) {
            label[u] = count;
            stack.push_back(u);
          }
      }
      ++count;
    }
    return count;
  }

  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::size_t> adjacency_;
  std::size_t components_ = 0;
};

/// Parses either an edge list (header `from,to`; a row with an empty `to`
/// declares a region without adding an edge) or a square 0/1 matrix whose
/// header row and first column carry the region ids.
inline AdjacencyGraph read_adjacency(std::istream &in, const std::string &source = "<stream>") {
  const auto table = csv::read(in, source);
  if (table.header.size() == 2 && table.header[0] == "from" && table.header[1] == "to") {
    std::vector<std::string> ids;
    std::vector<AdjacencyGraph::Edge> edges;
    for (const auto &row : table.rows) {
      if (row[0].empty()) throw StructuralError(source + ": empty 'from' field");
      ids.push_back(row[0]);
      if (!row[1].empty()) {
        ids.push_back(row[1]);
        edges.emplace_back(row[0], row[1]);
      }
    }
    std::vector<std::string> unique_ids;
    std::unordered_map<std::string, bool> seen;
    for (auto &id : ids)
      if (seen.emplace(id, true).second) unique_ids.push_back(id);
    return AdjacencyGraph::from_edges(std::move(unique_ids), edges);
  }

  std::vector<std::string> ids(table.header.begin() + 1, table.header.end());
  if (ids.size() != table.rows.size())
    throw StructuralError(source + ": adjacency matrix has " + std::to_string(ids.size()) +
                          " columns but " + std::to_string(table.rows.size()) + " rows");
  std::vector<std::vector<int>> w(ids.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto &row = table.rows[r];
    if (row[0] != ids[r])
      throw StructuralError(source + ": row " + std::to_string(r + 1) + " is '" + row[0] +
                            "' but column " + std::to_string(r + 1) + " is '" + ids[r] + "'");
    for (std::size_t c = 1; c < row.size(); ++c)
      w[r].push_back(static_cast<int>(
          csv::parse_int(row[c], source + ":" + std::to_string(table.line_numbers[r]))));
  }
  return AdjacencyGraph::from_matrix(std::move(ids), w);
}

inline AdjacencyGraph load_adjacency(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_adjacency(in, path.string());
}

/// Writes the graph as a `from,to` edge list: one declaration row per region
/// (fixing the region order), then each undirected edge once.
inline void write_adjacency(const AdjacencyGraph &graph, std::ostream &out) {
  out << "from,to\n";
  for (const auto &id : graph.region_ids()) out << id << ",\n";
  for (const auto &[i, j] : graph.edges())
    out << graph.region_id(i) << ',' << graph.region_id(j) << '\n';
}

/// Mean of `phi` over the neighbors of region `i`.
inline double neighbor_mean(const AdjacencyGraph &graph, std::span<const double> phi,
                            std::size_t i) {
  double sum = 0.0;
  for (auto j : graph.neighbors(i)) sum += phi[j];
  return sum / static_cast<double>(graph.degree(i));
}

/// S(phi): sum over adjacent pairs (each counted once) of squared differences.
inline double car_pairwise_sum(const AdjacencyGraph &graph, std::span<const double> phi) {
  double s = 0.0;
  for (std::size_t i = 0; i < graph.size(); ++i)
    for (auto j : graph.neighbors(i))
      if (j < i) {
        const double d = phi[i] - phi[j];
        s += d * d;
      }
  return s;
}

/// Log of the intrinsic CAR density up to its normalizing constant:
/// (I/2) log tau - (tau/2) S(phi).
inline double car_log_kernel(const AdjacencyGraph &graph, std::span<const double> phi,
                             double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw DomainError("CAR precision tau must be positive and finite");
  const double n = static_cast<double>(graph.size());
  return 0.5 * n * std::log(tau) - 0.5 * tau * car_pairwise_sum(graph, phi);
}

} // namespace arealrisk

#endif // AREALRISK_GRAPH_HPP

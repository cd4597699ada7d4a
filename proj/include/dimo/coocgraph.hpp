#pragma once

// Global item co-occurrence graph: symmetric session-level pair counts, the
// row-normalized weight matrix A, neighbor sets and constraint-set sampling.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dimo/corpus.hpp"
#include "dimo/numcore.hpp"

namespace dimo {

/// Symmetric pair counts, zero on the diagonal. Stored once per unordered pair.
class CoocCounts {
 public:
  using Pair = std::pair<ItemId, ItemId>;

  std::uint64_t count(ItemId i, ItemId k) const {
    if (i == k) return 0;
    auto it = counts_.find(key(i, k));
    return it == counts_.end() ? 0 : it->second;
  }

  void add(ItemId i, ItemId k, std::uint64_t amount = 1) {
    if (i == k) return;
    counts_[key(i, k)] += amount;
  }

  /// Pairs (i < k) with their counts, ordered by (i, k).
  const std::map<Pair, std::uint64_t>& pairs() const { return counts_; }

  std::size_t max_item_plus_one() const {
    std::size_t n = 0;
    for (const auto& [p, c] : counts_) n = std::max(n, p.second + 1);
    return n;
  }

  friend bool operator==(const CoocCounts&, const CoocCounts&) = default;

 private:
  static Pair key(ItemId i, ItemId k) { return i < k ? Pair{i, k} : Pair{k, i}; }

  std::map<Pair, std::uint64_t> counts_;
};

/// Every unordered pair of distinct items present in a session adds 1,
/// however often either item repeats within it.
inline CoocCounts count_pairs(std::span<const Session> sessions) {
  CoocCounts counts;
  std::vector<ItemId> distinct;
  for (const Session& s : sessions) {
    distinct.assign(s.items.begin(), s.items.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    for (std::size_t a = 0; a < distinct.size(); ++a)
      for (std::size_t b = a + 1; b < distinct.size(); ++b) counts.add(distinct[a], distinct[b]);
  }
  return counts;
}

inline CoocCounts count_pairs(const std::vector<Session>& sessions) {
  return count_pairs(std::span<const Session>(sessions));
}

class CoocGraph {
 public:
  CoocGraph() = default;

  /// a_ik = count(i,k) / sum_j count(i,j); rows without neighbors stay zero.
  CoocGraph(CoocCounts counts, std::size_t n)
      : counts_(std::move(counts)), weights_(Tensor::zeros(std::max<std::size_t>(n, 1), std::max<std::size_t>(n, 1))),
        neighbors_(n), n_(n) {
    std::vector<double> row_total(n, 0.0);
    for (const auto& [pair, c] : counts_.pairs()) {
      const auto [i, k] = pair;
      if (k >= n) {
        throw DataError("co-occurrence pair (" + std::to_string(i) + "," + std::to_string(k) +
                        ") outside catalog of " + std::to_string(n) + " items");
      }
      neighbors_[i].push_back(k);
      neighbors_[k].push_back(i);
      row_total[i] += static_cast<double>(c);
      row_total[k] += static_cast<double>(c);
    }
    for (ItemId i = 0; i < n; ++i) {
      std::sort(neighbors_[i].begin(), neighbors_[i].end());
      for (ItemId k : neighbors_[i])
        weights_(i, k) = static_cast<double>(counts_.count(i, k)) / row_total[i];
    }
  }

  std::size_t n() const { return n_; }
  const CoocCounts& counts() const { return counts_; }
  std::uint64_t count(ItemId i, ItemId k) const { return counts_.count(i, k); }
  /// Dense n x n matrix A.
  const Tensor& matrix() const { return weights_; }
  double weight(ItemId i, ItemId k) const { return weights_(i, k); }
  /// N_i, ascending.
  const std::vector<ItemId>& neighbors(ItemId i) const { return neighbors_.at(i); }

 private:
  CoocCounts counts_;
  Tensor weights_;
  std::vector<std::vector<ItemId>> neighbors_;
  std::size_t n_ = 0;
};

inline CoocGraph build_matrix(CoocCounts counts, std::size_t n) { return CoocGraph(std::move(counts), n); }

/// N_s: union of the neighbor sets of the given prefix items, ascending.
inline std::vector<ItemId> session_union(std::span<const ItemId> prefix, const CoocGraph& graph) {
  std::vector<ItemId> out;
  for (ItemId i : prefix) {
    const auto& nb = graph.neighbors(i);
    out.insert(out.end(), nb.begin(), nb.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Whether `label` is in N_s of `prefix`. When the session (prefix + label)
/// was itself counted into the graph, its own contribution is discounted so
/// that only co-occurrence observed in other sessions counts.
inline bool label_in_union(std::span<const ItemId> prefix, ItemId label, const CoocGraph& graph,
                           bool session_in_graph = false) {
  for (ItemId i : prefix) {
    if (i == label) continue;
    const std::uint64_t own = session_in_graph ? 1 : 0;
    if (graph.count(i, label) > own) return true;
  }
  return false;
}

struct ConstraintSet {
  ItemId item = 0;
  std::vector<ItemId> positives;
  std::vector<ItemId> negatives;
  /// N_i is empty; no constraint applies.
  bool exempt = false;
  /// Fewer than l non-neighbors existed; the whole complement was taken.
  bool short_negatives = false;
};

/// Top-l neighbors by count (ties by id), ascending-id order within equal counts.
inline std::vector<ItemId> top_positives(ItemId item, const CoocGraph& graph, std::size_t l) {
  std::vector<ItemId> pos = graph.neighbors(item);
  std::stable_sort(pos.begin(), pos.end(), [&](ItemId a, ItemId b) {
    return graph.count(item, a) > graph.count(item, b);
  });
  if (pos.size() > l) pos.resize(l);
  return pos;
}

template <class Rng>
ConstraintSet sample_constraint_sets(ItemId item, const CoocGraph& graph, std::size_t l, Rng& rng) {
  if (l == 0) throw std::invalid_argument("constraint set size l must be >= 1");
  ConstraintSet set;
  set.item = item;
  const auto& nb = graph.neighbors(item);
  if (nb.empty()) {
    set.exempt = true;
    return set;
  }
  set.positives = top_positives(item, graph, l);
  std::vector<ItemId> complement;
  complement.reserve(graph.n());
  for (ItemId k = 0; k < graph.n(); ++k) {
    if (k != item && !std::binary_search(nb.begin(), nb.end(), k)) complement.push_back(k);
  }
  if (complement.size() <= l) {
    set.short_negatives = complement.size() < l;
    set.negatives = std::move(complement);
    return set;
  }
  // Partial Fisher-Yates.
  for (std::size_t j = 0; j < l; ++j) {
    std::uniform_int_distribution<std::size_t> pick(j, complement.size() - 1);
    std::swap(complement[j], complement[pick(rng)]);
  }
  complement.resize(l);
  set.negatives = std::move(complement);
  return set;
}

inline ConstraintSet sample_constraint_sets(ItemId item, const CoocGraph& graph, std::size_t l,
                                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_constraint_sets(item, graph, l, rng);
}

// ---------------------------------------------------------------------------
// Binary sidecar: "DCOG", u8 version, u64 n, u64 pair count, then
// (u64 i, u64 k, u64 count) triples with i < k, little-endian.

inline constexpr std::uint8_t kGraphFormatVersion = 1;

inline void write_graph(const std::string& path, const CoocGraph& graph) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write("DCOG", 4);
  detail::write_le<std::uint8_t>(out, kGraphFormatVersion);
  detail::write_le<std::uint64_t>(out, graph.n());
  detail::write_le<std::uint64_t>(out, graph.counts().pairs().size());
  for (const auto& [pair, c] : graph.counts().pairs()) {
    detail::write_le<std::uint64_t>(out, pair.first);
    detail::write_le<std::uint64_t>(out, pair.second);
    detail::write_le<std::uint64_t>(out, c);
  }
}

inline CoocGraph read_graph(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string(magic, 4) != "DCOG") throw FormatError(path + ": not a graph sidecar");
  const auto version = detail::read_le<std::uint8_t>(in, "version");
  if (version != kGraphFormatVersion) throw FormatError(path + ": unsupported graph version " + std::to_string(version));
  const auto n = detail::read_le<std::uint64_t>(in, "n");
  const auto pairs = detail::read_le<std::uint64_t>(in, "pair count");
  CoocCounts counts;
  for (std::uint64_t p = 0; p < pairs; ++p) {
    const auto i = detail::read_le<std::uint64_t>(in, "pair");
    const auto k = detail::read_le<std::uint64_t>(in, "pair");
    const auto c = detail::read_le<std::uint64_t>(in, "count");
    if (i >= k || k >= n) throw FormatError(path + ": invalid pair in graph sidecar");
    counts.add(i, k, c);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes in graph sidecar");
  return CoocGraph(std::move(counts), n);
}

/// Human-readable summary with the `top` most frequent pairs. `label` maps a
/// dense id to its display id.
template <class Label>
std::string graph_summary(const CoocGraph& graph, Label&& label, std::size_t top = 20) {
  std::vector<std::pair<CoocCounts::Pair, std::uint64_t>> pairs(graph.counts().pairs().begin(),
                                                                graph.counts().pairs().end());
  std::stable_sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::size_t with_neighbors = 0;
  for (ItemId i = 0; i < graph.n(); ++i) with_neighbors += graph.neighbors(i).empty() ? 0 : 1;
  std::ostringstream os;
  os << "items: " << graph.n() << "\n"
     << "co-occurring pairs: " << pairs.size() << "\n"
     << "items with neighbors: " << with_neighbors << "\n"
     << "top pairs:\n";
  for (std::size_t r = 0; r < std::min(top, pairs.size()); ++r) {
    os << "  " << label(pairs[r].first.first) << "\t" << label(pairs[r].first.second) << "\t"
       << pairs[r].second << "\n";
  }
  return os.str();
}

}  // namespace dimo

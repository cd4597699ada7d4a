#pragma once

// Synthetic corpora with a planted cause per session.
//
// Co-occurrence sessions end in the partner of a planted pair that recurs
// across many sessions. Modality sessions are [x, y] where x and y share
// attribute tokens and the pair {x, y} appears in no other session, so the
// label never co-occurs with the prefix elsewhere.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dimo/coocgraph.hpp"
#include "dimo/corpus.hpp"
#include "dimo/errors.hpp"

namespace dimo {

enum class Cause { cooccurrence, modality };

inline const char* to_string(Cause c) { return c == Cause::cooccurrence ? "cooccurrence" : "modality"; }

struct PlantedRuleSpec {
  std::size_t n_items = 50;
  std::size_t n_sessions = 500;
  std::vector<std::pair<ItemId, ItemId>> cooc_pairs;
  std::vector<std::vector<ItemId>> attribute_groups;
  double mix_ratio = 0.5;
  std::uint64_t seed = 7;

  /// Eight co-occurrence items in four pairs; the remaining items split into
  /// attribute groups of about 14.
  static PlantedRuleSpec standard(std::size_t n_items = 50, std::size_t n_sessions = 500, double mix_ratio = 0.5,
                                  std::uint64_t seed = 7) {
    PlantedRuleSpec spec;
    spec.n_items = n_items;
    spec.n_sessions = n_sessions;
    spec.mix_ratio = mix_ratio;
    spec.seed = seed;
    const std::size_t n_cooc = std::min<std::size_t>(8, n_items) / 2 * 2;
    for (ItemId i = 0; i + 1 < n_cooc; i += 2) spec.cooc_pairs.emplace_back(i, i + 1);
    const std::size_t n_mod = n_items - n_cooc;
    const std::size_t groups = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(n_mod / 14.0)));
    spec.attribute_groups.resize(groups);
    for (std::size_t j = 0; j < n_mod; ++j) spec.attribute_groups[j * groups / n_mod].push_back(n_cooc + j);
    return spec;
  }
};

struct PlantedCorpus {
  SessionCorpus corpus;
  /// Parallel to corpus.sessions.
  std::vector<Cause> causes;
};

inline PlantedCorpus generate(const PlantedRuleSpec& spec) {
  auto infeasible = [](const std::string& why) { throw DataError("infeasible planted-rule spec: " + why); };
  if (!(spec.mix_ratio >= 0.0 && spec.mix_ratio <= 1.0)) infeasible("mix_ratio must lie in [0, 1]");
  std::vector<int> owner(spec.n_items, 0);
  for (const auto& [a, b] : spec.cooc_pairs) {
    if (a >= spec.n_items || b >= spec.n_items || a == b) infeasible("bad co-occurrence pair");
    if (owner[a]++ || owner[b]++) infeasible("items may belong to one planted pair or group only");
  }
  for (const auto& g : spec.attribute_groups) {
    if (g.size() < 2) infeasible("attribute groups need at least two items");
    for (ItemId i : g) {
      if (i >= spec.n_items) infeasible("group item out of range");
      if (owner[i]++) infeasible("items may belong to one planted pair or group only");
    }
  }

  const auto n_mod = static_cast<std::size_t>(std::lround(spec.mix_ratio * static_cast<double>(spec.n_sessions)));
  const std::size_t n_cooc = spec.n_sessions - n_mod;
  if (n_cooc > 0 && n_cooc < 2 * spec.cooc_pairs.size()) {
    infeasible("each planted pair needs at least two co-occurrence sessions (" + std::to_string(n_cooc) +
               " sessions for " + std::to_string(spec.cooc_pairs.size()) + " pairs)");
  }

  std::mt19937_64 rng(spec.seed);
  std::vector<std::pair<ItemId, ItemId>> edges;
  for (const auto& g : spec.attribute_groups)
    for (std::size_t a = 0; a < g.size(); ++a)
      for (std::size_t b = a + 1; b < g.size(); ++b) edges.emplace_back(g[a], g[b]);
  if (n_mod > edges.size()) {
    infeasible(std::to_string(n_mod) + " modality sessions need distinct within-group pairs, only " +
               std::to_string(edges.size()) + " exist");
  }
  std::shuffle(edges.begin(), edges.end(), rng);

  std::vector<std::pair<Session, Cause>> drafted;
  std::vector<std::size_t> out_degree(spec.n_items, 0);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t s = 0; s < n_mod; ++s) {
    auto [x, y] = edges[s];
    if (out_degree[y] < out_degree[x] || (out_degree[y] == out_degree[x] && coin(rng))) std::swap(x, y);
    ++out_degree[x];
    drafted.push_back({Session{0, {x, y}, 0}, Cause::modality});
  }
  if (n_cooc > 0 && spec.cooc_pairs.empty()) infeasible("co-occurrence sessions requested without planted pairs");
  for (std::size_t s = 0; s < n_cooc; ++s) {
    const std::size_t p = s % spec.cooc_pairs.size();
    const auto [a, b] = spec.cooc_pairs[p];
    Session session{0, {a, b}, 0};
    if (spec.cooc_pairs.size() > 1 && coin(rng)) {
      std::uniform_int_distribution<std::size_t> other(0, spec.cooc_pairs.size() - 2);
      std::size_t q = other(rng);
      if (q >= p) ++q;
      const auto [c, d] = spec.cooc_pairs[q];
      session.items.insert(session.items.begin(), coin(rng) ? c : d);
    }
    drafted.push_back({std::move(session), Cause::cooccurrence});
  }
  std::shuffle(drafted.begin(), drafted.end(), rng);

  PlantedCorpus out;
  for (std::size_t i = 0; i < drafted.size(); ++i) {
    drafted[i].first.session_id = static_cast<std::int64_t>(i);
    drafted[i].first.timestamp = 1'700'000'000 + 60 * static_cast<std::int64_t>(i);
    out.corpus.sessions.push_back(std::move(drafted[i].first));
    out.causes.push_back(drafted[i].second);
  }

  std::vector<std::size_t> group_of(spec.n_items, spec.attribute_groups.size());
  for (std::size_t g = 0; g < spec.attribute_groups.size(); ++g)
    for (ItemId i : spec.attribute_groups[g]) group_of[i] = g;
  for (ItemId i = 0; i < spec.n_items; ++i) {
    Item item;
    item.item_id = i;
    item.source_id = static_cast<std::int64_t>(i);
    const std::string id = std::to_string(i);
    if (group_of[i] < spec.attribute_groups.size()) {
      const std::string g = std::to_string(group_of[i]);
      item.text_tokens = {"attr" + g, "item" + id};
      item.generated_tokens = {"style" + g};
    } else {
      item.text_tokens = {"sku" + id, "brand" + id};
      item.generated_tokens = {"shape" + id};
    }
    out.corpus.items.push_back(std::move(item));
  }

  // Every cause must agree with the N_s branch rule on the full corpus.
  const CoocGraph graph(count_pairs(out.corpus.sessions), spec.n_items);
  for (std::size_t i = 0; i < out.causes.size(); ++i) {
    const Session& s = out.corpus.sessions[i];
    const bool in_ns = label_in_union(s.prefix(), s.label(), graph, true);
    if (in_ns != (out.causes[i] == Cause::cooccurrence)) {
      infeasible("session " + std::to_string(s.session_id) + " violates its planted cause");
    }
  }
  return out;
}

inline void write_causes(const std::string& path, const PlantedCorpus& planted) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (std::size_t i = 0; i < planted.causes.size(); ++i) {
    out << nlohmann::json{{"session_id", planted.corpus.sessions[i].session_id},
                          {"cause", to_string(planted.causes[i])}}
               .dump()
        << '\n';
  }
}

}  // namespace dimo

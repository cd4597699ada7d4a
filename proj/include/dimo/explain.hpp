#pragma once

// Template-based explanations for a recommended item.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dimo/coocgraph.hpp"
#include "dimo/corpus.hpp"
#include "dimo/itemrepr.hpp"

namespace dimo {

struct ExplainConfig {
  std::uint64_t count_threshold = 10;  // eta
  double sim_threshold = 0.8;          // gamma

  void validate() const {
    if (count_threshold < 1) throw std::invalid_argument("count_threshold must be >= 1");
    if (!(sim_threshold > 0.0 && sim_threshold <= 1.0)) throw std::invalid_argument("sim_threshold must lie in (0, 1]");
  }
};

enum class ExplanationKind { cooccurrence, feature, none };

inline const char* to_string(ExplanationKind k) {
  switch (k) {
    case ExplanationKind::cooccurrence: return "cooccurrence";
    case ExplanationKind::feature: return "feature";
    case ExplanationKind::none: return "none";
  }
  return "none";
}

struct Explanation {
  ExplanationKind kind = ExplanationKind::none;
  std::optional<ItemId> anchor_item;
  ItemId rec_item = 0;
  std::optional<std::uint64_t> kappa;
  std::optional<std::pair<std::string, std::string>> feature_pair;
  double similarity = 0.0;
  std::string text;
};

using ItemNamer = std::function<std::string(ItemId)>;

inline std::string default_item_name(ItemId id) { return "item " + std::to_string(id); }

inline constexpr const char* kFallbackExplanation = "Recommended based on your recent activity.";

inline std::string render_cooccurrence(std::uint64_t kappa, const std::string& anchor, const std::string& rec) {
  return "There are " + std::to_string(kappa) + " people frequently buying " + anchor + " and " + rec +
         " together. You clicked " + anchor + ", so we show you " + rec + ".";
}

inline std::string render_feature(const std::string& anchor, const std::string& f1, const std::string& rec,
                                  const std::string& f2) {
  return "You have bought " + anchor + " with (" + f1 + "), hence we recommend " + rec + " also possessing (" + f2 +
         ").";
}

/// The session item with the largest count(rec, x) above `eta`; ties go to
/// the most recent position.
inline std::optional<Explanation> cooc_explanation(std::span<const ItemId> session, ItemId rec,
                                                   const CoocCounts& counts, std::uint64_t eta,
                                                   const ItemNamer& name = default_item_name) {
  std::optional<std::size_t> best;
  std::uint64_t best_count = 0;
  for (std::size_t pos = 0; pos < session.size(); ++pos) {
    const std::uint64_t c = counts.count(rec, session[pos]);
    if (c > eta && (!best || c >= best_count)) {
      best = pos;
      best_count = c;
    }
  }
  if (!best) return std::nullopt;
  Explanation e;
  e.kind = ExplanationKind::cooccurrence;
  e.anchor_item = session[*best];
  e.rec_item = rec;
  e.kappa = best_count;
  e.text = render_cooccurrence(best_count, name(*e.anchor_item), name(rec));
  return e;
}

/// Most similar token pair (f1 from a session item, f2 from `rec`) whose
/// cosine exceeds `gamma`; ties resolve to the lexicographically smallest
/// (f1, f2). Session positions holding `rec` itself are skipped. The anchor
/// is the most recent session item carrying f1.
inline std::optional<Explanation> feature_explanation(std::span<const ItemId> session, ItemId rec,
                                                      std::span<const Item> catalog, const TokenEncoder& encoder,
                                                      double gamma, const ItemNamer& name = default_item_name) {
  const auto rec_tokens = catalog[rec].all_tokens();
  std::optional<std::pair<std::string, std::string>> best;
  std::size_t best_pos = 0;
  double best_sim = 0.0;
  for (std::size_t pos = 0; pos < session.size(); ++pos) {
    if (session[pos] == rec) continue;
    for (const auto& f1 : catalog[session[pos]].all_tokens()) {
      for (const auto& f2 : rec_tokens) {
        const double sim = cosine(encoder.encode(f1), encoder.encode(f2));
        if (!(sim > gamma)) continue;
        const std::pair<std::string, std::string> cand{f1, f2};
        if (!best || sim > best_sim || (sim == best_sim && cand < *best)) {
          best = cand;
          best_sim = sim;
          best_pos = pos;
        } else if (sim == best_sim && cand == *best) {
          best_pos = pos;
        }
      }
    }
  }
  if (!best) return std::nullopt;
  Explanation e;
  e.kind = ExplanationKind::feature;
  e.anchor_item = session[best_pos];
  e.rec_item = rec;
  e.feature_pair = best;
  e.similarity = best_sim;
  e.text = render_feature(name(*e.anchor_item), best->first, name(rec), best->second);
  return e;
}

/// Co-occurrence template when any session item co-occurs with `rec` more
/// than eta times, else the feature template when a token pair exceeds gamma,
/// else a fixed fallback.
inline Explanation select_template(std::span<const ItemId> session, ItemId rec, const CoocCounts& counts,
                                   std::span<const Item> catalog, const TokenEncoder& encoder,
                                   const ExplainConfig& config, const ItemNamer& name = default_item_name) {
  config.validate();
  if (auto e = cooc_explanation(session, rec, counts, config.count_threshold, name)) return *e;
  if (auto e = feature_explanation(session, rec, catalog, encoder, config.sim_threshold, name)) return *e;
  Explanation e;
  e.rec_item = rec;
  e.text = kFallbackExplanation;
  return e;
}

inline nlohmann::json explanation_json(const Explanation& e, const std::function<std::int64_t(ItemId)>& id_of) {
  nlohmann::json j;
  j["kind"] = to_string(e.kind);
  j["rec_item"] = id_of(e.rec_item);
  j["anchor_item"] = e.anchor_item ? nlohmann::json(id_of(*e.anchor_item)) : nlohmann::json(nullptr);
  j["kappa"] = e.kappa ? nlohmann::json(*e.kappa) : nlohmann::json(nullptr);
  j["feature_pair"] = e.feature_pair ? nlohmann::json::array({e.feature_pair->first, e.feature_pair->second})
                                     : nlohmann::json(nullptr);
  j["text"] = e.text;
  return j;
}

}  // namespace dimo

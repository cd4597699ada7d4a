#pragma once

// Random explanation scenarios and an exhaustive reference for template
// selection, shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dimo/explain.hpp"

namespace dimo::testing {

struct ExplainCase {
  std::vector<Item> catalog;
  CoocCounts counts;
  TokenEncoder encoder = TokenEncoder::hashed(3);
  std::vector<ItemId> session;
  ItemId rec = 0;
  ExplainConfig config;
};

struct ExpectedExplanation {
  ExplanationKind kind = ExplanationKind::none;
  std::optional<ItemId> anchor;
  std::uint64_t kappa = 0;
  std::string f1, f2;
};

/// Six items over a six-token vocabulary. Token vectors are drawn so that
/// similarities straddle typical thresholds; counts straddle eta.
inline ExplainCase make_explain_case(std::mt19937_64& rng) {
  ExplainCase c;
  const std::vector<std::string> vocab{"NBA", "jersey", "red", "cotton", "kids", "sport"};
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::pair<std::string, std::vector<double>>> vectors;
  const std::vector<double> base{g(rng), g(rng), g(rng)};
  for (const auto& tok : vocab) {
    const double spread = std::uniform_real_distribution<double>(0.1, 1.5)(rng);
    vectors.push_back({tok, {base[0] + spread * g(rng), base[1] + spread * g(rng), base[2] + spread * g(rng)}});
  }
  c.encoder = TokenEncoder::from_vectors(vectors);
  std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
  for (ItemId i = 0; i < 6; ++i) {
    Item item{i, static_cast<std::int64_t>(i), {}, {}, {}};
    const std::size_t nt = 1 + rng() % 2, ng = rng() % 2;
    for (std::size_t t = 0; t < nt; ++t) item.text_tokens.push_back(vocab[pick(rng)]);
    for (std::size_t t = 0; t < ng; ++t) item.generated_tokens.push_back(vocab[pick(rng)]);
    c.catalog.push_back(item);
  }
  for (ItemId i = 0; i < 6; ++i)
    for (ItemId k = i + 1; k < 6; ++k) {
      const auto n = std::uniform_int_distribution<std::uint64_t>(0, 20)(rng);
      if (n) c.counts.add(i, k, n);
    }
  const std::size_t len = 1 + rng() % 4;
  for (std::size_t p = 0; p < len; ++p) c.session.push_back(rng() % 6);
  c.rec = rng() % 6;
  c.config.count_threshold = std::uniform_int_distribution<std::uint64_t>(8, 18)(rng);
  c.config.sim_threshold = std::uniform_real_distribution<double>(0.5, 0.99)(rng);
  return c;
}

/// Scans every session position and every token pair directly.
inline ExpectedExplanation exhaustive_explanation(const ExplainCase& c) {
  ExpectedExplanation e;
  std::uint64_t best = 0;
  for (std::size_t p = 0; p < c.session.size(); ++p) {
    const std::uint64_t n = c.counts.count(c.rec, c.session[p]);
    if (n > c.config.count_threshold && n >= best) {
      best = n;
      e.anchor = c.session[p];
    }
  }
  if (e.anchor) {
    e.kind = ExplanationKind::cooccurrence;
    e.kappa = best;
    return e;
  }
  double best_sim = -2.0;
  const auto rec_tokens = c.catalog[c.rec].all_tokens();
  for (std::size_t p = 0; p < c.session.size(); ++p) {
    if (c.session[p] == c.rec) continue;
    for (const auto& f1 : c.catalog[c.session[p]].all_tokens())
      for (const auto& f2 : rec_tokens) {
        const double s = cosine(c.encoder.encode(f1), c.encoder.encode(f2));
        if (s <= c.config.sim_threshold) continue;
        if (s > best_sim || (s == best_sim && std::pair(f1, f2) < std::pair(e.f1, e.f2))) {
          best_sim = s;
          e.f1 = f1;
          e.f2 = f2;
        }
      }
  }
  if (best_sim < -1.0) return e;
  e.kind = ExplanationKind::feature;
  for (std::size_t p = 0; p < c.session.size(); ++p) {
    if (c.session[p] == c.rec) continue;
    const auto toks = c.catalog[c.session[p]].all_tokens();
    if (std::find(toks.begin(), toks.end(), e.f1) != toks.end()) e.anchor = c.session[p];
  }
  return e;
}

/// Checks the selected explanation against the exhaustive reference,
/// including the rendered text. Returns an empty string on agreement.
inline std::string compare_explanation(const ExplainCase& c, const Explanation& got) {
  const ExpectedExplanation want = exhaustive_explanation(c);
  auto contains = [&](const std::string& s) { return got.text.find(s) != std::string::npos; };
  if (got.kind != want.kind) return std::string("kind ") + to_string(got.kind) + " != " + to_string(want.kind);
  if (got.anchor_item != want.anchor) return "anchor differs";
  switch (want.kind) {
    case ExplanationKind::cooccurrence:
      if (got.kappa != want.kappa) return "kappa differs";
      if (!contains("There are " + std::to_string(want.kappa) + " people frequently buying ") ||
          !contains("together. You clicked ") || !contains(", so we show you "))
        return "template text: " + got.text;
      break;
    case ExplanationKind::feature:
      if (!got.feature_pair || got.feature_pair->first != want.f1 || got.feature_pair->second != want.f2)
        return "feature pair differs";
      if (!contains("You have bought ") || !contains(" with (" + want.f1 + "), hence we recommend ") ||
          !contains(" also possessing (" + want.f2 + ")."))
        return "template text: " + got.text;
      break;
    case ExplanationKind::none:
      if (got.text != kFallbackExplanation) return "fallback text: " + got.text;
      break;
  }
  return {};
}

}  // namespace dimo::testing

#pragma once

// Item-level representations: ID embeddings propagated over the co-occurrence
// graph, the co-occurrence constraint, and mean-pooled token embeddings for
// the modality view.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dimo/coocgraph.hpp"
#include "dimo/corpus.hpp"
#include "dimo/numcore.hpp"

namespace dimo {

/// How ratio losses treat raw cosine similarities.
///
/// `shifted` adds 1 to every similarity (so it lies in [0, 2]) and adds
/// kRatioEpsilon to each denominator. `literal` uses raw cosines; terms whose
/// denominator magnitude falls below kRatioEpsilon are skipped and tallied.
enum class RatioMode { shifted, literal };

inline constexpr double kRatioEpsilon = 1e-8;

struct LossDiagnostics {
  std::size_t skipped_terms = 0;
  std::size_t exempt_items = 0;
};

inline const char* to_string(RatioMode m) { return m == RatioMode::shifted ? "shifted" : "literal"; }

inline RatioMode ratio_mode_from_string(const std::string& s) {
  if (s == "shifted") return RatioMode::shifted;
  if (s == "literal") return RatioMode::literal;
  throw std::invalid_argument("unknown ratio loss mode '" + s + "' (expected shifted|literal)");
}

/// (A + I) applied `steps` times. steps == 0 returns the input.
inline Tensor propagate_ids(const Tensor& table, const Tensor& adjacency, std::size_t steps) {
  Tensor a_plus_i = adjacency;
  for (std::size_t i = 0; i < a_plus_i.rows(); ++i) a_plus_i(i, i) += 1.0;
  Tensor out = table;
  for (std::size_t s = 0; s < steps; ++s) out = matmul(a_plus_i, out);
  return out;
}

inline Var propagate_ids(const Var& table, const Tensor& adjacency, std::size_t steps) {
  if (steps == 0) return table;
  Tensor a_plus_i = adjacency;
  for (std::size_t i = 0; i < a_plus_i.rows(); ++i) a_plus_i(i, i) += 1.0;
  const Var op = table.tape().constant(std::move(a_plus_i));
  Var out = table;
  for (std::size_t s = 0; s < steps; ++s) out = matmul(op, out);
  return out;
}

namespace detail {

// -(num) / (den) with the mode's shift and epsilon; nullopt when a literal
// denominator is too close to zero.
inline std::optional<Var> ratio_term(const Var& attract, const Var& all_sims, RatioMode mode) {
  if (mode == RatioMode::shifted) {
    const Var num = add_scalar(attract, 1.0);
    const Var den = add_scalar(sum(add_scalar(all_sims, 1.0)), kRatioEpsilon);
    return neg(div(num, den));
  }
  const Var den = sum(all_sims);
  if (std::abs(den.item()) < kRatioEpsilon) return std::nullopt;
  return neg(div(attract, den));
}

inline Var mean_of(Tape& tape, const std::vector<Var>& terms) {
  if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
  return scale(sum(concat(terms, 1)), 1.0 / static_cast<double>(terms.size()));
}

}  // namespace detail

/// Co-occurrence constraint averaged over the non-exempt items of `sets`.
///
/// Per item: -(1 + sim(e_i, mean positives)) / (sum_k (1 + sim(e_i, e_k^-)) + eps)
/// in shifted mode. Items without negatives are skipped like exempt ones.
inline Var cooccurrence_loss(const Var& table, const std::vector<ConstraintSet>& sets,
                             RatioMode mode = RatioMode::shifted, LossDiagnostics* diag = nullptr) {
  Tape& tape = table.tape();
  std::vector<Var> terms;
  for (const ConstraintSet& set : sets) {
    if (set.exempt || set.positives.empty() || set.negatives.empty()) {
      if (diag) ++diag->exempt_items;
      continue;
    }
    const Var anchor = gather_rows(table, {set.item});
    const Var positive = mean(gather_rows(table, set.positives), 0);
    const Var negatives = gather_rows(table, set.negatives);
    if (mode == RatioMode::shifted) {
      const Var num = add_scalar(cosine(anchor, positive), 1.0);
      const Var den = add_scalar(sum(add_scalar(cosine_rows(anchor, negatives), 1.0)), kRatioEpsilon);
      terms.push_back(neg(div(num, den)));
    } else {
      const Var den = sum(cosine_rows(anchor, negatives));
      if (std::abs(den.item()) < kRatioEpsilon) {
        if (diag) ++diag->skipped_terms;
        continue;
      }
      terms.push_back(neg(div(cosine(anchor, positive), den)));
    }
  }
  return detail::mean_of(tape, terms);
}

// ---------------------------------------------------------------------------
// Token encoder.

/// Maps a token string to a fixed vector. Hashed mode derives a unit-length
/// Gaussian vector from the token's 64-bit FNV-1a hash; file-backed mode reads
/// vectors from JSONL and falls back to the hashed rule for unknown tokens.
///
/// Lookups are memoized, so a TokenEncoder must not be shared across threads
/// while it is still encoding new tokens.
class TokenEncoder {
 public:
  enum class Mode { hashed, file_backed };

  static constexpr std::size_t kDefaultDim = 64;

  static TokenEncoder hashed(std::size_t dim = kDefaultDim, std::uint64_t seed = 0) {
    if (dim == 0) throw std::invalid_argument("encoder dimension must be positive");
    TokenEncoder enc;
    enc.dim_ = dim;
    enc.seed_ = seed;
    return enc;
  }

  /// File-backed encoder from explicit vectors, all of one dimension.
  static TokenEncoder from_vectors(const std::vector<std::pair<std::string, std::vector<double>>>& vectors,
                                   std::uint64_t seed = 0, const std::string& origin = "encoder") {
    TokenEncoder enc;
    enc.mode_ = Mode::file_backed;
    enc.seed_ = seed;
    for (const auto& [token, vec] : vectors) {
      if (vec.empty()) throw DataError(origin + ": empty vector for token '" + token + "'");
      if (enc.dim_ == 0) enc.dim_ = vec.size();
      if (vec.size() != enc.dim_) {
        throw DataError(origin + ": token '" + token + "' has dimension " + std::to_string(vec.size()) +
                        ", expected " + std::to_string(enc.dim_));
      }
      enc.cache_[token] = vec;
    }
    if (enc.dim_ == 0) throw DataError(origin + ": no token vectors");
    return enc;
  }

  /// JSONL lines {"token": ..., "vec": [...]}.
  static TokenEncoder from_file(const std::string& path, std::uint64_t seed = 0) {
    std::vector<std::pair<std::string, std::vector<double>>> vectors;
    detail::for_each_jsonl(path, [&](const nlohmann::json& j) {
      vectors.emplace_back(j.at("token").get<std::string>(), j.at("vec").get<std::vector<double>>());
    });
    return from_vectors(vectors, seed, path);
  }

  Mode mode() const { return mode_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  /// Tokens that a file-backed encoder had to hash.
  std::size_t fallback_count() const { return fallbacks_; }

  const std::vector<double>& encode(const std::string& token) const {
    auto it = cache_.find(token);
    if (it != cache_.end()) return it->second;
    if (mode_ == Mode::file_backed) ++fallbacks_;
    return cache_.emplace(token, hashed_vector(token)).first->second;
  }

  static std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  std::vector<double> hashed_vector(const std::string& token) const {
    std::mt19937_64 rng(fnv1a(token) ^ seed_);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(dim_);
    double sq = 0.0;
    for (double& x : v) {
      x = normal(rng);
      sq += x * x;
    }
    const double inv = 1.0 / std::sqrt(std::max(sq, kCosineFloor));
    for (double& x : v) x *= inv;
    return v;
  }

  Mode mode_ = Mode::hashed;
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  mutable std::unordered_map<std::string, std::vector<double>> cache_;
  mutable std::size_t fallbacks_ = 0;
};

/// Mean of the item's token vectors (text then generated tokens), or its
/// precomputed modality vector when present.
inline std::vector<double> pooled_modality(const Item& item, const TokenEncoder& encoder) {
  if (item.modality_vector) {
    if (item.modality_vector->size() != encoder.dim()) {
      throw DataError("item " + std::to_string(item.source_id) + ": mod_vec has dimension " +
                      std::to_string(item.modality_vector->size()) + ", encoder dimension is " +
                      std::to_string(encoder.dim()));
    }
    return *item.modality_vector;
  }
  const auto tokens = item.all_tokens();
  if (tokens.empty()) {
    throw DataError("item " + std::to_string(item.source_id) + " has no text tokens, no generated tokens and no mod_vec");
  }
  std::vector<double> out(encoder.dim(), 0.0);
  for (const auto& tok : tokens) {
    const auto& v = encoder.encode(tok);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += v[j];
  }
  for (double& x : out) x /= static_cast<double>(tokens.size());
  return out;
}

/// n x D_enc matrix of pooled vectors; frozen during training.
inline Tensor pooled_modality_table(const std::vector<Item>& items, const TokenEncoder& encoder) {
  Tensor table = Tensor::zeros(std::max<std::size_t>(items.size(), 1), encoder.dim());
  for (const Item& item : items) {
    const auto pooled = pooled_modality(item, encoder);
    std::copy(pooled.begin(), pooled.end(), table.row(item.item_id).begin());
  }
  return table;
}

/// Unified modality embedding of one item: pooled vector projected by P (D_enc x d).
inline std::vector<double> encode_modality(const Item& item, const TokenEncoder& encoder, const Tensor& projection) {
  const auto pooled = pooled_modality(item, encoder);
  if (pooled.size() != projection.rows()) {
    throw ShapeError("modality projection shape mismatch: [" + std::to_string(pooled.size()) + "] x " +
                     shape_string(projection.shape()));
  }
  const Tensor out = matmul(Tensor(Shape{1, pooled.size()}, pooled), projection);
  return {out.data().begin(), out.data().end()};
}

}  // namespace dimo

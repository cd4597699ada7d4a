#pragma once

// Session encoding into an ID cause and a modality cause, the proxy and
// counterfactual disentanglement losses, additive scoring and the
// recommendation loss.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dimo/corpus.hpp"
#include "dimo/itemrepr.hpp"
#include "dimo/numcore.hpp"

namespace dimo {

/// One single-head self-attention layer. All projections act on row vectors
/// (x * W). `positions` has one row per distance from the end of the sequence,
/// so row 0 always belongs to the most recent item.
struct AttentionParams {
  Tensor query;
  Tensor key;
  Tensor value;
  Tensor output;
  Tensor positions;
};

/// W1..W8 of the proxy loss, stored zero-based.
struct ProxyProjections {
  std::array<Tensor, 8> w;
};

struct ModelParams {
  Tensor id_table;             // n x d, raw (unpropagated) ID embeddings
  Tensor modality_projection;  // D_enc x d
  AttentionParams id_attention;
  AttentionParams modality_attention;
  ProxyProjections proxy;

  std::size_t dim() const { return id_table.cols(); }
  std::size_t max_len() const { return id_attention.positions.rows(); }
};

template <class Params, class Fn>
void for_each_tensor(Params& params, Fn&& fn) {
  fn("id_table", params.id_table);
  fn("modality_projection", params.modality_projection);
  auto attention = [&fn](const std::string& prefix, auto& a) {
    fn(prefix + ".query", a.query);
    fn(prefix + ".key", a.key);
    fn(prefix + ".value", a.value);
    fn(prefix + ".output", a.output);
    fn(prefix + ".positions", a.positions);
  };
  attention("id_attention", params.id_attention);
  attention("modality_attention", params.modality_attention);
  for (std::size_t k = 0; k < params.proxy.w.size(); ++k) fn("proxy.w" + std::to_string(k + 1), params.proxy.w[k]);
}

/// Uniform(-1/sqrt(d), 1/sqrt(d)) for every trainable matrix, seeded.
inline ModelParams init_params(std::size_t n_items, std::size_t encoder_dim, std::size_t dim, std::size_t max_len,
                               std::uint64_t seed) {
  if (n_items == 0 || encoder_dim == 0 || dim == 0 || max_len == 0) {
    throw std::invalid_argument("model sizes must be positive");
  }
  ModelParams p;
  p.id_table = Tensor::zeros(n_items, dim);
  p.modality_projection = Tensor::zeros(encoder_dim, dim);
  for (AttentionParams* a : {&p.id_attention, &p.modality_attention}) {
    a->query = a->key = a->value = a->output = Tensor::zeros(dim, dim);
    a->positions = Tensor::zeros(max_len, dim);
  }
  for (Tensor& w : p.proxy.w) w = Tensor::zeros(dim, dim);

  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for_each_tensor(p, [&](const std::string&, Tensor& t) {
    for (double& v : t.data()) v = uniform(rng);
  });
  return p;
}

struct AttentionVars {
  Var query, key, value, output, positions;
};

/// ModelParams recorded on a tape.
struct ModelVars {
  Var id_table;
  Var modality_projection;
  AttentionVars id_attention;
  AttentionVars modality_attention;
  std::array<Var, 8> proxy;
  /// Same order as for_each_tensor.
  std::vector<Var> all;
};

inline ModelVars bind(Tape& tape, const ModelParams& params, bool trainable = true) {
  ModelVars vars;
  for_each_tensor(params, [&](const std::string&, const Tensor& t) {
    vars.all.push_back(trainable ? tape.leaf(t) : tape.constant(t));
  });
  std::size_t i = 0;
  vars.id_table = vars.all[i++];
  vars.modality_projection = vars.all[i++];
  for (AttentionVars* a : {&vars.id_attention, &vars.modality_attention}) {
    a->query = vars.all[i++];
    a->key = vars.all[i++];
    a->value = vars.all[i++];
    a->output = vars.all[i++];
    a->positions = vars.all[i++];
  }
  for (Var& w : vars.proxy) w = vars.all[i++];
  return vars;
}

/// Self-attention over `sequence` (m x d), returning the last position's output.
///
/// h_j = x_j + pos[m-1-j]; the last position attends over all m positions with
/// scaled dot-product weights, and the result is the average of h_last and
/// the projected attention context.
inline Var encode_sequence(const Var& sequence, const AttentionVars& attn) {
  const std::size_t m = sequence.rows();
  const std::size_t d = sequence.cols();
  if (m == 0) throw ShapeError("encode_sequence on an empty sequence");
  if (m > attn.positions.rows()) {
    throw ShapeError("sequence of length " + std::to_string(m) + " exceeds position table " +
                     shape_string(attn.positions.shape()));
  }
  std::vector<std::size_t> pos_index(m);
  for (std::size_t j = 0; j < m; ++j) pos_index[j] = m - 1 - j;
  const Var h = add(sequence, gather_rows(attn.positions, std::move(pos_index)));
  const Var last = gather_rows(h, {m - 1});
  const Var q = matmul(last, attn.query);
  const Var k = matmul(h, attn.key);
  const Var v = matmul(h, attn.value);
  const Var weights = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d))));
  const Var context = matmul(matmul(weights, v), attn.output);
  return scale(add(last, context), 0.5);
}

/// The most recent `max_len` items of a prefix.
inline std::span<const ItemId> truncate_prefix(std::span<const ItemId> prefix, std::size_t max_len,
                                               std::size_t* truncated = nullptr) {
  if (prefix.size() <= max_len) return prefix;
  if (truncated) ++*truncated;
  return prefix.subspan(prefix.size() - max_len);
}

struct SessionVars {
  Var s_id;
  Var s_mo;
  Var proxy_id;
  Var proxy_mo;
};

/// Arithmetic means of the two views (parameter-free).
inline std::pair<Var, Var> proxies(const Var& id_sequence, const Var& mo_sequence) {
  return {mean(id_sequence, 0), mean(mo_sequence, 0)};
}

/// Encodes a prefix (already truncated to the position table) into both causes and proxies.
inline SessionVars encode_session(const ModelVars& model, const Var& id_embeddings, const Var& mo_embeddings,
                                  std::span<const ItemId> prefix) {
  if (prefix.empty()) throw std::invalid_argument("cannot encode an empty session prefix");
  std::vector<std::size_t> idx(prefix.begin(), prefix.end());
  const Var id_seq = gather_rows(id_embeddings, idx);
  const Var mo_seq = gather_rows(mo_embeddings, std::move(idx));
  SessionVars out;
  out.s_id = encode_sequence(id_seq, model.id_attention);
  out.s_mo = encode_sequence(mo_seq, model.modality_attention);
  std::tie(out.proxy_id, out.proxy_mo) = proxies(id_seq, mo_seq);
  return out;
}

namespace detail {

inline std::optional<Var> attract_repel(const Var& attract, const Var& repel, RatioMode mode) {
  return ratio_term(attract, concat({attract, repel}, 1), mode);
}

}  // namespace detail

/// Two symmetric ratio terms: each cause is pulled toward its proxy and pushed
/// away from the other cause, all through separate projections.
inline Var proxy_loss(const Var& s_id, const Var& s_mo, const Var& proxy_id, const Var& proxy_mo,
                      const std::array<Var, 8>& w, RatioMode mode = RatioMode::shifted,
                      LossDiagnostics* diag = nullptr) {
  Tape& tape = s_id.tape();
  std::vector<Var> terms;
  auto term = [&](const Var& attract, const Var& repel) {
    if (auto t = detail::attract_repel(attract, repel, mode)) terms.push_back(*t);
    else if (diag) ++diag->skipped_terms;
  };
  term(cosine(matmul(s_id, w[0]), matmul(proxy_id, w[1])), cosine(matmul(s_id, w[2]), matmul(s_mo, w[3])));
  term(cosine(matmul(s_mo, w[4]), matmul(proxy_mo, w[5])), cosine(matmul(s_mo, w[6]), matmul(s_id, w[7])));
  if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
  return terms.size() == 1 ? terms[0] : add(terms[0], terms[1]);
}

/// When the label lies outside N_s the modality cause must explain it better
/// than the ID cause; inside N_s, the reverse.
inline Var counterfactual_loss(const Var& s_id, const Var& s_mo, const Var& label_id, const Var& label_mo,
                               bool label_in_ns, RatioMode mode = RatioMode::shifted,
                               LossDiagnostics* diag = nullptr) {
  const Var sim_id = cosine(s_id, label_id);
  const Var sim_mo = cosine(s_mo, label_mo);
  auto t = label_in_ns ? detail::attract_repel(sim_id, sim_mo, mode) : detail::attract_repel(sim_mo, sim_id, mode);
  if (t) return *t;
  if (diag) ++diag->skipped_terms;
  return s_id.tape().constant(Tensor::scalar(0.0));
}

/// y_i = s_id . e_i^id + s_mo . e_i^mo over the catalog, given transposed tables (d x n).
inline Var score_all_transposed(const Var& s_id, const Var& s_mo, const Var& ids_t, const Var& mo_t) {
  return add(matmul(s_id, ids_t), matmul(s_mo, mo_t));
}

inline Var score_all(const Var& s_id, const Var& s_mo, const Var& ids, const Var& mo) {
  return score_all_transposed(s_id, s_mo, transpose(ids), transpose(mo));
}

enum class RecLossMode { bce, softmax_ce };

inline const char* to_string(RecLossMode m) { return m == RecLossMode::bce ? "bce" : "softmax-ce"; }

inline RecLossMode rec_loss_mode_from_string(const std::string& s) {
  if (s == "bce") return RecLossMode::bce;
  if (s == "softmax-ce") return RecLossMode::softmax_ce;
  throw std::invalid_argument("unknown recommendation loss mode '" + s + "' (expected bce|softmax-ce)");
}

inline Var rec_loss(const Var& scores, ItemId label, RecLossMode mode = RecLossMode::bce) {
  return mode == RecLossMode::bce ? binary_cross_entropy(scores, label) : softmax_cross_entropy(scores, label);
}

}  // namespace dimo

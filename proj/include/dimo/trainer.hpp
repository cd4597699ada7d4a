#pragma once

// Multi-task training, validation-based model selection and checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dimo/coocgraph.hpp"
#include "dimo/corpus.hpp"
#include "dimo/evaluation.hpp"
#include "dimo/itemrepr.hpp"
#include "dimo/numcore.hpp"
#include "dimo/sessionmodel.hpp"

namespace dimo {

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  std::size_t dim = 100;
  std::size_t propagation_steps = 2;  // c
  std::size_t constraint_size = 10;   // l
  double lambda = 0.01;
  std::size_t batch_size = 50;
  double learning_rate = 0.001;
  std::size_t max_epochs = 300;
  std::size_t patience = 20;
  std::uint64_t seed = 7;
  RatioMode ratio_mode = RatioMode::shifted;
  RecLossMode rec_loss_mode = RecLossMode::bce;
  std::size_t max_len = 50;
  OptimizerKind optimizer = OptimizerKind::adam;
  bool prefix_augmentation = false;
  std::size_t encoder_dim = TokenEncoder::kDefaultDim;
  /// Also compute Prec@10 / MRR@10 on the training examples after each epoch.
  bool track_train_metrics = false;

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("invalid training config: " + what); };
    if (dim == 0) fail("dim must be positive");
    if (constraint_size == 0) fail("constraint_size (l) must be >= 1");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be a finite value >= 0");
    if (batch_size == 0) fail("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
    if (max_len == 0) fail("max_len must be >= 1");
    if (encoder_dim == 0) fail("encoder_dim must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"dim", c.dim},
          {"propagation_steps", c.propagation_steps},
          {"constraint_size", c.constraint_size},
          {"lambda", c.lambda},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"seed", c.seed},
          {"ratio_loss_mode", to_string(c.ratio_mode)},
          {"rec_loss_mode", to_string(c.rec_loss_mode)},
          {"max_len", c.max_len},
          {"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
          {"prefix_augmentation", c.prefix_augmentation},
          {"encoder_dim", c.encoder_dim}};
}

/// Overlays the keys present in `j` onto `c`; unknown keys are rejected.
inline void update_from_json(TrainConfig& c, const nlohmann::json& j) {
  for (const auto& [key, v] : j.items()) {
    if (key == "dim") c.dim = v.get<std::size_t>();
    else if (key == "propagation_steps") c.propagation_steps = v.get<std::size_t>();
    else if (key == "constraint_size") c.constraint_size = v.get<std::size_t>();
    else if (key == "lambda") c.lambda = v.get<double>();
    else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
    else if (key == "learning_rate") c.learning_rate = v.get<double>();
    else if (key == "max_epochs") c.max_epochs = v.get<std::size_t>();
    else if (key == "patience") c.patience = v.get<std::size_t>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "ratio_loss_mode") c.ratio_mode = ratio_mode_from_string(v.get<std::string>());
    else if (key == "rec_loss_mode") c.rec_loss_mode = rec_loss_mode_from_string(v.get<std::string>());
    else if (key == "max_len") c.max_len = v.get<std::size_t>();
    else if (key == "optimizer") {
      const auto s = v.get<std::string>();
      if (s != "adam" && s != "sgd") throw std::invalid_argument("unknown optimizer '" + s + "'");
      c.optimizer = s == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
    } else if (key == "prefix_augmentation") c.prefix_augmentation = v.get<bool>();
    else if (key == "encoder_dim") c.encoder_dim = v.get<std::size_t>();
    else throw std::invalid_argument("unknown training config key '" + key + "'");
  }
}

// ---------------------------------------------------------------------------
// Inference.

/// Scores sessions against fixed parameters. E and E_mo are computed once.
/// Not thread-safe: scoring records onto an internal tape.
class Recommender {
 public:
  Recommender(const ModelParams& params, const CoocGraph& graph, const Tensor& pooled_modality,
              std::size_t propagation_steps)
      : ids_(propagate_ids(params.id_table, graph.matrix(), propagation_steps)),
        modality_(matmul(pooled_modality, params.modality_projection)),
        max_len_(params.max_len()) {
    if (ids_.rows() != modality_.rows()) {
      throw ShapeError("id table " + shape_string(ids_.shape()) + " and modality table " +
                       shape_string(modality_.shape()) + " disagree on the item count");
    }
    ids_var_ = tape_.constant(ids_);
    mo_var_ = tape_.constant(modality_);
    ids_t_ = tape_.constant(transpose(ids_));
    mo_t_ = tape_.constant(transpose(modality_));
    model_ = bind_attention(params);
    base_ = tape_.size();
  }

  std::size_t n() const { return ids_.rows(); }
  /// Propagated ID embeddings E.
  const Tensor& id_embeddings() const { return ids_; }
  /// Projected modality embeddings E_mo.
  const Tensor& modality_embeddings() const { return modality_; }
  std::size_t truncated_sessions() const { return truncated_; }

  std::vector<double> score(std::span<const ItemId> prefix, bool exclude_seen = false) {
    for (ItemId id : prefix)
      if (id >= n()) throw DataError("session references item " + std::to_string(id) + " outside the catalog");
    const auto kept = truncate_prefix(prefix, max_len_, &truncated_);
    const SessionVars sv = encode_session(model_, ids_var_, mo_var_, kept);
    const Var y = score_all_transposed(sv.s_id, sv.s_mo, ids_t_, mo_t_);
    std::vector<double> scores(y.value().data().begin(), y.value().data().end());
    tape_.rewind(base_);
    if (exclude_seen) {
      for (ItemId id : prefix) scores[id] = -std::numeric_limits<double>::infinity();
    }
    return scores;
  }

  /// Session vectors (s_id, s_mo) as plain tensors.
  std::pair<Tensor, Tensor> session_vectors(std::span<const ItemId> prefix) {
    const auto kept = truncate_prefix(prefix, max_len_, &truncated_);
    const SessionVars sv = encode_session(model_, ids_var_, mo_var_, kept);
    std::pair<Tensor, Tensor> out{sv.s_id.value(), sv.s_mo.value()};
    tape_.rewind(base_);
    return out;
  }

  /// 1-based rank of each session's label given its prefix.
  std::vector<std::size_t> ranks(std::span<const Session> sessions, bool exclude_seen = false) {
    std::vector<std::size_t> out;
    out.reserve(sessions.size());
    for (const Session& s : sessions) {
      auto scores = score(s.prefix());
      if (exclude_seen) {
        // A repeated label stays rankable.
        for (ItemId id : s.prefix())
          if (id != s.label()) scores[id] = -std::numeric_limits<double>::infinity();
      }
      out.push_back(rank_of(scores, s.label()));
    }
    return out;
  }

  EvalReport evaluate(std::span<const Session> sessions, const std::vector<std::size_t>& cutoffs = kDefaultCutoffs,
                      bool exclude_seen = false) {
    const auto r = ranks(sessions, exclude_seen);
    return metrics_from_ranks(r, cutoffs);
  }

  /// Top-k (item, score) pairs, descending, ties by ascending id.
  std::vector<std::pair<ItemId, double>> top_k(std::span<const ItemId> prefix, std::size_t k,
                                               bool exclude_seen = false) {
    const auto scores = score(prefix, exclude_seen);
    std::vector<ItemId> order(scores.size());
    std::iota(order.begin(), order.end(), ItemId{0});
    std::stable_sort(order.begin(), order.end(), [&](ItemId a, ItemId b) { return scores[a] > scores[b]; });
    std::vector<std::pair<ItemId, double>> out;
    for (std::size_t i = 0; i < std::min(k, order.size()); ++i) {
      if (!std::isfinite(scores[order[i]])) break;
      out.emplace_back(order[i], scores[order[i]]);
    }
    return out;
  }

 private:
  ModelVars bind_attention(const ModelParams& params) {
    ModelVars vars;
    for (auto [dst, src] : {std::pair{&vars.id_attention, &params.id_attention},
                            std::pair{&vars.modality_attention, &params.modality_attention}}) {
      dst->query = tape_.constant(src->query);
      dst->key = tape_.constant(src->key);
      dst->value = tape_.constant(src->value);
      dst->output = tape_.constant(src->output);
      dst->positions = tape_.constant(src->positions);
    }
    return vars;
  }

  Tensor ids_;
  Tensor modality_;
  std::size_t max_len_;
  Tape tape_;
  Var ids_var_, mo_var_, ids_t_, mo_t_;
  ModelVars model_;
  std::size_t base_ = 0;
  std::size_t truncated_ = 0;
};

// ---------------------------------------------------------------------------
// Optimizers.

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {}

  /// Applies one update to `params` given gradients in the same order.
  void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (first_.empty() && kind_ == OptimizerKind::adam) {
      for (const Tensor* p : params) {
        first_.emplace_back(p->size(), 0.0);
        second_.emplace_back(p->size(), 0.0);
      }
    }
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto p = params[k]->data();
      auto g = grads[k]->data();
      if (kind_ == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr_ * g[i];
        continue;
      }
      auto& m = first_[k];
      auto& v = second_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> first_, second_;
};

// ---------------------------------------------------------------------------
// Training.

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainingExample {
  std::vector<ItemId> prefix;
  ItemId label = 0;
  /// The example's session was counted into the graph.
  bool in_graph = true;
};

inline std::vector<TrainingExample> make_examples(std::span<const Session> sessions, bool prefix_augmentation,
                                                  bool in_graph = true) {
  std::vector<TrainingExample> out;
  for (const Session& s : sessions) {
    if (s.items.size() < 2) continue;
    const std::size_t first = prefix_augmentation ? 1 : s.items.size() - 1;
    for (std::size_t len = first; len < s.items.size(); ++len) {
      out.push_back({std::vector<ItemId>(s.items.begin(), s.items.begin() + static_cast<std::ptrdiff_t>(len)),
                     s.items[len], in_graph});
    }
  }
  return out;
}

struct LossBreakdown {
  double rec = 0.0, co = 0.0, pro = 0.0, ct = 0.0, total = 0.0;
};

/// One batch on a fresh tape. Returns the recorded objective plus its parts.
struct BatchObjective {
  Var total;
  Var rec, co, pro, ct;
  ModelVars vars;
};

/// Builds L = L_rec + lambda (L_co + L_pro + L_ct) for `batch` on `tape`.
/// Each part is a mean: L_rec, L_pro and L_ct over examples, L_co over the
/// distinct items of the batch.
template <class Rng>
BatchObjective batch_objective(Tape& tape, const ModelParams& params, const TrainConfig& config,
                               const CoocGraph& graph, const Tensor& pooled_modality,
                               std::span<const TrainingExample> batch, Rng& rng, LossDiagnostics* diag = nullptr,
                               std::size_t* truncated = nullptr) {
  BatchObjective obj;
  obj.vars = bind(tape, params, true);
  const Var ids = propagate_ids(obj.vars.id_table, graph.matrix(), config.propagation_steps);
  const Var mo = matmul(tape.constant(pooled_modality), obj.vars.modality_projection);
  const Var ids_t = transpose(ids);
  const Var mo_t = transpose(mo);

  std::set<ItemId> items;
  for (const TrainingExample& ex : batch) {
    items.insert(ex.prefix.begin(), ex.prefix.end());
    items.insert(ex.label);
  }
  std::vector<ConstraintSet> sets;
  for (ItemId i : items) sets.push_back(sample_constraint_sets(i, graph, config.constraint_size, rng));
  obj.co = cooccurrence_loss(ids, sets, config.ratio_mode, diag);

  std::vector<Var> rec, pro, ct;
  for (const TrainingExample& ex : batch) {
    const auto prefix = truncate_prefix(ex.prefix, params.max_len(), truncated);
    const SessionVars sv = encode_session(obj.vars, ids, mo, prefix);
    pro.push_back(proxy_loss(sv.s_id, sv.s_mo, sv.proxy_id, sv.proxy_mo, obj.vars.proxy, config.ratio_mode, diag));
    const bool in_ns = label_in_union(ex.prefix, ex.label, graph, ex.in_graph);
    ct.push_back(counterfactual_loss(sv.s_id, sv.s_mo, gather_rows(ids, {ex.label}), gather_rows(mo, {ex.label}),
                                     in_ns, config.ratio_mode, diag));
    const Var y = score_all_transposed(sv.s_id, sv.s_mo, ids_t, mo_t);
    rec.push_back(rec_loss(y, ex.label, config.rec_loss_mode));
  }
  obj.rec = detail::mean_of(tape, rec);
  obj.pro = detail::mean_of(tape, pro);
  obj.ct = detail::mean_of(tape, ct);
  if (config.lambda == 0.0) {
    obj.total = obj.rec;
  } else {
    obj.total = add(obj.rec, scale(add(add(obj.co, obj.pro), obj.ct), config.lambda));
  }
  return obj;
}

struct EpochLog {
  std::size_t epoch = 0;
  LossBreakdown loss;
  double val_prec20 = 0.0;
  double val_mrr20 = 0.0;
  std::optional<double> train_prec10;
  std::optional<double> train_mrr10;
};

struct TrainResult {
  ModelParams params;
  std::size_t best_epoch = 0;
  double best_val_prec20 = 0.0;
  double best_val_mrr20 = 0.0;
  std::vector<EpochLog> history;
  LossDiagnostics diagnostics;
  std::size_t truncated_sequences = 0;
  /// Some 10-epoch block of mean total loss exceeded the previous block.
  bool loss_trend_flagged = false;
};

/// Flags a rise between consecutive non-overlapping 10-epoch means of the total loss.
inline bool loss_trend_flagged(const std::vector<EpochLog>& history, std::size_t window = 10) {
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t start = 0; start + window <= history.size(); start += window) {
    double s = 0.0;
    for (std::size_t e = start; e < start + window; ++e) s += history[e].loss.total;
    const double avg = s / static_cast<double>(window);
    if (avg > prev) return true;
    prev = avg;
  }
  return false;
}

inline std::vector<Tensor*> tensor_list(ModelParams& params) {
  std::vector<Tensor*> out;
  for_each_tensor(params, [&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

/// Mini-batch training with early stopping on validation Prec@20.
/// `train_sessions` must be exactly the sessions `graph` was counted from.
inline TrainResult train(const TrainConfig& config, std::span<const Session> train_sessions,
                         std::span<const Session> validation_sessions, const CoocGraph& graph,
                         const Tensor& pooled_modality,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  config.validate();
  if (pooled_modality.rows() != graph.n()) {
    throw ShapeError("modality table " + shape_string(pooled_modality.shape()) + " does not cover the " +
                     std::to_string(graph.n()) + "-item graph");
  }
  auto examples = make_examples(train_sessions, config.prefix_augmentation, true);
  if (examples.empty()) throw DataError("no training examples (sessions need at least two items)");

  TrainResult result;
  ModelParams params = init_params(graph.n(), pooled_modality.cols(), config.dim, config.max_len, config.seed);
  result.params = params;
  Optimizer optimizer(config.optimizer, config.learning_rate);
  std::mt19937_64 shuffle_rng(config.seed ^ 0x5eed5eedULL);
  std::mt19937_64 sample_rng(config.seed + 1);
  std::vector<Session> train_eval(train_sessions.begin(), train_sessions.end());

  bool have_best = false;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(examples.size());
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    LossBreakdown sums;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<TrainingExample> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i)
        batch.push_back(examples[order[i]]);
      Tape tape;
      BatchObjective obj = batch_objective(tape, params, config, graph, pooled_modality, batch, sample_rng,
                                           &result.diagnostics, &result.truncated_sequences);
      const double total = obj.total.item();
      if (!std::isfinite(total)) {
        throw TrainingDiverged("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batches + 1));
      }
      tape.backward(obj.total);
      std::vector<const Tensor*> grads;
      for (const Var& v : obj.vars.all) grads.push_back(&v.grad());
      optimizer.step(tensor_list(params), grads);
      sums.rec += obj.rec.item();
      sums.co += obj.co.item();
      sums.pro += obj.pro.item();
      sums.ct += obj.ct.item();
      sums.total += total;
      ++batches;
    }
    EpochLog log;
    log.epoch = epoch;
    const double nb = static_cast<double>(batches);
    log.loss = {sums.rec / nb, sums.co / nb, sums.pro / nb, sums.ct / nb, sums.total / nb};

    Recommender rec(params, graph, pooled_modality, config.propagation_steps);
    if (!validation_sessions.empty()) {
      const EvalReport val = rec.evaluate(validation_sessions, {20});
      log.val_prec20 = val.prec_at.at(20);
      log.val_mrr20 = val.mrr_at.at(20);
    }
    if (config.track_train_metrics) {
      const EvalReport tr = rec.evaluate(train_eval, {10});
      log.train_prec10 = tr.prec_at.at(10);
      log.train_mrr10 = tr.mrr_at.at(10);
    }
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);

    const bool improved = !have_best || validation_sessions.empty() || log.val_prec20 > result.best_val_prec20;
    if (improved) {
      have_best = true;
      since_best = 0;
      result.params = params;
      result.best_epoch = epoch;
      result.best_val_prec20 = log.val_prec20;
      result.best_val_mrr20 = log.val_mrr20;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  result.loss_trend_flagged = loss_trend_flagged(result.history);
  return result;
}

inline std::string training_log_csv(const std::vector<EpochLog>& history) {
  std::ostringstream os;
  os << "epoch,L_rec,L_co,L_pro,L_ct,total,val_prec20,val_mrr20\n";
  os << std::setprecision(10);
  for (const EpochLog& e : history) {
    os << e.epoch << ',' << e.loss.rec << ',' << e.loss.co << ',' << e.loss.pro << ',' << e.loss.ct << ','
       << e.loss.total << ',' << e.val_prec20 << ',' << e.val_mrr20 << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Checkpoints: a directory holding manifest.json and one blob per tensor.

inline constexpr int kCheckpointVersion = 1;

struct CheckpointInfo {
  nlohmann::json config;
  std::size_t epoch = 0;
  double val_prec20 = 0.0;
  double val_mrr20 = 0.0;
};

inline std::string fnv1a_hex(const std::string& bytes) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << TokenEncoder::fnv1a(bytes);
  return os.str();
}

inline void save_checkpoint(const std::string& dir, const ModelParams& params, const CheckpointInfo& info) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create checkpoint directory " + dir + ": " + ec.message());
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["config"] = info.config;
  manifest["epoch"] = info.epoch;
  manifest["val_prec20"] = info.val_prec20;
  manifest["val_mrr20"] = info.val_mrr20;
  manifest["tensors"] = nlohmann::json::array();
  for_each_tensor(params, [&](const std::string& name, const Tensor& t) {
    std::ostringstream blob;
    write_tensor(blob, name, t);
    const std::string bytes = blob.str();
    const std::string file = name + ".bin";
    std::ofstream out(fs::path(dir) / file, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + (fs::path(dir) / file).string());
    manifest["tensors"].push_back({{"name", name}, {"file", file}, {"shape", t.shape()}, {"fnv1a64", fnv1a_hex(bytes)}});
  });
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw DataError("failed writing manifest in " + dir);
}

struct LoadedCheckpoint {
  ModelParams params;
  CheckpointInfo info;
};

/// Loads and verifies every blob before returning; any defect throws and
/// nothing partial escapes.
inline LoadedCheckpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw DataError("missing checkpoint manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format_version", -1) != kCheckpointVersion) {
    throw FormatError(manifest_path.string() + ": unsupported checkpoint version " +
                      manifest.value("format_version", nlohmann::json(nullptr)).dump());
  }
  std::map<std::string, Tensor> blobs;
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const fs::path path = fs::path(dir) / entry.at("file").get<std::string>();
    std::ifstream blob_in(path, std::ios::binary);
    if (!blob_in) throw DataError("missing checkpoint blob " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(blob_in)), std::istreambuf_iterator<char>());
    if (fnv1a_hex(bytes) != entry.at("fnv1a64").get<std::string>()) {
      throw FormatError(path.string() + ": checksum mismatch");
    }
    std::istringstream bin(bytes);
    NamedTensor t;
    try {
      t = read_tensor(bin, true);
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
    if (t.name != name || t.tensor.shape() != entry.at("shape").get<Shape>()) {
      throw FormatError(path.string() + ": blob header does not match the manifest");
    }
    blobs.emplace(name, std::move(t.tensor));
  }
  LoadedCheckpoint out;
  for_each_tensor(out.params, [&](const std::string& name, Tensor& t) {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw FormatError(dir + ": checkpoint lacks tensor " + name);
    t = std::move(it->second);
  });
  out.info.config = manifest.at("config");
  out.info.epoch = manifest.at("epoch").get<std::size_t>();
  out.info.val_prec20 = manifest.at("val_prec20").get<double>();
  out.info.val_mrr20 = manifest.at("val_mrr20").get<double>();
  return out;
}

}  // namespace dimo

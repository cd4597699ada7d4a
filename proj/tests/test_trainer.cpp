#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "dimo/fixtures.hpp"
#include "dimo/trainer.hpp"
#include "testutil.hpp"

using namespace dimo;
using dimo::testing::TempDir;

namespace {

struct Workbench {
  SessionCorpus corpus;
  CorpusSplit split;
  CoocGraph graph;
  Tensor pooled;
};

Workbench small_setup() {
  Workbench s;
  s.corpus = generate(PlantedRuleSpec::standard(20, 100, 0.5, 3)).corpus;
  s.split = chronological_split(s.corpus.sessions);
  s.graph = CoocGraph(count_pairs(s.split.train), s.corpus.n());
  s.pooled = pooled_modality_table(s.corpus.items, TokenEncoder::hashed(8));
  return s;
}

TrainConfig small_config() {
  TrainConfig c;
  c.dim = 8;
  c.max_epochs = 3;
  c.batch_size = 16;
  c.max_len = 10;
  c.encoder_dim = 8;
  return c;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  std::vector<Tensor> ta;
  for_each_tensor(a, [&](const std::string&, const Tensor& t) { ta.push_back(t); });
  std::size_t i = 0;
  bool same = true;
  for_each_tensor(b, [&](const std::string&, const Tensor& t) { same = same && t == ta[i++]; });
  return same;
}

}  // namespace

TEST(Config, JsonRoundTripAndUnknownKeys) {
  TrainConfig c;
  c.dim = 12;
  c.lambda = 0.5;
  c.ratio_mode = RatioMode::literal;
  c.rec_loss_mode = RecLossMode::softmax_ce;
  c.optimizer = OptimizerKind::sgd;
  TrainConfig d;
  update_from_json(d, to_json(c));
  EXPECT_EQ(to_json(d), to_json(c));
  EXPECT_THROW(update_from_json(d, nlohmann::json{{"dimension", 3}}), std::invalid_argument);
  EXPECT_THROW(update_from_json(d, nlohmann::json{{"optimizer", "rmsprop"}}), std::invalid_argument);
}

TEST(Config, DefaultsAndValidation) {
  const TrainConfig c;
  EXPECT_EQ(c.dim, 100u);
  EXPECT_EQ(c.propagation_steps, 2u);
  EXPECT_EQ(c.constraint_size, 10u);
  EXPECT_EQ(c.lambda, 0.01);
  EXPECT_EQ(c.batch_size, 50u);
  EXPECT_EQ(c.max_epochs, 300u);
  EXPECT_EQ(c.patience, 20u);
  EXPECT_NO_THROW(c.validate());
  TrainConfig bad = c;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.lambda = -1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Examples, LastItemOnlyUnlessAugmented) {
  const std::vector<Session> s{Session{0, {4, 5, 6}, 0}, Session{1, {7}, 0}};
  const auto plain = make_examples(s, false);
  ASSERT_EQ(plain.size(), 1u);
  EXPECT_EQ(plain[0].prefix, (std::vector<ItemId>{4, 5}));
  EXPECT_EQ(plain[0].label, 6u);
  const auto aug = make_examples(s, true);
  ASSERT_EQ(aug.size(), 2u);
  EXPECT_EQ(aug[0].prefix, (std::vector<ItemId>{4}));
  EXPECT_EQ(aug[0].label, 5u);
}

TEST(Objective, ZeroLambdaIsRecommendationLossExactly) {
  const Workbench s = small_setup();
  TrainConfig c = small_config();
  c.lambda = 0.0;
  const ModelParams p = init_params(s.graph.n(), 8, c.dim, c.max_len, c.seed);
  const auto ex = make_examples(s.split.train, false);
  const std::vector<TrainingExample> batch(ex.begin(), ex.begin() + 10);
  Tape tape;
  std::mt19937_64 rng(1);
  const BatchObjective obj = batch_objective(tape, p, c, s.graph, s.pooled, batch, rng);
  EXPECT_EQ(obj.total.item(), obj.rec.item());
  EXPECT_NE(obj.co.item(), 0.0);
  EXPECT_NE(obj.pro.item(), 0.0);
}

TEST(Objective, CompositionOfParts) {
  const Workbench s = small_setup();
  const TrainConfig c = small_config();
  const ModelParams p = init_params(s.graph.n(), 8, c.dim, c.max_len, c.seed);
  const auto ex = make_examples(s.split.train, false);
  const std::vector<TrainingExample> batch(ex.begin(), ex.begin() + 10);
  Tape tape;
  std::mt19937_64 rng(1);
  const BatchObjective obj = batch_objective(tape, p, c, s.graph, s.pooled, batch, rng);
  EXPECT_NEAR(obj.total.item(), obj.rec.item() + c.lambda * (obj.co.item() + obj.pro.item() + obj.ct.item()), 1e-12);
}

TEST(Training, FirstEpochIsBitwiseReproducible) {
  const Workbench s = small_setup();
  TrainConfig c = small_config();
  c.max_epochs = 1;
  const TrainResult a = train(c, s.split.train, s.split.validation, s.graph, s.pooled);
  const TrainResult b = train(c, s.split.train, s.split.validation, s.graph, s.pooled);
  ASSERT_EQ(a.history.size(), 1u);
  EXPECT_EQ(std::memcmp(&a.history[0].loss.total, &b.history[0].loss.total, sizeof(double)), 0);
  EXPECT_TRUE(params_equal(a.params, b.params));
}

TEST(Training, OneStepMovesEveryParameterBlock) {
  const Workbench s = small_setup();
  const TrainConfig c = small_config();
  ModelParams p = init_params(s.graph.n(), 8, c.dim, c.max_len, c.seed);
  const ModelParams before = p;
  const auto ex = make_examples(s.split.train, false);
  Tape tape;
  std::mt19937_64 rng(2);
  const BatchObjective obj = batch_objective(tape, p, c, s.graph, s.pooled, ex, rng);
  tape.backward(obj.total);
  std::vector<const Tensor*> grads;
  for (const Var& v : obj.vars.all) grads.push_back(&v.grad());
  Optimizer opt(c.optimizer, c.learning_rate);
  opt.step(tensor_list(p), grads);
  std::vector<std::string> names;
  std::vector<double> deltas;
  std::vector<Tensor> old;
  for_each_tensor(before, [&](const std::string& name, const Tensor& t) {
    names.push_back(name);
    old.push_back(t);
  });
  std::size_t i = 0;
  for_each_tensor(p, [&](const std::string&, const Tensor& t) {
    double d = 0.0;
    for (std::size_t j = 0; j < t.size(); ++j) d += std::abs(t[j] - old[i][j]);
    deltas.push_back(d);
    ++i;
  });
  for (std::size_t k = 0; k < names.size(); ++k) EXPECT_GT(deltas[k], 0.0) << names[k];
}

TEST(Training, EarlyStoppingKeepsBestEpoch) {
  const Workbench s = small_setup();
  TrainConfig c = small_config();
  c.max_epochs = 12;
  c.patience = 3;
  c.learning_rate = 0.01;
  const TrainResult r = train(c, s.split.train, s.split.validation, s.graph, s.pooled);
  ASSERT_GE(r.best_epoch, 1u);
  ASSERT_LE(r.best_epoch, r.history.size());
  double best = -1.0;
  std::size_t first_best = 0;
  for (const EpochLog& e : r.history) {
    if (e.val_prec20 > best) {
      best = e.val_prec20;
      first_best = e.epoch;
    }
  }
  EXPECT_EQ(r.best_epoch, first_best);
  EXPECT_EQ(r.best_val_prec20, best);
  EXPECT_LE(r.history.size(), r.best_epoch + c.patience);
  Recommender rec(r.params, s.graph, s.pooled, c.propagation_steps);
  EXPECT_EQ(rec.evaluate(s.split.validation, {20}).prec_at.at(20), r.best_val_prec20);
}

TEST(Training, LossTrendFlag) {
  std::vector<EpochLog> h(30);
  for (std::size_t e = 0; e < 30; ++e) h[e].loss.total = 10.0 - static_cast<double>(e) * 0.1;
  EXPECT_FALSE(loss_trend_flagged(h));
  for (std::size_t e = 20; e < 30; ++e) h[e].loss.total = 50.0;
  EXPECT_TRUE(loss_trend_flagged(h));
}

TEST(Training, LogCsvHeader) {
  std::vector<EpochLog> h(2);
  h[0].epoch = 1;
  h[1].epoch = 2;
  const std::string csv = training_log_csv(h);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,L_rec,L_co,L_pro,L_ct,total,val_prec20,val_mrr20");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Recommender, ExcludeSeenKeepsRepeatedLabel) {
  const Workbench s = small_setup();
  const ModelParams p = init_params(s.graph.n(), 8, 8, 10, 1);
  Recommender rec(p, s.graph, s.pooled, 2);
  const std::vector<ItemId> prefix{0, 1};
  const auto scores = rec.score(prefix, true);
  EXPECT_TRUE(std::isinf(scores[0]));
  EXPECT_TRUE(std::isinf(scores[1]));
  const std::vector<Session> repeated{Session{0, {0, 1, 1}, 0}};
  EXPECT_LE(rec.ranks(repeated, true)[0], s.graph.n() - 1);
  const auto top = rec.top_k(prefix, 5, true);
  ASSERT_EQ(top.size(), 5u);
  for (std::size_t i = 1; i < top.size(); ++i) EXPECT_GE(top[i - 1].second, top[i].second);
  for (const auto& [id, score] : top) EXPECT_GT(id, 1u);
}

TEST(Recommender, ScoresMatchFreshTape) {
  const Workbench s = small_setup();
  const ModelParams p = init_params(s.graph.n(), 8, 8, 10, 1);
  Recommender rec(p, s.graph, s.pooled, 2);
  const std::vector<ItemId> prefix{3, 5, 2};
  const auto first = rec.score(prefix);
  (void)rec.score(std::vector<ItemId>{1});
  EXPECT_EQ(rec.score(prefix), first);
  Tape tape;
  const ModelVars v = bind(tape, p, false);
  const Var ids = propagate_ids(v.id_table, s.graph.matrix(), 2);
  const Var mo = matmul(tape.constant(s.pooled), v.modality_projection);
  const SessionVars sv = encode_session(v, ids, mo, prefix);
  const Var y = score_all(sv.s_id, sv.s_mo, ids, mo);
  for (std::size_t i = 0; i < first.size(); ++i) EXPECT_NEAR(first[i], y.value()[i], 1e-12);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  TempDir dir;
  const ModelParams p = init_params(7, 5, 4, 6, 11);
  CheckpointInfo info;
  info.config = to_json(TrainConfig{});
  info.epoch = 17;
  info.val_prec20 = 0.25;
  info.val_mrr20 = 0.125;
  save_checkpoint(dir.file("ckpt"), p, info);
  const LoadedCheckpoint back = load_checkpoint(dir.file("ckpt"));
  EXPECT_TRUE(params_equal(back.params, p));
  EXPECT_EQ(back.info.epoch, 17u);
  EXPECT_EQ(back.info.val_prec20, 0.25);
  EXPECT_EQ(back.info.config, info.config);
}

TEST(Checkpoint, CorruptionIsRejected) {
  TempDir dir;
  const ModelParams p = init_params(7, 5, 4, 6, 11);
  save_checkpoint(dir.file("ckpt"), p, CheckpointInfo{});
  const std::string blob = dir.file("ckpt/proxy.w3.bin");
  const std::string bytes = dimo::testing::read_text(blob);
  dimo::testing::write_text(blob, bytes + "\x01\x02");
  EXPECT_THROW(load_checkpoint(dir.file("ckpt")), FormatError);
  dimo::testing::write_text(blob, bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(load_checkpoint(dir.file("ckpt")), FormatError);
  std::filesystem::remove(blob);
  EXPECT_THROW(load_checkpoint(dir.file("ckpt")), DataError);
  EXPECT_THROW(load_checkpoint(dir.file("nowhere")), DataError);
}

TEST(Checkpoint, VersionMismatchRejected) {
  TempDir dir;
  save_checkpoint(dir.file("ckpt"), init_params(3, 2, 2, 2, 1), CheckpointInfo{});
  auto manifest = nlohmann::json::parse(dimo::testing::read_text(dir.file("ckpt/manifest.json")));
  manifest["format_version"] = 99;
  dimo::testing::write_text(dir.file("ckpt/manifest.json"), manifest.dump());
  EXPECT_THROW(load_checkpoint(dir.file("ckpt")), FormatError);
}

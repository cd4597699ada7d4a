#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "dimo/corpus.hpp"
#include "testutil.hpp"

using namespace dimo;
using dimo::testing::TempDir;
using dimo::testing::write_text;

namespace {

const char* kItems =
    R"({"item_id": 10, "text": ["red", "shoe"], "gen_text": ["sport"], "mod_vec": null})" "\n"
    R"({"item_id": 20, "text": ["blue"], "gen_text": []})" "\n"
    R"({"item_id": 30, "text": [], "gen_text": ["hat"], "mod_vec": [0.5, 1.5]})" "\n";

SessionCorpus make_corpus(std::size_t n_items, const std::vector<std::vector<ItemId>>& sessions) {
  SessionCorpus c;
  for (ItemId i = 0; i < n_items; ++i) c.items.push_back(Item{i, static_cast<std::int64_t>(i), {"t"}, {}, {}});
  std::int64_t id = 0;
  for (const auto& s : sessions) c.sessions.push_back(Session{id, s, 100 + id}), ++id;
  return c;
}

}  // namespace

TEST(Load, TwoWellFormedLines) {
  TempDir dir;
  write_text(dir.file("items.jsonl"), kItems);
  write_text(dir.file("sessions.jsonl"),
             R"({"session_id": 1, "items": [10, 20, 10], "ts": 5})" "\n"
             "\n"
             R"({"session_id": 2, "items": [30, 20], "ts": 3})" "\n");
  const SessionCorpus c = load_corpus(dir.file("sessions.jsonl"), dir.file("items.jsonl"));
  ASSERT_EQ(c.sessions.size(), 2u);
  EXPECT_EQ(c.sessions[0].items, (std::vector<ItemId>{0, 1, 0}));
  EXPECT_EQ(c.sessions[1].items, (std::vector<ItemId>{2, 1}));
  EXPECT_EQ(c.sessions[0].label(), 0u);
  EXPECT_EQ(c.items[0].all_tokens(), (std::vector<std::string>{"red", "shoe", "sport"}));
  EXPECT_EQ(c.items[2].source_id, 30);
  ASSERT_TRUE(c.items[2].modality_vector.has_value());
  EXPECT_EQ(*c.items[2].modality_vector, (std::vector<double>{0.5, 1.5}));
  EXPECT_FALSE(c.items[0].modality_vector.has_value());
}

TEST(Load, EmptySessionsFileGivesEmptyCorpus) {
  TempDir dir;
  write_text(dir.file("items.jsonl"), kItems);
  write_text(dir.file("sessions.jsonl"), "");
  const SessionCorpus c = load_corpus(dir.file("sessions.jsonl"), dir.file("items.jsonl"));
  EXPECT_TRUE(c.sessions.empty());
  EXPECT_EQ(c.n(), 3u);
}

TEST(Load, MissingItemIsListed) {
  TempDir dir;
  write_text(dir.file("items.jsonl"), kItems);
  write_text(dir.file("sessions.jsonl"), R"({"session_id": 1, "items": [10, 999], "ts": 5})" "\n");
  try {
    load_corpus(dir.file("sessions.jsonl"), dir.file("items.jsonl"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("999"), std::string::npos) << e.what();
  }
}

TEST(Load, MalformedLineNamesFileAndLine) {
  TempDir dir;
  write_text(dir.file("items.jsonl"), kItems);
  write_text(dir.file("sessions.jsonl"),
             R"({"session_id": 1, "items": [10], "ts": 5})" "\n"
             R"({"session_id": 2, "items": [10)" "\n");
  try {
    load_corpus(dir.file("sessions.jsonl"), dir.file("items.jsonl"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("sessions.jsonl:2"), std::string::npos) << e.what();
  }
}

TEST(Load, MissingFieldIsADataError) {
  TempDir dir;
  write_text(dir.file("items.jsonl"), kItems);
  write_text(dir.file("sessions.jsonl"), R"({"session_id": 1, "items": [10]})" "\n");
  EXPECT_THROW(load_corpus(dir.file("sessions.jsonl"), dir.file("items.jsonl")), DataError);
}

TEST(Load, DuplicateItemIdRejected) {
  TempDir dir;
  write_text(dir.file("items.jsonl"), std::string(kItems) + R"({"item_id": 20, "text": ["x"]})" "\n");
  write_text(dir.file("sessions.jsonl"), "");
  EXPECT_THROW(load_corpus(dir.file("sessions.jsonl"), dir.file("items.jsonl")), DataError);
}

TEST(Load, WriteThenLoadRoundTrips) {
  TempDir dir;
  write_text(dir.file("items.jsonl"), kItems);
  write_text(dir.file("sessions.jsonl"),
             R"({"session_id": 4, "items": [10, 20], "ts": 9})" "\n"
             R"({"session_id": 5, "items": [30, 10, 20], "ts": 1})" "\n");
  const SessionCorpus c = load_corpus(dir.file("sessions.jsonl"), dir.file("items.jsonl"));
  write_items(dir.file("dense.jsonl"), c.items, true);
  write_sessions(dir.file("dense_sessions.jsonl"), c.sessions);
  const SessionCorpus back = load_corpus(dir.file("dense_sessions.jsonl"), dir.file("dense.jsonl"));
  ASSERT_EQ(back.sessions.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(back.sessions[i].items, c.sessions[i].items);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.items[i].source_id, c.items[i].source_id);
    EXPECT_EQ(back.items[i].all_tokens(), c.items[i].all_tokens());
  }
}

TEST(Filter, RareItemRemovedEverywhere) {
  // Item 2 appears 4 times, items 0 and 1 appear 5+ times.
  const SessionCorpus c = make_corpus(3, {{0, 1, 2}, {0, 1, 2}, {0, 1, 2}, {0, 1, 2}, {0, 1}});
  const SessionCorpus f = filter_corpus(c, 5, 2);
  EXPECT_EQ(f.n(), 2u);
  for (const Session& s : f.sessions) EXPECT_EQ(s.items, (std::vector<ItemId>{0, 1}));
}

TEST(Filter, LengthOneSessionDropped) {
  const SessionCorpus c = make_corpus(2, {{0}, {0, 1}, {1, 0}});
  const SessionCorpus f = filter_corpus(c, 1, 2);
  ASSERT_EQ(f.sessions.size(), 2u);
  EXPECT_EQ(f.sessions[0].session_id, 1);
}

TEST(Filter, SinglePassDoesNotReevaluateSurvivors) {
  // a=0, c=1, d=2. c appears 5 times and d twice; removing d shrinks the
  // first two sessions to [c], which are dropped, leaving c with 3 uses.
  const SessionCorpus c = make_corpus(3, {{1, 2}, {1, 2}, {1, 0, 0, 0}, {1, 1, 0, 0}});
  const SessionCorpus f = filter_corpus(c, 5, 2);
  EXPECT_EQ(f.n(), 2u);
  ASSERT_EQ(f.sessions.size(), 2u);
  EXPECT_EQ(f.sessions[0].items, (std::vector<ItemId>{1, 0, 0, 0}));
  EXPECT_EQ(f.items[1].source_id, 1);
}

TEST(Filter, ReindexIsDenseAndKeepsCatalogOrder) {
  const SessionCorpus c = make_corpus(4, {{3, 1}, {3, 1}, {1, 3}, {0, 3}, {1, 3}, {3, 1}});
  const SessionCorpus f = filter_corpus(c, 5, 2);
  ASSERT_EQ(f.n(), 2u);
  EXPECT_EQ(f.items[0].source_id, 1);
  EXPECT_EQ(f.items[1].source_id, 3);
  EXPECT_EQ(f.sessions[0].items, (std::vector<ItemId>{1, 0}));
}

TEST(Filter, EverythingRemovedIsAnError) {
  const SessionCorpus c = make_corpus(2, {{0, 1}});
  EXPECT_THROW(filter_corpus(c, 5, 2), DataError);
}

TEST(Filter, PropertiesOnRandomCorpora) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<ItemId> item(0, 9);
    std::uniform_int_distribution<std::size_t> len(1, 6);
    std::vector<std::vector<ItemId>> sessions(40);
    for (auto& s : sessions) {
      s.resize(len(rng));
      for (auto& x : s) x = item(rng);
    }
    const SessionCorpus c = make_corpus(10, sessions);
    SessionCorpus f;
    try {
      f = filter_corpus(c, 5, 2);
    } catch (const DataError&) {
      continue;
    }
    for (const Session& s : f.sessions) {
      EXPECT_GE(s.items.size(), 2u);
      for (ItemId id : s.items) EXPECT_LT(id, f.n());
    }
    for (std::size_t i = 0; i < f.n(); ++i) EXPECT_EQ(f.items[i].item_id, i);
  }
}

TEST(Split, TenSessionsGiveSevenTwoOne) {
  std::vector<Session> s;
  for (int i = 0; i < 10; ++i) s.push_back(Session{i, {0, 1}, 1000 - i});
  const CorpusSplit sp = chronological_split(s);
  EXPECT_EQ(sp.train.size(), 7u);
  EXPECT_EQ(sp.validation.size(), 2u);
  EXPECT_EQ(sp.test.size(), 1u);
  EXPECT_EQ(sp.train.front().session_id, 9);
  EXPECT_EQ(sp.test.front().session_id, 0);
}

TEST(Split, EqualTimestampsFallBackToSessionId) {
  std::vector<Session> s;
  for (int i = 9; i >= 0; --i) s.push_back(Session{i, {0, 1}, 42});
  const CorpusSplit sp = chronological_split(s);
  EXPECT_EQ(sp.train.size(), 7u);
  for (int i = 0; i < 7; ++i) EXPECT_EQ(sp.train[i].session_id, i);
  EXPECT_EQ(sp.validation[0].session_id, 7);
  EXPECT_EQ(sp.test[0].session_id, 9);
}

TEST(Split, TwentyThreeSessionsFloorBoundaries) {
  std::vector<Session> s;
  for (int i = 0; i < 23; ++i) s.push_back(Session{i, {0, 1}, i});
  const CorpusSplit sp = chronological_split(s);
  EXPECT_EQ(sp.train.size(), 16u);
  EXPECT_EQ(sp.validation.size(), 4u);
  EXPECT_EQ(sp.test.size(), 3u);
}

TEST(Split, FewerThanTenSessionsRejected) {
  std::vector<Session> s(9, Session{0, {0, 1}, 0});
  EXPECT_THROW(chronological_split(s), DataError);
}

TEST(Split, PartsAreOrderedAndDisjoint) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 10 + trial * 3;
    std::vector<Session> s;
    std::uniform_int_distribution<std::int64_t> ts(0, 20);
    for (std::size_t i = 0; i < n; ++i) s.push_back(Session{static_cast<std::int64_t>(i), {0, 1}, ts(rng)});
    const CorpusSplit sp = chronological_split(s);
    EXPECT_EQ(sp.train.size() + sp.validation.size() + sp.test.size(), n);
    std::vector<Session> all = sp.train;
    all.insert(all.end(), sp.validation.begin(), sp.validation.end());
    all.insert(all.end(), sp.test.begin(), sp.test.end());
    EXPECT_TRUE(std::is_sorted(all.begin(), all.end(), [](const Session& a, const Session& b) {
      return std::tie(a.timestamp, a.session_id) < std::tie(b.timestamp, b.session_id);
    }));
  }
}

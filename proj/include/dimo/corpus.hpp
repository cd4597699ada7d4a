#pragma once

// Session corpus ingestion, frequency filtering and chronological splitting.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dimo/errors.hpp"

namespace dimo {

using ItemId = std::size_t;

struct Item {
  ItemId item_id = 0;
  /// Id used in the input files; preserved through re-indexing.
  std::int64_t source_id = 0;
  std::vector<std::string> text_tokens;
  std::vector<std::string> generated_tokens;
  std::optional<std::vector<double>> modality_vector;

  /// text_tokens followed by generated_tokens.
  std::vector<std::string> all_tokens() const {
    std::vector<std::string> out = text_tokens;
    out.insert(out.end(), generated_tokens.begin(), generated_tokens.end());
    return out;
  }
};

struct Session {
  std::int64_t session_id = 0;
  std::vector<ItemId> items;
  std::int64_t timestamp = 0;

  std::span<const ItemId> prefix() const {
    return std::span<const ItemId>(items).first(items.empty() ? 0 : items.size() - 1);
  }
  ItemId label() const { return items.back(); }
};

struct SessionCorpus {
  std::vector<Item> items;
  std::vector<Session> sessions;

  std::size_t n() const { return items.size(); }
};

struct CorpusSplit {
  std::vector<Session> train;
  std::vector<Session> validation;
  std::vector<Session> test;
};

namespace detail {

inline std::vector<std::string> string_list(const nlohmann::json& j, const char* key) {
  std::vector<std::string> out;
  if (!j.contains(key) || j.at(key).is_null()) return out;
  for (const auto& v : j.at(key)) out.push_back(v.get<std::string>());
  return out;
}

template <class Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed line: " + e.what());
    }
  }
}

}  // namespace detail

/// Items are loaded in file order; item_id is the position. `file_ids`
/// receives the "item_id" field of every line, which sessions refer to.
inline std::vector<Item> load_items(const std::string& items_path, std::vector<std::int64_t>& file_ids) {
  std::vector<Item> items;
  std::set<std::int64_t> seen;
  file_ids.clear();
  detail::for_each_jsonl(items_path, [&](const nlohmann::json& j) {
    Item item;
    // Workspace catalogs carry the original id alongside the dense one.
    item.source_id = j.contains("source_id") ? j.at("source_id").get<std::int64_t>()
                                             : j.at("item_id").get<std::int64_t>();
    const auto file_id = j.at("item_id").get<std::int64_t>();
    if (!seen.insert(file_id).second) {
      throw DataError(items_path + ": duplicate item_id " + std::to_string(file_id));
    }
    file_ids.push_back(file_id);
    item.item_id = items.size();
    item.text_tokens = detail::string_list(j, "text");
    item.generated_tokens = detail::string_list(j, "gen_text");
    if (j.contains("mod_vec") && !j.at("mod_vec").is_null()) {
      item.modality_vector = j.at("mod_vec").get<std::vector<double>>();
    }
    items.push_back(std::move(item));
  });
  return items;
}

/// Sessions keep source item ids until resolved against a catalog.
struct RawSession {
  std::int64_t session_id = 0;
  std::vector<std::int64_t> items;
  std::int64_t timestamp = 0;
};

inline std::vector<RawSession> load_raw_sessions(const std::string& sessions_path) {
  std::vector<RawSession> sessions;
  detail::for_each_jsonl(sessions_path, [&](const nlohmann::json& j) {
    RawSession s;
    s.session_id = j.at("session_id").get<std::int64_t>();
    s.items = j.at("items").get<std::vector<std::int64_t>>();
    s.timestamp = j.at("ts").get<std::int64_t>();
    sessions.push_back(std::move(s));
  });
  return sessions;
}

/// Loads both JSONL files and resolves session item references against the catalog.
inline SessionCorpus load_corpus(const std::string& sessions_path, const std::string& items_path) {
  SessionCorpus corpus;
  std::vector<std::int64_t> file_ids;
  corpus.items = load_items(items_path, file_ids);
  std::unordered_map<std::int64_t, ItemId> index;
  for (std::size_t i = 0; i < file_ids.size(); ++i) index.emplace(file_ids[i], i);

  std::set<std::int64_t> missing;
  for (RawSession& raw : load_raw_sessions(sessions_path)) {
    Session s{raw.session_id, {}, raw.timestamp};
    for (std::int64_t src : raw.items) {
      auto it = index.find(src);
      if (it == index.end()) {
        missing.insert(src);
        continue;
      }
      s.items.push_back(it->second);
    }
    corpus.sessions.push_back(std::move(s));
  }
  if (!missing.empty()) {
    std::string list;
    for (std::int64_t id : missing) list += (list.empty() ? "" : ", ") + std::to_string(id);
    throw DataError(sessions_path + ": sessions reference items absent from " + items_path + ": " + list);
  }
  return corpus;
}

/// Removes items with fewer than `min_item_freq` interactions (from inside the
/// sessions that contain them), then drops sessions shorter than
/// `min_session_len`. One pass, in that order; surviving items are re-indexed
/// densely in their original catalog order.
inline SessionCorpus filter_corpus(const SessionCorpus& corpus, std::size_t min_item_freq = 5,
                                   std::size_t min_session_len = 2) {
  std::vector<std::size_t> freq(corpus.n(), 0);
  for (const Session& s : corpus.sessions)
    for (ItemId id : s.items) ++freq.at(id);

  constexpr ItemId kDropped = static_cast<ItemId>(-1);
  std::vector<ItemId> remap(corpus.n(), kDropped);
  SessionCorpus out;
  for (const Item& item : corpus.items) {
    if (freq[item.item_id] < min_item_freq) continue;
    remap[item.item_id] = out.items.size();
    Item kept = item;
    kept.item_id = out.items.size();
    out.items.push_back(std::move(kept));
  }
  for (const Session& s : corpus.sessions) {
    Session kept{s.session_id, {}, s.timestamp};
    for (ItemId id : s.items)
      if (remap[id] != kDropped) kept.items.push_back(remap[id]);
    if (kept.items.size() >= min_session_len) out.sessions.push_back(std::move(kept));
  }
  if (out.sessions.empty()) {
    throw DataError("corpus is empty after filtering (min_item_freq=" + std::to_string(min_item_freq) +
                    ", min_session_len=" + std::to_string(min_session_len) +
                    "); lower the thresholds or supply more sessions");
  }
  // Items whose every session was dropped stay in the catalog; n counts the
  // items that passed the frequency filter.
  return out;
}

/// Sorts by (timestamp, session_id) and cuts at floor(0.7 N) and floor(0.9 N).
inline CorpusSplit chronological_split(const std::vector<Session>& sessions) {
  const std::size_t n = sessions.size();
  if (n < 10) {
    throw DataError("chronological split needs at least 10 sessions, got " + std::to_string(n));
  }
  std::vector<Session> sorted = sessions;
  std::stable_sort(sorted.begin(), sorted.end(), [](const Session& a, const Session& b) {
    return std::tie(a.timestamp, a.session_id) < std::tie(b.timestamp, b.session_id);
  });
  const std::size_t train_end = 7 * n / 10;
  const std::size_t valid_end = 9 * n / 10;
  CorpusSplit split;
  split.train.assign(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(train_end));
  split.validation.assign(sorted.begin() + static_cast<std::ptrdiff_t>(train_end),
                          sorted.begin() + static_cast<std::ptrdiff_t>(valid_end));
  split.test.assign(sorted.begin() + static_cast<std::ptrdiff_t>(valid_end), sorted.end());
  return split;
}

// ---------------------------------------------------------------------------
// Writers. Sessions are written with the ids they currently carry.

inline nlohmann::json session_json(const Session& s) {
  return {{"session_id", s.session_id}, {"items", s.items}, {"ts", s.timestamp}};
}

inline void write_sessions(const std::string& path, const std::vector<Session>& sessions) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const Session& s : sessions) out << session_json(s).dump() << '\n';
}

/// Writes the catalog keyed by `source_id`, or by the dense `item_id` with the
/// source id kept in an extra "source_id" field.
inline void write_items(const std::string& path, const std::vector<Item>& items, bool dense_ids = false) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const Item& it : items) {
    nlohmann::json j = {{"item_id", dense_ids ? static_cast<std::int64_t>(it.item_id) : it.source_id}};
    if (dense_ids) j["source_id"] = it.source_id;
    j["text"] = it.text_tokens;
    j["gen_text"] = it.generated_tokens;
    j["mod_vec"] = it.modality_vector ? nlohmann::json(*it.modality_vector) : nlohmann::json(nullptr);
    out << j.dump() << '\n';
  }
}

}  // namespace dimo

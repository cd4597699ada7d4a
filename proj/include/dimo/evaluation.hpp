#pragma once

// Ranking metrics, the cluster-separation score and embedding export.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dimo/corpus.hpp"
#include "dimo/errors.hpp"
#include "dimo/numcore.hpp"

namespace dimo {

/// 1-based rank of `label`; equal scores are ordered by ascending item id.
inline std::size_t rank_of(std::span<const double> scores, ItemId label) {
  const double target = scores[label];
  std::size_t rank = 1;
  for (ItemId i = 0; i < scores.size(); ++i) {
    if (scores[i] > target || (scores[i] == target && i < label)) ++rank;
  }
  return rank;
}

struct ScoredSession {
  std::vector<double> scores;
  ItemId label = 0;
};

struct EvalReport {
  std::map<std::size_t, double> prec_at;
  std::map<std::size_t, double> mrr_at;
  std::size_t n_sessions = 0;
  std::optional<double> disentanglement_score;
};

inline const std::vector<std::size_t> kDefaultCutoffs = {10, 20};

/// Prec@K (hit rate with a single label) and MRR@K from 1-based ranks.
inline EvalReport metrics_from_ranks(std::span<const std::size_t> ranks,
                                     const std::vector<std::size_t>& cutoffs = kDefaultCutoffs) {
  if (ranks.empty()) throw DataError("cannot compute ranking metrics over zero sessions");
  EvalReport report;
  report.n_sessions = ranks.size();
  for (std::size_t k : cutoffs) {
    double hits = 0.0, rr = 0.0;
    for (std::size_t r : ranks) {
      if (r <= k) {
        hits += 1.0;
        rr += 1.0 / static_cast<double>(r);
      }
    }
    report.prec_at[k] = hits / static_cast<double>(ranks.size());
    report.mrr_at[k] = rr / static_cast<double>(ranks.size());
  }
  return report;
}

inline EvalReport rank_metrics(std::span<const ScoredSession> sessions,
                               const std::vector<std::size_t>& cutoffs = kDefaultCutoffs) {
  std::vector<std::size_t> ranks;
  ranks.reserve(sessions.size());
  for (const ScoredSession& s : sessions) {
    if (s.label >= s.scores.size()) throw DataError("label outside the scored catalog");
    ranks.push_back(rank_of(s.scores, s.label));
  }
  return metrics_from_ranks(ranks, cutoffs);
}

/// Distance between the two table centroids over their mean RMS spread.
inline double disentanglement_score(const Tensor& ids, const Tensor& modality, double eps = 1e-12) {
  if (ids.cols() != modality.cols()) {
    throw ShapeError("disentanglement_score shape mismatch: " + shape_string(ids.shape()) + " vs " +
                     shape_string(modality.shape()));
  }
  auto centroid = [](const Tensor& t) {
    std::vector<double> c(t.cols(), 0.0);
    for (std::size_t r = 0; r < t.rows(); ++r)
      for (std::size_t j = 0; j < t.cols(); ++j) c[j] += t(r, j) / static_cast<double>(t.rows());
    return c;
  };
  auto rms_spread = [](const Tensor& t, const std::vector<double>& c) {
    double s = 0.0;
    for (std::size_t r = 0; r < t.rows(); ++r)
      for (std::size_t j = 0; j < t.cols(); ++j) s += (t(r, j) - c[j]) * (t(r, j) - c[j]);
    return std::sqrt(s / static_cast<double>(t.rows()));
  };
  const auto ci = centroid(ids);
  const auto cm = centroid(modality);
  double dist = 0.0;
  for (std::size_t j = 0; j < ci.size(); ++j) dist += (ci[j] - cm[j]) * (ci[j] - cm[j]);
  return std::sqrt(dist) / (0.5 * (rms_spread(ids, ci) + rms_spread(modality, cm)) + eps);
}

// ---------------------------------------------------------------------------
// Reports.

inline std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  char buf[64];
  os << "sessions        " << report.n_sessions << "\n";
  for (const auto& [k, v] : report.prec_at) {
    std::snprintf(buf, sizeof buf, "Prec@%-10zu %.4f\n", k, v);
    os << buf;
  }
  for (const auto& [k, v] : report.mrr_at) {
    std::snprintf(buf, sizeof buf, "MRR@%-11zu %.4f\n", k, v);
    os << buf;
  }
  if (report.disentanglement_score) {
    std::snprintf(buf, sizeof buf, "disentanglement %.4f\n", *report.disentanglement_score);
    os << buf;
  }
  return os.str();
}

inline nlohmann::json report_json(const EvalReport& report) {
  nlohmann::json j;
  j["n_sessions"] = report.n_sessions;
  for (const auto& [k, v] : report.prec_at) j["prec_at"][std::to_string(k)] = v;
  for (const auto& [k, v] : report.mrr_at) j["mrr_at"][std::to_string(k)] = v;
  j["disentanglement_score"] =
      report.disentanglement_score ? nlohmann::json(*report.disentanglement_score) : nlohmann::json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// CSV export: header "id,e0,...,e{d-1}", one row per item.

inline void write_embedding_csv(const std::string& path, const Tensor& table, std::span<const std::int64_t> ids) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "id";
  for (std::size_t j = 0; j < table.cols(); ++j) out << ",e" << j;
  out << "\n";
  char buf[32];
  for (std::size_t r = 0; r < table.rows(); ++r) {
    out << (ids.empty() ? static_cast<std::int64_t>(r) : ids[r]);
    for (std::size_t j = 0; j < table.cols(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.17g", table(r, j));
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw DataError("failed writing " + path);
}

struct EmbeddingCsv {
  std::vector<std::int64_t> ids;
  Tensor table;
};

inline EmbeddingCsv read_embedding_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  std::getline(in, line);
  EmbeddingCsv out;
  std::vector<double> data;
  std::size_t cols = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    out.ids.push_back(std::stoll(cell));
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      data.push_back(std::stod(cell));
      ++c;
    }
    if (cols == 0) cols = c;
    if (c != cols || c == 0) throw DataError(path + ": ragged embedding row");
  }
  if (out.ids.empty()) throw DataError(path + ": no embedding rows");
  out.table = Tensor(Shape{out.ids.size(), cols}, std::move(data));
  return out;
}

/// Writes ids.csv and modality.csv into `dir` (created if missing).
inline void export_embeddings(const std::string& dir, const Tensor& ids_table, const Tensor& modality_table,
                              std::span<const std::int64_t> item_ids = {}) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir + ": " + ec.message());
  write_embedding_csv((std::filesystem::path(dir) / "ids.csv").string(), ids_table, item_ids);
  write_embedding_csv((std::filesystem::path(dir) / "modality.csv").string(), modality_table, item_ids);
}

}  // namespace dimo

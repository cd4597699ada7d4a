#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "dimo/dimo.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dimo::cli {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  TrainConfig train;
  ExplainConfig explain;
  std::string sessions;
  std::string items;
  std::size_t min_item_freq = 5;
  std::size_t min_session_len = 2;
  /// "hashed" or a JSONL file of {"token", "vec"} lines.
  std::string encoder = "hashed";
  std::uint64_t encoder_seed = 0;
};

json to_json(const RunConfig& c) {
  json j = dimo::to_json(c.train);
  j["count_threshold"] = c.explain.count_threshold;
  j["sim_threshold"] = c.explain.sim_threshold;
  j["sessions"] = c.sessions;
  j["items"] = c.items;
  j["min_item_freq"] = c.min_item_freq;
  j["min_session_len"] = c.min_session_len;
  j["encoder"] = c.encoder;
  j["encoder_seed"] = c.encoder_seed;
  return j;
}

void update_from_json(RunConfig& c, const json& j) {
  if (j.is_null()) return;
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  json train;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "count_threshold") c.explain.count_threshold = v.get<std::uint64_t>();
      else if (key == "sim_threshold") c.explain.sim_threshold = v.get<double>();
      else if (key == "sessions") c.sessions = v.get<std::string>();
      else if (key == "items") c.items = v.get<std::string>();
      else if (key == "min_item_freq") c.min_item_freq = v.get<std::size_t>();
      else if (key == "min_session_len") c.min_session_len = v.get<std::size_t>();
      else if (key == "encoder") c.encoder = v.get<std::string>();
      else if (key == "encoder_seed") c.encoder_seed = v.get<std::uint64_t>();
      else train[key] = v;
    }
    if (!train.is_null()) dimo::update_from_json(c.train, train);
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

/// Every config key becomes a --flag whose shown default is the built-in one.
class ConfigFlags {
 public:
  void attach(CLI::App* app) {
    const json defaults = to_json(RunConfig{});
    for (const auto& [key, v] : defaults.items()) {
      std::string flag = "--" + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      std::string shown = v.is_string() ? v.get<std::string>() : v.dump();
      const char* type = v.is_string() ? "TEXT" : v.is_boolean() ? "BOOL" : v.is_number_unsigned() ? "UINT" : "FLOAT";
      auto* opt = app->add_option(flag, values_[app][key], "config key '" + key + "'")->default_str(shown);
      opt->type_name(type);
      options_[app].emplace_back(key, opt);
    }
    app->add_option("--config", config_path_[app], "JSON config file (flags override it)")->default_str("");
  }

  /// Built-in defaults, then `base`, then the config file, then explicit flags.
  RunConfig resolve(CLI::App* app, const json& base = json()) const {
    RunConfig c;
    if (!base.is_null()) update_from_json(c, base);
    const std::string& path = config_path_.at(app);
    if (!path.empty()) {
      std::ifstream in(path);
      if (!in) throw DataError("cannot open config file " + path);
      json file;
      try {
        file = json::parse(in);
      } catch (const json::parse_error& e) {
        throw DataError(path + ": " + e.what());
      }
      update_from_json(c, file);
    }
    const json defaults = to_json(RunConfig{});
    json flags;
    for (const auto& [key, opt] : options_.at(app)) {
      if (opt->count() == 0) continue;
      const std::string& raw = values_.at(app).at(key);
      const json& d = defaults.at(key);
      try {
        if (d.is_string()) flags[key] = raw;
        else if (d.is_boolean()) flags[key] = parse_bool(raw);
        else if (d.is_number_unsigned()) flags[key] = std::stoull(raw);
        else flags[key] = std::stod(raw);
      } catch (const std::logic_error&) {
        throw UsageError("bad value '" + raw + "' for --" + key);
      }
    }
    update_from_json(c, flags);
    try {
      c.train.validate();
      c.explain.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return c;
  }

 private:
  static bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument(s);
  }

  std::map<CLI::App*, std::map<std::string, std::string>> values_;
  std::map<CLI::App*, std::vector<std::pair<std::string, CLI::Option*>>> options_;
  std::map<CLI::App*, std::string> config_path_;
};

// ---------------------------------------------------------------------------
// Workspace.

struct Workspace {
  fs::path root;

  std::string file(const std::string& name) const { return (root / name).string(); }

  std::string require(const std::string& name, const std::string& producer) const {
    const std::string path = file(name);
    if (!fs::exists(path)) throw DataError("missing " + path + " (run `dimo " + producer + "` first)");
    return path;
  }

  std::vector<Item> items() const {
    std::vector<std::int64_t> file_ids;
    return load_items(require("items.jsonl", "prepare"), file_ids);
  }

  std::vector<Session> sessions(const std::string& split) const {
    return load_corpus(require(split + ".jsonl", "prepare"), file("items.jsonl")).sessions;
  }

  CoocGraph graph() const { return read_graph(require("graph.bin", "graph")); }

  LoadedCheckpoint checkpoint() const {
    require("checkpoint/manifest.json", "train");
    return load_checkpoint(file("checkpoint"));
  }

  /// Config stored with the checkpoint, if one exists.
  json trained_config() const {
    const fs::path manifest = root / "checkpoint" / "manifest.json";
    if (!fs::exists(manifest)) return json();
    std::ifstream in(manifest);
    try {
      return json::parse(in).at("config");
    } catch (const json::exception& e) {
      throw DataError(manifest.string() + ": " + e.what());
    }
  }
};

TokenEncoder make_encoder(const RunConfig& c) {
  if (c.encoder == "hashed") return TokenEncoder::hashed(c.train.encoder_dim, c.encoder_seed);
  return TokenEncoder::from_file(c.encoder, c.encoder_seed);
}

void echo_config(const RunConfig& c) { std::cerr << "effective config: " << to_json(c).dump() << "\n"; }

std::string fmt(double x, const char* f = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

/// Comma-separated source ids resolved against the workspace catalog.
std::vector<ItemId> parse_session(const std::string& text, const std::vector<Item>& items) {
  std::unordered_map<std::int64_t, ItemId> index;
  for (const Item& it : items) index.emplace(it.source_id, it.item_id);
  std::vector<ItemId> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    std::int64_t id = 0;
    try {
      std::size_t used = 0;
      id = std::stoll(cell, &used);
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::logic_error&) {
      throw UsageError("--session: '" + cell + "' is not an item id");
    }
    auto it = index.find(id);
    if (it == index.end()) throw DataError("--session: item " + cell + " is not in the prepared catalog");
    out.push_back(it->second);
  }
  if (out.empty()) throw UsageError("--session needs at least one item id");
  return out;
}

/// Everything needed to score sessions with a trained checkpoint.
struct Model {
  std::vector<Item> items;
  CoocGraph graph;
  LoadedCheckpoint checkpoint;
  Tensor pooled;

  Model(const Workspace& ws, const RunConfig& c)
      : items(ws.items()), graph(ws.graph()), checkpoint(ws.checkpoint()),
        pooled(pooled_modality_table(items, make_encoder(c))) {}

  Recommender recommender(const RunConfig& c) const {
    return Recommender(checkpoint.params, graph, pooled, c.train.propagation_steps);
  }
  std::int64_t source(ItemId i) const { return items.at(i).source_id; }
};

// ---------------------------------------------------------------------------
// Commands.

int cmd_prepare(const Workspace& ws, const RunConfig& c) {
  if (c.sessions.empty() || c.items.empty()) throw UsageError("prepare needs --sessions and --items");
  const SessionCorpus raw = load_corpus(c.sessions, c.items);
  const SessionCorpus corpus = filter_corpus(raw, c.min_item_freq, c.min_session_len);
  const CorpusSplit split = chronological_split(corpus.sessions);
  fs::create_directories(ws.root);
  write_items(ws.file("items.jsonl"), corpus.items, true);
  write_sessions(ws.file("train.jsonl"), split.train);
  write_sessions(ws.file("valid.jsonl"), split.validation);
  write_sessions(ws.file("test.jsonl"), split.test);
  std::cout << "items " << corpus.n() << "\n"
            << "sessions " << corpus.sessions.size() << " (dropped " << raw.sessions.size() - corpus.sessions.size()
            << ")\n"
            << "train " << split.train.size() << "\nvalid " << split.validation.size() << "\ntest "
            << split.test.size() << "\n";
  return 0;
}

int cmd_graph(const Workspace& ws, const RunConfig&) {
  const auto items = ws.items();
  const auto train = ws.sessions("train");
  const CoocGraph graph = build_matrix(count_pairs(train), items.size());
  write_graph(ws.file("graph.bin"), graph);
  const std::string summary = graph_summary(graph, [&](ItemId i) { return items.at(i).source_id; });
  std::ofstream(ws.file("graph_summary.txt")) << summary;
  std::cout << summary;
  return 0;
}

int cmd_train(const Workspace& ws, const RunConfig& c) {
  const auto items = ws.items();
  const CoocGraph graph = ws.graph();
  const auto train_sessions = ws.sessions("train");
  const auto valid = ws.sessions("valid");
  if (graph.n() != items.size()) throw DataError("graph.bin does not match items.jsonl; rerun `dimo graph`");
  const TokenEncoder encoder = make_encoder(c);
  const Tensor pooled = pooled_modality_table(items, encoder);
  if (encoder.fallback_count() > 0) {
    std::cerr << "warning: " << encoder.fallback_count() << " tokens missing from " << c.encoder << " were hashed\n";
  }
  const TrainResult result = train(c.train, train_sessions, valid, graph, pooled, [](const EpochLog& e) {
    std::cerr << "epoch " << e.epoch << " loss " << fmt(e.loss.total) << " rec " << fmt(e.loss.rec) << " val_prec20 "
              << fmt(e.val_prec20, "%.4f") << " val_mrr20 " << fmt(e.val_mrr20, "%.4f") << "\n";
  });
  save_checkpoint(ws.file("checkpoint"), result.params,
                  CheckpointInfo{to_json(c), result.best_epoch, result.best_val_prec20, result.best_val_mrr20});
  std::ofstream(ws.file("train_log.csv")) << training_log_csv(result.history);
  if (result.loss_trend_flagged) std::cerr << "warning: training loss did not decrease across 10-epoch windows\n";
  if (result.truncated_sequences > 0) {
    std::cerr << "note: " << result.truncated_sequences << " sequences truncated to max_len " << c.train.max_len << "\n";
  }
  std::cout << "epochs " << result.history.size() << "\nbest_epoch " << result.best_epoch << "\nval_prec20 "
            << fmt(result.best_val_prec20, "%.4f") << "\nval_mrr20 " << fmt(result.best_val_mrr20, "%.4f") << "\n";
  return 0;
}

struct EvalOptions {
  std::string split = "test";
  bool json = false;
  bool info = false;
  bool exclude_seen = false;
};

int cmd_eval(const Workspace& ws, const RunConfig& c, const EvalOptions& o) {
  if (o.split != "train" && o.split != "valid" && o.split != "test") {
    throw UsageError("--split must be train, valid or test");
  }
  const Model model(ws, c);
  // --sessions names an external file in source ids; otherwise a workspace split.
  std::vector<Session> sessions;
  if (!c.sessions.empty()) {
    const auto source = load_raw_sessions(c.sessions);
    std::unordered_map<std::int64_t, ItemId> index;
    for (const Item& it : model.items) index.emplace(it.source_id, it.item_id);
    for (const RawSession& r : source) {
      Session s{r.session_id, {}, r.timestamp};
      for (std::int64_t id : r.items)
        if (auto it = index.find(id); it != index.end()) s.items.push_back(it->second);
      if (s.items.size() >= 2) sessions.push_back(std::move(s));
    }
  } else {
    sessions = ws.sessions(o.split);
  }
  std::erase_if(sessions, [](const Session& s) { return s.items.size() < 2; });
  Recommender rec = model.recommender(c);
  EvalReport report = rec.evaluate(sessions, kDefaultCutoffs, o.exclude_seen);
  report.disentanglement_score = disentanglement_score(rec.id_embeddings(), rec.modality_embeddings());
  const auto& info = model.checkpoint.info;
  if (o.json) {
    json j = report_json(report);
    if (o.info) j["checkpoint"] = {{"epoch", info.epoch}, {"val_prec20", info.val_prec20}, {"val_mrr20", info.val_mrr20}};
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << format_report(report);
    if (o.info) {
      std::cout << "checkpoint epoch " << info.epoch << "\ncheckpoint val_prec20 " << fmt(info.val_prec20, "%.4f")
                << "\ncheckpoint val_mrr20 " << fmt(info.val_mrr20, "%.4f") << "\n";
    }
  }
  return 0;
}

struct QueryOptions {
  std::string session;
  std::size_t top_k = 5;
  bool json = false;
  bool exclude_seen = false;
};

int cmd_recommend(const Workspace& ws, const RunConfig& c, const QueryOptions& o) {
  const Model model(ws, c);
  const auto prefix = parse_session(o.session, model.items);
  Recommender rec = model.recommender(c);
  for (const auto& [item, score] : rec.top_k(prefix, o.top_k, o.exclude_seen)) {
    std::cout << model.source(item) << "\t" << fmt(score) << "\n";
  }
  return 0;
}

int cmd_explain(const Workspace& ws, const RunConfig& c, const QueryOptions& o) {
  const Model model(ws, c);
  const auto prefix = parse_session(o.session, model.items);
  const TokenEncoder encoder = make_encoder(c);
  Recommender rec = model.recommender(c);
  const auto name = [&](ItemId i) { return "item " + std::to_string(model.source(i)); };
  json out = json::array();
  for (const auto& [item, score] : rec.top_k(prefix, o.top_k, o.exclude_seen)) {
    const Explanation e =
        select_template(prefix, item, model.graph.counts(), model.items, encoder, c.explain, name);
    if (o.json) {
      json j = explanation_json(e, [&](ItemId i) { return model.source(i); });
      j["score"] = score;
      out.push_back(j);
    } else {
      std::cout << model.source(item) << "\t" << fmt(score) << "\t" << e.text << "\n";
    }
  }
  if (o.json) std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_export(const Workspace& ws, const RunConfig& c, const std::string& out_dir) {
  const Model model(ws, c);
  Recommender rec = model.recommender(c);
  std::vector<std::int64_t> ids;
  for (const Item& it : model.items) ids.push_back(it.source_id);
  const std::string dir = out_dir.empty() ? ws.file("embeddings") : out_dir;
  export_embeddings(dir, rec.id_embeddings(), rec.modality_embeddings(), ids);
  std::cout << dir << "/ids.csv\n" << dir << "/modality.csv\n";
  return 0;
}

struct FixtureOptions {
  std::string out = "fixture";
  std::size_t n_items = 50;
  std::size_t n_sessions = 500;
  double mix = 0.5;
  std::uint64_t seed = 7;
};

int cmd_fixtures(const FixtureOptions& o) {
  const PlantedCorpus planted = generate(PlantedRuleSpec::standard(o.n_items, o.n_sessions, o.mix, o.seed));
  fs::create_directories(o.out);
  write_items((fs::path(o.out) / "items.jsonl").string(), planted.corpus.items);
  write_sessions((fs::path(o.out) / "sessions.jsonl").string(), planted.corpus.sessions);
  write_causes((fs::path(o.out) / "causes.jsonl").string(), planted);
  const auto modality = std::count(planted.causes.begin(), planted.causes.end(), Cause::modality);
  std::cout << "items " << planted.corpus.n() << "\nsessions " << planted.corpus.sessions.size()
            << "\nmodality_sessions " << modality << "\n";
  return 0;
}

}  // namespace dimo::cli

int main(int argc, char** argv) {
  using namespace dimo;
  using namespace dimo::cli;
  CLI::App app{"DIMO session-based recommendation"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(36);

  ConfigFlags flags;
  std::string workspace = "workspace";
  EvalOptions eval_opts;
  QueryOptions rec_opts, explain_opts;
  explain_opts.top_k = 3;
  std::string export_dir;
  FixtureOptions fixture_opts;

  auto add = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--workspace", workspace, "workspace directory")->capture_default_str();
    flags.attach(sub);
    return sub;
  };
  CLI::App* prepare = add("prepare", "filter and split a corpus into the workspace");
  CLI::App* graph = add("graph", "build the co-occurrence graph from the training split");
  CLI::App* train_cmd = add("train", "train and write checkpoint/ and train_log.csv");
  CLI::App* eval = add("eval", "evaluate a checkpoint on a split");
  eval->add_option("--split", eval_opts.split, "train, valid or test")->capture_default_str();
  eval->add_flag("--json", eval_opts.json, "print the report as JSON");
  eval->add_flag("--info", eval_opts.info, "include checkpoint epoch and validation metrics");
  eval->add_flag("--exclude-seen", eval_opts.exclude_seen, "skip prefix items when ranking");
  CLI::App* recommend = add("recommend", "top-K items for a session");
  CLI::App* explain = add("explain", "top-K items with explanations");
  for (auto [sub, o] : {std::pair{recommend, &rec_opts}, std::pair{explain, &explain_opts}}) {
    sub->add_option("--session", o->session, "comma-separated item ids")->required();
    sub->add_option("--top-k", o->top_k, "number of items")->capture_default_str();
    sub->add_flag("--exclude-seen", o->exclude_seen, "skip items already in the session");
  }
  explain->add_flag("--json", explain_opts.json, "print Explanation records as JSON");
  CLI::App* export_cmd = add("export-embeddings", "write ids.csv and modality.csv");
  export_cmd->add_option("--out", export_dir, "output directory")->default_str("<workspace>/embeddings");
  CLI::App* fixtures = app.add_subcommand("fixtures", "write the planted-rule synthetic corpus");
  fixtures->add_option("--out", fixture_opts.out, "output directory")->capture_default_str();
  fixtures->add_option("--n-items", fixture_opts.n_items, "catalog size")->capture_default_str();
  fixtures->add_option("--n-sessions", fixture_opts.n_sessions, "session count")->capture_default_str();
  fixtures->add_option("--mix", fixture_opts.mix, "fraction of modality-rule sessions")->capture_default_str();
  fixtures->add_option("--seed", fixture_opts.seed, "generator seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (fixtures->parsed()) return cmd_fixtures(fixture_opts);
    const Workspace ws{workspace};
    CLI::App* sub = app.get_subcommands().front();
    const bool post_train = sub != prepare && sub != graph && sub != train_cmd;
    const RunConfig config = flags.resolve(sub, post_train ? ws.trained_config() : json());
    echo_config(config);
    if (sub == prepare) return cmd_prepare(ws, config);
    if (sub == graph) return cmd_graph(ws, config);
    if (sub == train_cmd) return cmd_train(ws, config);
    if (sub == eval) return cmd_eval(ws, config, eval_opts);
    if (sub == recommend) return cmd_recommend(ws, config, rec_opts);
    if (sub == explain) return cmd_explain(ws, config, explain_opts);
    return cmd_export(ws, config, export_dir);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

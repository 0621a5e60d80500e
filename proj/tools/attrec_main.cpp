// attrec: attribute-aware multi-vector sequential recommender.
// Subcommands cover the full pipeline: prepare, synth, train, index,
// evaluate, recommend, ablate, selfcheck.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "attrec/corpus.hpp"
#include "attrec/encoder.hpp"
#include "attrec/eval.hpp"
#include "attrec/item_index.hpp"
#include "attrec/matching.hpp"
#include "attrec/selfcheck.hpp"
#include "attrec/tokenizer.hpp"
#include "attrec/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace attrec;

namespace {

uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  Fnv1a h;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) h.update(buf, static_cast<size_t>(in.gcount()));
  return h.digest();
}

// Settings merge: defaults < config file < command-line flags. The merged
// object is embedded into every output artifact for provenance.
struct Settings {
  json merged;

  template <typename T>
  T get(const std::string& key) const {
    return merged.at(key).get<T>();
  }

  TokenizerConfig tokenizer() const {
    return {get<int>("value_cap"), get<int>("max_items"), get<int>("max_tokens")};
  }

  EncoderConfig encoder(int vocab_size) const {
    EncoderConfig cfg;
    cfg.vocab_size = vocab_size;
    cfg.hidden_dim = get<int>("hidden_dim");
    cfg.proj_dim = get<int>("proj_dim");
    cfg.num_layers = get<int>("num_layers");
    cfg.num_heads = get<int>("num_heads");
    cfg.ff_dim = get<int>("ff_dim");
    cfg.max_positions = get<int>("max_positions");
    cfg.dropout = get<double>("dropout");
    cfg.final_layer_norm = get<bool>("final_layer_norm");
    return cfg;
  }

  MatchConfig match() const {
    MatchConfig cfg;
    cfg.agg = agg_from_string(get<std::string>("agg"));
    cfg.cosine_eps = get<double>("cosine_eps");
    return cfg;
  }

  PoolKind pool() const { return pool_kind_from_string(get<std::string>("pool")); }

  TrainConfig train() const {
    TrainConfig cfg;
    cfg.tau = get<double>("tau");
    cfg.lr = get<double>("lr");
    cfg.batch_size = get<int>("batch_size");
    cfg.accum_steps = get<int>("accum_steps");
    cfg.warmup_steps = get<int>("warmup_steps");
    cfg.patience = get<int>("patience");
    cfg.stage1_patience = get<int>("stage1_patience");
    cfg.max_epochs = get<int>("max_epochs");
    cfg.negatives = get<std::string>("negatives") == "in_batch" ? TrainConfig::Negatives::InBatch
                                                                : TrainConfig::Negatives::Full;
    cfg.refresh = get<std::string>("refresh") == "per_step" ? TrainConfig::Refresh::PerStep
                                                            : TrainConfig::Refresh::PerEpoch;
    cfg.seed = get<uint64_t>("seed");
    cfg.threads = threads();
    cfg.eval_k = get<int>("eval_k");
    return cfg;
  }

  int threads() const {
    if (get<bool>("deterministic")) return 1;
    return get<int>("threads");
  }

  uint64_t seed() const { return get<uint64_t>("seed"); }
};

json default_settings() {
  return json{
      {"value_cap", 32},        {"max_items", 50},      {"max_tokens", 1024},
      {"hidden_dim", 64},       {"proj_dim", 32},       {"num_layers", 2},
      {"num_heads", 4},         {"ff_dim", 128},        {"max_positions", 1024},
      {"dropout", 0.0},         {"final_layer_norm", true},
      {"agg", "max"},           {"cosine_eps", 1e-8},   {"pool", "attribute"},
      {"tau", 0.05},            {"lr", 1e-3},           {"batch_size", 8},
      {"accum_steps", 1},       {"warmup_steps", 100},  {"patience", 5},
      {"stage1_patience", -1},  {"max_epochs", 50},     {"negatives", "full"},
      {"refresh", "per_epoch"}, {"seed", 1},            {"threads", 2},
      {"eval_k", 10},           {"deterministic", false},
      {"min_freq", 1},          {"core_k", 5},
      {"synth_users", 500},     {"synth_items", 200},   {"synth_brands", 8},
      {"synth_categories", 8},  {"synth_seq_len", 5},   {"synth_sharpness", 0.9},
  };
}

// Tracks which flags were explicitly passed so they override the config
// file, which in turn overrides defaults.
struct SettingsBuilder {
  CLI::App* cmd = nullptr;
  std::string config_path;
  std::map<std::string, std::string> str_flags;
  std::map<std::string, int> int_flags;
  std::map<std::string, double> dbl_flags;
  std::map<std::string, uint64_t> u64_flags;
  std::map<std::string, bool> bool_flags;

  void add_str(const std::string& flag, const std::string& key, const std::string& help) {
    flag_names_[key] = flag;
    cmd->add_option(flag, str_flags[key], help);
  }
  void add_int(const std::string& flag, const std::string& key, const std::string& help) {
    flag_names_[key] = flag;
    cmd->add_option(flag, int_flags[key], help);
  }
  void add_dbl(const std::string& flag, const std::string& key, const std::string& help) {
    flag_names_[key] = flag;
    cmd->add_option(flag, dbl_flags[key], help);
  }
  void add_u64(const std::string& flag, const std::string& key, const std::string& help) {
    flag_names_[key] = flag;
    cmd->add_option(flag, u64_flags[key], help);
  }
  void add_bool(const std::string& flag, const std::string& key, const std::string& help) {
    flag_names_[key] = flag;
    cmd->add_flag(flag, bool_flags[key], help);
  }

  void add_common(CLI::App* app) {
    cmd = app;
    app->add_option("--config", config_path, "JSON config file; flags override it");
    add_int("--threads", "threads", "worker threads");
    add_bool("--deterministic", "deterministic", "single-threaded deterministic numerics");
    add_u64("--seed", "seed", "master seed");
  }

  void add_tokenizer() {
    add_int("--value-cap", "value_cap", "max tokens per attribute value");
    add_int("--max-items", "max_items", "most recent items kept per sequence");
    add_int("--max-tokens", "max_tokens", "total token cap per input");
  }

  void add_encoder() {
    add_int("--hidden-dim", "hidden_dim", "encoder hidden size d");
    add_int("--proj-dim", "proj_dim", "projected size d'");
    add_int("--layers", "num_layers", "transformer layers");
    add_int("--heads", "num_heads", "attention heads");
    add_int("--ff-dim", "ff_dim", "feed-forward size");
    add_int("--max-positions", "max_positions", "position table size");
    add_dbl("--dropout", "dropout", "dropout rate (train mode only)");
  }

  void add_match() {
    add_str("--agg", "agg", "sequence aggregation: max|mean");
    add_str("--pool", "pool", "pooling: attribute|item|bos");
  }

  void add_train() {
    add_dbl("--tau", "tau", "softmax temperature");
    add_dbl("--lr", "lr", "learning rate");
    add_int("--batch-size", "batch_size", "micro-batch size");
    add_int("--accum-steps", "accum_steps", "gradient accumulation steps");
    add_int("--warmup-steps", "warmup_steps", "linear warm-up steps");
    add_int("--patience", "patience", "early-stop patience (epochs)");
    add_int("--stage1-patience", "stage1_patience", "stage-1 patience; -1 reuses --patience");
    add_int("--max-epochs", "max_epochs", "epoch cap per stage");
    add_str("--negatives", "negatives", "full|in_batch");
    add_str("--refresh", "refresh", "per_epoch|per_step item refresh (stage 1)");
    add_int("--eval-k", "eval_k", "early-stopping NDCG cutoff");
    add_int("--min-freq", "min_freq", "vocabulary frequency cutoff");
  }

  void add_synth() {
    add_int("--users", "synth_users", "synthetic users");
    add_int("--items", "synth_items", "synthetic items");
    add_int("--brands", "synth_brands", "distinct brands");
    add_int("--categories", "synth_categories", "distinct categories");
    add_int("--seq-len", "synth_seq_len", "interactions per user");
    add_dbl("--sharpness", "synth_sharpness", "preference sharpness in [0,1]");
  }

  Settings finalize() {
    json merged = default_settings();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot open config file " + config_path);
      json file_cfg = json::parse(in, nullptr, true, true);
      for (auto& [k, v] : file_cfg.items()) {
        if (!merged.contains(k)) throw ConfigError("unknown config key: " + k);
        merged[k] = v;
      }
    }
    auto apply = [&](const auto& flags) {
      for (const auto& [key, value] : flags)
        if (cmd->count(flag_names_.at(key)) > 0) merged[key] = value;
    };
    apply(str_flags);
    apply(int_flags);
    apply(dbl_flags);
    apply(u64_flags);
    apply(bool_flags);
    Settings s;
    s.merged = std::move(merged);
    return s;
  }

 private:
  std::map<std::string, std::string> flag_names_;  // settings key -> flag
};

std::string default_out_dir() {
  const char* env = std::getenv("ATTREC_OUT");
  return env ? env : "out";
}

void write_text(const std::string& path, const std::string& content) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << content;
}

json provenance(const Settings& settings, const std::map<std::string, std::string>& inputs) {
  json hashes = json::object();
  for (const auto& [name, path] : inputs) hashes[name] = hash_hex(file_hash(path));
  return json{{"run_config", settings.merged}, {"input_hashes", hashes}};
}

struct LoadedData {
  Catalog catalog;
  std::vector<InteractionSequence> sequences;
  DatasetSplit split;
  std::string items_path;
  std::string interactions_path;
};

LoadedData load_dataset(const std::string& data_dir) {
  LoadedData d;
  d.items_path = (fs::path(data_dir) / "items.jsonl").string();
  d.interactions_path = (fs::path(data_dir) / "interactions.jsonl").string();
  d.catalog = load_items(d.items_path);
  d.sequences = load_interactions(d.interactions_path);
  for (const auto& s : d.sequences)
    for (const auto& id : s.item_ids)
      if (!d.catalog.find(id)) throw DataError("sequence references unknown item " + id);
  d.split = split_leave_one_out(d.sequences);
  return d;
}

Model build_model(const Settings& settings, const Catalog& catalog) {
  Model m;
  m.vocab = build_vocab(catalog, settings.get<int>("min_freq"));
  m.params = EncoderParams::init(settings.encoder(m.vocab.size()), settings.seed());
  m.tok = settings.tokenizer();
  m.pool = settings.pool();
  return m;
}

int cmd_prepare(const Settings& settings, const std::string& items, const std::string& interactions,
                const std::string& out_dir) {
  Catalog catalog = load_items(items);
  std::vector<InteractionSequence> sequences = load_interactions(interactions);
  const int k = settings.get<int>("core_k");
  CoreFilterResult filtered = apply_core_filter(sequences, catalog, k);
  DatasetSplit split = split_leave_one_out(filtered.sequences);

  fs::create_directories(out_dir);
  save_items(filtered.catalog, (fs::path(out_dir) / "items.jsonl").string());
  save_interactions(filtered.sequences, (fs::path(out_dir) / "interactions.jsonl").string());

  std::ofstream split_out((fs::path(out_dir) / "split.jsonl").string());
  auto dump_view = [&](const std::vector<SplitExample>& view, const char* role) {
    for (const auto& e : view)
      split_out << json{{"user_id", e.user_id}, {"prefix", e.prefix}, {"target", e.target}, {"role", role}}
                       .dump()
                << "\n";
  };
  dump_view(split.train, "train");
  dump_view(split.valid, "valid");
  dump_view(split.test, "test");

  json stats = provenance(settings, {{"items", items}, {"interactions", interactions}});
  stats["dropped_missing_title"] = catalog.dropped_missing_title;
  stats["filter_rounds"] = filtered.rounds;
  stats["removed_users"] = filtered.removed_users;
  stats["removed_items"] = filtered.removed_items;
  stats["skipped_short_sequences"] = split.skipped_short;
  stats["users"] = filtered.sequences.size();
  stats["items"] = filtered.catalog.size();
  stats["train_pairs"] = split.train.size();
  stats["valid_pairs"] = split.valid.size();
  stats["test_pairs"] = split.test.size();
  write_text((fs::path(out_dir) / "stats.json").string(), stats.dump(2) + "\n");
  std::cout << stats.dump(2) << std::endl;
  return 0;
}

int cmd_synth(const Settings& settings, const std::string& out_dir) {
  SyntheticConfig cfg;
  cfg.num_users = settings.get<int>("synth_users");
  cfg.num_items = settings.get<int>("synth_items");
  cfg.num_brands = settings.get<int>("synth_brands");
  cfg.num_categories = settings.get<int>("synth_categories");
  cfg.seq_len = settings.get<int>("synth_seq_len");
  cfg.sharpness = settings.get<double>("synth_sharpness");
  cfg.seed = settings.seed();
  SyntheticData data = generate_synthetic(cfg);

  fs::create_directories(out_dir);
  save_items(data.catalog, (fs::path(out_dir) / "items.jsonl").string());
  save_interactions(data.sequences, (fs::path(out_dir) / "interactions.jsonl").string());
  json prefs = json::array();
  for (const auto& p : data.preferences)
    prefs.push_back(json{{"user_id", p.user_id}, {"key", p.key}, {"value", p.value}});
  json out{{"run_config", settings.merged}, {"preferences", prefs}};
  write_text((fs::path(out_dir) / "preferences.json").string(), out.dump(2) + "\n");
  std::cout << "synth: wrote " << data.catalog.size() << " items, " << data.sequences.size()
            << " sequences to " << out_dir << std::endl;
  return 0;
}

int cmd_train(const Settings& settings, const std::string& data_dir, const std::string& out_dir,
              const std::string& stages) {
  LoadedData data = load_dataset(data_dir);
  Model model = build_model(settings, data.catalog);
  TrainConfig tc = settings.train();
  MatchConfig mc = settings.match();

  fs::create_directories(out_dir);
  std::ofstream log_out((fs::path(out_dir) / "train_log.jsonl").string());
  Trainer trainer(data.catalog, data.split, model, mc, tc);
  trainer.on_epoch = [&](const EpochLog& log) {
    log_out << log.to_json_line() << "\n";
    log_out.flush();
    std::cout << "stage " << log.stage << " epoch " << log.epoch << ": loss " << log.train_loss
              << " valid_ndcg@" << tc.eval_k << " " << log.valid_ndcg << std::endl;
  };

  const json prov =
      provenance(settings, {{"items", data.items_path}, {"interactions", data.interactions_path}});

  StageResult s1;
  s1 = trainer.run_stage1();
  Model stage1_best = trainer.best_model();
  save_checkpoint((fs::path(out_dir) / "checkpoint_stage1.bin").string(), stage1_best.params,
                  stage1_best.vocab, stage1_best.tok, stage1_best.pool, prov.dump());
  trainer.frozen_index().save((fs::path(out_dir) / "item_index.bin").string(), prov.dump());

  StageResult s2;
  if (stages == "12") {
    s2 = trainer.run_stage2();
    Model best = trainer.best_model();
    save_checkpoint((fs::path(out_dir) / "checkpoint_final.bin").string(), best.params, best.vocab,
                    best.tok, best.pool, prov.dump());
  }

  json run = prov;
  run["stage1"] = {{"best_valid_ndcg", s1.best_valid_ndcg},
                   {"best_epoch", s1.best_epoch},
                   {"epochs_run", s1.epochs_run}};
  if (stages == "12")
    run["stage2"] = {{"best_valid_ndcg", s2.best_valid_ndcg},
                     {"best_epoch", s2.best_epoch},
                     {"epochs_run", s2.epochs_run}};
  write_text((fs::path(out_dir) / "run.json").string(), run.dump(2) + "\n");
  std::cout << "train: stage1 best NDCG@" << tc.eval_k << " = " << s1.best_valid_ndcg;
  if (stages == "12") std::cout << ", stage2 best = " << s2.best_valid_ndcg;
  std::cout << std::endl;
  return 0;
}

int cmd_index(const Settings& settings, const std::string& checkpoint, const std::string& items,
              const std::string& out_path) {
  Checkpoint ck = load_checkpoint(checkpoint);
  Catalog catalog = load_items(items);
  ItemIndex index = ItemIndex::build(catalog, ck.model, settings.threads());
  json prov = provenance(settings, {{"checkpoint", checkpoint}, {"items", items}});
  index.save(out_path, prov.dump());
  std::cout << "index: " << index.num_items() << " items x " << index.num_attrs()
            << " attrs x d'=" << index.dim() << " -> " << out_path << std::endl;
  return 0;
}

int cmd_evaluate(const Settings& settings, const std::string& checkpoint,
                 const std::string& index_path, const std::string& data_dir,
                 const std::string& split_name, std::vector<int> ks, const std::string& out_path) {
  Checkpoint ck = load_checkpoint(checkpoint);
  LoadedData data = load_dataset(data_dir);
  ItemIndex index = index_path.empty()
                        ? ItemIndex::build(data.catalog, ck.model, settings.threads())
                        : ItemIndex::load(index_path);
  if (index.encoder_hash() != ck.model.params.payload_hash())
    throw DataError("evaluate: index was built with a different checkpoint");
  const std::vector<SplitExample>* view = nullptr;
  if (split_name == "test")
    view = &data.split.test;
  else if (split_name == "valid")
    view = &data.split.valid;
  else if (split_name == "train")
    view = &data.split.train;
  else
    throw ConfigError("evaluate: unknown split " + split_name);
  if (ks.empty()) ks = {10};

  EvalReport report =
      evaluate(*view, index, ck.model, data.catalog, settings.match(), ks, settings.threads());
  json prov = provenance(settings, {{"checkpoint", checkpoint},
                                    {"items", data.items_path},
                                    {"interactions", data.interactions_path}});
  prov["split"] = split_name;
  const std::string text = report.to_json(prov.dump());
  std::cout << text << std::endl;
  if (!out_path.empty()) write_text(out_path, text + "\n");
  return 0;
}

int cmd_recommend(const Settings& settings, const std::string& checkpoint,
                  const std::string& index_path, const std::string& items_path,
                  const std::string& input_path, int k, bool mask_seen) {
  Checkpoint ck = load_checkpoint(checkpoint);
  Catalog catalog = load_items(items_path);
  ItemIndex index = index_path.empty() ? ItemIndex::build(catalog, ck.model, settings.threads())
                                       : ItemIndex::load(index_path);
  std::vector<InteractionSequence> seqs = load_interactions(input_path);
  MatchConfig mc = settings.match();
  for (const auto& seq : seqs) {
    auto recs = recommend_topk(seq, index, ck.model, catalog, k, mc, mask_seen);
    json arr = json::array();
    for (const auto& r : recs) {
      json attrs = json::array();
      for (size_t j = 0; j < r.breakdown.per_attr.size(); ++j) {
        const auto& a = r.breakdown.per_attr[j];
        const bool named = ck.model.pool == PoolKind::Attribute &&
                           j < catalog.attribute_keys.size();
        attrs.push_back(json{{"attr", named ? catalog.attribute_keys[j] : "pooled"},
                             {"score", a.score},
                             {"matched_pos", a.best_pos},
                             {"missing", a.missing}});
      }
      arr.push_back(json{{"item_id", r.item_id}, {"score", r.score}, {"attributes", attrs}});
    }
    std::cout << json{{"user_id", seq.user_id}, {"recommendations", arr}}.dump() << std::endl;
  }
  return 0;
}

int cmd_ablate(const Settings& settings, const std::string& data_dir, const std::string& out_dir) {
  LoadedData data = load_dataset(data_dir);
  struct VariantSpec {
    const char* name;
    const char* pool;
    const char* agg;
  };
  // Pooling grain and matching aggregation grid.
  const VariantSpec variants[] = {
      {"attribute_max", "attribute", "max"},
      {"attribute_mean", "attribute", "mean"},
      {"item_max", "item", "max"},
      {"bos", "bos", "max"},
  };
  json table = json::array();
  std::cout << "variant          R@10     N@10\n";
  for (const auto& v : variants) {
    Settings vs = settings;
    vs.merged["pool"] = v.pool;
    vs.merged["agg"] = v.agg;
    Model model = build_model(vs, data.catalog);
    Trainer trainer(data.catalog, data.split, model, vs.match(), vs.train());
    trainer.run_stage1();
    trainer.run_stage2();
    Model best = trainer.best_model();
    ItemIndex index = ItemIndex::build(data.catalog, best, vs.threads());
    EvalReport report =
        evaluate(data.split.test, index, best, data.catalog, vs.match(), {10}, vs.threads());
    std::printf("%-16s %.4f   %.4f\n", v.name, report.recall.at(10), report.ndcg.at(10));
    table.push_back(json{{"variant", v.name},
                         {"pool", v.pool},
                         {"agg", v.agg},
                         {"recall@10", report.recall.at(10)},
                         {"ndcg@10", report.ndcg.at(10)},
                         {"valid_ndcg", trainer.best_valid_ndcg()}});
  }
  json out = provenance(settings,
                        {{"items", data.items_path}, {"interactions", data.interactions_path}});
  out["results"] = table;
  fs::create_directories(out_dir);
  write_text((fs::path(out_dir) / "ablate.json").string(), out.dump(2) + "\n");
  return 0;
}

int cmd_selfcheck() {
  std::vector<CheckResult> results = run_selfchecks();
  bool all_pass = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << std::endl;
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attribute-aware multi-vector sequential recommender"};
  app.require_subcommand(1);

  auto* prepare = app.add_subcommand("prepare", "load, filter and split a dataset");
  std::string items_path, interactions_path, prepare_out = default_out_dir();
  prepare->add_option("--items", items_path, "items.jsonl")->required();
  prepare->add_option("--interactions", interactions_path, "interactions.jsonl")->required();
  prepare->add_option("--out", prepare_out, "output directory");
  SettingsBuilder sb_prepare;
  sb_prepare.add_common(prepare);
  sb_prepare.add_int("--core-k", "core_k", "k-core threshold");

  auto* synth = app.add_subcommand("synth", "generate a planted-preference dataset");
  std::string synth_out = default_out_dir();
  synth->add_option("--out", synth_out, "output directory");
  SettingsBuilder sb_synth;
  sb_synth.add_common(synth);
  sb_synth.add_synth();

  auto* train = app.add_subcommand("train", "two-stage contrastive training");
  std::string train_data, train_out = default_out_dir(), stages = "12";
  train->add_option("--data", train_data, "dataset dir with items.jsonl + interactions.jsonl")
      ->required();
  train->add_option("--out", train_out, "output directory");
  train->add_option("--stages", stages, "1 (stop after stage 1) or 12 (default)");
  SettingsBuilder sb_train;
  sb_train.add_common(train);
  sb_train.add_tokenizer();
  sb_train.add_encoder();
  sb_train.add_match();
  sb_train.add_train();

  auto* index_cmd = app.add_subcommand("index", "build and persist an item index");
  std::string ck_path, index_items, index_out = "item_index.bin";
  index_cmd->add_option("--checkpoint", ck_path, "encoder checkpoint")->required();
  index_cmd->add_option("--items", index_items, "items.jsonl")->required();
  index_cmd->add_option("--out", index_out, "output index file");
  SettingsBuilder sb_index;
  sb_index.add_common(index_cmd);

  auto* eval_cmd = app.add_subcommand("evaluate", "leave-one-out ranking metrics");
  std::string eval_ck, eval_index, eval_data, eval_split = "test", eval_out;
  std::vector<int> eval_ks;
  eval_cmd->add_option("--checkpoint", eval_ck, "encoder checkpoint")->required();
  eval_cmd->add_option("--index", eval_index, "prebuilt index (else rebuilt)");
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--split", eval_split, "train|valid|test");
  eval_cmd->add_option("--k", eval_ks, "metric cutoffs (repeatable)");
  eval_cmd->add_option("--out", eval_out, "also write the report here");
  SettingsBuilder sb_eval;
  sb_eval.add_common(eval_cmd);
  sb_eval.add_match();

  auto* rec_cmd = app.add_subcommand("recommend", "top-K items with score breakdowns");
  std::string rec_ck, rec_index, rec_items, rec_input;
  int rec_k = 10;
  bool rec_mask = false;
  rec_cmd->add_option("--checkpoint", rec_ck, "encoder checkpoint")->required();
  rec_cmd->add_option("--index", rec_index, "prebuilt index (else rebuilt)");
  rec_cmd->add_option("--items", rec_items, "items.jsonl")->required();
  rec_cmd->add_option("--input", rec_input, "interactions.jsonl with query sequences")->required();
  rec_cmd->add_option("--k", rec_k, "results per sequence");
  rec_cmd->add_flag("--mask-seen", rec_mask, "filter history items from results");
  SettingsBuilder sb_rec;
  sb_rec.add_common(rec_cmd);
  sb_rec.add_match();

  auto* ablate = app.add_subcommand("ablate", "pooling/matching variant grid");
  std::string ablate_data, ablate_out = default_out_dir();
  ablate->add_option("--data", ablate_data, "dataset directory")->required();
  ablate->add_option("--out", ablate_out, "output directory");
  SettingsBuilder sb_ablate;
  sb_ablate.add_common(ablate);
  sb_ablate.add_tokenizer();
  sb_ablate.add_encoder();
  sb_ablate.add_train();

  app.add_subcommand("selfcheck", "run the oracle suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (prepare->parsed())
      return cmd_prepare(sb_prepare.finalize(), items_path, interactions_path, prepare_out);
    if (synth->parsed()) return cmd_synth(sb_synth.finalize(), synth_out);
    if (train->parsed()) {
      if (stages != "1" && stages != "12")
        throw ConfigError("train: --stages must be 1 or 12");
      return cmd_train(sb_train.finalize(), train_data, train_out, stages);
    }
    if (index_cmd->parsed()) return cmd_index(sb_index.finalize(), ck_path, index_items, index_out);
    if (eval_cmd->parsed())
      return cmd_evaluate(sb_eval.finalize(), eval_ck, eval_index, eval_data, eval_split, eval_ks,
                          eval_out);
    if (rec_cmd->parsed())
      return cmd_recommend(sb_rec.finalize(), rec_ck, rec_index, rec_items, rec_input, rec_k,
                           rec_mask);
    if (ablate->parsed()) return cmd_ablate(sb_ablate.finalize(), ablate_data, ablate_out);
    return cmd_selfcheck();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << std::endl;
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
}

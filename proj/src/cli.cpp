#include "nnkg/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "nnkg/config.hpp"
#include "nnkg/error.hpp"
#include "nnkg/evaluator.hpp"
#include "nnkg/kg.hpp"
#include "nnkg/sampler.hpp"
#include "nnkg/trainer.hpp"
#include "nnkg/util.hpp"

namespace fs = std::filesystem;

namespace nnkg {

namespace {

// ---- Data loading ----------------------------------------------------------------

struct DataBundle {
  Dictionary entities;
  Dictionary relations;  // raw (forward) names; ids double under augmentation
  GraphSplits splits;
  std::size_t raw_counts[3] = {0, 0, 0};  // pre-augmentation triples per file
};

constexpr std::uint32_t kBundleVersion = 1;

void write_triples_bin(std::string& out, const std::vector<Triple>& triples) {
  put_u64(out, triples.size());
  for (const Triple& t : triples) {
    put_u32(out, t.head);
    put_u32(out, t.rel);
    put_u32(out, t.tail);
  }
}

std::vector<Triple> read_triples_bin(ByteReader& in) {
  const std::uint64_t n = in.u64();
  in.need(12 * static_cast<std::size_t>(n));
  std::vector<Triple> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    Triple t;
    t.head = in.u32();
    t.rel = in.u32();
    t.tail = in.u32();
    out.push_back(t);
  }
  return out;
}

DataBundle load_bundle(const fs::path& dir) {
  DataBundle data;
  data.entities = read_entity_dict(dir / "entities.dict");
  data.relations = read_relation_dict(dir / "relations.dict");
  const std::string raw = read_file(dir / "graph.bin");
  ByteReader in(raw, "graph bundle " + (dir / "graph.bin").string());
  if (in.bytes(4) != "NNKB")
    throw DataError((dir / "graph.bin").string() + " is not a graph bundle");
  const std::uint32_t version = in.u32();
  if (version != kBundleVersion)
    throw DataError("unsupported bundle version " + std::to_string(version));
  const std::uint32_t entity_count = in.u32();
  const std::uint32_t relation_count = in.u32();
  if (entity_count != data.entities.size() ||
      relation_count != 2 * data.relations.size())
    throw DataError("bundle header disagrees with the dictionaries");
  // Augmented triples: full train graph, then the valid and test increments.
  const std::vector<Triple> train = read_triples_bin(in);
  const std::vector<Triple> valid_extra = read_triples_bin(in);
  const std::vector<Triple> test_extra = read_triples_bin(in);
  if (!in.done()) throw DataError("graph bundle has trailing bytes");
  data.splits =
      build_splits(entity_count, relation_count, train, valid_extra, test_extra);
  data.raw_counts[0] = train.size() / 2;
  data.raw_counts[1] = valid_extra.size() / 2;
  data.raw_counts[2] = test_extra.size() / 2;
  return data;
}

DataBundle load_text(const fs::path& dir) {
  DataBundle data;
  const bool have_dicts = fs::exists(dir / "entities.dict");
  if (have_dicts) {
    data.entities = read_entity_dict(dir / "entities.dict");
    data.relations = read_relation_dict(dir / "relations.dict");
  }
  const auto train = load_triples(dir / "train.txt", data.entities, data.relations);
  const auto valid = load_triples(dir / "valid.txt", data.entities, data.relations);
  const auto test = load_triples(dir / "test.txt", data.entities, data.relations);
  data.entities.freeze();
  data.relations.freeze();
  data.raw_counts[0] = train.size();
  data.raw_counts[1] = valid.size();
  data.raw_counts[2] = test.size();
  data.splits = build_splits(
      static_cast<std::uint32_t>(data.entities.size()),
      static_cast<std::uint32_t>(2 * data.relations.size()),
      augment_inverse(train), augment_inverse(valid), augment_inverse(test));
  return data;
}

DataBundle load_data(const std::string& dir) {
  if (dir.empty())
    throw ConfigError("data.dir is required (set it in the config or pass --data)");
  const fs::path p(dir);
  if (!fs::exists(p)) throw DataError("data directory " + dir + " does not exist");
  if (fs::exists(p / "graph.bin")) return load_bundle(p);
  return load_text(p);
}

// ---- Output directory ------------------------------------------------------------

struct RunDirs {
  fs::path root;
  fs::path checkpoints;
  fs::path metrics;
  fs::path logs;
  fs::path queries;
};

RunDirs prepare_out(const RunConfig& cfg) {
  RunDirs dirs;
  dirs.root = cfg.out_dir();
  dirs.checkpoints = dirs.root / "checkpoints";
  dirs.metrics = dirs.root / "metrics";
  dirs.logs = dirs.root / "logs";
  dirs.queries = dirs.root / "queries";
  fs::create_directories(dirs.root);
  fs::create_directories(dirs.checkpoints);
  fs::create_directories(dirs.metrics);
  fs::create_directories(dirs.logs);
  fs::create_directories(dirs.queries);
  write_file(dirs.root / "config.resolved", cfg.resolved());
  return dirs;
}

// Timestamps are allowed only in this sidecar; primary outputs stay
// byte-identical across reruns.
class SidecarLog {
 public:
  explicit SidecarLog(const fs::path& path) : out_(path, std::ios::app) {}

  void line(const std::string& msg) {
    if (!out_) return;
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm);
    out_ << "[" << stamp << "] " << msg << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

std::string stats_line(const DataBundle& data) {
  return "entities=" + std::to_string(data.entities.size()) +
         " relations=" + std::to_string(data.relations.size());
}

std::string triple_counts_line(const DataBundle& data) {
  return "train_triples=" + std::to_string(data.raw_counts[0]) +
         " valid_triples=" + std::to_string(data.raw_counts[1]) +
         " test_triples=" + std::to_string(data.raw_counts[2]);
}

std::vector<QuerySample> read_sample_files(const std::vector<std::string>& files,
                                           const std::string& key) {
  if (files.empty())
    throw ConfigError(key + " must list at least one query-sample file");
  std::vector<QuerySample> all;
  for (const std::string& f : files) {
    std::vector<QuerySample> part = read_query_samples(f);
    all.insert(all.end(), std::make_move_iterator(part.begin()),
               std::make_move_iterator(part.end()));
  }
  return all;
}

// ---- Commands --------------------------------------------------------------------

int cmd_ingest(const RunConfig& cfg, std::ostream& out) {
  const RunDirs dirs = prepare_out(cfg);
  const DataBundle data = load_data(cfg.data_dir());

  const fs::path bundle = dirs.root / "bundle";
  fs::create_directories(bundle);
  write_entity_dict(bundle / "entities.dict", data.entities);
  write_relation_dict(bundle / "relations.dict", data.relations);

  const std::vector<Triple> train = data.splits.train.triples();
  std::vector<Triple> valid_extra;
  std::vector<Triple> test_extra;
  {
    const std::vector<Triple> valid = data.splits.valid.triples();
    const std::vector<Triple> test = data.splits.test.triples();
    std::set_difference(valid.begin(), valid.end(), train.begin(), train.end(),
                        std::back_inserter(valid_extra));
    std::set_difference(test.begin(), test.end(), valid.begin(), valid.end(),
                        std::back_inserter(test_extra));
  }
  std::string bin;
  bin.append("NNKB");
  put_u32(bin, kBundleVersion);
  put_u32(bin, data.splits.train.entity_count());
  put_u32(bin, data.splits.train.relation_count());
  write_triples_bin(bin, train);
  write_triples_bin(bin, valid_extra);
  write_triples_bin(bin, test_extra);
  write_file(bundle / "graph.bin", bin);

  nlohmann::json manifest;
  manifest["entities"] = data.entities.size();
  manifest["relations"] = data.relations.size();
  manifest["relations_augmented"] = 2 * data.relations.size();
  manifest["triples"] = {{"train", data.raw_counts[0]},
                         {"valid", data.raw_counts[1]},
                         {"test", data.raw_counts[2]}};
  manifest["graph_hash"] = {
      {"train", graph_hash(data.splits.train)},
      {"valid", graph_hash(data.splits.valid)},
      {"test", graph_hash(data.splits.test)}};
  manifest["graph_bin_hash"] = fnv1a(bin);
  write_file(bundle / "manifest.json", manifest.dump(2) + "\n");

  out << stats_line(data) << "\n" << triple_counts_line(data) << "\n";
  out << "bundle written to " << bundle.string() << "\n";
  return 0;
}

int cmd_info(const RunConfig& cfg, std::ostream& out) {
  prepare_out(cfg);
  const DataBundle data = load_data(cfg.data_dir());
  out << stats_line(data) << "\n" << triple_counts_line(data) << "\n";
  for (Split s : {Split::train, Split::valid, Split::test})
    out << split_name(s) << "_graph: triples=" << data.splits.graph(s).triple_count()
        << " hash=" << graph_hash(data.splits.graph(s)) << "\n";
  return 0;
}

int cmd_generate(const RunConfig& cfg, bool verify, std::ostream& out,
                 std::ostream& err) {
  const RunDirs dirs = prepare_out(cfg);
  SidecarLog log(dirs.logs / "run.log");
  const DataBundle data = load_data(cfg.data_dir());
  const Split target = cfg.generate_target();

  for (QueryStructure structure : cfg.generate_structures()) {
    SamplerConfig sc;
    sc.structure = structure;
    sc.count = cfg.generate_count();
    sc.max_answers = cfg.generate_max_answers();
    // Decorrelates the per-structure streams of one run.
    sc.seed = cfg.seed() + static_cast<std::uint64_t>(structure);
    sc.max_attempts = cfg.generate_max_attempts();

    SamplerStats stats;
    const std::vector<QuerySample> samples =
        sample_queries(data.splits, sc, target, &stats);
    const std::string stem = split_name(target) + "-" + to_string(structure);
    const fs::path file = dirs.queries / (stem + ".txt");
    write_query_samples(file, samples);
    write_sample_manifest(dirs.queries / (stem + ".manifest.json"), data.splits,
                          sc, target, samples.size(), stats);

    if (verify) {
      const std::vector<QuerySample> reread = read_query_samples(file);
      if (reread.size() != samples.size())
        throw DataError(file.string() + ": verify reread a different sample count");
      for (const QuerySample& s : reread) {
        for (Split split : {Split::train, Split::valid, Split::test}) {
          const KnowledgeGraph& g = data.splits.graph(split);
          const EntitySet oracle =
              ground_truth_answers_scan(g.triples(), g.entity_count(), s.query);
          if (oracle != s.answers(split))
            throw DataError(file.string() + ": answers for " +
                            serialize_query(s.query) + " disagree with the " +
                            split_name(split) + "-graph traversal oracle");
        }
      }
    }

    out << to_string(structure) << ": " << samples.size() << " queries -> "
        << file.string() << (verify ? " (verified)" : "") << "\n";
    log.line("generate " + to_string(structure) + ": " +
             std::to_string(samples.size()) + " queries");
    if (stats.budget_exhausted)
      err << "warning: " << to_string(structure) << ": attempt budget exhausted after "
          << stats.attempts << " attempts; emitted " << samples.size() << "/"
          << sc.count << "\n";
  }
  return 0;
}

// Fails early when a checkpoint was produced under a different model setup.
// The checkpoint is authoritative for the model, so only keys the user set
// explicitly are cross-checked against it.
void check_model_matches(const Model& model, const RunConfig& run,
                         const DataBundle& data) {
  const ModelConfig cfg = run.model_config();
  if (run.is_set("model.family") && model.config().family != cfg.family)
    throw ConfigError("checkpoint family " + to_string(model.config().family) +
                      " does not match configured family " + to_string(cfg.family));
  if (run.is_set("model.embed_dim") && model.config().embed_dim != cfg.embed_dim)
    throw ConfigError("checkpoint embed_dim " +
                      std::to_string(model.config().embed_dim) +
                      " does not match configured embed_dim " +
                      std::to_string(cfg.embed_dim));
  if ((run.is_set("model.mlp_layers") &&
       model.config().mlp_layers != cfg.mlp_layers) ||
      (run.is_set("model.mixer_blocks") &&
       model.config().mixer_blocks != cfg.mixer_blocks))
    throw ConfigError("checkpoint operator depth does not match the configuration");
  if (model.entity_count() != data.entities.size() ||
      model.relation_count() != 2 * data.relations.size())
    throw DataError("checkpoint table sizes do not match the dataset");
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const RunDirs dirs = prepare_out(cfg);
  SidecarLog log(dirs.logs / "run.log");
  const DataBundle data = load_data(cfg.data_dir());
  const ModelConfig mc = cfg.model_config();
  const TrainConfig tc = cfg.train_config();

  const std::vector<QuerySample> train_samples =
      read_sample_files(cfg.train_query_files(), "train.queries");
  std::vector<QuerySample> valid_samples;
  if (!cfg.train_valid_query_files().empty())
    valid_samples = read_sample_files(cfg.train_valid_query_files(), "train.valid_queries");

  TrainState state;
  if (const std::string resume = cfg.train_resume(); !resume.empty()) {
    state = load_checkpoint(resume);
    check_model_matches(*state.model, cfg, data);
    out << "resumed from " << resume << " at iteration " << state.iteration << "\n";
    log.line("resumed from " + resume);
  } else {
    state = make_train_state(mc, static_cast<std::uint32_t>(data.entities.size()),
                             static_cast<std::uint32_t>(2 * data.relations.size()), tc);
  }

  TrainHooks hooks;
  hooks.diagnostic_path = (dirs.checkpoints / "diagnostic.nnkg").string();
  hooks.on_eval = [&](std::int64_t iter, const MetricsTable& table) {
    write_file(dirs.metrics / ("valid-" + std::to_string(iter) + ".csv"),
               metrics_csv(table));
    out << "iteration " << iter << " valid MRR " << format_float(table.avg_mrr, 4)
        << "\n";
    log.line("iteration " + std::to_string(iter) + " valid avg MRR " +
             format_float(table.avg_mrr, 4));
  };
  hooks.on_checkpoint = [&](TrainState& st) {
    save_checkpoint(st, (dirs.checkpoints /
                         ("ckpt-" + std::to_string(st.iteration) + ".nnkg"))
                            .string());
  };

  log.line("train start: iterations=" + std::to_string(tc.iterations));
  const TrainResult result = train(state, train_samples, valid_samples, tc, hooks);
  save_checkpoint(state, (dirs.checkpoints / "final.nnkg").string());
  log.line("train end: iteration=" + std::to_string(state.iteration));

  std::string csv = "iteration,loss\n";
  for (const TrainLogEntry& e : result.losses)
    csv += std::to_string(e.iteration) + "," + format_float(e.loss, 6) + "\n";
  write_file(dirs.metrics / "loss.csv", csv);

  out << "trained to iteration " << state.iteration << "; final checkpoint "
      << (dirs.checkpoints / "final.nnkg").string() << "\n";
  if (!result.losses.empty())
    out << "final batch loss " << format_float(result.losses.back().loss, 6) << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const RunDirs dirs = prepare_out(cfg);
  SidecarLog log(dirs.logs / "run.log");
  if (cfg.eval_checkpoint().empty())
    throw ConfigError("eval.checkpoint is required (pass --checkpoint)");
  TrainState state = load_checkpoint(cfg.eval_checkpoint());
  const std::vector<QuerySample> samples =
      read_sample_files(cfg.eval_query_files(), "eval.queries");
  const Split split = cfg.eval_split();

  const MetricsTable table =
      evaluate(*state.model, samples, split, cfg.threads());
  const std::string stem = "eval-" + split_name(split);
  write_file(dirs.metrics / (stem + ".csv"), metrics_csv(table));
  write_file(dirs.metrics / (stem + ".txt"), metrics_text(table));
  out << metrics_text(table);
  log.line("eval " + split_name(split) + ": avg MRR " +
           format_float(table.avg_mrr, 4));
  return 0;
}

int cmd_rank(const RunConfig& cfg, std::ostream& out) {
  prepare_out(cfg);
  if (cfg.rank_checkpoint().empty())
    throw ConfigError("rank.checkpoint is required (pass --checkpoint)");
  if (cfg.rank_query().empty())
    throw ConfigError("rank.query is required (pass --query)");
  TrainState state = load_checkpoint(cfg.rank_checkpoint());
  Model& model = *state.model;

  const QueryInstance query = parse_query(cfg.rank_query());
  const std::vector<Embedded> conjuncts = model.embed_query(query, Mode::eval);
  const Matrix dist = entity_distances(conjuncts, model.entity_table().value);
  const std::vector<EntityId> order =
      rank_entities(conjuncts, model.entity_table().value);

  // Names are available when a data directory is supplied; ids otherwise.
  std::optional<Dictionary> names;
  if (!cfg.data_dir().empty()) {
    DataBundle data = load_data(cfg.data_dir());
    if (data.entities.size() != model.entity_count())
      throw DataError("data directory does not match the checkpoint's entity table");
    names = std::move(data.entities);
  }

  const int top = std::min<int>(cfg.rank_top(), static_cast<int>(order.size()));
  for (int i = 0; i < top; ++i) {
    const EntityId id = order[static_cast<std::size_t>(i)];
    out << (i + 1) << "\t"
        << (names ? names->name(id) : std::to_string(id)) << "\t"
        << format_float(dist(static_cast<Index>(id), 0), 6) << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"first-order logical queries over incomplete knowledge graphs"};
  app.require_subcommand(1);

  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out_dir;
  bool verify = false;
  // Values that override config keys only when the flag is present.
  std::vector<std::pair<std::string, std::string>> overrides;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_file, "flat key=value config file");
    cmd->add_option("--seed", seed, "RNG seed (overrides the config)");
    cmd->add_option("--threads", threads, "worker threads (overrides the config)");
    cmd->add_option("--out", out_dir, "output directory (overrides NNKG_OUT)");
    cmd->add_flag("--verify", verify, "re-check generated artifacts with the oracle");
  };
  const auto add_key_option = [&](CLI::App* cmd, const std::string& flag,
                                  const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [&overrides, key](const std::string& v) { overrides.emplace_back(key, v); },
        help);
  };

  CLI::App* ingest = app.add_subcommand("ingest", "normalize a triple directory into a bundle");
  add_common(ingest);
  add_key_option(ingest, "--data", "data.dir", "directory with train/valid/test triples");

  CLI::App* generate = app.add_subcommand("generate", "sample query DAGs with answer sets");
  add_common(generate);
  add_key_option(generate, "--data", "data.dir", "triple directory or bundle");
  add_key_option(generate, "--structures", "generate.structures", "comma-separated structure tags");
  add_key_option(generate, "--count", "generate.count", "queries per structure");
  add_key_option(generate, "--max-answers", "generate.max_answers", "reject queries with more answers");
  add_key_option(generate, "--max-attempts", "generate.max_attempts", "total attempt budget (0 = auto)");
  add_key_option(generate, "--target", "generate.target", "graph that grounds the queries: train|valid|test");

  CLI::App* train_cmd = app.add_subcommand("train", "train a model on sampled queries");
  add_common(train_cmd);
  add_key_option(train_cmd, "--data", "data.dir", "triple directory or bundle");
  add_key_option(train_cmd, "--queries", "train.queries", "comma-separated training sample files");
  add_key_option(train_cmd, "--valid-queries", "train.valid_queries", "sample files for periodic validation");
  add_key_option(train_cmd, "--resume", "train.resume", "checkpoint to resume from");
  add_key_option(train_cmd, "--family", "model.family", "model family");
  add_key_option(train_cmd, "--embed-dim", "model.embed_dim", "embedding width");
  add_key_option(train_cmd, "--iterations", "train.iterations", "training iterations");

  CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint on sampled queries");
  add_common(eval_cmd);
  add_key_option(eval_cmd, "--checkpoint", "eval.checkpoint", "checkpoint file");
  add_key_option(eval_cmd, "--queries", "eval.queries", "comma-separated sample files");
  add_key_option(eval_cmd, "--split", "eval.split", "hard-answer split: valid|test");

  CLI::App* rank = app.add_subcommand("rank", "answer one query from a checkpoint");
  add_common(rank);
  add_key_option(rank, "--checkpoint", "rank.checkpoint", "checkpoint file");
  add_key_option(rank, "--query", "rank.query", "query expression, e.g. \"(p 0 (e 1))\"");
  add_key_option(rank, "--top", "rank.top", "entities to print");
  add_key_option(rank, "--data", "data.dir", "dataset used to resolve entity names");

  CLI::App* info = app.add_subcommand("info", "print dataset statistics");
  add_common(info);
  add_key_option(info, "--data", "data.dir", "triple directory or bundle");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("nnkg");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    RunConfig cfg;
    if (!config_file.empty()) cfg.merge_file(config_file);
    for (const auto& [key, value] : overrides) cfg.set(key, value);
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (threads) cfg.set("threads", std::to_string(*threads));
    if (!out_dir.empty()) cfg.set("out", out_dir);
    cfg.threads();  // validates eagerly

    if (ingest->parsed()) return cmd_ingest(cfg, out);
    if (generate->parsed()) return cmd_generate(cfg, verify, out, err);
    if (train_cmd->parsed()) return cmd_train(cfg, out);
    if (eval_cmd->parsed()) return cmd_eval(cfg, out);
    if (rank->parsed()) return cmd_rank(cfg, out);
    if (info->parsed()) return cmd_info(cfg, out);
    err << "error: no command\n";
    return 1;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace nnkg

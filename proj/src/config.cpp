#include "nnkg/config.hpp"

#include <cstdlib>
#include <set>
#include <sstream>

#include "nnkg/error.hpp"
#include "nnkg/util.hpp"

namespace nnkg {

namespace {

std::map<std::string, std::string> default_values() {
  std::map<std::string, std::string> v{
      {"threads", "1"},
      {"seed", "0"},
      {"out", ""},
      {"data.dir", ""},
      {"model.family", "mlp"},
      {"model.embed_dim", "800"},
      {"model.mlp_layers", "2"},
      {"model.mixer_blocks", "2"},
      {"model.mixer_dropout", "0.1"},
      {"model.nln_regularizer_weight", "0.1"},
      {"model.entity_init", "random"},
      {"train.margin", "24"},
      {"train.negatives", "128"},
      {"train.batch_size", "512"},
      {"train.learning_rate", "0.0001"},
      {"train.iterations", "300000"},
      {"train.eval_every", "10000"},
      {"train.checkpoint_every", "0"},
      {"train.queries", ""},
      {"train.valid_queries", ""},
      {"train.resume", ""},
      {"generate.structures", ""},
      {"generate.count", "1000"},
      {"generate.max_answers", "100"},
      {"generate.max_attempts", "0"},
      {"generate.target", "train"},
      {"eval.checkpoint", ""},
      {"eval.queries", ""},
      {"eval.split", "test"},
      {"rank.checkpoint", ""},
      {"rank.query", ""},
      {"rank.top", "10"},
  };
  for (QueryStructure s : all_structures())
    v.emplace("train.mix." + to_string(s), "1");
  return v;
}

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

void RunConfig::merge_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto where = [&] { return path.string() + ":" + std::to_string(lineno); };
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line = strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(where() + ": expected key=value");
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where() + ": empty key");
    if (!values_.count(key))
      throw ConfigError(where() + ": unknown config key '" + key + "'");
    if (!seen.insert(key).second)
      throw ConfigError(where() + ": duplicate key '" + key + "'");
    values_[key] = value;
    explicit_.insert(key);
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end())
    throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
  explicit_.insert(key);
}

bool RunConfig::is_set(const std::string& key) const {
  get(key);  // reject unknown keys
  return explicit_.count(key) != 0;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end())
    throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::int64_t RunConfig::get_i64(const std::string& key) const {
  const std::string& s = get(key);
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + s + "'");
  }
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& s = get(key);
  try {
    if (!s.empty() && s[0] == '-') throw std::invalid_argument(s);
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" +
                      s + "'");
  }
}

double RunConfig::get_f64(const std::string& key) const {
  const std::string& s = get(key);
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + s + "'");
  }
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  const std::string& s = get(key);
  std::vector<std::string> out;
  for (const std::string& part : split(s, ',')) {
    const std::string item = strip(part);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int RunConfig::threads() const {
  const std::int64_t n = get_i64("threads");
  if (n < 1) throw ConfigError("threads must be at least 1");
  return static_cast<int>(n);
}

std::uint64_t RunConfig::seed() const { return get_u64("seed"); }

std::string RunConfig::data_dir() const { return get("data.dir"); }

std::string RunConfig::out_dir() const {
  std::string out = get("out");
  if (out.empty())
    if (const char* env = std::getenv("NNKG_OUT")) out = env;
  if (out.empty()) out = "out";
  return out;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig cfg;
  cfg.family = family_from_string(get("model.family"));
  cfg.embed_dim = static_cast<int>(get_i64("model.embed_dim"));
  cfg.mlp_layers = static_cast<int>(get_i64("model.mlp_layers"));
  cfg.mixer_blocks = static_cast<int>(get_i64("model.mixer_blocks"));
  cfg.mixer_dropout = static_cast<Scalar>(get_f64("model.mixer_dropout"));
  cfg.nln_regularizer_weight =
      static_cast<Scalar>(get_f64("model.nln_regularizer_weight"));
  cfg.entity_init = entity_init_from_string(get("model.entity_init"));
  cfg.validate();
  return cfg;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  cfg.margin = static_cast<float>(get_f64("train.margin"));
  cfg.negatives = static_cast<int>(get_i64("train.negatives"));
  cfg.batch_size = static_cast<int>(get_i64("train.batch_size"));
  cfg.learning_rate = static_cast<float>(get_f64("train.learning_rate"));
  cfg.iterations = get_i64("train.iterations");
  cfg.eval_every = get_i64("train.eval_every");
  cfg.checkpoint_every = get_i64("train.checkpoint_every");
  cfg.seed = seed();
  for (QueryStructure s : all_structures())
    cfg.mix_weights[static_cast<std::size_t>(s)] =
        get_f64("train.mix." + to_string(s));
  cfg.validate();
  return cfg;
}

std::vector<QueryStructure> RunConfig::generate_structures() const {
  const auto tags = get_list("generate.structures");
  if (tags.empty())
    throw ConfigError("generate.structures must list at least one structure tag");
  std::vector<QueryStructure> out;
  out.reserve(tags.size());
  for (const std::string& tag : tags) out.push_back(structure_from_string(tag));
  return out;
}

std::uint32_t RunConfig::generate_count() const {
  const std::int64_t n = get_i64("generate.count");
  if (n < 1) throw ConfigError("generate.count must be at least 1");
  return static_cast<std::uint32_t>(n);
}

std::uint32_t RunConfig::generate_max_answers() const {
  const std::int64_t n = get_i64("generate.max_answers");
  if (n < 1) throw ConfigError("generate.max_answers must be at least 1");
  return static_cast<std::uint32_t>(n);
}

std::uint64_t RunConfig::generate_max_attempts() const {
  return get_u64("generate.max_attempts");
}

Split RunConfig::generate_target() const {
  return split_from_string(get("generate.target"));
}

std::vector<std::string> RunConfig::train_query_files() const {
  return get_list("train.queries");
}

std::vector<std::string> RunConfig::train_valid_query_files() const {
  return get_list("train.valid_queries");
}

std::string RunConfig::train_resume() const { return get("train.resume"); }

std::string RunConfig::eval_checkpoint() const { return get("eval.checkpoint"); }

std::vector<std::string> RunConfig::eval_query_files() const {
  return get_list("eval.queries");
}

Split RunConfig::eval_split() const { return split_from_string(get("eval.split")); }

std::string RunConfig::rank_checkpoint() const { return get("rank.checkpoint"); }

std::string RunConfig::rank_query() const { return get("rank.query"); }

int RunConfig::rank_top() const {
  const std::int64_t n = get_i64("rank.top");
  if (n < 1) throw ConfigError("rank.top must be at least 1");
  return static_cast<int>(n);
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + "=" + value + "\n";
  return out;
}

}  // namespace nnkg

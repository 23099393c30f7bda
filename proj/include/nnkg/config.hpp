#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "nnkg/kg.hpp"
#include "nnkg/operators.hpp"
#include "nnkg/sampler.hpp"
#include "nnkg/trainer.hpp"

namespace nnkg {

// Flat key=value run configuration. Every key has a default; unknown keys are
// rejected so typos fail loudly. Values set later win, which gives the
// file < CLI-flag precedence order.
class RunConfig {
 public:
  RunConfig();

  // Parses `key = value` lines ('#' starts a comment; blank lines ignored).
  // Duplicate keys within one file are rejected.
  void merge_file(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  // True once a file or set() overrides the key's default.
  bool is_set(const std::string& key) const;

  int threads() const;
  std::uint64_t seed() const;
  std::string data_dir() const;
  // `out` key, else $NNKG_OUT, else "out".
  std::string out_dir() const;

  ModelConfig model_config() const;
  TrainConfig train_config() const;

  std::vector<QueryStructure> generate_structures() const;
  std::uint32_t generate_count() const;
  std::uint32_t generate_max_answers() const;
  std::uint64_t generate_max_attempts() const;
  Split generate_target() const;

  std::vector<std::string> train_query_files() const;
  std::vector<std::string> train_valid_query_files() const;
  std::string train_resume() const;

  std::string eval_checkpoint() const;
  std::vector<std::string> eval_query_files() const;
  Split eval_split() const;

  std::string rank_checkpoint() const;
  std::string rank_query() const;
  int rank_top() const;

  // Every key with its effective value, sorted, one `key=value` per line.
  std::string resolved() const;

 private:
  std::int64_t get_i64(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_f64(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

}  // namespace nnkg

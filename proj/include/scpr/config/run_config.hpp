#pragma once
// Flat `key = value` run configuration with namespaces model., head.,
// train., data., eval. and bench.

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "scpr/bench/bench.hpp"
#include "scpr/heads/head.hpp"
#include "scpr/model/config.hpp"
#include "scpr/train/trainer.hpp"

namespace scpr {

class RunConfig {
 public:
  /// All known keys at their defaults.
  RunConfig();

  /// Throws ConfigError naming the key when it is unknown.
  void set(const std::string& key, const std::string& value);
  /// Lines `key = value`; `#` starts a comment. Throws ConfigError with the
  /// line number on malformed lines and unknown keys.
  void load(std::istream& in, const std::string& source = "<input>");
  void load_file(const std::string& path);

  bool known(const std::string& key) const { return values_.contains(key); }
  bool explicitly_set(const std::string& key) const { return set_.contains(key); }
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  /// Comma-separated values, blanks trimmed.
  std::vector<std::string> get_list(const std::string& key) const;

  ModelConfig model_config(std::size_t vocab_size) const;
  HeadConfig head_config() const;
  /// Applies train.profile before explicitly set train.* keys.
  TrainConfig train_config() const;
  BenchSpec bench_spec() const;

  /// Every key in sorted order, one `key = value` line each.
  void write(std::ostream& out) const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> set_;
};

}  // namespace scpr

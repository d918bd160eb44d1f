#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "qadpt/corpus.hpp"
#include "qadpt/model.hpp"
#include "qadpt/synthetic.hpp"

namespace qadpt {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Every setting a run can take: the model hyperparameters plus paths,
/// ingestion, evaluation, perturbation and synthetic-world keys. Values are
/// kept as text and parsed on access; hyperparameters are parsed on set.
class RunConfig {
 public:
  RunConfig();

  /// All keys in a fixed order, hyperparameters first.
  static const std::vector<ConfigKey>& keys();

  /// Throws UsageError for an unknown key or a malformed hyperparameter.
  void set(std::string_view key, std::string_view value);
  /// key=value lines; '#' comments and blank lines are skipped.
  void load_file(const std::string& path);
  void load_text(std::string_view text, const std::string& origin);

  /// True once the key was given by a file or an override.
  bool is_set(std::string_view key) const { return set_.contains(std::string(key)); }
  const Hyperparams& hyper() const { return hyper_; }
  std::string get(std::string_view key) const;
  /// Throws UsageError when the value is empty.
  std::string require(std::string_view key) const;
  std::size_t get_size(std::string_view key) const;
  std::uint64_t get_u64(std::string_view key) const;
  double get_double(std::string_view key) const;
  std::optional<std::uint64_t> get_optional_u64(std::string_view key) const;

  IngestOptions ingest_options() const;
  SyntheticConfig synthetic_config() const;

  /// Every key with its current value.
  std::map<std::string, std::string> resolved() const;
  std::string dump() const;

 private:
  Hyperparams hyper_;
  std::map<std::string, std::string, std::less<>> values_;
  std::set<std::string> set_;
};

}  // namespace qadpt

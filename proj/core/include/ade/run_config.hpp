#pragma once

#include "ade/backbone.hpp"
#include "ade/data.hpp"
#include "ade/model.hpp"
#include "ade/trainer.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ade {

// Flat "section.key" -> value settings, read from an INI file and overridden
// by flags. Every key has a default; unknown keys are usage errors. The seeds
// of the backbone, trainer and generator inherit run.seed unless set.
class RunConfig {
 public:
  RunConfig();

  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has_key(const std::string& key) const { return values_.contains(key); }

  BackboneConfig backbone() const;
  ModelConfig model() const;
  TrainConfig train() const;
  SyntheticSpec synthetic() const;
  World world() const;
  std::filesystem::path manifest() const;
  std::filesystem::path token_store() const;
  // run.output_dir, else $ADE_OUTPUT_ROOT/<default_name>, else ./runs/<default_name>.
  std::filesystem::path output_dir(const std::string& default_name) const;
  std::uint64_t seed(const std::string& section) const;

  // Every key with inherited seeds made explicit, grouped by section.
  std::string resolved_ini() const;
  void write_resolved(const std::filesystem::path& dir) const;

  static std::vector<std::string> keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace ade

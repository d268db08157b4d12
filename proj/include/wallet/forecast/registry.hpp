#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wallet/forecast/forecaster.hpp"

namespace wallet::forecast {

/// Versioned model directories under `root`:
///
///   <root>/<version>/ffnn.model, lstm.model, norm.json,
///                    ffnn.history.csv, lstm.history.csv,
///                    metrics.json, manifest.json
///   <root>/CURRENT   name of the published version
///
/// A version directory is written under a temporary name and renamed into
/// place, then CURRENT is replaced atomically. Serving code holds a
/// shared_ptr snapshot, so publication never disturbs readers.
class ModelRegistry {
 public:
  explicit ModelRegistry(std::filesystem::path root);

  /// Writes a new version and makes it current; returns its name. `info` is
  /// merged into metrics.json (e.g. seed, dataset description).
  std::string publish(const TrainResult& result, const nlohmann::json& info = nlohmann::json::object());

  /// Currently published models, or nullptr when nothing is published.
  std::shared_ptr<const ModelSet> current() const;
  std::shared_ptr<const ModelSet> load(const std::string& version) const;

  std::vector<std::string> versions() const;
  std::optional<std::string> current_version() const;
  nlohmann::json metrics(const std::string& version) const;
  TrainingHistory history(const std::string& version, std::string_view model) const;

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  mutable std::mutex mutex_;  // serializes publication
  std::shared_ptr<const ModelSet> current_;
};

void save_model_set(const ModelSet& m, const std::filesystem::path& dir);
ModelSet load_model_set(const std::filesystem::path& dir);

}  // namespace wallet::forecast

#include "wallet/forecast/registry.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <fstream>

#include "wallet/error.hpp"
#include "wallet/nn/model_io.hpp"

namespace wallet::forecast {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_version_name(const std::string& name) {
  return name.size() >= 5 && name[0] == 'v' && name.find_first_not_of("0123456789", 1) == std::string::npos;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(Errc::io_failure, "write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::not_found, path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string alignment_name(features::WindowTarget t) { return t == features::WindowTarget::next ? "next" : "current"; }

features::WindowTarget parse_alignment(const std::string& s) {
  if (s == "next") return features::WindowTarget::next;
  if (s == "current") return features::WindowTarget::current;
  throw Error(Errc::invalid_field, "alignment " + s);
}

}  // namespace

void save_model_set(const ModelSet& m, const fs::path& dir) {
  fs::create_directories(dir);
  nn::ModelHeader header;
  header.norm_fingerprint = m.norm.fingerprint();
  header.extra = {{"ensemble_weight", m.ensemble_weight}};
  nn::write_json_file(dir / "ffnn.model", nn::to_json(m.ffnn, header));
  header.extra = {{"lookback", m.lookback},
                  {"alignment", alignment_name(m.alignment)},
                  {"cadence_seconds", std::chrono::duration_cast<std::chrono::seconds>(m.cadence).count()}};
  nn::write_json_file(dir / "lstm.model", nn::to_json(m.lstm, header));
  nn::write_json_file(dir / "norm.json", features::to_json(m.norm));
}

ModelSet load_model_set(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::not_found, dir.string());
  ModelSet m;
  nn::ModelHeader fh, lh;
  m.ffnn = nn::ffnn_from_json(nn::read_json_file(dir / "ffnn.model"), &fh);
  m.lstm = nn::lstm_from_json(nn::read_json_file(dir / "lstm.model"), &lh);
  m.norm = features::norm_from_json(nn::read_json_file(dir / "norm.json"));
  if (fh.norm_fingerprint != m.norm.fingerprint() || lh.norm_fingerprint != m.norm.fingerprint())
    throw Error(Errc::stats_mismatch, "model files reference different normalization statistics");
  m.ensemble_weight = fh.extra.value("ensemble_weight", 0.5);
  m.lookback = lh.extra.value("lookback", std::size_t{6});
  m.alignment = parse_alignment(lh.extra.value("alignment", std::string("current")));
  m.cadence = seconds(lh.extra.value("cadence_seconds", std::int64_t{600}));
  m.version = dir.filename().string();
  return m;
}

ModelRegistry::ModelRegistry(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_);
  for (const auto& e : fs::directory_iterator(root_))
    if (e.path().filename().string().starts_with(".staging-")) fs::remove_all(e.path());
  if (auto v = current_version()) current_ = std::make_shared<const ModelSet>(load_model_set(root_ / *v));
}

std::vector<std::string> ModelRegistry::versions() const {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(root_)) {
    auto name = e.path().filename().string();
    if (e.is_directory() && is_version_name(name)) out.push_back(name);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  return out;
}

std::optional<std::string> ModelRegistry::current_version() const {
  const auto path = root_ / "CURRENT";
  if (!fs::exists(path)) return std::nullopt;
  auto v = read_text(path);
  while (!v.empty() && (v.back() == '\n' || v.back() == '\r')) v.pop_back();
  if (!is_version_name(v)) throw Error(Errc::corruption, "CURRENT names " + v);
  return v;
}

std::string ModelRegistry::publish(const TrainResult& result, const json& info) {
  std::lock_guard lock(mutex_);
  const auto existing = versions();
  const int next = existing.empty() ? 1 : std::stoi(existing.back().substr(1)) + 1;
  std::string version = std::to_string(next);
  version = "v" + std::string(version.size() < 4 ? 4 - version.size() : 0, '0') + version;

  const fs::path staging = root_ / (".staging-" + version);
  fs::remove_all(staging);
  save_model_set(result.models, staging);
  write_text(staging / "ffnn.history.csv", history_csv(result.ffnn_history));
  write_text(staging / "lstm.history.csv", history_csv(result.lstm_history));

  json metrics = info;
  metrics["version"] = version;
  metrics["test"] = to_json(result.test);
  metrics["splits"] = {{"train", result.splits.train.size()},
                       {"val", result.splits.val.size()},
                       {"test", result.splits.test.size()}};
  metrics["ensemble_weight"] = result.models.ensemble_weight;
  nn::write_json_file(staging / "metrics.json", metrics);

  json manifest = {{"version", version},
                   {"created_at", format_rfc3339(std::chrono::floor<std::chrono::seconds>(now_utc()))},
                   {"files",
                    {"ffnn.model", "lstm.model", "norm.json", "ffnn.history.csv", "lstm.history.csv", "metrics.json"}},
                   {"norm_fingerprint", result.models.norm.fingerprint()}};
  nn::write_json_file(staging / "manifest.json", manifest);

  fs::rename(staging, root_ / version);
  const auto tmp = root_ / "CURRENT.tmp";
  write_text(tmp, version + "\n");
  fs::rename(tmp, root_ / "CURRENT");

  auto published = std::make_shared<ModelSet>(result.models);
  published->version = version;
  std::atomic_store(&current_, std::shared_ptr<const ModelSet>(std::move(published)));
  return version;
}

std::shared_ptr<const ModelSet> ModelRegistry::current() const { return std::atomic_load(&current_); }

std::shared_ptr<const ModelSet> ModelRegistry::load(const std::string& version) const {
  if (!is_version_name(version)) throw Error(Errc::not_found, "model version " + version);
  return std::make_shared<const ModelSet>(load_model_set(root_ / version));
}

json ModelRegistry::metrics(const std::string& version) const {
  if (!is_version_name(version)) throw Error(Errc::not_found, "model version " + version);
  return nn::read_json_file(root_ / version / "metrics.json");
}

TrainingHistory ModelRegistry::history(const std::string& version, std::string_view model) const {
  if (!is_version_name(version) || (model != "ffnn" && model != "lstm"))
    throw Error(Errc::not_found, "history " + version + "/" + std::string(model));
  return history_from_csv(read_text(root_ / version / (std::string(model) + ".history.csv")));
}

}  // namespace wallet::forecast

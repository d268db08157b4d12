#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wallet/series.hpp"

namespace wallet::store {

struct StoreOptions {
  std::size_t compact_after = 4096;  // WAL records per key before a segment is cut
  std::size_t max_segments = 8;      // segments per key before they are merged
  bool fsync = false;                // fsync WAL appends and segment files
};

/// Embedded per-key time-series store.
///
/// Layout under `root`: `<device_id>/<metric>/wal.log` plus numbered
/// `NNNN.seg` files (format in docs/storage-format.md). Every appended point
/// goes to the key's WAL before it is acknowledged; segments are sorted,
/// CRC-protected snapshots of the WAL cut during compaction. Later segments
/// and the WAL override earlier data on equal timestamps.
///
/// One writer per key at a time, any number of concurrent readers.
class SeriesStore {
 public:
  explicit SeriesStore(std::filesystem::path root, StoreOptions options = {});
  ~SeriesStore();

  SeriesStore(const SeriesStore&) = delete;
  SeriesStore& operator=(const SeriesStore&) = delete;

  /// Durable once this returns. Same-timestamp appends overwrite.
  void append(const SeriesKey& key, SeriesPoint point);
  void append(const SeriesKey& key, std::span<const SeriesPoint> points);

  /// Points with from <= t < to, ascending. Throws InvalidRange if from > to.
  std::vector<SeriesPoint> query(const SeriesKey& key, Timestamp from, Timestamp to) const;
  std::vector<SeriesPoint> query_all(const SeriesKey& key) const;
  std::optional<SeriesPoint> latest(const SeriesKey& key) const;
  std::size_t size(const SeriesKey& key) const;

  std::vector<SeriesKey> keys() const;
  std::vector<std::string> metrics(std::string_view device_id) const;

  /// `timestamp,value` CSV of the range [from, to).
  std::string export_csv(const SeriesKey& key, Timestamp from, Timestamp to) const;
  /// Appends every row of a two-column CSV whose header is
  /// `timestamp,<value_column>`; returns the number of points imported.
  std::size_t import_csv(const SeriesKey& key, std::string_view text, std::string_view value_column = "value");

  void compact(const SeriesKey& key);
  void close();
  bool is_open() const { return open_.load(); }

  const std::filesystem::path& root() const { return root_; }

 private:
  struct KeyState;

  KeyState& state_for_write(const SeriesKey& key);
  const KeyState* state_for_read(const SeriesKey& key) const;
  void load_key(const SeriesKey& key, const std::filesystem::path& dir);
  void compact_locked(KeyState& ks);
  void require_open() const;

  std::filesystem::path root_;
  StoreOptions options_;
  std::atomic<bool> open_{true};
  mutable std::shared_mutex keys_mutex_;
  std::map<SeriesKey, std::unique_ptr<KeyState>> keys_;
};

std::string export_csv(std::span<const SeriesPoint> points, std::string_view value_column = "value");
std::vector<SeriesPoint> parse_series_csv(std::string_view text, std::string_view value_column = "value");

/// Segment codec, exposed for tooling and corruption tests.
std::string encode_segment(const SeriesKey& key, std::span<const SeriesPoint> points);
std::vector<SeriesPoint> decode_segment(std::string_view bytes, SeriesKey* key = nullptr);

}  // namespace wallet::store

#include "wallet/store/series_store.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>

#include "wallet/csv.hpp"
#include "wallet/error.hpp"

namespace wallet::store {
namespace fs = std::filesystem;

namespace {

constexpr char kSegmentMagic[4] = {'W', 'S', 'E', 'G'};
constexpr std::uint32_t kSegmentVersion = 1;
constexpr std::size_t kWalRecord = 20;  // i64 micros, f64 value, u32 crc

std::uint32_t crc32_of(const void* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

template <typename T>
void put_le(std::string& out, T v) {
  auto bits = std::bit_cast<std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>>(v);
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

template <typename T>
T get_le(std::string_view in, std::size_t pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  U bits = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) bits |= U(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  return std::bit_cast<T>(bits);
}

std::string wal_record(SeriesPoint p) {
  std::string rec;
  rec.reserve(kWalRecord);
  put_le(rec, to_micros(p.timestamp));
  put_le(rec, p.value);
  put_le(rec, crc32_of(rec.data(), rec.size()));
  return rec;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_all(int fd, const std::string& bytes, const fs::path& path) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::io_failure, "write " + path.string() + ": " + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

void write_file_atomic(const fs::path& path, const std::string& bytes, bool sync) {
  fs::path tmp = path;
  tmp += ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(Errc::io_failure, "create " + tmp.string());
  try {
    write_all(fd, bytes, tmp);
    if (sync) ::fsync(fd);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  fs::rename(tmp, path);
}

std::string segment_name(std::uint32_t id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04u.seg", id);
  return buf;
}

void check_finite(SeriesPoint p) {
  if (!std::isfinite(p.value)) throw Error(Errc::invalid_field, "non-finite value");
}

}  // namespace

struct SeriesStore::KeyState {
  SeriesKey key;
  fs::path dir;
  mutable std::shared_mutex mutex;
  std::map<std::int64_t, double> points;
  std::vector<SeriesPoint> wal_points;  // appended since the last cut, in order
  std::vector<std::uint32_t> segments;  // ascending ids present on disk
  int wal_fd = -1;

  ~KeyState() {
    if (wal_fd >= 0) ::close(wal_fd);
  }
};

std::string encode_segment(const SeriesKey& key, std::span<const SeriesPoint> points) {
  std::string body;
  put_le(body, kSegmentVersion);
  put_le(body, static_cast<std::uint64_t>(points.size()));
  put_le(body, static_cast<std::uint16_t>(key.device_id.size()));
  body += key.device_id;
  put_le(body, static_cast<std::uint16_t>(key.metric.size()));
  body += key.metric;
  for (const auto& p : points) {
    put_le(body, to_micros(p.timestamp));
    put_le(body, p.value);
  }
  std::string out(kSegmentMagic, 4);
  out += body;
  put_le(out, crc32_of(body.data(), body.size()));
  return out;
}

std::vector<SeriesPoint> decode_segment(std::string_view bytes, SeriesKey* key) {
  auto corrupt = [](const char* why) { return Error(Errc::corruption, why); };
  if (bytes.size() < 4 + 4 + 8 + 2 + 2 + 4 || std::memcmp(bytes.data(), kSegmentMagic, 4) != 0)
    throw corrupt("segment header");
  std::string_view body = bytes.substr(4, bytes.size() - 8);
  if (get_le<std::uint32_t>(bytes, bytes.size() - 4) != crc32_of(body.data(), body.size()))
    throw corrupt("segment checksum");
  if (get_le<std::uint32_t>(body, 0) != kSegmentVersion) throw corrupt("segment version");
  const auto count = get_le<std::uint64_t>(body, 4);
  std::size_t pos = 12;
  auto read_str = [&](std::string& s) {
    if (pos + 2 > body.size()) throw corrupt("segment key");
    auto len = get_le<std::uint16_t>(body, pos);
    pos += 2;
    if (pos + len > body.size()) throw corrupt("segment key");
    s.assign(body.substr(pos, len));
    pos += len;
  };
  SeriesKey k;
  read_str(k.device_id);
  read_str(k.metric);
  if (body.size() - pos != count * 16) throw corrupt("segment length");
  std::vector<SeriesPoint> pts;
  pts.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i, pos += 16) {
    SeriesPoint p{from_micros(get_le<std::int64_t>(body, pos)), get_le<double>(body, pos + 8)};
    if (!pts.empty() && !(pts.back().timestamp < p.timestamp)) throw corrupt("segment order");
    pts.push_back(p);
  }
  if (key) *key = std::move(k);
  return pts;
}

SeriesStore::SeriesStore(fs::path root, StoreOptions options) : root_(std::move(root)), options_(options) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw Error(Errc::io_failure, "create " + root_.string() + ": " + ec.message());
  for (const auto& dev : fs::directory_iterator(root_)) {
    if (!dev.is_directory()) continue;
    for (const auto& met : fs::directory_iterator(dev.path())) {
      if (!met.is_directory()) continue;
      SeriesKey key{dev.path().filename().string(), met.path().filename().string()};
      if (!valid_device_id(key.device_id) || !valid_metric_name(key.metric)) continue;
      load_key(key, met.path());
    }
  }
}

SeriesStore::~SeriesStore() { close(); }

void SeriesStore::close() {
  if (!open_.exchange(false)) return;
  std::unique_lock lock(keys_mutex_);
  for (auto& [key, ks] : keys_) {
    std::unique_lock kl(ks->mutex);
    if (ks->wal_fd >= 0) {
      ::close(ks->wal_fd);
      ks->wal_fd = -1;
    }
  }
}

void SeriesStore::require_open() const {
  if (!open_.load()) throw Error(Errc::store_closed);
}

void SeriesStore::load_key(const SeriesKey& key, const fs::path& dir) {
  auto ks = std::make_unique<KeyState>();
  ks->key = key;
  ks->dir = dir;

  for (const auto& e : fs::directory_iterator(dir)) {
    auto name = e.path().filename().string();
    if (name.size() == 8 && name.ends_with(".seg")) {
      try {
        ks->segments.push_back(static_cast<std::uint32_t>(std::stoul(name.substr(0, 4))));
      } catch (const std::exception&) {
      }
    } else if (name.ends_with(".seg.tmp")) {
      fs::remove(e.path());  // unfinished compaction
    }
  }
  std::sort(ks->segments.begin(), ks->segments.end());
  for (auto id : ks->segments) {
    SeriesKey stored;
    auto pts = decode_segment(read_file(dir / segment_name(id)), &stored);
    if (stored != key) throw Error(Errc::corruption, "segment key mismatch in " + dir.string());
    for (const auto& p : pts) ks->points[to_micros(p.timestamp)] = p.value;
  }

  const fs::path wal = dir / "wal.log";
  if (fs::exists(wal)) {
    std::string bytes = read_file(wal);
    std::size_t whole = bytes.size() / kWalRecord;
    std::size_t good = 0;
    for (std::size_t r = 0; r < whole; ++r) {
      std::string_view rec(bytes.data() + r * kWalRecord, kWalRecord);
      if (get_le<std::uint32_t>(rec, 16) != crc32_of(rec.data(), 16)) {
        if (r + 1 == whole && bytes.size() == whole * kWalRecord) break;  // torn final record
        throw Error(Errc::corruption, "wal record " + std::to_string(r) + " in " + dir.string());
      }
      SeriesPoint p{from_micros(get_le<std::int64_t>(rec, 0)), get_le<double>(rec, 8)};
      ks->points[to_micros(p.timestamp)] = p.value;
      ks->wal_points.push_back(p);
      ++good;
    }
    if (good * kWalRecord != bytes.size()) fs::resize_file(wal, good * kWalRecord);
  }
  keys_[key] = std::move(ks);
}

SeriesStore::KeyState& SeriesStore::state_for_write(const SeriesKey& key) {
  {
    std::shared_lock lock(keys_mutex_);
    auto it = keys_.find(key);
    if (it != keys_.end()) return *it->second;
  }
  validate(key);
  std::unique_lock lock(keys_mutex_);
  auto& slot = keys_[key];
  if (!slot) {
    slot = std::make_unique<KeyState>();
    slot->key = key;
    slot->dir = root_ / key.device_id / key.metric;
    std::error_code ec;
    fs::create_directories(slot->dir, ec);
    if (ec) throw Error(Errc::io_failure, "create " + slot->dir.string());
  }
  return *slot;
}

const SeriesStore::KeyState* SeriesStore::state_for_read(const SeriesKey& key) const {
  std::shared_lock lock(keys_mutex_);
  auto it = keys_.find(key);
  return it == keys_.end() ? nullptr : it->second.get();
}

void SeriesStore::append(const SeriesKey& key, SeriesPoint point) { append(key, std::span(&point, 1)); }

void SeriesStore::append(const SeriesKey& key, std::span<const SeriesPoint> points) {
  require_open();
  for (const auto& p : points) check_finite(p);
  KeyState& ks = state_for_write(key);
  std::unique_lock lock(ks.mutex);
  require_open();
  if (ks.wal_fd < 0) {
    const fs::path wal = ks.dir / "wal.log";
    ks.wal_fd = ::open(wal.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (ks.wal_fd < 0) throw Error(Errc::io_failure, "open " + wal.string());
  }
  std::string bytes;
  bytes.reserve(points.size() * kWalRecord);
  for (const auto& p : points) bytes += wal_record(p);
  write_all(ks.wal_fd, bytes, ks.dir / "wal.log");
  if (options_.fsync) ::fdatasync(ks.wal_fd);

  for (const auto& p : points) {
    ks.points[to_micros(p.timestamp)] = p.value;
    ks.wal_points.push_back(p);
  }
  if (ks.wal_points.size() >= options_.compact_after) compact_locked(ks);
}

void SeriesStore::compact(const SeriesKey& key) {
  require_open();
  KeyState* ks = const_cast<KeyState*>(state_for_read(key));
  if (!ks) return;
  std::unique_lock lock(ks->mutex);
  compact_locked(*ks);
}

void SeriesStore::compact_locked(KeyState& ks) {
  if (ks.wal_points.empty()) return;
  const std::uint32_t next = ks.segments.empty() ? 1 : ks.segments.back() + 1;
  std::vector<SeriesPoint> pts;

  const bool merge = ks.segments.size() + 1 > options_.max_segments;
  if (merge) {
    pts.reserve(ks.points.size());
    for (const auto& [t, v] : ks.points) pts.push_back({from_micros(t), v});
  } else {
    std::map<std::int64_t, double> cut;
    for (const auto& p : ks.wal_points) cut[to_micros(p.timestamp)] = p.value;
    pts.reserve(cut.size());
    for (const auto& [t, v] : cut) pts.push_back({from_micros(t), v});
  }
  write_file_atomic(ks.dir / segment_name(next), encode_segment(ks.key, pts), options_.fsync);

  if (merge) {
    for (auto id : ks.segments) fs::remove(ks.dir / segment_name(id));
    ks.segments.clear();
  }
  ks.segments.push_back(next);
  if (::ftruncate(ks.wal_fd, 0) != 0) throw Error(Errc::io_failure, "truncate wal");
  ks.wal_points.clear();
}

std::vector<SeriesPoint> SeriesStore::query(const SeriesKey& key, Timestamp from, Timestamp to) const {
  require_open();
  if (from > to) throw Error(Errc::invalid_range);
  std::vector<SeriesPoint> out;
  const KeyState* ks = state_for_read(key);
  if (!ks) return out;
  std::shared_lock lock(ks->mutex);
  auto lo = ks->points.lower_bound(to_micros(from));
  auto hi = ks->points.lower_bound(to_micros(to));
  for (auto it = lo; it != hi; ++it) out.push_back({from_micros(it->first), it->second});
  return out;
}

std::vector<SeriesPoint> SeriesStore::query_all(const SeriesKey& key) const {
  return query(key, Timestamp::min(), Timestamp::max());
}

std::optional<SeriesPoint> SeriesStore::latest(const SeriesKey& key) const {
  require_open();
  const KeyState* ks = state_for_read(key);
  if (!ks) return std::nullopt;
  std::shared_lock lock(ks->mutex);
  if (ks->points.empty()) return std::nullopt;
  auto it = std::prev(ks->points.end());
  return SeriesPoint{from_micros(it->first), it->second};
}

std::size_t SeriesStore::size(const SeriesKey& key) const {
  require_open();
  const KeyState* ks = state_for_read(key);
  if (!ks) return 0;
  std::shared_lock lock(ks->mutex);
  return ks->points.size();
}

std::vector<SeriesKey> SeriesStore::keys() const {
  std::shared_lock lock(keys_mutex_);
  std::vector<SeriesKey> out;
  for (const auto& [k, ks] : keys_) out.push_back(k);
  return out;
}

std::vector<std::string> SeriesStore::metrics(std::string_view device_id) const {
  std::shared_lock lock(keys_mutex_);
  std::vector<std::string> out;
  for (const auto& [k, ks] : keys_)
    if (k.device_id == device_id) out.push_back(k.metric);
  return out;
}

std::string SeriesStore::export_csv(const SeriesKey& key, Timestamp from, Timestamp to) const {
  return store::export_csv(query(key, from, to));
}

std::size_t SeriesStore::import_csv(const SeriesKey& key, std::string_view text, std::string_view value_column) {
  auto pts = parse_series_csv(text, value_column);
  append(key, pts);
  return pts.size();
}

std::string export_csv(std::span<const SeriesPoint> points, std::string_view value_column) {
  std::string out = "timestamp,";
  out += value_column;
  out += '\n';
  for (const auto& p : points) {
    out += format_rfc3339(p.timestamp);
    out += ',';
    out += csv::format_double(p.value);
    out += '\n';
  }
  return out;
}

std::vector<SeriesPoint> parse_series_csv(std::string_view text, std::string_view value_column) {
  auto lines = csv::split_lines(text);
  if (lines.empty()) throw Error(Errc::missing_field, "header");
  auto header = csv::split_fields(lines.front());
  if (header.size() != 2 || header[0] != "timestamp" || header[1] != value_column)
    throw Error(Errc::invalid_field, "expected header timestamp," + std::string(value_column));
  std::vector<SeriesPoint> pts;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = csv::split_fields(lines[i]);
    if (f.size() != 2) throw Error(Errc::invalid_field, "line " + std::to_string(i + 1));
    SeriesPoint p{parse_rfc3339(f[0]), csv::parse_double(f[1])};
    check_finite(p);
    pts.push_back(p);
  }
  return pts;
}

}  // namespace wallet::store

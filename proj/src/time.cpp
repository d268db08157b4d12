#include "wallet/time.hpp"

#include <charconv>
#include <cstdio>

#include "wallet/error.hpp"

namespace wallet {
namespace {

bool read_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  for (std::size_t i = pos; i < pos + len; ++i)
    if (s[i] < '0' || s[i] > '9') return false;
  auto r = std::from_chars(s.data() + pos, s.data() + pos + len, out);
  return r.ec == std::errc{};
}

[[noreturn]] void bad(std::string_view text) { throw Error(Errc::bad_timestamp, std::string(text)); }

}  // namespace

Timestamp parse_rfc3339(std::string_view text) {
  using namespace std::chrono;
  int Y, M, D, h, m, s;
  if (!read_int(text, 0, 4, Y) || text.size() < 20 || text[4] != '-' || !read_int(text, 5, 2, M) ||
      text[7] != '-' || !read_int(text, 8, 2, D) || (text[10] != 'T' && text[10] != 't') ||
      !read_int(text, 11, 2, h) || text[13] != ':' || !read_int(text, 14, 2, m) || text[16] != ':' ||
      !read_int(text, 17, 2, s))
    bad(text);

  year_month_day ymd{year{Y}, month{static_cast<unsigned>(M)}, day{static_cast<unsigned>(D)}};
  if (!ymd.ok() || h > 23 || m > 59 || s > 60) bad(text);

  std::size_t pos = 19;
  std::int64_t frac_us = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    std::size_t digits = 0;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      if (digits < 6) frac_us = frac_us * 10 + (text[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0) bad(text);
    for (std::size_t d = digits; d < 6; ++d) frac_us *= 10;
  }

  std::int64_t offset_s = 0;
  if (pos >= text.size()) bad(text);
  if (text[pos] == 'Z' || text[pos] == 'z') {
    ++pos;
  } else if (text[pos] == '+' || text[pos] == '-') {
    int oh, om;
    if (!read_int(text, pos + 1, 2, oh) || pos + 3 >= text.size() || text[pos + 3] != ':' ||
        !read_int(text, pos + 4, 2, om) || oh > 23 || om > 59)
      bad(text);
    offset_s = (oh * 3600 + om * 60) * (text[pos] == '-' ? -1 : 1);
    pos += 6;
  } else {
    bad(text);
  }
  if (pos != text.size()) bad(text);

  auto t = sys_days{ymd} + hours{h} + std::chrono::minutes{m} + std::chrono::seconds{s} -
           std::chrono::seconds{offset_s};
  return time_point_cast<Duration>(t) + Duration{frac_us};
}

std::string format_rfc3339(Timestamp t) {
  using namespace std::chrono;
  auto day_point = floor<days>(t);
  year_month_day ymd{day_point};
  auto tod = t - day_point;
  auto h = duration_cast<hours>(tod);
  auto m = duration_cast<std::chrono::minutes>(tod - h);
  auto s = duration_cast<std::chrono::seconds>(tod - h - m);
  auto us = (tod - h - m - s).count();

  char buf[40];
  int n = std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                        static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                        static_cast<int>(h.count()), static_cast<int>(m.count()),
                        static_cast<int>(s.count()));
  std::string out(buf, static_cast<std::size_t>(n));
  if (us != 0) {
    std::snprintf(buf, sizeof buf, ".%06lld", static_cast<long long>(us));
    std::string frac(buf);
    while (frac.back() == '0') frac.pop_back();
    out += frac;
  }
  out += 'Z';
  return out;
}

Timestamp now_utc() {
  return std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now());
}

}  // namespace wallet

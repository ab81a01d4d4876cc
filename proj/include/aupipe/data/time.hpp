#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>

#include "aupipe/errors.hpp"

namespace aupipe {

/// UTC instant with millisecond resolution.
using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;
using Duration = std::chrono::milliseconds;

namespace detail {

inline int take_digits(const std::string& s, std::size_t& pos, std::size_t n) {
  int v = 0;
  for (std::size_t i = 0; i < n; ++i, ++pos) {
    if (pos >= s.size() || s[pos] < '0' || s[pos] > '9') throw ValidationError("bad ISO-8601 timestamp: '" + s + "'");
    v = v * 10 + (s[pos] - '0');
  }
  return v;
}

inline void expect_char(const std::string& s, std::size_t& pos, const char* allowed) {
  if (pos >= s.size() || std::string(allowed).find(s[pos]) == std::string::npos)
    throw ValidationError("bad ISO-8601 timestamp: '" + s + "'");
  ++pos;
}

}  // namespace detail

/// Parses YYYY-MM-DDTHH:MM:SS[.fff][Z|+HH:MM|-HH:MM]. A missing zone means
/// UTC; fractions beyond milliseconds are truncated.
inline Timestamp parse_time(const std::string& s) {
  using namespace std::chrono;
  std::size_t pos = 0;
  const int y = detail::take_digits(s, pos, 4);
  detail::expect_char(s, pos, "-");
  const int mo = detail::take_digits(s, pos, 2);
  detail::expect_char(s, pos, "-");
  const int d = detail::take_digits(s, pos, 2);
  detail::expect_char(s, pos, "T ");
  const int hh = detail::take_digits(s, pos, 2);
  detail::expect_char(s, pos, ":");
  const int mm = detail::take_digits(s, pos, 2);
  detail::expect_char(s, pos, ":");
  const int ss = detail::take_digits(s, pos, 2);
  int ms = 0;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    std::size_t digits = 0;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      if (digits < 3) ms = ms * 10 + (s[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0) throw ValidationError("bad ISO-8601 timestamp: '" + s + "'");
    for (; digits < 3; ++digits) ms *= 10;
  }
  minutes offset{0};
  if (pos < s.size()) {
    if (s[pos] == 'Z') {
      ++pos;
    } else if (s[pos] == '+' || s[pos] == '-') {
      const int sign = s[pos] == '-' ? -1 : 1;
      ++pos;
      const int oh = detail::take_digits(s, pos, 2);
      detail::expect_char(s, pos, ":");
      const int om = detail::take_digits(s, pos, 2);
      offset = minutes(sign * (oh * 60 + om));
    }
  }
  if (pos != s.size()) throw ValidationError("bad ISO-8601 timestamp: '" + s + "'");
  const year_month_day date{year(y), month(static_cast<unsigned>(mo)), day(static_cast<unsigned>(d))};
  if (!date.ok() || hh > 23 || mm > 59 || ss > 59) throw ValidationError("invalid date or time: '" + s + "'");
  return Timestamp(sys_days(date).time_since_epoch()) + hours(hh) + minutes(mm) + seconds(ss) + milliseconds(ms) -
         offset;
}

/// YYYY-MM-DDTHH:MM:SSZ, with .fff only when the milliseconds are non-zero.
inline std::string format_time(Timestamp t) {
  using namespace std::chrono;
  const auto day_start = floor<days>(t);
  const year_month_day date{day_start};
  const hh_mm_ss<milliseconds> tod{t - day_start};
  char buf[40];
  const auto ms = tod.subseconds().count();
  if (ms)
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ld.%03ldZ", static_cast<int>(date.year()),
                  static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()),
                  static_cast<long>(tod.hours().count()), static_cast<long>(tod.minutes().count()),
                  static_cast<long>(tod.seconds().count()), static_cast<long>(ms));
  else
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ldZ", static_cast<int>(date.year()),
                  static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()),
                  static_cast<long>(tod.hours().count()), static_cast<long>(tod.minutes().count()),
                  static_cast<long>(tod.seconds().count()));
  return buf;
}

}  // namespace aupipe

#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

namespace tcr {

/// Calendar day, stored as days since 1970-01-01.
struct Date {
  std::int32_t days = 0;

  static std::optional<Date> from_ymd(int y, unsigned m, unsigned d) {
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                          std::chrono::day{d}};
    if (!ymd.ok()) return std::nullopt;
    return Date{static_cast<std::int32_t>(std::chrono::sys_days{ymd}.time_since_epoch().count())};
  }

  std::chrono::year_month_day ymd() const {
    return std::chrono::year_month_day{std::chrono::sys_days{std::chrono::days{days}}};
  }

  /// yyyy-mm-dd
  std::string iso() const {
    const auto v = ymd();
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(v.year()),
                  static_cast<unsigned>(v.month()), static_cast<unsigned>(v.day()));
    return buf;
  }

  /// yyyymmdd
  std::string compact() const {
    const auto v = ymd();
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d%02u%02u", static_cast<int>(v.year()),
                  static_cast<unsigned>(v.month()), static_cast<unsigned>(v.day()));
    return buf;
  }

  Date operator+(int n) const { return Date{days + n}; }
  friend int operator-(Date a, Date b) { return a.days - b.days; }
  friend auto operator<=>(Date, Date) = default;
};

namespace detail {
inline std::optional<int> parse_digits(std::string_view s) {
  int v = 0;
  if (s.empty()) return std::nullopt;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}
}  // namespace detail

/// Parses "yyyymmdd".
inline std::optional<Date> parse_compact_date(std::string_view s) {
  if (s.size() != 8) return std::nullopt;
  auto y = detail::parse_digits(s.substr(0, 4));
  auto m = detail::parse_digits(s.substr(4, 2));
  auto d = detail::parse_digits(s.substr(6, 2));
  if (!y || !m || !d || *m < 1 || *d < 1) return std::nullopt;
  return Date::from_ymd(*y, static_cast<unsigned>(*m), static_cast<unsigned>(*d));
}

/// Parses ISO-8601 "yyyy-mm-dd".
inline std::optional<Date> parse_iso_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  auto y = detail::parse_digits(s.substr(0, 4));
  auto m = detail::parse_digits(s.substr(5, 2));
  auto d = detail::parse_digits(s.substr(8, 2));
  if (!y || !m || !d || *m < 1 || *d < 1) return std::nullopt;
  return Date::from_ymd(*y, static_cast<unsigned>(*m), static_cast<unsigned>(*d));
}

}  // namespace tcr

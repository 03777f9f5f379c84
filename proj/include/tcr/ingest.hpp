#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tcr/date.hpp"
#include "tcr/error.hpp"
#include "tcr/series.hpp"

namespace tcr::ingest {

enum class LogFormat { cdnow, generic_csv };

struct EventRecord {
  std::string user_id;
  Date date;
  std::int64_t quantity = 1;
  double amount = 0.0;

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct EventLog {
  std::vector<EventRecord> records;
  Date first;
  Date last;
  /// Lines rejected by the parser (0 for logs built in memory).
  std::size_t malformed_lines = 0;

  /// Sorted distinct user ids.
  std::vector<std::string> users() const {
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& r : records) ids.push_back(r.user_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
  }

  /// Recomputes the span from the records. Throws EmptyLog when there are none.
  void update_span() {
    if (records.empty()) fail(ErrorCategory::EmptyLog, "event log has no records");
    auto [lo, hi] = std::minmax_element(records.begin(), records.end(),
                                        [](const auto& a, const auto& b) { return a.date < b.date; });
    first = lo->date;
    last = hi->date;
  }

  static EventLog from_records(std::vector<EventRecord> recs) {
    EventLog log;
    log.records = std::move(recs);
    log.update_span();
    return log;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline std::vector<std::string_view> split_char(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == sep) {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

inline std::optional<double> parse_amount(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v) || v < 0.0) return std::nullopt;
  return v;
}

inline std::optional<std::int64_t> parse_quantity(std::string_view s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || v < 1) return std::nullopt;
  return v;
}

template <typename LineFn>
void for_each_line(std::string_view text, LineFn&& fn) {
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    fn(text.substr(start, end - start));
    start = end + 1;
  }
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parses a CDNow (`user date(yyyymmdd) quantity amount`, whitespace separated,
/// no header) or generic CSV (`user_id,date,quantity,amount` header, ISO dates,
/// quantity column optional) event log. Blank lines are skipped; any other line
/// that fails to parse counts as malformed.
inline EventLog parse_event_log(std::string_view text, LogFormat format) {
  EventLog log;
  std::size_t malformed = 0;
  bool saw_content = false;

  if (format == LogFormat::cdnow) {
    detail::for_each_line(text, [&](std::string_view raw) {
      const auto line = detail::trim(raw);
      if (line.empty()) return;
      saw_content = true;
      const auto f = detail::split_ws(line);
      if (f.size() != 4) {
        ++malformed;
        return;
      }
      auto date = parse_compact_date(f[1]);
      auto qty = detail::parse_quantity(f[2]);
      auto amt = detail::parse_amount(f[3]);
      if (!date || !qty || !amt) {
        ++malformed;
        return;
      }
      log.records.push_back({std::string(f[0]), *date, *qty, *amt});
    });
  } else {
    int col_user = -1, col_date = -1, col_qty = -1, col_amount = -1;
    std::size_t ncols = 0;
    bool header_seen = false;
    detail::for_each_line(text, [&](std::string_view raw) {
      const auto line = detail::trim(raw);
      if (line.empty()) return;
      saw_content = true;
      const auto f = detail::split_char(line, ',');
      if (!header_seen) {
        header_seen = true;
        ncols = f.size();
        for (std::size_t i = 0; i < f.size(); ++i) {
          if (f[i] == "user_id") col_user = static_cast<int>(i);
          else if (f[i] == "date") col_date = static_cast<int>(i);
          else if (f[i] == "quantity") col_qty = static_cast<int>(i);
          else if (f[i] == "amount") col_amount = static_cast<int>(i);
        }
        if (col_user < 0 || col_date < 0 || col_amount < 0) {
          fail(ErrorCategory::FormatError, "generic-csv header must name user_id, date and amount");
        }
        return;
      }
      if (f.size() != ncols || f[col_user].empty()) {
        ++malformed;
        return;
      }
      auto date = parse_iso_date(f[col_date]);
      auto amt = detail::parse_amount(f[col_amount]);
      std::optional<std::int64_t> qty = 1;
      if (col_qty >= 0 && !f[col_qty].empty()) qty = detail::parse_quantity(f[col_qty]);
      if (!date || !amt || !qty) {
        ++malformed;
        return;
      }
      log.records.push_back({std::string(f[col_user]), *date, *qty, *amt});
    });
  }

  if (!saw_content || (log.records.empty() && malformed == 0)) {
    fail(ErrorCategory::EmptyLog, "event log contains no records");
  }
  const std::size_t total = log.records.size() + malformed;
  if (malformed * 10 > total) {
    fail(ErrorCategory::FormatError, std::to_string(malformed) + " of " + std::to_string(total) +
                                         " lines malformed; wrong format?");
  }
  log.malformed_lines = malformed;
  log.update_span();
  return log;
}

inline EventLog read_event_log(const std::string& path, LogFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::DataError, "cannot open event log '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_event_log(buf.str(), format);
}

inline std::string to_generic_csv(const EventLog& log) {
  std::string out = "user_id,date,quantity,amount\n";
  for (const auto& r : log.records) {
    out += r.user_id;
    out += ',';
    out += r.date.iso();
    out += ',';
    out += std::to_string(r.quantity);
    out += ',';
    out += detail::format_double(r.amount);
    out += '\n';
  }
  return out;
}

/// Keeps records dated strictly before `end`.
inline EventLog filter_before(const EventLog& log, Date end) {
  EventLog out;
  for (const auto& r : log.records) {
    if (r.date < end) out.records.push_back(r);
  }
  out.update_span();
  return out;
}

inline EventLog filter_users(const EventLog& log, std::span<const std::string> sorted_users) {
  EventLog out;
  for (const auto& r : log.records) {
    if (std::binary_search(sorted_users.begin(), sorted_users.end(), r.user_id)) out.records.push_back(r);
  }
  out.update_span();
  return out;
}

/// Fixed-length periods starting at `origin`; period t covers
/// [origin + t*period_length, origin + (t+1)*period_length).
struct PeriodGrid {
  Date origin;
  int period_length = 7;
  int num_periods = 2;

  static PeriodGrid covering(Date first, Date last, int period_length) {
    if (period_length < 1) fail(ErrorCategory::ConfigError, "period_length must be positive");
    const int t = (last - first) / period_length + 1;
    return {first, period_length, std::max(2, t)};
  }

  static PeriodGrid covering(const EventLog& log, int period_length) {
    return covering(log.first, log.last, period_length);
  }

  int period_of(Date d) const {
    const int offset = d - origin;
    if (offset < 0 || offset >= period_length * num_periods) {
      fail(ErrorCategory::RangeError, "date " + d.iso() + " outside the period grid");
    }
    return offset / period_length;
  }

  Date period_start(int t) const { return origin + t * period_length; }
  Date end() const { return origin + num_periods * period_length; }

  /// Grid restricted to the first `t` periods.
  PeriodGrid head(int t) const { return {origin, period_length, t}; }
};

enum class DemandValue { amount, quantity };

struct DemandMatrix {
  std::vector<std::string> user_ids;
  SeriesMatrix series;
};

/// Per-user period sums of the chosen value. Every entry is observed: a zero
/// means the user had no events in that period.
inline DemandMatrix aggregate_demand(const EventLog& log, const PeriodGrid& grid, DemandValue value) {
  DemandMatrix out;
  out.user_ids = log.users();
  std::unordered_map<std::string_view, Eigen::Index> col;
  col.reserve(out.user_ids.size());
  for (std::size_t i = 0; i < out.user_ids.size(); ++i) col.emplace(out.user_ids[i], static_cast<Eigen::Index>(i));
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(grid.num_periods, static_cast<Eigen::Index>(out.user_ids.size()));
  for (const auto& r : log.records) {
    const int t = grid.period_of(r.date);
    v(t, col.at(r.user_id)) += value == DemandValue::amount ? r.amount : static_cast<double>(r.quantity);
  }
  out.series = SeriesMatrix::dense(std::move(v));
  return out;
}

struct RFMSeries {
  std::string user_id;
  std::vector<double> recency;
  std::vector<double> frequency;
  std::vector<double> monetary;
};

struct RFMSeriesSet {
  std::vector<RFMSeries> series;
  /// Requested users with no events in the log.
  std::vector<std::string> excluded;
};

/// Builds the recency / frequency / monetary series of one user from per-period
/// event counts and amounts. Recency is the number of periods since the most
/// recent event, with sentinel T + 1 before the first event.
inline RFMSeries rfm_from_periods(std::string user_id, std::span<const double> counts,
                                  std::span<const double> amounts) {
  const std::size_t T = counts.size();
  RFMSeries s{std::move(user_id), std::vector<double>(T), std::vector<double>(T), std::vector<double>(T)};
  const double sentinel = static_cast<double>(T + 1);
  long last = -1;
  double cumulative = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    if (counts[t] > 0) last = static_cast<long>(t);
    cumulative += counts[t];
    s.recency[t] = last < 0 ? sentinel : static_cast<double>(static_cast<long>(t) - last);
    s.frequency[t] = cumulative;
    s.monetary[t] = amounts[t];
  }
  return s;
}

inline RFMSeriesSet rfm_series(const EventLog& log, const PeriodGrid& grid,
                               std::span<const std::string> users) {
  const auto T = static_cast<std::size_t>(grid.num_periods);
  std::unordered_map<std::string_view, std::size_t> slot;
  for (std::size_t i = 0; i < users.size(); ++i) slot.emplace(users[i], i);
  std::vector<std::vector<double>> counts(users.size()), amounts(users.size());
  std::vector<bool> seen(users.size(), false);
  for (const auto& r : log.records) {
    auto it = slot.find(r.user_id);
    if (it == slot.end()) continue;
    const auto i = it->second;
    if (!seen[i]) {
      counts[i].assign(T, 0.0);
      amounts[i].assign(T, 0.0);
      seen[i] = true;
    }
    const auto t = static_cast<std::size_t>(grid.period_of(r.date));
    counts[i][t] += 1.0;
    amounts[i][t] += r.amount;
  }
  RFMSeriesSet out;
  for (std::size_t i = 0; i < users.size(); ++i) {
    if (!seen[i]) {
      out.excluded.push_back(users[i]);
      continue;
    }
    out.series.push_back(rfm_from_periods(users[i], counts[i], amounts[i]));
  }
  return out;
}

inline RFMSeriesSet rfm_series(const EventLog& log, const PeriodGrid& grid) {
  const auto users = log.users();
  return rfm_series(log, grid, users);
}

struct RFMScore {
  int r = 0;
  int f = 0;
  int m = 0;
  friend bool operator==(const RFMScore&, const RFMScore&) = default;
};

struct RFMScoring {
  std::map<std::string, RFMScore> scores;
  /// Set when the cohort has fewer than five users; ranks are still assigned
  /// from sorted position.
  bool degenerate_cohort = false;
};

/// Quintile bucket (0..4) for each entry, from its position after a stable sort
/// by (value, id). Bucket sizes differ by at most one.
inline std::vector<int> quintile_buckets(std::span<const double> values, std::span<const std::string> ids) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] < values[b];
    return ids[a] < ids[b];
  });
  std::vector<int> bucket(n);
  for (std::size_t pos = 0; pos < n; ++pos) bucket[order[pos]] = static_cast<int>(pos * 5 / n);
  return bucket;
}

/// Classic RFM quintile scoring as of `as_of`: the lowest recency (days since
/// last purchase) scores 5; the highest frequency / monetary totals score 5.
inline RFMScoring rfm_scores(const EventLog& log, Date as_of) {
  struct Acc {
    Date last;
    double count = 0.0;
    double amount = 0.0;
  };
  std::map<std::string, Acc> acc;
  for (const auto& r : log.records) {
    if (r.date > as_of) fail(ErrorCategory::RangeError, "event on " + r.date.iso() + " after as_of date");
    auto [it, inserted] = acc.try_emplace(r.user_id, Acc{r.date});
    auto& a = it->second;
    if (r.date > a.last) a.last = r.date;
    a.count += 1.0;
    a.amount += r.amount;
  }
  std::vector<std::string> ids;
  std::vector<double> rec, freq, mon;
  for (const auto& [id, a] : acc) {
    ids.push_back(id);
    rec.push_back(static_cast<double>(as_of - a.last));
    freq.push_back(a.count);
    mon.push_back(a.amount);
  }
  const auto br = quintile_buckets(rec, ids);
  const auto bf = quintile_buckets(freq, ids);
  const auto bm = quintile_buckets(mon, ids);
  RFMScoring out;
  out.degenerate_cohort = ids.size() < 5;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.scores[ids[i]] = RFMScore{5 - br[i], bf[i] + 1, bm[i] + 1};
  }
  return out;
}

}  // namespace tcr::ingest

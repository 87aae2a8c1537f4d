#pragma once

// PV power series ingestion: CSV parsing, daylight filtering, min-max
// normalization, sliding windows, and the chronological train/test split.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pvf/checkpoint.hpp"
#include "pvf/error.hpp"

namespace pvf {

// Seconds since 1970-01-01T00:00:00, calendar-naive (no time zone).
using Timestamp = std::int64_t;

inline constexpr std::int64_t kSecondsPerDay = 86400;

namespace detail {

// Proleptic Gregorian day count (H. Hinnant's days_from_civil).
constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct CivilDate {
  std::int64_t year;
  unsigned month;
  unsigned day;
};

constexpr CivilDate civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {y + (m <= 2), m, d};
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace detail

// Accepts "YYYY-MM-DDTHH:MM[:SS]" with 'T' or ' ' separator and an
// optional trailing 'Z'.
inline Timestamp parse_timestamp(std::string_view text) {
  std::string_view s = detail::trim(text);
  if (!s.empty() && s.back() == 'Z') s.remove_suffix(1);
  auto fail = [&]() -> Timestamp {
    throw ParseError("invalid ISO-8601 timestamp '" + std::string(text) + "'");
  };
  if (s.size() != 16 && s.size() != 19) return fail();
  if (s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':') {
    return fail();
  }
  if (s.size() == 19 && s[16] != ':') return fail();
  std::int64_t y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  if (!detail::parse_number(s.substr(0, 4), y) || !detail::parse_number(s.substr(5, 2), mo) ||
      !detail::parse_number(s.substr(8, 2), d) || !detail::parse_number(s.substr(11, 2), h) ||
      !detail::parse_number(s.substr(14, 2), mi)) {
    return fail();
  }
  if (s.size() == 19 && !detail::parse_number(s.substr(17, 2), sec)) return fail();
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 59) return fail();
  const auto back = detail::civil_from_days(detail::days_from_civil(y, mo, d));
  if (back.month != mo || back.day != d) return fail();
  return detail::days_from_civil(y, mo, d) * kSecondsPerDay + h * 3600 + mi * 60 + sec;
}

inline std::string format_timestamp(Timestamp ts) {
  std::int64_t days = ts / kSecondsPerDay;
  std::int64_t rem = ts % kSecondsPerDay;
  if (rem < 0) {
    rem += kSecondsPerDay;
    --days;
  }
  const auto date = detail::civil_from_days(days);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02d:%02d:%02d",
                static_cast<long long>(date.year), date.month, date.day,
                static_cast<int>(rem / 3600), static_cast<int>(rem / 60 % 60),
                static_cast<int>(rem % 60));
  return buf;
}

// Minutes after midnight in [0, 1440]; 1440 only as an exclusive end.
struct TimeOfDay {
  int minutes = 0;

  static TimeOfDay parse(std::string_view text) {
    const std::string_view s = detail::trim(text);
    int h = 0, m = 0;
    if (s.size() != 5 || s[2] != ':' || !detail::parse_number(s.substr(0, 2), h) ||
        !detail::parse_number(s.substr(3, 2), m) || m < 0 || m > 59 || h < 0 ||
        h > 24 || (h == 24 && m != 0)) {
      throw ParseError("invalid time of day '" + std::string(text) + "' (want HH:MM)");
    }
    return {h * 60 + m};
  }

  std::string str() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02d:%02d", minutes / 60, minutes % 60);
    return buf;
  }

  friend bool operator==(TimeOfDay, TimeOfDay) = default;
};

inline int time_of_day_minutes(Timestamp ts) {
  std::int64_t rem = ts % kSecondsPerDay;
  if (rem < 0) rem += kSecondsPerDay;
  return static_cast<int>(rem / 60);
}

struct RawSeries {
  std::vector<Timestamp> timestamps;
  std::vector<double> values;  // MW
  double capacity_mw = 0.0;
  std::int64_t step_seconds = 0;  // nominal sampling step; 0 for one sample

  std::size_t size() const { return values.size(); }
};

// Parses `timestamp,power_mw` CSV text. Rows are sorted by timestamp; the
// result must have a constant step and no duplicates.
inline RawSeries parse_csv(std::istream& in, double capacity_mw) {
  if (!(capacity_mw > 0.0) || !std::isfinite(capacity_mw)) {
    throw ValidationError("capacity must be a positive finite number of MW");
  }
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<std::pair<Timestamp, double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view s = line;
    if (line_no == 1 && s.size() >= 3 && s.substr(0, 3) == "\xEF\xBB\xBF") s.remove_prefix(3);
    s = detail::trim(s);
    if (s.empty()) continue;
    if (!header_seen) {
      if (s != "timestamp,power_mw") {
        throw ParseError("line " + std::to_string(line_no) +
                         ": expected header 'timestamp,power_mw'");
      }
      header_seen = true;
      continue;
    }
    const auto comma = s.find(',');
    if (comma == std::string_view::npos || s.find(',', comma + 1) != std::string_view::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 2 fields");
    }
    Timestamp ts = 0;
    try {
      ts = parse_timestamp(s.substr(0, comma));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    double power = 0.0;
    if (!detail::parse_number(s.substr(comma + 1), power)) {
      throw ParseError("line " + std::to_string(line_no) + ": invalid power value '" +
                       std::string(detail::trim(s.substr(comma + 1))) + "'");
    }
    if (!std::isfinite(power) || power < 0.0) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": power must be finite and >= 0");
    }
    rows.emplace_back(ts, power);
  }
  if (!header_seen) throw ParseError("empty CSV: missing header");
  if (rows.empty()) throw StructuralError("CSV has no data rows");
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  RawSeries series;
  series.capacity_mw = capacity_mw;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0) {
      const std::int64_t step = rows[i].first - rows[i - 1].first;
      if (step == 0) {
        throw StructuralError("duplicate timestamp " + format_timestamp(rows[i].first));
      }
      if (i == 1) {
        series.step_seconds = step;
      } else if (step != series.step_seconds) {
        throw StructuralError("non-constant sampling step at " +
                              format_timestamp(rows[i].first));
      }
    }
    series.timestamps.push_back(rows[i].first);
    series.values.push_back(rows[i].second);
  }
  return series;
}

inline RawSeries load_csv(const std::string& path, double capacity_mw) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return parse_csv(in, capacity_mw);
}

// Keeps samples whose time of day lies in [start, end).
inline RawSeries filter_daylight(const RawSeries& series, TimeOfDay start, TimeOfDay end) {
  if (start.minutes >= end.minutes) {
    throw ValidationError("daylight window start must precede end");
  }
  RawSeries out;
  out.capacity_mw = series.capacity_mw;
  out.step_seconds = series.step_seconds;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const int tod = time_of_day_minutes(series.timestamps[i]);
    if (tod >= start.minutes && tod < end.minutes) {
      out.timestamps.push_back(series.timestamps[i]);
      out.values.push_back(series.values[i]);
    }
  }
  if (out.values.empty()) throw ValidationError("no daylight samples");
  return out;
}

// Affine map onto [0, 1]: normalized = (x - offset) / scale.
struct Normalization {
  double scale = 1.0;
  double offset = 0.0;

  double normalize(double x) const { return (x - offset) / scale; }
  double denormalize(double v) const { return v * scale + offset; }

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

// Daylight samples of consecutive days concatenated into one sequence.
// Window i has inputs values[i, i + L) and target values[i + L]; windows
// [0, split_index) train, the rest test.
struct PreparedDataset {
  std::vector<Timestamp> timestamps;
  std::vector<double> values_mw;
  std::vector<double> values;  // normalized
  std::size_t window_length = 0;
  std::size_t split_index = 0;
  Normalization norm;
  double capacity_mw = 0.0;

  std::size_t window_count() const {
    return values.size() > window_length ? values.size() - window_length : 0;
  }
  std::size_t train_count() const { return split_index; }
  std::size_t test_count() const { return window_count() - split_index; }

  std::span<const double> window(std::size_t i) const {
    return std::span<const double>(values).subspan(i, window_length);
  }
  double target(std::size_t i) const { return values[i + window_length]; }
  double target_mw(std::size_t i) const { return values_mw[i + window_length]; }
  Timestamp target_time(std::size_t i) const { return timestamps[i + window_length]; }

  friend bool operator==(const PreparedDataset&, const PreparedDataset&) = default;
};

inline PreparedDataset prepare(const RawSeries& series, std::size_t window_length,
                               double train_fraction) {
  if (window_length < 1) throw ValidationError("window_length must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("train_fraction must lie in (0, 1)");
  }
  if (series.size() <= window_length) {
    throw ValidationError("series too short: " + std::to_string(series.size()) +
                          " samples for window length " + std::to_string(window_length));
  }
  PreparedDataset ds;
  ds.timestamps = series.timestamps;
  ds.values_mw = series.values;
  ds.window_length = window_length;
  ds.capacity_mw = series.capacity_mw;
  const std::size_t windows = series.size() - window_length;
  ds.split_index = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(windows)));
  if (ds.split_index == 0) throw ValidationError("train split holds no windows");

  // Bounds from every sample touched by a training window.
  const std::size_t train_samples = ds.split_index + window_length;
  const auto [lo, hi] = std::minmax_element(series.values.begin(),
                                            series.values.begin() +
                                                static_cast<std::ptrdiff_t>(train_samples));
  ds.norm.offset = *lo;
  ds.norm.scale = *hi > *lo ? *hi - *lo : 1.0;
  ds.values.reserve(series.size());
  for (double v : series.values) ds.values.push_back(ds.norm.normalize(v));
  return ds;
}

inline std::vector<double> denormalize(const PreparedDataset& ds,
                                       std::span<const double> values) {
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(ds.norm.denormalize(v));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset cache: "PVFD", version byte, then the PreparedDataset fields.

inline constexpr std::uint8_t kDatasetCacheVersion = 1;

inline void save_dataset(const std::string& path, const PreparedDataset& ds) {
  detail::ByteWriter w;
  w.bytes("PVFD", 4);
  w.u8(kDatasetCacheVersion);
  w.u64(ds.window_length);
  w.u64(ds.split_index);
  w.f64(ds.norm.scale);
  w.f64(ds.norm.offset);
  w.f64(ds.capacity_mw);
  w.u64(ds.values.size());
  for (std::size_t i = 0; i < ds.values.size(); ++i) {
    w.i64(ds.timestamps[i]);
    w.f64(ds.values_mw[i]);
    w.f64(ds.values[i]);
  }
  w.save(path);
}

inline PreparedDataset load_dataset(const std::string& path) {
  auto r = detail::ByteReader::load(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string_view(magic, 4) != "PVFD") throw StructuralError("dataset cache: bad magic");
  if (const auto v = r.u8(); v != kDatasetCacheVersion) {
    throw StructuralError("dataset cache: unsupported version " + std::to_string(v));
  }
  PreparedDataset ds;
  ds.window_length = r.u64();
  ds.split_index = r.u64();
  ds.norm.scale = r.f64();
  ds.norm.offset = r.f64();
  ds.capacity_mw = r.f64();
  const std::uint64_t n = r.u64();
  if (n > r.remaining() / 24) throw StructuralError("dataset cache: truncated");
  for (std::uint64_t i = 0; i < n; ++i) {
    ds.timestamps.push_back(r.i64());
    ds.values_mw.push_back(r.f64());
    ds.values.push_back(r.f64());
  }
  if (!r.at_end()) throw StructuralError("dataset cache: trailing bytes");
  return ds;
}

}  // namespace pvf

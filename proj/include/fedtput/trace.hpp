#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fedtput/error.hpp"
#include "fedtput/rng.hpp"

namespace fedtput {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

enum class SourceTag { lte4g, sim5g, lumos, irish, mnwild, synth };

inline std::string_view source_tag_name(SourceTag t) {
  switch (t) {
    case SourceTag::lte4g: return "4G";
    case SourceTag::sim5g: return "SIM5G";
    case SourceTag::lumos: return "LUMOS";
    case SourceTag::irish: return "IRISH";
    case SourceTag::mnwild: return "MNWILD";
    case SourceTag::synth: return "SYNTH";
  }
  return "SYNTH";
}

inline std::optional<SourceTag> parse_source_tag(std::string_view s) {
  std::string up(s);
  for (auto& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (auto t : {SourceTag::lte4g, SourceTag::sim5g, SourceTag::lumos, SourceTag::irish,
                 SourceTag::mnwild, SourceTag::synth}) {
    if (up == source_tag_name(t)) return t;
  }
  return std::nullopt;
}

namespace col {
inline constexpr std::string_view timestamp = "timestamp";
inline constexpr std::string_view speed = "speed";
inline constexpr std::string_view rsrp = "rsrp";
inline constexpr std::string_view handover_count = "handover_count";
inline constexpr std::string_view distance_to_cell = "distance_to_cell";
inline constexpr std::string_view data_state = "data_state";
inline constexpr std::string_view throughput = "throughput";
}  // namespace col

/// Ordered model input features. The historical-throughput channel is always
/// appended after them, hence input_dim = |features| + 1.
struct FeatureSchema {
  std::vector<std::string> feature_names;

  std::size_t input_dim() const { return feature_names.size() + 1; }

  static FeatureSchema canonical() {
    return {{std::string(col::speed), std::string(col::rsrp), std::string(col::handover_count),
             std::string(col::distance_to_cell), std::string(col::data_state)}};
  }

  bool operator==(const FeatureSchema&) const = default;
};

/// One row of a trace in canonical units. Missing optional values are NaN.
struct TraceRecord {
  double timestamp = 0;         // seconds since trace start
  double speed = kMissing;      // m/s
  double rsrp = kMissing;       // dBm
  double handover_count = kMissing;
  double distance_to_cell = kMissing;  // m
  double data_state = kMissing;
  double throughput = 0;        // Mbps
};

/// Column-oriented trace for a single client source. features[c][row] holds
/// feature column c, named by feature_names[c].
struct TraceDataset {
  std::string client_id;
  SourceTag source = SourceTag::synth;
  std::vector<double> timestamp;
  std::vector<double> throughput;
  std::vector<std::string> feature_names;
  std::vector<std::vector<double>> features;
  std::size_t dropped_rows = 0;

  std::size_t size() const { return throughput.size(); }
  bool empty() const { return throughput.empty(); }

  const std::vector<double>* column(std::string_view name) const {
    for (std::size_t c = 0; c < feature_names.size(); ++c)
      if (feature_names[c] == name) return &features[c];
    return nullptr;
  }

  FeatureSchema schema() const { return {feature_names}; }

  TraceRecord record(std::size_t i) const {
    TraceRecord r;
    r.timestamp = timestamp.at(i);
    r.throughput = throughput.at(i);
    auto get = [&](std::string_view n) {
      const auto* c = column(n);
      return c ? (*c)[i] : kMissing;
    };
    r.speed = get(col::speed);
    r.rsrp = get(col::rsrp);
    r.handover_count = get(col::handover_count);
    r.distance_to_cell = get(col::distance_to_cell);
    r.data_state = get(col::data_state);
    return r;
  }

  // Rows [begin, end) as a new dataset.
  TraceDataset slice(std::size_t begin, std::size_t end) const {
    TraceDataset out;
    out.client_id = client_id;
    out.source = source;
    out.feature_names = feature_names;
    end = std::min(end, size());
    begin = std::min(begin, end);
    out.timestamp.assign(timestamp.begin() + begin, timestamp.begin() + end);
    out.throughput.assign(throughput.begin() + begin, throughput.begin() + end);
    for (const auto& f : features) out.features.emplace_back(f.begin() + begin, f.begin() + end);
    return out;
  }

  bool operator==(const TraceDataset& o) const {
    auto same = [](const std::vector<double>& a, const std::vector<double>& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (is_missing(a[i]) != is_missing(b[i])) return false;
        if (!is_missing(a[i]) && a[i] != b[i]) return false;
      }
      return true;
    };
    if (client_id != o.client_id || source != o.source || feature_names != o.feature_names) return false;
    if (!same(timestamp, o.timestamp) || !same(throughput, o.throughput)) return false;
    for (std::size_t c = 0; c < features.size(); ++c)
      if (!same(features[c], o.features[c])) return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// Source column mapping

enum class ColumnKind {
  numeric,
  datetime,     // numeric seconds or a calendar timestamp string
  categorical,  // numeric code, or strings mapped to codes in first-seen order
  cell_id,      // serving-cell identifier; a change between rows is one handover
  cumulative,   // monotone counter, differenced to per-interval events
};

struct ColumnAlias {
  std::string_view header;
  std::string_view canonical;
  ColumnKind kind = ColumnKind::numeric;
  double scale = 1.0;
};

// Canonical names are accepted for every source tag.
inline constexpr std::array<ColumnAlias, 7> kCanonicalAliases{{
    {"timestamp", col::timestamp, ColumnKind::datetime},
    {"speed", col::speed},
    {"rsrp", col::rsrp},
    {"handover_count", col::handover_count},
    {"distance_to_cell", col::distance_to_cell},
    {"data_state", col::data_state, ColumnKind::categorical},
    {"throughput", col::throughput},
}};

inline std::vector<ColumnAlias> source_aliases(SourceTag tag) {
  using K = ColumnKind;
  switch (tag) {
    case SourceTag::synth:
      return {{"ts", col::timestamp, K::datetime}, {"ho", col::handover_count},
              {"dist", col::distance_to_cell}, {"state", col::data_state, K::categorical},
              {"tput", col::throughput}};
    case SourceTag::lte4g:
      return {{"time", col::timestamp, K::datetime},
              {"speed_mps", col::speed},
              {"handovers", col::handover_count, K::cumulative},
              {"distance", col::distance_to_cell},
              {"datastate", col::data_state, K::categorical},
              {"throughput_kbps", col::throughput, K::numeric, 1e-3},
              {"throughput_mbps", col::throughput}};
    case SourceTag::sim5g:
      return {{"time", col::timestamp, K::datetime},
              {"ue_speed", col::speed},
              {"handovers", col::handover_count, K::cumulative},
              {"distance", col::distance_to_cell},
              {"state", col::data_state, K::categorical},
              {"throughput_mbps", col::throughput}};
    case SourceTag::lumos:
      return {{"seq_num", col::timestamp, K::datetime},
              {"movingspeed", col::speed},
              {"nr_ssrsrp", col::rsrp},
              {"lte_rsrp", col::rsrp},
              {"tower_id", col::handover_count, K::cell_id},
              {"throughput", col::throughput}};
    case SourceTag::irish:
      return {{"timestamp", col::timestamp, K::datetime},
              {"speed", col::speed, K::numeric, 1.0 / 3.6},  // km/h
              {"rsrp", col::rsrp},
              {"cellid", col::handover_count, K::cell_id},
              {"state", col::data_state, K::categorical},
              {"dl_bitrate", col::throughput, K::numeric, 1e-3}};  // kbps
    case SourceTag::mnwild:
      return {{"time_s", col::timestamp, K::datetime},
              {"speed_mps", col::speed},
              {"ss_rsrp", col::rsrp},
              {"pci", col::handover_count, K::cell_id},
              {"throughput_mbps", col::throughput}};
  }
  return {};
}

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '"' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

inline std::optional<double> parse_number(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

// Seconds since epoch for "YYYY.MM.DD_HH.MM.SS" or "YYYY-MM-DD HH:MM:SS[.fff]".
inline std::optional<double> parse_datetime(std::string_view s) {
  for (const char* fmt : {"%Y.%m.%d_%H.%M.%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"}) {
    std::tm tm{};
    std::istringstream in{std::string(s)};
    in >> std::get_time(&tm, fmt);
    if (in.fail()) continue;
    double frac = 0;
    if (in.peek() == '.') {
      std::string rest;
      in >> rest;
      auto f = parse_number("0" + rest);
      if (!f) continue;
      frac = *f;
    } else if (!in.eof() && in.peek() != EOF) {
      continue;
    }
    return static_cast<double>(timegm(&tm)) + frac;
  }
  return std::nullopt;
}

inline double median_of_present(const std::vector<double>& v, std::size_t limit) {
  std::vector<double> present;
  for (std::size_t i = 0; i < std::min(limit, v.size()); ++i)
    if (!is_missing(v[i])) present.push_back(v[i]);
  if (present.empty()) return kMissing;
  auto mid = present.begin() + static_cast<std::ptrdiff_t>(present.size() / 2);
  std::nth_element(present.begin(), mid, present.end());
  double m = *mid;
  if (present.size() % 2 == 0) {
    double lo = *std::max_element(present.begin(), mid);
    m = 0.5 * (m + lo);
  }
  return m;
}

}  // namespace detail

/// Parses CSV text of the given source kind into canonical columns.
/// Mapped cells that are present but unparseable drop the row (counted in
/// dropped_rows); empty optional cells become missing values.
inline TraceDataset parse_csv_text(std::string_view text, SourceTag tag,
                                   std::string client_id = {}) {
  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
      if (i == text.size() || text[i] == '\n') {
        auto l = text.substr(start, i - start);
        if (!detail::trim(l).empty()) lines.push_back(l);
        start = i + 1;
      }
    }
  }
  if (lines.empty()) throw Error(Errc::empty_dataset, "no header row");

  const auto header = detail::split_csv_line(lines[0]);
  const auto aliases = source_aliases(tag);

  struct Binding {
    std::size_t column;
    ColumnAlias alias;
  };
  std::vector<Binding> bound;
  std::vector<std::string> canonical_bound;
  std::vector<std::pair<std::size_t, std::string>> extras;

  auto find_alias = [&](const std::string& h) -> std::optional<ColumnAlias> {
    for (const auto& a : aliases)
      if (h == a.header) return a;
    for (const auto& a : kCanonicalAliases)
      if (h == a.header) return a;
    return std::nullopt;
  };

  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto h = detail::lower(header[c]);
    if (auto a = find_alias(h)) {
      const std::string canon(a->canonical);
      // First header wins when several aliases map to one canonical column.
      if (std::find(canonical_bound.begin(), canonical_bound.end(), canon) != canonical_bound.end())
        continue;
      canonical_bound.push_back(canon);
      bound.push_back({c, *a});
    } else if (!h.empty()) {
      extras.emplace_back(c, h);
    }
  }
  for (auto required : {col::timestamp, col::throughput}) {
    if (std::find(canonical_bound.begin(), canonical_bound.end(), required) == canonical_bound.end())
      throw Error(Errc::missing_column, std::string(required));
  }

  // Canonical feature order first, then extra numeric columns in header order.
  std::vector<std::string> feature_order;
  for (auto f : FeatureSchema::canonical().feature_names)
    if (std::find(canonical_bound.begin(), canonical_bound.end(), f) != canonical_bound.end())
      feature_order.push_back(f);

  // Extra columns are kept only when every non-empty cell is numeric.
  std::vector<std::pair<std::size_t, std::string>> numeric_extras;
  for (const auto& [c, name] : extras) {
    bool ok = true;
    for (std::size_t r = 1; r < lines.size() && ok; ++r) {
      auto cells = detail::split_csv_line(lines[r]);
      if (c < cells.size() && !cells[c].empty() && !detail::parse_number(cells[c])) ok = false;
    }
    if (ok && std::find(feature_order.begin(), feature_order.end(), name) == feature_order.end()) {
      numeric_extras.emplace_back(c, name);
      feature_order.push_back(name);
    }
  }

  struct Row {
    double ts;
    double tput;
    std::vector<double> feats;
    std::string cell;
    bool has_cell;
  };
  std::vector<Row> rows;
  std::size_t dropped = 0;
  std::map<std::string, double> category_codes;
  std::vector<std::pair<std::string, double>> pending_codes;

  auto feature_index = [&](std::string_view name) {
    return static_cast<std::size_t>(
        std::find(feature_order.begin(), feature_order.end(), name) - feature_order.begin());
  };

  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = detail::split_csv_line(lines[r]);
    Row row{kMissing, kMissing, std::vector<double>(feature_order.size(), kMissing), {}, false};
    bool ok = true;
    for (const auto& b : bound) {
      std::string_view cell = b.column < cells.size() ? cells[b.column] : std::string_view{};
      const std::string_view canon = b.alias.canonical;
      double value = kMissing;
      if (!cell.empty()) {
        switch (b.alias.kind) {
          case ColumnKind::numeric:
          case ColumnKind::cumulative: {
            auto v = detail::parse_number(cell);
            if (!v) ok = false;
            else value = *v * b.alias.scale;
            break;
          }
          case ColumnKind::datetime: {
            auto v = detail::parse_number(cell);
            if (!v) v = detail::parse_datetime(cell);
            if (!v) ok = false;
            else value = *v;
            break;
          }
          case ColumnKind::categorical: {
            if (auto v = detail::parse_number(cell)) {
              value = *v;
            } else {
              std::string key(cell);
              auto it = category_codes.find(key);
              if (it == category_codes.end())
                it = category_codes.emplace(key, static_cast<double>(category_codes.size())).first;
              value = it->second;
            }
            break;
          }
          case ColumnKind::cell_id:
            row.cell = std::string(cell);
            row.has_cell = true;
            continue;
        }
      }
      if (!ok) break;
      if (canon == col::timestamp) row.ts = value;
      else if (canon == col::throughput) row.tput = value;
      else row.feats[feature_index(canon)] = value;
    }
    if (ok) {
      for (const auto& [c, name] : numeric_extras) {
        if (c < cells.size() && !cells[c].empty())
          row.feats[feature_index(name)] = *detail::parse_number(cells[c]);
      }
    }
    if (!ok || is_missing(row.ts) || is_missing(row.tput) || row.tput < 0) {
      ++dropped;
      continue;
    }
    if (auto si = feature_index(col::speed); si < feature_order.size() && row.feats[si] < 0)
      row.feats[si] = kMissing;
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(Errc::empty_dataset, "no valid rows");

  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });

  // Per-interval handover events from cell-id changes or cumulative counters.
  const auto ho = feature_index(col::handover_count);
  for (const auto& b : bound) {
    if (b.alias.kind == ColumnKind::cell_id) {
      const std::string* prev = nullptr;
      for (auto& row : rows) {
        if (!row.has_cell) continue;
        row.feats[ho] = (prev && *prev != row.cell) ? 1.0 : 0.0;
        prev = &row.cell;
      }
    } else if (b.alias.kind == ColumnKind::cumulative) {
      double prev = kMissing;
      for (auto& row : rows) {
        const double cur = row.feats[ho];
        if (is_missing(cur)) continue;
        row.feats[ho] = is_missing(prev) ? 0.0 : std::max(0.0, cur - prev);
        prev = cur;
      }
    }
  }

  TraceDataset ds;
  ds.client_id = std::move(client_id);
  ds.source = tag;
  ds.feature_names = feature_order;
  ds.features.assign(feature_order.size(), {});
  ds.dropped_rows = dropped;
  const double t0 = rows.front().ts;
  for (const auto& row : rows) {
    ds.timestamp.push_back(row.ts - t0);
    ds.throughput.push_back(row.tput);
    for (std::size_t c = 0; c < feature_order.size(); ++c) ds.features[c].push_back(row.feats[c]);
  }
  return ds;
}

inline TraceDataset parse_csv_trace(const std::string& path, SourceTag tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  auto stem = path.substr(path.find_last_of('/') + 1);
  stem = stem.substr(0, stem.find_last_of('.'));
  return parse_csv_text(buf.str(), tag, stem);
}

/// Canonical CSV: timestamp, feature columns in dataset order, throughput.
/// Values use round-trip precision; missing values are empty cells.
inline std::string write_csv_text(const TraceDataset& ds) {
  std::string out = "timestamp";
  for (const auto& n : ds.feature_names) out += "," + n;
  out += ",throughput\n";
  char buf[40];
  auto put = [&](double v) {
    if (is_missing(v)) return;
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
  };
  for (std::size_t i = 0; i < ds.size(); ++i) {
    put(ds.timestamp[i]);
    for (const auto& f : ds.features) {
      out += ',';
      put(f[i]);
    }
    out += ',';
    put(ds.throughput[i]);
    out += '\n';
  }
  return out;
}

inline void write_csv_trace(const TraceDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write " + path);
  out << write_csv_text(ds);
}

/// Resamples onto a uniform grid 0, step, 2*step, ... using the last
/// observation at or before each grid point. Handover events falling into
/// (g - step, g] are summed rather than carried.
inline TraceDataset resample_uniform(const TraceDataset& ds, double step = 1.0) {
  if (ds.empty()) throw Error(Errc::empty_dataset, "resample of empty trace");
  if (!(step > 0)) throw Error(Errc::invalid_argument, "resample step must be positive");
  TraceDataset out;
  out.client_id = ds.client_id;
  out.source = ds.source;
  out.feature_names = ds.feature_names;
  out.features.assign(ds.features.size(), {});
  out.dropped_rows = ds.dropped_rows;

  const double t0 = ds.timestamp.front();
  const auto n_grid = static_cast<std::size_t>(std::floor((ds.timestamp.back() - t0) / step + 1e-9)) + 1;
  const auto* ho_col = ds.column(col::handover_count);
  std::size_t ho_index = ds.feature_names.size();
  for (std::size_t c = 0; c < ds.feature_names.size(); ++c)
    if (ds.feature_names[c] == col::handover_count) ho_index = c;

  std::size_t j = 0;
  std::size_t prev_j = 0;
  for (std::size_t g = 0; g < n_grid; ++g) {
    const double t = t0 + static_cast<double>(g) * step;
    while (j + 1 < ds.size() && ds.timestamp[j + 1] <= t + 1e-9) ++j;
    out.timestamp.push_back(static_cast<double>(g) * step);
    out.throughput.push_back(ds.throughput[j]);
    for (std::size_t c = 0; c < ds.features.size(); ++c) {
      if (c == ho_index && ho_col) {
        double sum = 0;
        bool any = false;
        const std::size_t from = g == 0 ? 0 : prev_j + 1;
        for (std::size_t k = from; k <= j; ++k) {
          if (!is_missing((*ho_col)[k])) {
            sum += (*ho_col)[k];
            any = true;
          }
        }
        out.features[c].push_back(any ? sum : (g > 0 && from > j ? 0.0 : kMissing));
      } else {
        out.features[c].push_back(ds.features[c][j]);
      }
    }
    prev_j = j;
  }
  return out;
}

/// Fallback values for features that are entirely absent from a source.
inline std::optional<double> absent_feature_default(std::string_view name) {
  if (name == col::handover_count || name == col::data_state || name == col::distance_to_cell)
    return 0.0;
  return std::nullopt;
}

/// Projects onto exactly the schema's features (in schema order) and fills
/// missing values with the median of the present values in the first
/// imputation_fraction of the rows. Entirely absent features use
/// absent_feature_default; without one, MissingColumn.
inline TraceDataset normalize_schema(const TraceDataset& ds, const FeatureSchema& schema,
                                     double imputation_fraction = 1.0) {
  if (ds.empty()) throw Error(Errc::empty_dataset, "normalize of empty trace");
  bool any_overlap = false;
  for (const auto& f : schema.feature_names)
    if (ds.column(f)) any_overlap = true;
  if (!any_overlap && !schema.feature_names.empty())
    throw Error(Errc::missing_column, "no schema feature present in dataset " + ds.client_id);

  const auto limit = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(static_cast<double>(ds.size()) * imputation_fraction)));
  TraceDataset out;
  out.client_id = ds.client_id;
  out.source = ds.source;
  out.timestamp = ds.timestamp;
  out.throughput = ds.throughput;
  out.dropped_rows = ds.dropped_rows;
  out.feature_names = schema.feature_names;
  for (const auto& f : schema.feature_names) {
    const auto* src = ds.column(f);
    double fill = src ? detail::median_of_present(*src, limit) : kMissing;
    if (is_missing(fill) && src) fill = detail::median_of_present(*src, src->size());
    if (is_missing(fill)) {
      auto d = absent_feature_default(f);
      if (!d) throw Error(Errc::missing_column, f);
      fill = *d;
    }
    std::vector<double> column(ds.size(), fill);
    if (src)
      for (std::size_t i = 0; i < ds.size(); ++i)
        if (!is_missing((*src)[i])) column[i] = (*src)[i];
    out.features.push_back(std::move(column));
  }
  return out;
}

/// Ingestion pipeline: 1 Hz grid, then schema projection.
inline TraceDataset canonicalize(const TraceDataset& ds, const FeatureSchema& schema,
                                 double imputation_fraction = 1.0) {
  return normalize_schema(resample_uniform(ds, 1.0), schema, imputation_fraction);
}

// ---------------------------------------------------------------------------
// Synthetic traces

struct SmoothRegime {};

struct BurstyRegime {
  double high_mbps = 100.0;
  double low_mbps = 8.0;
  double switch_probability = 0.05;
};

/// throughput[t] = intercept + sum_k coefficients[k] * feature_k[t-1] + noise * U(-1, 1),
/// floored at 0. Feature order is the canonical schema order. Row 0 uses row 0's
/// features.
struct ClientLinearRegime {
  double intercept = 30.0;
  std::array<double, 5> coefficients{};
  double noise = 0.0;

  // Typical centre and spread of each synthetic feature.
  static constexpr std::array<double, 5> kCenter{12.0, -95.0, 0.16, 300.0, 1.0};
  static constexpr std::array<double, 5> kSpread{5.0, 10.0, 0.37, 120.0, 0.8};

  // Coefficients given in throughput Mbps per typical feature spread, with
  // intercept being the throughput at the typical centre.
  static ClientLinearRegime standardized(double centre_mbps, std::array<double, 5> slopes,
                                         double noise) {
    ClientLinearRegime r;
    r.intercept = centre_mbps;
    r.noise = noise;
    for (std::size_t k = 0; k < 5; ++k) {
      r.coefficients[k] = slopes[k] / kSpread[k];
      r.intercept -= r.coefficients[k] * kCenter[k];
    }
    return r;
  }
};

using SynthRegime = std::variant<SmoothRegime, BurstyRegime, ClientLinearRegime>;

/// Deterministic synthetic 1 Hz trace with the canonical feature schema.
inline TraceDataset synth_trace(std::uint64_t seed, std::size_t length, const SynthRegime& regime) {
  Rng rng(mix_seed(seed, 0x5EED));
  TraceDataset ds;
  ds.client_id = "synth-" + std::to_string(seed);
  ds.source = SourceTag::synth;
  ds.feature_names = FeatureSchema::canonical().feature_names;
  ds.features.assign(5, std::vector<double>(length));
  ds.timestamp.resize(length);
  ds.throughput.resize(length);

  static constexpr std::array<double, 5> phi{0.6, 0.5, 0.7, 0.6, 0.5};
  std::array<double, 5> z{};
  for (std::size_t k = 0; k < 5; ++k) z[k] = rng.normal();

  const bool bursty = std::holds_alternative<BurstyRegime>(regime);
  const BurstyRegime burst = bursty ? std::get<BurstyRegime>(regime) : BurstyRegime{};
  bool high = rng.uniform() < 0.5;
  bool prev_high = high;
  double smooth_level = rng.normal();

  for (std::size_t t = 0; t < length; ++t) {
    if (t > 0)
      for (std::size_t k = 0; k < 5; ++k)
        z[k] = phi[k] * z[k] + std::sqrt(1 - phi[k] * phi[k]) * rng.normal();
    ds.timestamp[t] = static_cast<double>(t);
    prev_high = high;
    if (bursty && t > 0 && rng.uniform() < burst.switch_probability) high = !high;

    double speed = std::max(0.0, 12.0 + 5.0 * z[0]);
    double rsrp = -95.0 + 10.0 * z[1];
    double handover = z[2] > 1.0 ? 1.0 : 0.0;
    double distance = std::max(0.0, 300.0 + 120.0 * z[3]);
    double state = z[4] < -0.5 ? 0.0 : (z[4] < 0.5 ? 1.0 : 2.0);
    if (bursty) {
      rsrp = (high ? -80.0 : -108.0) + 3.0 * z[1];
      state = high ? 2.0 : 1.0;
    }
    ds.features[0][t] = speed;
    ds.features[1][t] = rsrp;
    ds.features[2][t] = handover;
    ds.features[3][t] = distance;
    ds.features[4][t] = state;

    double y = 0;
    if (const auto* lin = std::get_if<ClientLinearRegime>(&regime)) {
      const std::size_t src = t == 0 ? 0 : t - 1;
      y = lin->intercept;
      for (std::size_t k = 0; k < 5; ++k) y += lin->coefficients[k] * ds.features[k][src];
      if (lin->noise != 0) y += lin->noise * rng.uniform(-1.0, 1.0);
      else rng.uniform();
    } else if (bursty) {
      const double level = prev_high ? burst.high_mbps : burst.low_mbps;
      y = level * (1.0 + 0.15 * rng.uniform(-1.0, 1.0));
    } else {
      smooth_level = 0.97 * smooth_level + std::sqrt(1 - 0.97 * 0.97) * rng.normal();
      y = 40.0 + 15.0 * smooth_level + 1.5 * rng.uniform(-1.0, 1.0);
    }
    ds.throughput[t] = std::max(0.0, y);
  }
  return ds;
}

}  // namespace fedtput

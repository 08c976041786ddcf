// Copyright 2026 The FairClip Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fairclip/error.hpp"
#include "fairclip/model.hpp"
#include "fairclip/numerics.hpp"

namespace fairclip {

struct ProtectedAttribute {
  std::string name;
  std::vector<std::string> levels;  // group value -> display name
  std::vector<int> values;          // one per row
};

struct Dataset {
  DenseMatrix features;
  std::vector<std::string> feature_names;
  std::vector<int> labels;
  std::size_t num_classes = 2;
  std::vector<ProtectedAttribute> attributes;
  std::vector<std::size_t> numeric_columns;  // columns subject to normalization
  std::string provenance;

  std::size_t size() const { return labels.size(); }

  Example example(std::size_t row) const { return {features.row(row), labels[row]}; }

  const ProtectedAttribute& attribute(std::string_view name) const {
    for (const auto& a : attributes) {
      if (a.name == name) return a;
    }
    throw Error(ErrorCode::kMissingAttribute, std::string(name));
  }

  bool has_attribute(std::string_view name) const {
    return std::any_of(attributes.begin(), attributes.end(),
                       [&](const auto& a) { return a.name == name; });
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.features = DenseMatrix(rows.size(), features.cols);
    out.feature_names = feature_names;
    out.num_classes = num_classes;
    out.numeric_columns = numeric_columns;
    out.provenance = provenance;
    out.labels.reserve(rows.size());
    for (const auto& a : attributes) out.attributes.push_back({a.name, a.levels, {}});
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const std::size_t r = rows[k];
      std::copy_n(features.row(r).begin(), features.cols, out.features.row(k).begin());
      out.labels.push_back(labels[r]);
      for (std::size_t a = 0; a < attributes.size(); ++a) {
        out.attributes[a].values.push_back(attributes[a].values[r]);
      }
    }
    return out;
  }

  void Validate() const {
    if (features.rows != labels.size()) throw Error(ErrorCode::kSchemaMismatch, "row counts differ");
    for (const auto& a : attributes) {
      if (a.values.size() != labels.size()) {
        throw Error(ErrorCode::kSchemaMismatch, "attribute '" + a.name + "' row count differs");
      }
    }
    if (!all_finite(features.values)) throw Error(ErrorCode::kNonFiniteInput, "dataset features");
  }
};

// ---------------------------------------------------------------------------
// CSV

struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  friend bool operator==(const RawTable& a, const RawTable& b) {
    return a.header == b.header && a.rows == b.rows;
  }
};

namespace detail {

inline std::string Trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> SplitCsvLine(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      if (Trim(cur).empty()) cur.clear();
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      fields.push_back(was_quoted ? cur : Trim(cur));
      cur.clear();
      was_quoted = false;
    } else if (!(was_quoted && std::isspace(static_cast<unsigned char>(c)))) {
      cur += c;
    }
  }
  if (quoted) throw Error(ErrorCode::kMalformedCsv, "unterminated quote at line " + std::to_string(line_no));
  fields.push_back(was_quoted ? cur : Trim(cur));
  return fields;
}

}  // namespace detail

inline RawTable parse_csv(std::istream& in) {
  RawTable table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::Trim(line).empty()) continue;
    auto fields = detail::SplitCsvLine(line, line_no);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw Error(ErrorCode::kMalformedCsv,
                  "row " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(line_no);
  }
  if (!have_header) throw Error(ErrorCode::kMalformedCsv, "missing header row");
  return table;
}

inline RawTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  return parse_csv(in);
}

// ---------------------------------------------------------------------------
// Schema and consolidation map

enum class ColumnRole { kNumeric, kCategorical, kProtected, kLabel, kIgnore };

struct ColumnSpec {
  std::vector<std::string> names;  // accepted header spellings, first is canonical
  ColumnRole role = ColumnRole::kNumeric;
  std::string attribute;               // protected attribute name
  std::vector<std::string> levels;     // fixed level order; empty = sorted observed values
  std::vector<double> bin_edges;       // numeric -> categorical bins
  bool median_binarize = false;        // numeric protected column split at the median
  bool outlier_filter = false;         // drop rows above the upper quantile
  std::string positive_label;          // label column only
};

struct TabularSchema {
  std::vector<ColumnSpec> columns;
  std::string missing = "?";

  // Adult Income with both the UCI and the common single-file header names.
  static TabularSchema Adult() {
    TabularSchema s;
    auto col = [&](std::vector<std::string> names, ColumnRole role) -> ColumnSpec& {
      ColumnSpec& c = s.columns.emplace_back();
      c.names = std::move(names);
      c.role = role;
      return c;
    };
    auto& age = col({"age"}, ColumnRole::kProtected);
    age.attribute = "age";
    age.median_binarize = true;
    age.levels = {"below-median", "at-or-above-median"};
    col({"workclass"}, ColumnRole::kCategorical);
    col({"fnlwgt"}, ColumnRole::kIgnore);
    col({"education"}, ColumnRole::kCategorical);
    col({"educational-num", "education-num", "education_num"}, ColumnRole::kNumeric);
    col({"marital-status", "marital_status"}, ColumnRole::kCategorical);
    col({"occupation"}, ColumnRole::kCategorical);
    col({"relationship"}, ColumnRole::kCategorical);
    col({"race"}, ColumnRole::kCategorical);
    auto& sex = col({"gender", "sex"}, ColumnRole::kProtected);
    sex.attribute = "sex";
    sex.levels = {"Female", "Male"};
    auto& gain = col({"capital-gain", "capital_gain"}, ColumnRole::kNumeric);
    gain.outlier_filter = true;
    col({"capital-loss", "capital_loss"}, ColumnRole::kNumeric);
    auto& hours = col({"hours-per-week", "hours_per_week"}, ColumnRole::kCategorical);
    hours.bin_edges = {30.0, 40.0, 50.0};
    col({"native-country", "native_country"}, ColumnRole::kCategorical);
    auto& income = col({"income", "class"}, ColumnRole::kLabel);
    income.positive_label = ">50K";
    return s;
  }
};

// column -> (raw value -> consolidated value); "*" is the fallback of a column.
using ConsolidationMap = std::map<std::string, std::map<std::string, std::string>>;

inline ConsolidationMap parse_consolidation_map(std::istream& in) {
  ConsolidationMap map;
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = detail::Trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = t.substr(1, t.size() - 2);
      continue;
    }
    const auto tab = line.find('\t');
    if (section.empty() || tab == std::string::npos) {
      throw Error(ErrorCode::kMalformedCsv,
                  "consolidation map line " + std::to_string(line_no) + " is not 'raw<TAB>value'");
    }
    map[section][detail::Trim(line.substr(0, tab))] = detail::Trim(line.substr(tab + 1));
  }
  return map;
}

inline ConsolidationMap load_consolidation_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  return parse_consolidation_map(in);
}

inline std::string consolidate(const ConsolidationMap& map, const std::string& column,
                               const std::string& value) {
  const auto sec = map.find(column);
  if (sec == map.end()) return value;
  if (const auto it = sec->second.find(value); it != sec->second.end()) return it->second;
  if (const auto it = sec->second.find("*"); it != sec->second.end()) return it->second;
  return value;
}

// ---------------------------------------------------------------------------
// Adult preprocessing

struct AdultOptions {
  bool drop_duplicates = true;
  double outlier_quantile = 0.999;
  bool exclude_protected = false;  // keep protected attributes out of the features
};

// Statistics fitted once on the cleaned table; reapplying them is idempotent.
struct AdultFit {
  std::map<std::string, double> outlier_cutoff;  // column -> drop values above cutoff
  std::map<std::string, double> median;          // column -> binarization threshold
};

namespace detail {

inline std::vector<std::size_t> ResolveColumns(const RawTable& table, const TabularSchema& schema) {
  std::vector<std::size_t> index;
  std::vector<std::string> missing;
  for (const auto& spec : schema.columns) {
    std::optional<std::size_t> found;
    for (const auto& name : spec.names) {
      const auto it = std::find(table.header.begin(), table.header.end(), name);
      if (it != table.header.end()) {
        found = static_cast<std::size_t>(it - table.header.begin());
        break;
      }
    }
    if (!found) {
      missing.push_back(spec.names.front());
    } else {
      index.push_back(*found);
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing columns:";
    for (const auto& m : missing) msg += " " + m;
    throw Error(ErrorCode::kSchemaMismatch, msg);
  }
  return index;
}

inline double ParseNumber(const std::string& text, std::size_t line_no, const std::string& column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kMalformedCsv, "row " + std::to_string(line_no) + ": column '" +
                                              column + "' is not numeric: '" + text + "'");
  }
}

inline std::string NormalizeLabel(std::string v) {
  while (!v.empty() && (v.back() == '.' || v.back() == ' ')) v.pop_back();
  return v;
}

// Nearest-rank quantile.
// Linear interpolation between order statistics.
inline double Quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "quantile of an empty column");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline double Median(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "median of an empty column");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace detail

// Drops rows containing the missing sentinel and exact duplicate rows.
inline RawTable drop_missing_and_duplicates(const RawTable& table, const TabularSchema& schema,
                                            const AdultOptions& options) {
  RawTable out{table.header, {}, {}};
  std::set<std::vector<std::string>> seen;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (std::find(row.begin(), row.end(), schema.missing) != row.end()) continue;
    if (options.drop_duplicates && !seen.insert(row).second) continue;
    out.rows.push_back(row);
    out.line_numbers.push_back(table.line_numbers.empty() ? r + 2 : table.line_numbers[r]);
  }
  return out;
}

inline AdultFit fit_adult(const RawTable& table, const TabularSchema& schema,
                          const AdultOptions& options) {
  const auto index = detail::ResolveColumns(table, schema);
  AdultFit fit;
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    const auto& spec = schema.columns[c];
    if (!spec.outlier_filter && !spec.median_binarize) continue;
    std::vector<double> values;
    values.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      values.push_back(detail::ParseNumber(table.rows[r][index[c]], table.line_numbers[r],
                                           spec.names.front()));
    }
    if (values.empty()) continue;
    if (spec.outlier_filter) {
      fit.outlier_cutoff[spec.names.front()] = detail::Quantile(values, options.outlier_quantile);
    }
    if (spec.median_binarize) fit.median[spec.names.front()] = detail::Median(values);
  }
  return fit;
}

// Removes outlier rows using fitted cutoffs.
inline RawTable drop_outliers(const RawTable& table, const TabularSchema& schema,
                              const AdultFit& fit) {
  const auto index = detail::ResolveColumns(table, schema);
  RawTable out{table.header, {}, {}};
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    bool keep = true;
    for (std::size_t c = 0; c < schema.columns.size() && keep; ++c) {
      const auto& spec = schema.columns[c];
      const auto it = fit.outlier_cutoff.find(spec.names.front());
      if (!spec.outlier_filter || it == fit.outlier_cutoff.end()) continue;
      const double v = detail::ParseNumber(table.rows[r][index[c]], table.line_numbers[r],
                                           spec.names.front());
      keep = v <= it->second;
    }
    if (keep) {
      out.rows.push_back(table.rows[r]);
      out.line_numbers.push_back(table.line_numbers[r]);
    }
  }
  return out;
}

// Median split: values >= median fall in group 1.
inline std::vector<int> binarize_at(std::span<const double> values, double threshold) {
  std::vector<int> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] >= threshold ? 1 : 0;
  return out;
}

// Hours bins: [0, e0), [e0, e1], (e1, e2], (e2, inf).
inline std::size_t bin_index(double v, std::span<const double> edges) {
  if (edges.empty() || v < edges[0]) return 0;
  for (std::size_t k = 1; k < edges.size(); ++k) {
    if (v <= edges[k]) return k;
  }
  return edges.size();
}

inline std::vector<std::string> bin_labels(std::span<const double> edges) {
  std::vector<std::string> labels;
  auto fmt = [](double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  labels.push_back("<" + fmt(edges[0]));
  for (std::size_t k = 1; k < edges.size(); ++k) labels.push_back(fmt(edges[k - 1]) + "-" + fmt(edges[k]));
  labels.push_back(">" + fmt(edges.back()));
  return labels;
}

// One-hot encodes a cleaned table. Numeric columns keep raw values and are
// listed in `numeric_columns` for later train-only normalization.
inline Dataset encode_table(const RawTable& table, const TabularSchema& schema,
                            const ConsolidationMap& map, const AdultFit& fit,
                            const AdultOptions& options) {
  const auto index = detail::ResolveColumns(table, schema);
  const std::size_t n = table.rows.size();
  Dataset ds;
  std::vector<std::vector<double>> columns;

  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    const ColumnSpec& spec = schema.columns[c];
    const std::string& name = spec.names.front();
    auto cell = [&](std::size_t r) -> const std::string& { return table.rows[r][index[c]]; };
    auto number = [&](std::size_t r) { return detail::ParseNumber(cell(r), table.line_numbers[r], name); };

    switch (spec.role) {
      case ColumnRole::kIgnore:
        break;
      case ColumnRole::kLabel: {
        ds.labels.resize(n);
        for (std::size_t r = 0; r < n; ++r) {
          ds.labels[r] = detail::NormalizeLabel(cell(r)) == spec.positive_label ? 1 : 0;
        }
        break;
      }
      case ColumnRole::kNumeric: {
        std::vector<double> v(n);
        for (std::size_t r = 0; r < n; ++r) v[r] = number(r);
        ds.numeric_columns.push_back(columns.size());
        ds.feature_names.push_back(name);
        columns.push_back(std::move(v));
        break;
      }
      case ColumnRole::kProtected: {
        ProtectedAttribute attr{spec.attribute, spec.levels, std::vector<int>(n)};
        if (spec.median_binarize) {
          std::vector<double> v(n);
          for (std::size_t r = 0; r < n; ++r) v[r] = number(r);
          const auto it = fit.median.find(name);
          const double threshold = it != fit.median.end() ? it->second : detail::Median(v);
          attr.values = binarize_at(v, threshold);
        } else {
          for (std::size_t r = 0; r < n; ++r) {
            const auto it = std::find(spec.levels.begin(), spec.levels.end(), cell(r));
            if (it == spec.levels.end() || spec.levels.size() != 2) {
              throw Error(ErrorCode::kSchemaMismatch, "row " + std::to_string(table.line_numbers[r]) +
                                                          ": protected column '" + name +
                                                          "' has non-binary value '" + cell(r) + "'");
            }
            attr.values[r] = static_cast<int>(it - spec.levels.begin());
          }
        }
        if (!options.exclude_protected) {
          ds.feature_names.push_back(spec.attribute);
          columns.emplace_back(attr.values.begin(), attr.values.end());
        }
        ds.attributes.push_back(std::move(attr));
        break;
      }
      case ColumnRole::kCategorical: {
        std::vector<std::string> values(n);
        std::vector<std::string> levels = spec.levels;
        if (!spec.bin_edges.empty()) {
          levels = bin_labels(spec.bin_edges);
          for (std::size_t r = 0; r < n; ++r) values[r] = levels[bin_index(number(r), spec.bin_edges)];
        } else {
          for (std::size_t r = 0; r < n; ++r) values[r] = consolidate(map, name, cell(r));
          if (levels.empty()) {
            std::set<std::string> uniq(values.begin(), values.end());
            levels.assign(uniq.begin(), uniq.end());
          }
        }
        for (const auto& level : levels) {
          std::vector<double> v(n, 0.0);
          for (std::size_t r = 0; r < n; ++r) v[r] = values[r] == level ? 1.0 : 0.0;
          ds.feature_names.push_back(name + "=" + level);
          columns.push_back(std::move(v));
        }
        break;
      }
    }
  }
  ds.features = DenseMatrix(n, columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j) {
    for (std::size_t r = 0; r < n; ++r) ds.features(r, j) = columns[j][r];
  }
  ds.num_classes = 2;
  ds.provenance = "adult-income; preprocessing v1 (missing/duplicate removal, consolidation map v1, "
                  "capital-gain cutoff at quantile " + std::to_string(options.outlier_quantile) +
                  ", median-binarized age, hours bins <30/30-40/40-50/>50)";
  ds.Validate();
  return ds;
}

struct AdultLoadReport {
  std::size_t raw_rows = 0;
  std::size_t after_missing_and_duplicates = 0;
  std::size_t after_outliers = 0;
  AdultFit fit;
};

// Full Adult preprocessing except normalization, which needs the train split.
inline Dataset load_adult(const std::string& path, const TabularSchema& schema,
                          const ConsolidationMap& map, const AdultOptions& options = {},
                          AdultLoadReport* report = nullptr) {
  const RawTable raw = read_csv(path);
  detail::ResolveColumns(raw, schema);
  const RawTable deduped = drop_missing_and_duplicates(raw, schema, options);
  AdultFit fit = fit_adult(deduped, schema, options);
  const RawTable cleaned = drop_outliers(deduped, schema, fit);
  // The age median is taken over the final cleaned table.
  const AdultFit final_fit = fit_adult(cleaned, schema, options);
  fit.median = final_fit.median;
  if (report) {
    report->raw_rows = raw.rows.size();
    report->after_missing_and_duplicates = deduped.rows.size();
    report->after_outliers = cleaned.rows.size();
    report->fit = fit;
  }
  return encode_table(cleaned, schema, map, fit, options);
}

// ---------------------------------------------------------------------------
// Normalization fitted on training rows only.

struct Normalizer {
  std::vector<std::size_t> columns;
  std::vector<double> mean;
  std::vector<double> stddev;

  static Normalizer Fit(const Dataset& train) {
    Normalizer n;
    n.columns = train.numeric_columns;
    const double rows = static_cast<double>(train.size());
    for (std::size_t c : n.columns) {
      double m = 0.0;
      for (std::size_t r = 0; r < train.size(); ++r) m += train.features(r, c);
      m /= rows;
      double v = 0.0;
      for (std::size_t r = 0; r < train.size(); ++r) {
        const double d = train.features(r, c) - m;
        v += d * d;
      }
      const double sd = std::sqrt(v / rows);
      n.mean.push_back(m);
      n.stddev.push_back(sd > 0.0 ? sd : 1.0);
    }
    return n;
  }

  Dataset Apply(Dataset ds) const {
    for (std::size_t k = 0; k < columns.size(); ++k) {
      for (std::size_t r = 0; r < ds.size(); ++r) {
        ds.features(r, columns[k]) = (ds.features(r, columns[k]) - mean[k]) / stddev[k];
      }
    }
    return ds;
  }
};

// ---------------------------------------------------------------------------
// Group balancing and stratified splitting

namespace detail {

inline void Shuffle(std::vector<std::size_t>& v, CounterStream& stream) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = stream.NextBelow(i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace detail

// Subsamples the larger group of a binary attribute down to the smaller
// group's size; rows keep their original order.
inline Dataset balance_by_group(const Dataset& ds, std::string_view attribute, const StreamKey& key) {
  const ProtectedAttribute& attr = ds.attribute(attribute);
  std::array<std::vector<std::size_t>, 2> groups;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const int g = attr.values[r];
    if (g != 0 && g != 1) throw Error(ErrorCode::kNonBinaryAttribute, attr.name);
    groups[static_cast<std::size_t>(g)].push_back(r);
  }
  if (groups[0].empty() || groups[1].empty()) {
    throw Error(ErrorCode::kInvalidArgument, "balance_by_group needs both groups non-empty");
  }
  const std::size_t target = std::min(groups[0].size(), groups[1].size());
  std::vector<std::size_t> keep;
  for (std::size_t g = 0; g < 2; ++g) {
    auto members = groups[g];
    if (members.size() > target) {
      CounterStream stream(key.With(key.step, g));
      detail::Shuffle(members, stream);
      members.resize(target);
    }
    keep.insert(keep.end(), members.begin(), members.end());
  }
  std::sort(keep.begin(), keep.end());
  return ds.subset(keep);
}

struct SplitFractions {
  double train = 0.7;
  double validation = 0.1;
  double test = 0.2;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

// Label-stratified split. Global split sizes are floor(f * N) for train and
// validation (test takes the rest); each stratum's share stays within one
// example of its exact quota.
inline SplitIndices stratified_split(std::span<const int> labels, const SplitFractions& f,
                                     const StreamKey& key) {
  const double total = f.train + f.validation + f.test;
  if (std::abs(total - 1.0) > 1e-9 || f.train < 0 || f.validation < 0 || f.test < 0) {
    throw Error(ErrorCode::kInvalidArgument, "split fractions must be nonnegative and sum to 1");
  }
  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < labels.size(); ++i) strata[labels[i]].push_back(i);
  for (const auto& [label, rows] : strata) {
    if (rows.size() < 3) {
      throw Error(ErrorCode::kStratumTooSmall,
                  "label " + std::to_string(label) + " has " + std::to_string(rows.size()) + " rows");
    }
  }
  const std::array<double, 3> frac{f.train, f.validation, f.test};
  const auto n = static_cast<double>(labels.size());
  std::array<long, 3> column_target{static_cast<long>(std::floor(frac[0] * n)),
                                    static_cast<long>(std::floor(frac[1] * n)), 0};
  column_target[2] = static_cast<long>(labels.size()) - column_target[0] - column_target[1];

  // Start every cell at floor(quota) and hand out the remaining units so that
  // row sums hit stratum sizes and column sums hit split sizes (greedy
  // bipartite degree realization, preferring larger fractional parts).
  const std::size_t s_count = strata.size();
  std::vector<std::array<long, 3>> cells(s_count);
  std::vector<std::array<double, 3>> fractional(s_count);
  std::vector<long> row_need(s_count);
  std::array<long, 3> col_need = column_target;
  std::size_t s = 0;
  for (const auto& [label, rows] : strata) {
    long assigned = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      const double quota = frac[j] * static_cast<double>(rows.size());
      cells[s][j] = static_cast<long>(std::floor(quota));
      fractional[s][j] = quota - std::floor(quota);
      assigned += cells[s][j];
      col_need[j] -= cells[s][j];
    }
    row_need[s] = static_cast<long>(rows.size()) - assigned;
    ++s;
  }
  std::vector<std::size_t> order(s_count);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return row_need[a] > row_need[b]; });
  for (std::size_t si : order) {
    std::array<std::size_t, 3> cols{0, 1, 2};
    std::stable_sort(cols.begin(), cols.end(), [&](std::size_t a, std::size_t b) {
      if (col_need[a] != col_need[b]) return col_need[a] > col_need[b];
      return fractional[si][a] > fractional[si][b];
    });
    for (std::size_t k = 0; k < 3 && row_need[si] > 0; ++k) {
      const std::size_t j = cols[k];
      if (col_need[j] <= 0) continue;
      ++cells[si][j];
      --col_need[j];
      --row_need[si];
    }
    // Column targets can be unreachable only when they disagree with floor
    // sums; keep row sums exact regardless.
    while (row_need[si] > 0) {
      ++cells[si][2];
      --row_need[si];
    }
  }

  SplitIndices out;
  s = 0;
  for (const auto& [label, rows] : strata) {
    auto shuffled = rows;
    CounterStream stream(key.With(key.step, static_cast<std::uint64_t>(s)));
    detail::Shuffle(shuffled, stream);
    const auto a = static_cast<std::size_t>(cells[s][0]);
    const auto b = a + static_cast<std::size_t>(cells[s][1]);
    out.train.insert(out.train.end(), shuffled.begin(), shuffled.begin() + a);
    out.validation.insert(out.validation.end(), shuffled.begin() + a, shuffled.begin() + b);
    out.test.insert(out.test.end(), shuffled.begin() + b, shuffled.end());
    ++s;
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

struct DatasetSplits {
  Dataset train;
  Dataset validation;
  Dataset test;
};

// Splits, then normalizes every split with statistics of the train split.
inline DatasetSplits split_and_normalize(const Dataset& ds, const SplitFractions& f,
                                         const StreamKey& key, bool normalize = true) {
  const SplitIndices idx = stratified_split(ds.labels, f, key);
  DatasetSplits s{ds.subset(idx.train), ds.subset(idx.validation), ds.subset(idx.test)};
  if (normalize) {
    const Normalizer norm = Normalizer::Fit(s.train);
    s.train = norm.Apply(std::move(s.train));
    s.validation = norm.Apply(std::move(s.validation));
    s.test = norm.Apply(std::move(s.test));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic imbalanced-group data

struct SyntheticSpec {
  std::size_t n = 20000;
  std::size_t dim = 20;
  double minority_fraction = 0.2;
  double shift = 1.0;            // per-coordinate mean shift of the minority group
  double majority_noise = 0.05;  // label flip rate
  double minority_noise = 0.25;
  double class_balance = 0.5;    // target positive rate
  double feature_scale = 1.0;
  double signal = 2.0;           // norm of the ground-truth weight vector
  std::uint64_t seed = 0;

  void Validate() const {
    auto open01 = [](double v) { return v > 0.0 && v < 1.0; };
    if (n == 0 || dim == 0) throw Error(ErrorCode::kInvalidArgument, "synthetic n and dim must be > 0");
    if (!open01(minority_fraction) || !open01(majority_noise) || !open01(minority_noise) ||
        !open01(class_balance)) {
      throw Error(ErrorCode::kInvalidArgument, "synthetic rates must lie in (0, 1)");
    }
    if (!(feature_scale > 0.0)) throw Error(ErrorCode::kInvalidArgument, "feature_scale must be > 0");
  }
};

// Majority rows ~ N(0, I); minority rows ~ N(shift * 1, I); both scaled by
// feature_scale. Labels follow a logistic ground truth on the unscaled
// features, then flip with the group's noise rate.
inline Dataset synth_generate(const SyntheticSpec& spec) {
  spec.Validate();
  const std::size_t d = spec.dim;
  DenseVector truth = gaussian(StreamKey{spec.seed, "synth-truth", 0, 0}, d, 1.0);
  const double tn = l2_norm(truth);
  for (double& w : truth) w *= spec.signal / tn;

  Dataset ds;
  ds.features = DenseMatrix(spec.n, d);
  ds.labels.resize(spec.n);
  ProtectedAttribute group{"group", {"majority", "minority"}, std::vector<int>(spec.n)};
  DenseVector score(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    CounterStream stream(StreamKey{spec.seed, "synth-row", 0, i});
    const bool minority = stream.NextUniform() < spec.minority_fraction;
    group.values[i] = minority ? 1 : 0;
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double x = stream.NextGaussian() + (minority ? spec.shift : 0.0);
      s += truth[k] * x;
      ds.features(i, k) = spec.feature_scale * x;
    }
    score[i] = s;
  }
  // Intercept chosen so the mean label probability matches class_balance.
  auto mean_prob = [&](double b) {
    double m = 0.0;
    for (double s : score) m += detail::Sigmoid(s + b);
    return m / static_cast<double>(spec.n);
  };
  double lo = -50.0, hi = 50.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_prob(mid) < spec.class_balance ? lo : hi) = mid;
  }
  const double intercept = 0.5 * (lo + hi);
  for (std::size_t i = 0; i < spec.n; ++i) {
    CounterStream stream(StreamKey{spec.seed, "synth-label", 0, i});
    int y = stream.NextUniform() < detail::Sigmoid(score[i] + intercept) ? 1 : 0;
    const double flip = group.values[i] ? spec.minority_noise : spec.majority_noise;
    if (stream.NextUniform() < flip) y = 1 - y;
    ds.labels[i] = y;
  }
  for (std::size_t k = 0; k < d; ++k) {
    ds.feature_names.push_back("x" + std::to_string(k));
    ds.numeric_columns.push_back(k);
  }
  ds.attributes.push_back(std::move(group));
  std::ostringstream prov;
  prov << "synthetic v1 n=" << spec.n << " dim=" << d << " minority_fraction=" << spec.minority_fraction
       << " shift=" << spec.shift << " noise=" << spec.majority_noise << "/" << spec.minority_noise
       << " seed=" << spec.seed;
  ds.provenance = prov.str();
  ds.Validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Columnar binary cache: "FCDP0001", then little-endian fields.

inline constexpr char kCacheMagic[8] = {'F', 'C', 'D', 'P', '0', '0', '0', '1'};

namespace detail {

template <typename T>
void WritePod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void WriteString(std::ostream& out, const std::string& s) {
  WritePod<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T ReadPod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorCode::kIoError, "truncated dataset cache");
  return v;
}

inline std::string ReadString(std::istream& in) {
  const auto n = ReadPod<std::uint64_t>(in);
  if (n > (1u << 30)) throw Error(ErrorCode::kIoError, "corrupt string length in dataset cache");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw Error(ErrorCode::kIoError, "truncated dataset cache");
  return s;
}

}  // namespace detail

inline void write_dataset_cache(std::ostream& out, const Dataset& ds) {
  out.write(kCacheMagic, sizeof(kCacheMagic));
  detail::WritePod<std::uint64_t>(out, ds.size());
  detail::WritePod<std::uint64_t>(out, ds.features.cols);
  detail::WritePod<std::uint64_t>(out, ds.num_classes);
  for (std::size_t c = 0; c < ds.features.cols; ++c) {
    detail::WriteString(out, c < ds.feature_names.size() ? ds.feature_names[c] : "");
    for (std::size_t r = 0; r < ds.size(); ++r) detail::WritePod<double>(out, ds.features(r, c));
  }
  for (int y : ds.labels) detail::WritePod<std::int32_t>(out, y);
  detail::WritePod<std::uint64_t>(out, ds.attributes.size());
  for (const auto& a : ds.attributes) {
    detail::WriteString(out, a.name);
    detail::WritePod<std::uint64_t>(out, a.levels.size());
    for (const auto& l : a.levels) detail::WriteString(out, l);
    for (int v : a.values) detail::WritePod<std::int32_t>(out, v);
  }
  detail::WritePod<std::uint64_t>(out, ds.numeric_columns.size());
  for (std::size_t c : ds.numeric_columns) detail::WritePod<std::uint64_t>(out, c);
  detail::WriteString(out, ds.provenance);
}

inline Dataset read_dataset_cache(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0) {
    throw Error(ErrorCode::kIoError, "not a FCDP0001 dataset cache");
  }
  Dataset ds;
  const auto rows = detail::ReadPod<std::uint64_t>(in);
  const auto cols = detail::ReadPod<std::uint64_t>(in);
  ds.num_classes = detail::ReadPod<std::uint64_t>(in);
  ds.features = DenseMatrix(rows, cols);
  for (std::size_t c = 0; c < cols; ++c) {
    ds.feature_names.push_back(detail::ReadString(in));
    for (std::size_t r = 0; r < rows; ++r) ds.features(r, c) = detail::ReadPod<double>(in);
  }
  ds.labels.resize(rows);
  for (auto& y : ds.labels) y = detail::ReadPod<std::int32_t>(in);
  const auto attrs = detail::ReadPod<std::uint64_t>(in);
  for (std::size_t a = 0; a < attrs; ++a) {
    ProtectedAttribute attr;
    attr.name = detail::ReadString(in);
    const auto levels = detail::ReadPod<std::uint64_t>(in);
    for (std::size_t l = 0; l < levels; ++l) attr.levels.push_back(detail::ReadString(in));
    attr.values.resize(rows);
    for (auto& v : attr.values) v = detail::ReadPod<std::int32_t>(in);
    ds.attributes.push_back(std::move(attr));
  }
  const auto numeric = detail::ReadPod<std::uint64_t>(in);
  for (std::size_t k = 0; k < numeric; ++k) ds.numeric_columns.push_back(detail::ReadPod<std::uint64_t>(in));
  ds.provenance = detail::ReadString(in);
  ds.Validate();
  return ds;
}

}  // namespace fairclip

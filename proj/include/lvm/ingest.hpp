#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lvm/common.hpp"

namespace lvm {

enum class VariableKind { ordinal, numeric, nominal };

inline std::string to_string(VariableKind k) {
  switch (k) {
    case VariableKind::ordinal: return "ordinal";
    case VariableKind::numeric: return "numeric";
    case VariableKind::nominal: return "nominal";
  }
  return "?";
}

inline VariableKind variable_kind_from_string(const std::string& s) {
  if (s == "ordinal") return VariableKind::ordinal;
  if (s == "numeric") return VariableKind::numeric;
  if (s == "nominal") return VariableKind::nominal;
  throw SchemaError("unknown variable kind '" + s + "'");
}

/// Per-variable recoding rules. `valid_levels` lists the codes in ordinal
/// order (lowest first); `merges` map a source code onto a target code before
/// renumbering.
struct VariableSpec {
  std::string name;
  std::string label;
  VariableKind kind = VariableKind::ordinal;
  std::vector<int> valid_levels;
  std::set<int> invalid_codes;
  bool invert_polarity = false;
  std::vector<std::pair<int, int>> merges;

  bool is_valid_level(int code) const {
    return std::find(valid_levels.begin(), valid_levels.end(), code) != valid_levels.end();
  }

  void validate() const {
    if (name.empty()) throw SchemaError("variable with empty name");
    if (kind == VariableKind::ordinal && valid_levels.empty())
      throw SchemaError("ordinal variable '" + name + "' declares no valid levels");
    for (std::size_t i = 1; i < valid_levels.size(); ++i)
      if (valid_levels[i] <= valid_levels[i - 1])
        throw SchemaError("valid levels of '" + name + "' are not strictly increasing");
    if (invert_polarity && kind != VariableKind::ordinal)
      throw SchemaError("polarity inversion requested for non-ordinal variable '" + name + "'");
    for (const auto& [from, to] : merges) {
      if (!is_valid_level(from) || !is_valid_level(to))
        throw SchemaError("merge " + std::to_string(from) + "->" + std::to_string(to) +
                          " of '" + name + "' references an undeclared level");
      if (from == to)
        throw SchemaError("merge of '" + name + "' maps level " + std::to_string(from) +
                          " onto itself");
    }
    for (int code : invalid_codes)
      if (is_valid_level(code))
        throw SchemaError("code " + std::to_string(code) + " of '" + name +
                          "' is declared both valid and invalid");
  }
};

struct Schema {
  std::vector<VariableSpec> variables;
  /// Extra columns carried as strings (wave, country, ...).
  std::vector<std::string> metadata;

  const VariableSpec* find(std::string_view name) const {
    for (const auto& v : variables)
      if (v.name == name) return &v;
    return nullptr;
  }
};

inline Schema schema_from_json(const nlohmann::json& j) {
  Schema schema;
  if (!j.contains("variables") || !j["variables"].is_array())
    throw SchemaError("schema must contain a 'variables' array");
  for (const auto& jv : j["variables"]) {
    VariableSpec v;
    v.name = jv.at("name").get<std::string>();
    v.label = jv.value("label", std::string{});
    v.kind = variable_kind_from_string(jv.value("kind", std::string{"ordinal"}));
    if (jv.contains("valid_levels")) v.valid_levels = jv["valid_levels"].get<std::vector<int>>();
    if (jv.contains("invalid_codes")) {
      const auto codes = jv["invalid_codes"].get<std::vector<int>>();
      v.invalid_codes.insert(codes.begin(), codes.end());
    }
    v.invert_polarity = jv.value("invert_polarity", false);
    if (jv.contains("merges"))
      for (const auto& m : jv["merges"]) v.merges.emplace_back(m.at(0).get<int>(), m.at(1).get<int>());
    v.validate();
    schema.variables.push_back(std::move(v));
  }
  if (j.contains("metadata")) schema.metadata = j["metadata"].get<std::vector<std::string>>();
  return schema;
}

inline nlohmann::json to_json(const VariableSpec& v) {
  nlohmann::json j;
  j["name"] = v.name;
  if (!v.label.empty()) j["label"] = v.label;
  j["kind"] = to_string(v.kind);
  j["valid_levels"] = v.valid_levels;
  j["invalid_codes"] = std::vector<int>(v.invalid_codes.begin(), v.invalid_codes.end());
  j["invert_polarity"] = v.invert_polarity;
  auto merges = nlohmann::json::array();
  for (const auto& [a, b] : v.merges) merges.push_back({a, b});
  j["merges"] = merges;
  return j;
}

inline nlohmann::json to_json(const Schema& s) {
  nlohmann::json j;
  j["variables"] = nlohmann::json::array();
  for (const auto& v : s.variables) j["variables"].push_back(to_json(v));
  j["metadata"] = s.metadata;
  return j;
}

inline Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open schema file '" + path + "'");
  try {
    return schema_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("schema '" + path + "': " + e.what());
  }
}

struct Provenance {
  std::string source;
  std::string filter;
};

/// Survey records after validity masking. Cells hold level codes (ordinal,
/// nominal) or real values (numeric); NaN marks missing.
struct OrdinalDataset {
  std::vector<VariableSpec> variables;
  Matrix cells;
  std::map<std::string, std::vector<std::string>> metadata;
  Provenance provenance;
  std::vector<std::string> diagnostics;

  Eigen::Index n_rows() const { return cells.rows(); }

  int column(std::string_view name) const {
    for (std::size_t i = 0; i < variables.size(); ++i)
      if (variables[i].name == name) return static_cast<int>(i);
    return -1;
  }
};

/// Analysis matrix. `levels[j]` is the level count of an ordinal column and 0
/// for numeric columns.
struct NumericMatrix {
  std::vector<std::string> columns;
  Matrix cells;
  std::vector<int> levels;
  std::vector<std::string> notices;

  Eigen::Index n_rows() const { return cells.rows(); }
  Eigen::Index n_cols() const { return cells.cols(); }

  int column(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    return -1;
  }

  /// Sub-matrix with the named columns, in the order given.
  NumericMatrix select(const std::vector<std::string>& names) const {
    NumericMatrix out;
    out.cells.resize(cells.rows(), static_cast<Eigen::Index>(names.size()));
    for (std::size_t k = 0; k < names.size(); ++k) {
      const int c = column(names[k]);
      if (c < 0) throw SchemaError("column '" + names[k] + "' not present");
      out.columns.push_back(names[k]);
      out.levels.push_back(levels[static_cast<std::size_t>(c)]);
      out.cells.col(static_cast<Eigen::Index>(k)) = cells.col(c);
    }
    return out;
  }

  NumericMatrix rows(const std::vector<Eigen::Index>& idx) const {
    NumericMatrix out;
    out.columns = columns;
    out.levels = levels;
    out.cells.resize(static_cast<Eigen::Index>(idx.size()), cells.cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
      out.cells.row(static_cast<Eigen::Index>(r)) = cells.row(idx[r]);
    return out;
  }

  /// Rows with no missing cell.
  NumericMatrix listwise() const {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index r = 0; r < cells.rows(); ++r)
      if (!cells.row(r).array().isNaN().any()) keep.push_back(r);
    return rows(keep);
  }
};

/// Keeps a row when, for every listed metadata column, its value is among the
/// allowed strings. An empty filter keeps everything.
struct RowFilter {
  std::map<std::string, std::set<std::string>> allowed;

  bool empty() const { return allowed.empty(); }

  std::string describe() const {
    if (allowed.empty()) return "all rows";
    std::ostringstream os;
    bool first = true;
    for (const auto& [col, vals] : allowed) {
      if (!first) os << "; ";
      first = false;
      os << col << " in {";
      bool f2 = true;
      for (const auto& v : vals) {
        if (!f2) os << ",";
        f2 = false;
        os << v;
      }
      os << "}";
    }
    return os.str();
  }
};

struct LoadOptions {
  /// Mask codes outside valid_levels and invalid_codes (with a diagnostic)
  /// instead of failing.
  bool unknown_codes_as_missing = false;
};

namespace detail {

inline std::vector<std::string> split_delimited(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline bool is_missing_token(std::string_view s) {
  return s.empty() || s == "NA" || s == "." || s == "NaN" || s == "nan";
}

inline std::optional<double> parse_number(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

}  // namespace detail

/// Read a delimited table (comma or tab, detected from the header line) and
/// apply validity masking from the schema. Rows failing `filter` are dropped;
/// no row is dropped because of missing answers.
inline OrdinalDataset load_dataset(std::istream& in, const Schema& schema, const RowFilter& filter = {},
                                   const LoadOptions& options = {}, const std::string& source = "<stream>") {
  std::string header_line;
  if (!std::getline(in, header_line)) throw DataError("empty input: header row required");
  const char delim = header_line.find('\t') != std::string::npos ? '\t' : ',';
  std::vector<std::string> header = detail::split_delimited(header_line, delim);
  for (auto& h : header) h = std::string(detail::trim(h));

  auto find_col = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  };

  std::vector<int> var_cols;
  for (const auto& v : schema.variables) {
    v.validate();
    const int c = find_col(v.name);
    if (c < 0) throw SchemaError("column '" + v.name + "' named in the schema is missing from " + source);
    var_cols.push_back(c);
  }
  std::set<std::string> meta_names(schema.metadata.begin(), schema.metadata.end());
  for (const auto& [col, vals] : filter.allowed) meta_names.insert(col);
  std::map<std::string, int> meta_cols;
  for (const auto& m : meta_names) {
    const int c = find_col(m);
    if (c < 0) throw SchemaError("metadata column '" + m + "' is missing from " + source);
    meta_cols[m] = c;
  }

  OrdinalDataset ds;
  ds.variables = schema.variables;
  ds.provenance = {source, filter.describe()};
  std::vector<std::vector<double>> rows;
  std::map<std::string, std::size_t> unknown_counts;

  std::string line;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_delimited(line, delim);
    if (fields.size() != header.size())
      throw DataError("row has " + std::to_string(fields.size()) + " fields, header has " +
                          std::to_string(header.size()),
                      line_no);
    bool keep = true;
    for (const auto& [col, vals] : filter.allowed) {
      if (!vals.count(std::string(detail::trim(fields[static_cast<std::size_t>(meta_cols.at(col))])))) {
        keep = false;
        break;
      }
    }
    if (!keep) continue;

    std::vector<double> row(schema.variables.size(), kNaN);
    for (std::size_t k = 0; k < schema.variables.size(); ++k) {
      const auto& spec = schema.variables[k];
      const auto cell = detail::trim(fields[static_cast<std::size_t>(var_cols[k])]);
      if (detail::is_missing_token(cell)) continue;
      const auto value = detail::parse_number(cell);
      if (!value) throw DataError("unparseable cell '" + std::string(cell) + "'", line_no, spec.name);
      const double x = *value;
      const bool integral = std::floor(x) == x;
      if (integral && spec.invalid_codes.count(static_cast<int>(x))) continue;
      if (spec.kind == VariableKind::numeric) {
        row[k] = x;
        continue;
      }
      if (!integral || !spec.is_valid_level(static_cast<int>(x))) {
        if (options.unknown_codes_as_missing) {
          ++unknown_counts[spec.name];
          continue;
        }
        throw DataError("code " + std::string(cell) + " is neither a valid level nor a declared invalid code",
                        line_no, spec.name);
      }
      row[k] = x;
    }
    rows.push_back(std::move(row));
    for (const auto& [name, c] : meta_cols)
      ds.metadata[name].push_back(std::string(detail::trim(fields[static_cast<std::size_t>(c)])));
  }

  ds.cells.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(schema.variables.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < rows[r].size(); ++k)
      ds.cells(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
  for (const auto& [name, n] : unknown_counts)
    ds.diagnostics.push_back(std::to_string(n) + " undeclared code(s) in '" + name + "' masked as missing");
  return ds;
}

inline OrdinalDataset load_dataset(const std::string& path, const Schema& schema, const RowFilter& filter = {},
                                   const LoadOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  return load_dataset(in, schema, filter, options, path);
}

/// Apply merges, renumber the surviving levels 1..L in order, then invert
/// polarity (k -> L + 1 - k) where requested. The returned specs describe the
/// recoded levels with merges and inversion consumed, so recoding twice is the
/// identity.
inline OrdinalDataset recode(const OrdinalDataset& in) {
  OrdinalDataset out = in;
  for (std::size_t k = 0; k < in.variables.size(); ++k) {
    const auto& spec = in.variables[k];
    if (spec.kind != VariableKind::ordinal) continue;

    std::map<int, int> merged;
    for (int code : spec.valid_levels) merged[code] = code;
    for (const auto& [from, to] : spec.merges) {
      if (!spec.is_valid_level(from) || !spec.is_valid_level(to))
        throw RecodeError("merge in '" + spec.name + "' references an undeclared level");
      merged[from] = to;
    }
    // Resolve chains (a->b, b->c).
    const std::map<int, int> direct = merged;
    for (auto& [code, target] : merged) {
      int hops = 0;
      while (direct.at(target) != target) {
        target = direct.at(target);
        if (++hops > static_cast<int>(direct.size()))
          throw RecodeError("cyclic merges in '" + spec.name + "'");
      }
    }
    std::vector<int> survivors;
    for (int code : spec.valid_levels)
      if (merged.at(code) == code) survivors.push_back(code);
    if (survivors.size() < 2)
      throw RecodeError("merges leave '" + spec.name + "' with fewer than two levels");
    const int levels = static_cast<int>(survivors.size());
    std::map<int, int> rank;
    for (int i = 0; i < levels; ++i) rank[survivors[static_cast<std::size_t>(i)]] = i + 1;

    auto col = out.cells.col(static_cast<Eigen::Index>(k));
    for (Eigen::Index r = 0; r < col.size(); ++r) {
      if (is_missing(col(r))) continue;
      int level = rank.at(merged.at(static_cast<int>(col(r))));
      if (spec.invert_polarity) level = levels + 1 - level;
      col(r) = level;
    }
    auto& ospec = out.variables[k];
    ospec.valid_levels.resize(static_cast<std::size_t>(levels));
    for (int i = 0; i < levels; ++i) ospec.valid_levels[static_cast<std::size_t>(i)] = i + 1;
    ospec.invalid_codes.clear();
    ospec.merges.clear();
    ospec.invert_polarity = false;
  }
  return out;
}

/// Ordinal and numeric variables become analysis columns; nominal variables
/// are left out with a notice.
inline NumericMatrix to_numeric(const OrdinalDataset& ds) {
  NumericMatrix out;
  std::vector<Eigen::Index> keep;
  for (std::size_t k = 0; k < ds.variables.size(); ++k) {
    const auto& v = ds.variables[k];
    if (v.kind == VariableKind::nominal) {
      out.notices.push_back("nominal variable '" + v.name + "' excluded from the analysis matrix");
      continue;
    }
    keep.push_back(static_cast<Eigen::Index>(k));
    out.columns.push_back(v.name);
    out.levels.push_back(v.kind == VariableKind::ordinal ? static_cast<int>(v.valid_levels.size()) : 0);
  }
  out.cells.resize(ds.cells.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    out.cells.col(static_cast<Eigen::Index>(j)) = ds.cells.col(keep[j]);
    if (out.cells.rows() > 0 && out.cells.col(static_cast<Eigen::Index>(j)).array().isNaN().all())
      out.notices.push_back("column '" + out.columns[j] + "' has no observed values");
  }
  return out;
}

/// Write a dataset in the delimited format read by load_dataset.
inline void write_delimited(std::ostream& os, const OrdinalDataset& ds, char delim = ',') {
  std::vector<std::string> meta;
  for (const auto& [k, v] : ds.metadata) meta.push_back(k);
  bool first = true;
  for (const auto& m : meta) {
    if (!first) os << delim;
    os << m;
    first = false;
  }
  for (const auto& v : ds.variables) {
    if (!first) os << delim;
    os << v.name;
    first = false;
  }
  os << '\n';
  char buf[64];
  for (Eigen::Index r = 0; r < ds.cells.rows(); ++r) {
    first = true;
    for (const auto& m : meta) {
      if (!first) os << delim;
      os << ds.metadata.at(m)[static_cast<std::size_t>(r)];
      first = false;
    }
    for (Eigen::Index c = 0; c < ds.cells.cols(); ++c) {
      if (!first) os << delim;
      first = false;
      const double x = ds.cells(r, c);
      if (is_missing(x)) continue;
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
      os.write(buf, ptr - buf);
    }
    os << '\n';
  }
}

}  // namespace lvm

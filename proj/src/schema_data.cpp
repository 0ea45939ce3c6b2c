#include "medic/schema_data.hpp"

#include "medic/error.hpp"
#include "medic/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace medic {
namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

bool is_missing(const std::string& cell) { return cell.empty() || cell == "NA"; }

std::optional<double> parse_number(const std::string& cell) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

// RFC 4180 style: comma separated, optional double quotes, "" escapes a quote.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false;
  bool any = false;
  auto end_cell = [&] {
    row.push_back(trim(cell));
    cell.clear();
  };
  auto end_row = [&] {
    end_cell();
    const bool blank = row.size() == 1 && row[0].empty();
    if (!blank) rows.push_back(std::move(row));
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    any = true;
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      end_cell();
    } else if (ch == '\n') {
      end_row();
      any = false;
    } else if (ch != '\r') {
      cell.push_back(ch);
    }
  }
  if (quoted) throw InputError("unterminated quoted field in CSV");
  if (any) end_row();
  return rows;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Numeric-looking vocabularies sort by value, everything else lexicographically.
void sort_vocab(std::vector<std::string>& vocab) {
  const bool numeric = std::all_of(vocab.begin(), vocab.end(),
                                   [](const std::string& s) { return parse_number(s).has_value(); });
  if (numeric) {
    std::stable_sort(vocab.begin(), vocab.end(), [](const std::string& a, const std::string& b) {
      return *parse_number(a) < *parse_number(b);
    });
  } else {
    std::sort(vocab.begin(), vocab.end());
  }
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

Table parse_table(const std::string& csv_text) {
  auto rows = parse_csv(csv_text);
  if (rows.empty()) throw InputError("no rows");
  Table t;
  t.header = std::move(rows.front());
  t.rows.assign(std::make_move_iterator(rows.begin() + 1), std::make_move_iterator(rows.end()));
  if (t.rows.empty()) throw InputError("no rows");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (t.rows[r].size() != t.header.size()) {
      throw InputError("CSV row " + std::to_string(r + 1) + " has " + std::to_string(t.rows[r].size()) +
                       " fields, header has " + std::to_string(t.header.size()));
    }
  }
  return t;
}

std::size_t column_position(const Table& t, const std::string& name) {
  auto it = std::find(t.header.begin(), t.header.end(), name);
  if (it == t.header.end()) throw InputError("unknown column: " + name);
  return static_cast<std::size_t>(it - t.header.begin());
}

// Fills values/labels of a dataset whose schema (vocabularies, classes) is fixed.
Dataset fill(const Table& t, FeatureSchema schema) {
  const std::size_t nf = schema.feature_count();
  std::vector<std::size_t> pos(schema.columns.size());
  for (std::size_t c = 0; c < schema.columns.size(); ++c) pos[c] = column_position(t, schema.columns[c].name);

  Dataset d;
  d.values.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(nf));
  d.labels.resize(t.rows.size());
  d.row_ids.resize(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    d.row_ids[r] = r;
    for (std::size_t f = 0; f < nf; ++f) {
      const Column& col = schema.columns[f];
      const std::string& cell = row[pos[f]];
      double v = kMissing;
      if (!is_missing(cell)) {
        if (col.role == ColumnRole::continuous) {
          auto num = parse_number(cell);
          if (!num) {
            throw InputError("non-numeric value '" + cell + "' in continuous column " + col.name + " (row " +
                             std::to_string(r + 1) + ")");
          }
          v = *num;
        } else {
          auto it = std::find(col.vocab.begin(), col.vocab.end(), cell);
          if (it == col.vocab.end()) {
            throw InputError("value '" + cell + "' of feature " + col.name + " is outside its vocabulary");
          }
          v = static_cast<double>(it - col.vocab.begin());
        }
      }
      d.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)) = v;
    }
    const std::string& label = row[pos.back()];
    if (is_missing(label)) throw InputError("missing label in row " + std::to_string(r + 1));
    auto it = std::find(schema.classes.begin(), schema.classes.end(), label);
    if (it == schema.classes.end()) {
      throw InputError("label '" + label + "' in row " + std::to_string(r + 1) + " is not a declared class");
    }
    d.labels[r] = static_cast<int>(it - schema.classes.begin());
  }
  d.schema = std::move(schema);
  return d;
}

}  // namespace

std::optional<std::size_t> FeatureSchema::find_feature(const std::string& name) const {
  for (std::size_t i = 0; i < feature_count(); ++i) {
    if (columns[i].name == name) return i;
  }
  return std::nullopt;
}

void FeatureSchema::validate() const {
  if (columns.empty()) throw InputError("schema has no columns");
  std::size_t targets = 0;
  std::set<std::string> names;
  for (const auto& c : columns) {
    if (c.role == ColumnRole::target) ++targets;
    if (!names.insert(c.name).second) throw InputError("duplicate column: " + c.name);
    if (c.role == ColumnRole::categorical) {
      if (c.vocab.empty()) throw InputError("empty vocabulary for column " + c.name);
      std::set<std::string> uniq(c.vocab.begin(), c.vocab.end());
      if (uniq.size() != c.vocab.size()) throw InputError("duplicate category in column " + c.name);
    }
  }
  if (targets != 1 || columns.back().role != ColumnRole::target) {
    throw InputError("schema must have exactly one target column, stored last");
  }
  if (classes.empty()) throw InputError("schema has no classes");
}

SchemaSpec parse_schema_spec(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
    SchemaSpec s;
    s.target = j.at("target").get<std::string>();
    s.continuous = j.value("continuous", std::vector<std::string>{});
    s.categorical = j.value("categorical", std::vector<std::string>{});
    s.classes = j.value("classes", std::vector<std::string>{});
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("invalid schema spec: ") + e.what());
  }
}

SchemaSpec read_schema_spec(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("schema file not found: " + path.string());
  return parse_schema_spec(read_file(path));
}

SchemaSpec spec_of(const FeatureSchema& schema) {
  SchemaSpec s;
  s.target = schema.target().name;
  s.classes = schema.classes;
  for (std::size_t i = 0; i < schema.feature_count(); ++i) {
    const auto& c = schema.columns[i];
    (c.role == ColumnRole::continuous ? s.continuous : s.categorical).push_back(c.name);
  }
  return s;
}

Dataset parse_dataset(const std::string& csv_text, const SchemaSpec& spec) {
  const Table t = parse_table(csv_text);

  std::map<std::string, ColumnRole> roles;
  auto declare = [&](const std::string& name, ColumnRole role) {
    if (!roles.emplace(name, role).second) throw InputError("column declared twice in schema: " + name);
    column_position(t, name);
  };
  declare(spec.target, ColumnRole::target);
  for (const auto& n : spec.continuous) declare(n, ColumnRole::continuous);
  for (const auto& n : spec.categorical) declare(n, ColumnRole::categorical);

  FeatureSchema schema;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    auto it = roles.find(t.header[c]);
    if (it == roles.end() || it->second == ColumnRole::target) continue;
    Column col{t.header[c], it->second, {}, std::nullopt};
    if (col.role == ColumnRole::categorical) {
      std::set<std::string> seen;
      for (const auto& row : t.rows) {
        if (!is_missing(row[c]) && seen.insert(row[c]).second) col.vocab.push_back(row[c]);
      }
      if (col.vocab.empty()) throw InputError("column " + col.name + " is entirely missing");
      sort_vocab(col.vocab);
    }
    schema.columns.push_back(std::move(col));
  }
  schema.columns.push_back(Column{spec.target, ColumnRole::target, {}, std::nullopt});

  if (!spec.classes.empty()) {
    schema.classes = spec.classes;
  } else {
    const std::size_t tp = column_position(t, spec.target);
    for (const auto& row : t.rows) {
      if (!is_missing(row[tp]) &&
          std::find(schema.classes.begin(), schema.classes.end(), row[tp]) == schema.classes.end()) {
        schema.classes.push_back(row[tp]);
      }
    }
  }
  schema.validate();
  return fill(t, std::move(schema));
}

Dataset parse_dataset(const std::string& csv_text, const FeatureSchema& schema) {
  schema.validate();
  return fill(parse_table(csv_text), schema);
}

Dataset load_dataset(const std::filesystem::path& path, const SchemaSpec& spec) {
  return parse_dataset(read_file(path), spec);
}

Dataset load_dataset(const std::filesystem::path& path, const FeatureSchema& schema) {
  return parse_dataset(read_file(path), schema);
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(schema.class_count(), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

bool Dataset::has_missing() const { return values.array().isNaN().any(); }

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
  Dataset out;
  out.schema = schema;
  out.values.resize(static_cast<Eigen::Index>(idx.size()), values.cols());
  out.labels.reserve(idx.size());
  out.row_ids.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.values.row(static_cast<Eigen::Index>(i)) = values.row(static_cast<Eigen::Index>(idx[i]));
    out.labels.push_back(labels[idx[i]]);
    out.row_ids.push_back(row_ids[idx[i]]);
  }
  return out;
}

bool operator==(const Dataset& a, const Dataset& b) {
  if (a.schema != b.schema || a.labels != b.labels || a.row_ids != b.row_ids) return false;
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols()) return false;
  for (Eigen::Index i = 0; i < a.values.size(); ++i) {
    const double x = a.values.data()[i];
    const double y = b.values.data()[i];
    if (std::isnan(x) != std::isnan(y)) return false;
    if (!std::isnan(x) && x != y) return false;
  }
  return true;
}

std::vector<double> fit_imputation(const Dataset& d, std::span<const std::size_t> rows) {
  std::vector<double> out(d.schema.feature_count(), kMissing);
  for (std::size_t f = 0; f < d.schema.feature_count(); ++f) {
    const auto col = static_cast<Eigen::Index>(f);
    const Column& c = d.schema.columns[f];
    if (c.role == ColumnRole::continuous) {
      std::vector<double> seen;
      seen.reserve(rows.size());
      for (auto r : rows) {
        const double v = d.values(static_cast<Eigen::Index>(r), col);
        if (!std::isnan(v)) seen.push_back(v);
      }
      if (seen.empty()) throw InputError("column " + c.name + " is entirely missing");
      // Lower-middle element for even counts.
      const std::size_t mid = (seen.size() - 1) / 2;
      std::nth_element(seen.begin(), seen.begin() + static_cast<std::ptrdiff_t>(mid), seen.end());
      out[f] = seen[mid];
    } else {
      std::vector<std::size_t> counts(c.vocab.size(), 0);
      std::vector<std::size_t> first(c.vocab.size(), rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const double v = d.values(static_cast<Eigen::Index>(rows[i]), col);
        if (std::isnan(v)) continue;
        const auto k = static_cast<std::size_t>(v);
        if (counts[k]++ == 0) first[k] = i;
      }
      std::optional<std::size_t> best;
      for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts[k] == 0) continue;
        if (!best || counts[k] > counts[*best] || (counts[k] == counts[*best] && first[k] < first[*best])) best = k;
      }
      if (!best) throw InputError("column " + c.name + " is entirely missing");
      out[f] = static_cast<double>(*best);
    }
  }
  return out;
}

Dataset apply_imputation(Dataset d, std::span<const double> impute) {
  if (impute.size() != d.schema.feature_count()) throw InputError("imputation vector has wrong length");
  for (std::size_t f = 0; f < impute.size(); ++f) {
    auto col = d.values.col(static_cast<Eigen::Index>(f));
    col = col.unaryExpr([v = impute[f]](double x) { return std::isnan(x) ? v : x; });
    d.schema.columns[f].impute = impute[f];
  }
  return d;
}

Dataset impute_missing(const Dataset& d) {
  std::vector<std::size_t> all(d.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return apply_imputation(d, fit_imputation(d, all));
}

std::vector<FoldSplit> stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed) {
  if (k < 2) throw InputError("fold count must be at least 2");
  if (static_cast<std::size_t>(k) > labels.size()) throw InputError("fold count exceeds number of rows");
  const int classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  Rng rng(seed);
  std::vector<int> fold_of(labels.size(), 0);
  // Deal each shuffled class round-robin, continuing where the previous class
  // stopped so that fold sizes stay balanced as well.
  std::size_t next = 0;
  for (auto& members : by_class) {
    shuffle(std::span<std::size_t>(members), rng);
    for (auto i : members) {
      fold_of[i] = static_cast<int>(next % static_cast<std::size_t>(k));
      ++next;
    }
  }
  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (int f = 0; f < k; ++f) {
      auto& split = folds[static_cast<std::size_t>(f)];
      (fold_of[i] == f ? split.test_idx : split.train_idx).push_back(i);
    }
  }
  return folds;
}

std::vector<FoldSplit> stratified_kfold(const Dataset& d, int k, std::uint64_t seed) {
  return stratified_kfold(std::span<const int>(d.labels), k, seed);
}

FoldSplit stratified_holdout(std::span<const int> labels, double fraction, std::uint64_t seed) {
  const int classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  Rng rng(seed);
  std::vector<char> held(labels.size(), 0);
  for (auto& members : by_class) {
    shuffle(std::span<std::size_t>(members), rng);
    auto take = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(members.size()) + 0.5));
    if (take >= members.size()) take = members.size() - (members.empty() ? 0 : 1);
    for (std::size_t i = 0; i < take; ++i) held[members[i]] = 1;
  }
  FoldSplit s;
  for (std::size_t i = 0; i < labels.size(); ++i) (held[i] ? s.test_idx : s.train_idx).push_back(i);
  return s;
}

std::string to_csv(const Dataset& d) {
  std::ostringstream out;
  const auto& cols = d.schema.columns;
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << csv_quote(cols[c].name);
  out << '\n';
  for (std::size_t r = 0; r < d.rows(); ++r) {
    for (std::size_t f = 0; f < d.schema.feature_count(); ++f) {
      const double v = d.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f));
      if (f) out << ',';
      if (std::isnan(v)) {
        out << "NA";
      } else if (cols[f].role == ColumnRole::categorical) {
        out << csv_quote(cols[f].vocab[static_cast<std::size_t>(v)]);
      } else {
        out << format_number(v);
      }
    }
    out << ',' << csv_quote(d.schema.classes[static_cast<std::size_t>(d.labels[r])]) << '\n';
  }
  return out.str();
}

void write_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write file: " + path.string());
  out << to_csv(d);
}

}  // namespace medic

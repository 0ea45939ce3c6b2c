#include "medic/explain.hpp"

#include "medic/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace medic {

namespace {

using nlohmann::ordered_json;

std::string format_number(double x) {
  char buf[64];
  if (std::abs(x) >= 1000.0) {
    std::snprintf(buf, sizeof buf, "%.0f", x);
  } else {
    std::snprintf(buf, sizeof buf, "%.4g", x);
  }
  return buf;
}

std::string render_interval(Interval iv) {
  const std::string lo = std::isinf(iv.lower) ? "-∞" : format_number(iv.lower);
  const std::string hi = std::isinf(iv.upper) ? "∞" : format_number(iv.upper);
  return (std::isinf(iv.lower) ? "(" : "[") + lo + ", " + hi + ")";
}

std::string shortest(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

// Round-trip exact bounds for the machine-readable table.
std::string exact_interval(Interval iv) {
  return (std::isinf(iv.lower) ? "(-inf" : "[" + shortest(iv.lower)) + ", " +
         (std::isinf(iv.upper) ? "inf" : shortest(iv.upper)) + ")";
}

Interval clamp_interval(Interval iv, std::pair<double, double> limits) {
  iv.lower = std::clamp(iv.lower, limits.first, limits.second);
  iv.upper = std::clamp(iv.upper, limits.first, limits.second);
  return iv;
}

BinningParams hard_bins(const BinningParams& bins) {
  BinningParams out = bins;
  out.mode = BinMode::hard;
  return out;
}

const std::string& class_name(const Model& m, int k) { return m.schema.classes[static_cast<std::size_t>(k)]; }

ordered_json bound_json(double x) { return std::isinf(x) ? ordered_json(nullptr) : ordered_json(x); }

ordered_json condition_json(const Condition& c, const ClinicalBounds* bounds) {
  ordered_json j;
  j["feature"] = c.feature;
  j["kind"] = c.kind == ConditionKind::interval ? "interval" : "category";
  if (c.kind == ConditionKind::interval) {
    j["bin"] = c.bin;
    j["lower"] = bound_json(c.interval.lower);
    j["upper"] = bound_json(c.interval.upper);
  } else {
    j["value"] = c.value;
  }
  j["text"] = render(c, bounds);
  return j;
}

void write_file(const std::filesystem::path& path, const std::string& text, std::vector<std::filesystem::path>& out) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path.string());
  f << text;
  if (!f) throw InputError("cannot write " + path.string());
  out.push_back(path);
}

std::vector<double> dataset_row(const Dataset& d, std::size_t r) {
  std::vector<double> row(static_cast<std::size_t>(d.values.cols()));
  for (Eigen::Index f = 0; f < d.values.cols(); ++f) row[static_cast<std::size_t>(f)] = d.values(static_cast<Eigen::Index>(r), f);
  return row;
}

}  // namespace

std::string render(const Condition& c, const ClinicalBounds* bounds) {
  if (c.kind == ConditionKind::category) return c.feature + " = " + c.value;
  Interval iv = c.interval;
  if (bounds) {
    if (auto it = bounds->find(c.feature); it != bounds->end()) {
      iv = clamp_interval(iv, it->second);
      if (!(iv.lower < iv.upper)) return c.feature + " ∈ ∅";
      return c.feature + " ∈ [" + format_number(iv.lower) + ", " + format_number(iv.upper) + ")";
    }
  }
  return c.feature + " ∈ " + render_interval(iv);
}

std::string render(std::span<const Condition> conditions, const ClinicalBounds* bounds) {
  std::string out;
  for (const auto& c : conditions) {
    if (!out.empty()) out += " ∧ ";
    out += render(c, bounds);
  }
  return out;
}

bool satisfied_by(const Condition& c, std::span<const double> row, const IntervalSet& intervals) {
  const double x = row[c.feature_index];
  if (c.kind == ConditionKind::category) return x == static_cast<double>(c.bin);
  return intervals.slot_of(x) == static_cast<Eigen::Index>(c.bin);
}

PrototypeExplanation decode_prototype(const Model& m, std::size_t j) {
  if (j >= m.prototypes.provenance.size()) throw InputError("prototype index out of range");
  const auto& prov = m.prototypes.provenance[j];
  if (!prov) throw InputError("prototype " + std::to_string(j) + " has no provenance (stage 3 required)");
  if (prov->part >= static_cast<std::size_t>(m.masks.weights.rows())) throw InputError("provenance part out of range");

  PrototypeExplanation out;
  out.prototype_id = j;
  out.provenance = *prov;
  const EncodedInstance enc = encode_instance(prov->source, m.schema, hard_bins(m.bins));
  const auto intervals = all_intervals(m.bins);
  const auto mask = m.masks.weights.row(static_cast<Eigen::Index>(prov->part));
  for (std::size_t slot = 0; slot < enc.layout.width; ++slot) {
    const auto s = static_cast<Eigen::Index>(slot);
    if (mask(s) == 0.0 || enc.vector(s) == 0.0) continue;
    const Segment& seg = enc.layout.segment_of(slot);
    const Column& col = m.schema.feature(seg.feature);
    Condition c;
    c.feature = col.name;
    c.feature_index = seg.feature;
    c.slot = slot;
    c.bin = slot - seg.offset;
    if (seg.role == ColumnRole::continuous) {
      c.kind = ConditionKind::interval;
      c.interval = intervals[seg.bins_index].by_slot[c.bin];
    } else {
      c.kind = ConditionKind::category;
      c.value = col.vocab[c.bin];
    }
    out.conditions.push_back(std::move(c));
  }
  const Eigen::VectorXd w = m.head.w.col(static_cast<Eigen::Index>(j));
  out.class_weights.assign(w.data(), w.data() + w.size());
  return out;
}

double similarity_from_distance(double dist) {
  if (!(dist >= 0.0)) throw InputError("distance must be non-negative");
  return 1.0 / (1.0 + dist);
}

InstanceExplanation explain_instance(const Model& m, std::span<const double> row, std::size_t top_k) {
  BinningParams bins = hard_bins(m.bins);
  const ForwardTrace trace = forward(m, row);
  const EncodedInstance hard = encode_instance(row, m.schema, bins);

  InstanceExplanation out;
  out.probs = trace.probs;
  out.predicted = predict_class(trace.probs);
  std::vector<std::size_t> order(static_cast<std::size_t>(trace.pooled.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return trace.pooled(static_cast<Eigen::Index>(a)) < trace.pooled(static_cast<Eigen::Index>(b));
  });
  order.resize(std::min(top_k, order.size()));
  for (std::size_t j : order) {
    Match match;
    match.prototype_id = j;
    match.distance = trace.pooled(static_cast<Eigen::Index>(j));
    match.similarity = similarity_from_distance(match.distance);
    match.matched_part = static_cast<std::size_t>(trace.best_part[j]);
    match.conditions = decode_prototype(m, j).conditions;
    for (const auto& c : match.conditions) match.shared.push_back(hard.vector(static_cast<Eigen::Index>(c.slot)) != 0.0);
    out.matches.push_back(std::move(match));
  }
  return out;
}

std::vector<std::filesystem::path> export_report(const Model& m, const Dataset& d, const std::filesystem::path& dir,
                                                 const ReportOptions& opts) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  const auto intervals = all_intervals(m.bins);

  // Intervals, one row per continuous feature.
  std::size_t max_bins = 0;
  for (const auto& set : intervals) max_bins = std::max(max_bins, set.ascending().size());
  std::ostringstream csv;
  std::ostringstream txt;
  csv << "feature";
  for (std::size_t k = 1; k <= max_bins; ++k) csv << ",interval_" << k;
  csv << '\n';
  std::vector<std::vector<std::string>> table{{"Feature"}};
  for (std::size_t k = 1; k <= max_bins; ++k) table[0].push_back("Interval " + std::to_string(k));
  std::size_t next = 0;
  for (std::size_t f = 0; f < m.schema.feature_count(); ++f) {
    if (m.schema.feature(f).role != ColumnRole::continuous) continue;
    const auto ascending = intervals[next++].ascending();
    csv << m.schema.feature(f).name;
    std::vector<std::string> cells{m.schema.feature(f).name};
    for (std::size_t k = 0; k < max_bins; ++k) {
      csv << ',';
      if (k < ascending.size()) {
        csv << '"' << exact_interval(ascending[k]) << '"';
        cells.push_back(render_interval(ascending[k]));
      } else {
        cells.emplace_back();
      }
    }
    csv << '\n';
    table.push_back(std::move(cells));
  }
  std::vector<std::size_t> widths(table[0].size(), 0);
  auto display_width = [](const std::string& s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char ch) { return (ch & 0xC0) != 0x80; }));
  };
  for (const auto& row : table) {
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], display_width(row[c]));
  }
  for (const auto& row : table) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) line += " | ";
      line += row[c];
      if (c + 1 < row.size()) line.append(widths[c] - display_width(row[c]), ' ');
    }
    txt << line << '\n';
  }
  write_file(dir / "intervals.csv", csv.str(), written);
  write_file(dir / "intervals.txt", txt.str(), written);

  // Prototypes.
  ordered_json protos = ordered_json::array();
  std::ostringstream ptxt;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> first_seen;
  for (std::size_t j = 0; j < static_cast<std::size_t>(m.prototypes.count()); ++j) {
    const PrototypeExplanation e = decode_prototype(m, j);
    ordered_json pj;
    pj["prototype_id"] = j;
    pj["provenance"] = {{"row", e.provenance.row}, {"part", e.provenance.part}};
    pj["conditions"] = ordered_json::array();
    for (const auto& c : e.conditions) pj["conditions"].push_back(condition_json(c, opts.bounds));
    pj["class_weights"] = e.class_weights;
    protos.push_back(std::move(pj));

    ptxt << "prototype " << j << "  (row " << e.provenance.row << ", part " << e.provenance.part << ")";
    const auto [it, fresh] = first_seen.emplace(std::pair{e.provenance.row, e.provenance.part}, j);
    if (!fresh) ptxt << "  same part as prototype " << it->second;
    ptxt << "\n  " << render(e.conditions, opts.bounds) << "\n  weights:";
    for (std::size_t k = 0; k < e.class_weights.size(); ++k) {
      char buf[64];
      std::snprintf(buf, sizeof buf, " %s=%.4f", m.schema.classes[k].c_str(), e.class_weights[k]);
      ptxt << buf;
    }
    ptxt << '\n';
  }
  ptxt << "unique prototype parts: " << first_seen.size() << " of " << m.prototypes.count() << '\n';
  write_file(dir / "prototypes.json", protos.dump(2) + "\n", written);
  write_file(dir / "prototypes.txt", ptxt.str(), written);

  if (opts.instances.empty()) return written;

  ordered_json expl = ordered_json::array();
  std::ostringstream etxt;
  for (std::size_t r : opts.instances) {
    if (r >= d.rows()) throw InputError("row " + std::to_string(r) + " is out of range");
    const InstanceExplanation e = explain_instance(m, dataset_row(d, r), opts.top_k);
    ordered_json ej;
    ej["instance_id"] = d.row_ids[r];
    ej["prediction"] = class_name(m, e.predicted);
    ej["matches"] = ordered_json::array();
    etxt << "instance " << d.row_ids[r] << ": predicted " << class_name(m, e.predicted) << '\n';
    for (std::size_t i = 0; i < e.matches.size(); ++i) {
      const Match& mt = e.matches[i];
      ordered_json mj;
      mj["prototype_id"] = mt.prototype_id;
      mj["similarity"] = mt.similarity;
      mj["matched_part"] = mt.matched_part;
      mj["conditions"] = ordered_json::array();
      for (std::size_t c = 0; c < mt.conditions.size(); ++c) {
        ordered_json cj = condition_json(mt.conditions[c], opts.bounds);
        cj["shared"] = static_cast<bool>(mt.shared[c]);
        mj["conditions"].push_back(std::move(cj));
      }
      ej["matches"].push_back(std::move(mj));

      char buf[96];
      std::snprintf(buf, sizeof buf, "%zu. similarity %.3f  prototype %zu\n   ", i + 1, mt.similarity, mt.prototype_id);
      etxt << buf;
      for (std::size_t c = 0; c < mt.conditions.size(); ++c) {
        if (c) etxt << " ∧ ";
        etxt << (mt.shared[c] ? "*" : "") << render(mt.conditions[c], opts.bounds) << (mt.shared[c] ? "*" : "");
      }
      etxt << '\n';
    }
    etxt << '\n';
    expl.push_back(std::move(ej));
  }
  etxt << "(* condition satisfied by the instance)\n";
  write_file(dir / "explanations.json", expl.dump(2) + "\n", written);
  write_file(dir / "explanations.txt", etxt.str(), written);
  return written;
}

ClinicalBounds read_clinical_bounds(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  ClinicalBounds out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.starts_with("feature,")) continue;
    std::istringstream ss(line);
    std::string name, lo, hi;
    if (!std::getline(ss, name, ',') || !std::getline(ss, lo, ',') || !std::getline(ss, hi)) {
      throw InputError("bad clinical bounds line: " + line);
    }
    try {
      out[name] = {std::stod(lo), std::stod(hi)};
    } catch (const std::exception&) {
      throw InputError("bad clinical bounds line: " + line);
    }
  }
  return out;
}

}  // namespace medic

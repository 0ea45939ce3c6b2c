#include "medic/binning.hpp"

#include <cmath>
#include <sstream>

namespace medic {

std::vector<Interval> IntervalSet::ascending() const {
  std::vector<Interval> out;
  out.reserve(representative.size());
  for (auto slot : representative) out.push_back(by_slot[static_cast<std::size_t>(slot)]);
  return out;
}

Eigen::Index IntervalSet::slot_of(double x) const {
  for (auto slot : representative) {
    if (by_slot[static_cast<std::size_t>(slot)].contains(x)) return slot;
  }
  throw InputError("value is not covered by any interval");
}

IntervalSet feature_intervals(const FeatureBins& f) { return intervals_from_centers(f.centers, f.mean, f.scale); }

std::vector<IntervalSet> all_intervals(const BinningParams& bins) {
  std::vector<IntervalSet> out;
  out.reserve(bins.features.size());
  for (const auto& f : bins.features) out.push_back(feature_intervals(f));
  return out;
}

const Segment& EncodingLayout::segment_of(std::size_t slot) const {
  for (const auto& s : segments) {
    if (slot >= s.offset && slot < s.offset + s.width) return s;
  }
  throw InputError("encoded slot out of range");
}

EncodingLayout make_layout(const FeatureSchema& schema, const BinningParams& bins) {
  EncodingLayout layout;
  std::size_t next_bins = 0;
  for (std::size_t f = 0; f < schema.feature_count(); ++f) {
    const Column& c = schema.columns[f];
    Segment s;
    s.feature = f;
    s.role = c.role;
    s.offset = layout.width;
    if (c.role == ColumnRole::continuous) {
      if (next_bins >= bins.features.size()) throw InputError("binning parameters missing for " + c.name);
      s.bins_index = next_bins++;
      s.width = static_cast<std::size_t>(bins.features[s.bins_index].bins());
      if (s.width < 1) throw InputError("feature " + c.name + " has no bins");
    } else {
      s.width = c.vocab.size();
    }
    layout.width += s.width;
    layout.segments.push_back(s);
  }
  if (next_bins != bins.features.size()) throw InputError("binning parameters do not match the schema");
  return layout;
}

void encode_into(std::span<const double> row, const FeatureSchema& schema, const EncodingLayout& layout,
                 const BinningParams& bins, std::span<const IntervalSet> intervals, Eigen::Ref<Eigen::VectorXd> out) {
  if (row.size() != schema.feature_count()) throw InputError("row has wrong number of features");
  out.setZero();
  for (const auto& s : layout.segments) {
    const double x = row[s.feature];
    const auto offset = static_cast<Eigen::Index>(s.offset);
    if (!std::isfinite(x)) throw InputError("missing or non-finite value for " + schema.columns[s.feature].name);
    if (s.role == ColumnRole::continuous) {
      const FeatureBins& fb = bins.features[s.bins_index];
      if (bins.mode == BinMode::fuzzy) {
        out.segment(offset, fb.bins()) = fuzzy_bin(fb.standardize(x), fb, bins.eps);
      } else {
        out(offset + intervals[s.bins_index].slot_of(x)) = 1.0;
      }
    } else {
      const auto k = static_cast<std::size_t>(x);
      if (x < 0 || static_cast<double>(k) != x || k >= s.width) {
        std::ostringstream msg;
        msg << "category value " << x << " of feature " << schema.columns[s.feature].name
            << " is outside its vocabulary";
        throw InputError(msg.str());
      }
      out(offset + static_cast<Eigen::Index>(k)) = 1.0;
    }
  }
}

EncodedInstance encode_instance(std::span<const double> row, const FeatureSchema& schema,
                                const BinningParams& bins) {
  EncodedInstance e;
  e.layout = make_layout(schema, bins);
  e.vector.resize(static_cast<Eigen::Index>(e.layout.width));
  std::vector<IntervalSet> intervals;
  if (bins.mode == BinMode::hard) intervals = all_intervals(bins);
  encode_into(row, schema, e.layout, bins, intervals, e.vector);
  return e;
}

namespace {

// Linear interpolation between order statistics.
double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

BinningInit init_binning(const Dataset& d, int bins_per_feature, std::span<const std::size_t> rows) {
  if (bins_per_feature < 1) throw InputError("bins per feature must be at least 1");
  if (rows.empty()) throw InputError("cannot initialize binning on zero rows");
  const auto k = static_cast<Eigen::Index>(bins_per_feature);
  BinningInit out;
  for (std::size_t f = 0; f < d.schema.feature_count(); ++f) {
    const Column& c = d.schema.columns[f];
    if (c.role != ColumnRole::continuous) continue;
    std::vector<double> v;
    v.reserve(rows.size());
    for (auto r : rows) {
      const double x = d.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f));
      if (std::isnan(x)) throw InputError("init_binning requires imputed data (column " + c.name + ")");
      v.push_back(x);
    }
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    double scale = std::sqrt(var / n);
    if (!(scale > 0.0)) scale = 1.0;

    for (double& x : v) x = (x - mean) / scale;
    std::sort(v.begin(), v.end());

    FeatureBins fb;
    fb.mean = mean;
    fb.scale = scale;
    fb.centers.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      fb.centers(i) = quantile_sorted(v, static_cast<double>(2 * i + 1) / static_cast<double>(2 * k));
    }
    bool collapsed = false;
    for (Eigen::Index i = 1; i < k; ++i) collapsed |= fb.centers(i) - fb.centers(i - 1) < kDuplicateCenterGap;
    if (collapsed) {
      for (Eigen::Index i = 0; i < k; ++i) fb.centers(i) += static_cast<double>(i) * 1e-3;
      out.warnings.push_back("feature " + c.name + ": quantile centers collapsed, perturbed by i*1e-3");
    }
    double sigma = 1.0;
    if (k > 1) sigma = std::max(0.5 * (fb.centers(k - 1) - fb.centers(0)) / static_cast<double>(k - 1), 1e-3);
    fb.bandwidth_raw = FeatureBins::raw_for_sigma(sigma);
    out.params.features.push_back(std::move(fb));
  }
  return out;
}

BinningInit init_binning(const Dataset& d, int bins_per_feature) {
  std::vector<std::size_t> all(d.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return init_binning(d, bins_per_feature, all);
}

}  // namespace medic

#pragma once

#include "medic/eigen_util.hpp"
#include "medic/error.hpp"
#include "medic/schema_data.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace medic {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class BinMode { fuzzy, hard };

/// Centers closer than this are treated as one interval.
inline constexpr double kDuplicateCenterGap = 1e-9;

/// Added to softplus(raw) so the bandwidth stays positive after underflow.
inline constexpr double kMinBandwidth = 1e-6;

template <typename Scalar>
Scalar softplus(Scalar x) {
  using std::exp;
  using std::log1p;
  return x > Scalar(0) ? x + log1p(exp(-x)) : log1p(exp(x));
}

template <typename Scalar>
Scalar inverse_softplus(Scalar y) {
  using std::expm1;
  using std::log;
  return y + log(-expm1(-y));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  using std::exp;
  return x >= Scalar(0) ? Scalar(1) / (Scalar(1) + exp(-x)) : exp(x) / (Scalar(1) + exp(x));
}

/// Learnable discretization of one continuous feature. Centers live in
/// standardized units; the bandwidth is stored unconstrained and mapped
/// through softplus plus kMinBandwidth, so sigma() > 0 for every raw value.
template <typename Scalar>
struct FeatureBinsT {
  Vec<Scalar> centers;
  Scalar bandwidth_raw = Scalar(0);
  Scalar mean = Scalar(0);
  Scalar scale = Scalar(1);

  Scalar sigma() const { return softplus(bandwidth_raw) + Scalar(kMinBandwidth); }
  /// Raw value that gives sigma() == s (for s > kMinBandwidth).
  static Scalar raw_for_sigma(Scalar s) { return inverse_softplus(s - Scalar(kMinBandwidth)); }
  Scalar standardize(Scalar x) const { return (x - mean) / scale; }
  Eigen::Index bins() const { return centers.size(); }

  bool operator==(const FeatureBinsT& o) const {
    return same_values(centers, o.centers) && bandwidth_raw == o.bandwidth_raw && mean == o.mean && scale == o.scale;
  }
};

/// One entry per continuous feature, in schema order.
template <typename Scalar>
struct BinningParamsT {
  std::vector<FeatureBinsT<Scalar>> features;
  BinMode mode = BinMode::fuzzy;
  Scalar eps = Scalar(1e-8);

  bool operator==(const BinningParamsT&) const = default;
};

using FeatureBins = FeatureBinsT<double>;
using BinningParams = BinningParamsT<double>;

namespace detail {

template <typename Scalar>
void require_finite(Scalar x) {
  using std::isfinite;
  if (!isfinite(x)) throw InputError("binning input must be finite");
}

}  // namespace detail

/// Normalized Gaussian-kernel memberships of x to each bin,
///
///   w_k = exp(-d_k) / (sum_j exp(-d_j) + eps),  d_k = (x - mu_k)^2 / (2 sigma^2).
///
/// The kernels are evaluated relative to the nearest center (d_k - min d),
/// which keeps the sum within eps of 1 for inputs far from every center.
template <typename Derived>
Vec<typename Derived::Scalar> fuzzy_bin(typename Derived::Scalar x, const Eigen::MatrixBase<Derived>& centers,
                                        typename Derived::Scalar sigma, typename Derived::Scalar eps) {
  using Scalar = typename Derived::Scalar;
  detail::require_finite(x);
  const Scalar two_var = Scalar(2) * sigma * sigma;
  Vec<Scalar> d = (centers.array() - x).square() / two_var;
  const Scalar dmin = d.minCoeff();
  Vec<Scalar> e = (-(d.array() - dmin)).exp();
  return e / (e.sum() + eps);
}

template <typename Scalar>
Vec<Scalar> fuzzy_bin(Scalar x, const FeatureBinsT<Scalar>& f, Scalar eps) {
  return fuzzy_bin(x, f.centers, f.sigma(), eps);
}

/// Gradient of sum_k upstream_k * w_k(x) with respect to the centers and the
/// raw (pre-softplus) bandwidth; accumulated into the outputs.
template <typename Scalar, typename Upstream>
void fuzzy_bin_backward(Scalar x, const FeatureBinsT<Scalar>& f, Scalar eps,
                        const Eigen::MatrixBase<Upstream>& upstream, Vec<Scalar>& d_centers, Scalar& d_raw) {
  const Scalar sigma = f.sigma();
  const Scalar var = sigma * sigma;
  const Eigen::Index k = f.centers.size();
  Vec<Scalar> diff = Scalar(x) - f.centers.array();
  Vec<Scalar> d = diff.array().square() / (Scalar(2) * var);
  Eigen::Index m = 0;
  const Scalar dmin = d.minCoeff(&m);
  Vec<Scalar> e = (-(d.array() - dmin)).exp();
  const Scalar total = e.sum() + eps;
  Vec<Scalar> w = e / total;
  const Scalar g = upstream.dot(w);

  // dL/dd_l = w_l (g - upstream_l) + [l == argmin] * g * eps / total
  Vec<Scalar> dd = w.array() * (g - upstream.array());
  dd(m) += g * eps / total;

  // d_l depends on mu_l through -(x - mu_l) / var and on sigma through -2 d_l / sigma.
  for (Eigen::Index l = 0; l < k; ++l) d_centers(l) += dd(l) * (-diff(l) / var);
  const Scalar d_sigma = (dd.array() * d.array()).sum() * (Scalar(-2) / sigma);
  d_raw += d_sigma * sigmoid(f.bandwidth_raw);
}

/// Half-open interval [lower, upper) in original feature units.
struct Interval {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();

  bool contains(double x) const { return x >= lower && x < upper; }
  bool operator==(const Interval&) const = default;
};

/// Intervals of every bin slot. Slots whose centers coincide share one
/// interval and `merged_duplicates` is raised.
struct IntervalSet {
  std::vector<Interval> by_slot;
  /// Slot that hard binning reports for each distinct interval, ascending.
  std::vector<Eigen::Index> representative;
  bool merged_duplicates = false;

  /// Distinct intervals in ascending order.
  std::vector<Interval> ascending() const;
  /// Slot whose interval contains x.
  Eigen::Index slot_of(double x) const;
};

/// Boundaries at the midpoints of consecutive sorted centers, mapped back
/// through x = mean + scale * z. The first interval is open at -inf and the
/// last at +inf.
template <typename Derived>
IntervalSet intervals_from_centers(const Eigen::MatrixBase<Derived>& centers, double mean = 0.0,
                                   double scale = 1.0) {
  const Eigen::Index k = centers.size();
  if (k < 1) throw InputError("at least one bin center is required");
  for (Eigen::Index i = 0; i < k; ++i) detail::require_finite(static_cast<double>(centers(i)));
  if (!(scale > 0.0)) throw InputError("standardization scale must be positive");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return centers(a) < centers(b);
  });

  // Group coinciding centers.
  std::vector<std::vector<Eigen::Index>> groups;
  for (auto slot : order) {
    if (!groups.empty() &&
        static_cast<double>(centers(slot) - centers(groups.back().back())) < kDuplicateCenterGap) {
      groups.back().push_back(slot);
    } else {
      groups.push_back({slot});
    }
  }

  IntervalSet out;
  out.by_slot.resize(static_cast<std::size_t>(k));
  out.merged_duplicates = groups.size() < static_cast<std::size_t>(k);
  const double inf = std::numeric_limits<double>::infinity();
  double lower = -inf;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    double upper = inf;
    if (g + 1 < groups.size()) {
      const double a = static_cast<double>(centers(groups[g].back()));
      const double b = static_cast<double>(centers(groups[g + 1].front()));
      upper = mean + scale * (0.5 * (a + b));
    }
    for (auto slot : groups[g]) out.by_slot[static_cast<std::size_t>(slot)] = Interval{lower, upper};
    out.representative.push_back(groups[g].back());
    lower = upper;
  }
  return out;
}

/// Index of the bin x falls into: the nearest center, with an exact tie
/// resolved to the upper interval.
template <typename Derived>
Eigen::Index hard_bin_index(typename Derived::Scalar x, const Eigen::MatrixBase<Derived>& centers) {
  detail::require_finite(x);
  return intervals_from_centers(centers).slot_of(static_cast<double>(x));
}

template <typename Derived>
Vec<typename Derived::Scalar> hard_bin(typename Derived::Scalar x, const Eigen::MatrixBase<Derived>& centers) {
  Vec<typename Derived::Scalar> out = Vec<typename Derived::Scalar>::Zero(centers.size());
  out(hard_bin_index(x, centers)) = 1;
  return out;
}

/// Original-unit intervals of one feature's bins.
IntervalSet feature_intervals(const FeatureBins& f);

/// Position of each feature inside the encoded vector.
struct Segment {
  std::size_t feature = 0;   // schema column index
  ColumnRole role = ColumnRole::continuous;
  std::size_t offset = 0;
  std::size_t width = 0;
  std::size_t bins_index = 0;  // into BinningParams::features (continuous only)
};

struct EncodingLayout {
  std::vector<Segment> segments;
  std::size_t width = 0;  // d'

  /// Segment containing encoded slot `slot`.
  const Segment& segment_of(std::size_t slot) const;
};

EncodingLayout make_layout(const FeatureSchema& schema, const BinningParams& bins);

struct EncodedInstance {
  Eigen::VectorXd vector;
  EncodingLayout layout;
};

/// Continuous features are standardized and binned per `bins.mode`
/// (hard mode compares the raw value against the original-unit intervals),
/// categorical features are one-hot encoded.
EncodedInstance encode_instance(std::span<const double> row, const FeatureSchema& schema,
                                const BinningParams& bins);

/// Allocation-free variant used on hot paths; `out` must have layout.width entries.
void encode_into(std::span<const double> row, const FeatureSchema& schema, const EncodingLayout& layout,
                 const BinningParams& bins, std::span<const IntervalSet> intervals, Eigen::Ref<Eigen::VectorXd> out);

/// Intervals of every continuous feature (for use with encode_into in hard mode).
std::vector<IntervalSet> all_intervals(const BinningParams& bins);

struct BinningInit {
  BinningParams params;
  std::vector<std::string> warnings;
};

/// Standardization and quantile-placed centers fitted on `rows` only.
BinningInit init_binning(const Dataset& d, int bins_per_feature, std::span<const std::size_t> rows);
BinningInit init_binning(const Dataset& d, int bins_per_feature);

}  // namespace medic

#pragma once

#include "medic/binning.hpp"
#include "medic/random.hpp"
#include "medic/schema_data.hpp"
#include "medic/training.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

namespace medic::testing {

inline std::filesystem::path data_dir() { return MEDIC_DATA_DIR; }

inline Dataset load_named(const std::string& name) {
  return load_dataset(data_dir() / (name + ".csv"), read_schema_spec(data_dir() / (name + ".schema.json")));
}

inline std::vector<double> row_of(const Dataset& d, std::size_t r) {
  std::vector<double> row(static_cast<std::size_t>(d.values.cols()));
  for (Eigen::Index f = 0; f < d.values.cols(); ++f) row[static_cast<std::size_t>(f)] = d.values(static_cast<Eigen::Index>(r), f);
  return row;
}

/// Two continuous features and one binary flag; x1 shifts with the label.
inline Dataset synthetic(std::size_t rows, std::uint64_t seed, double separation = 2.0) {
  Rng rng(seed);
  std::ostringstream csv;
  csv.precision(17);
  csv << "x1,x2,flag,y\n";
  for (std::size_t i = 0; i < rows; ++i) {
    const int y = static_cast<int>(i % 2);
    csv << separation * y + standard_normal(rng) << ',' << standard_normal(rng) << ','
        << (uniform01(rng) < 0.3 + 0.4 * y ? "yes" : "no") << ',' << (y ? "pos" : "neg") << '\n';
  }
  SchemaSpec spec{"y", {"x1", "x2"}, {"flag"}, {"neg", "pos"}};
  return parse_dataset(csv.str(), spec);
}

/// Config that keeps unit-test training runs short.
inline TrainConfig quick_config(std::uint64_t seed = 0) {
  TrainConfig cfg;
  cfg.epochs_stage1 = 15;
  cfg.epochs_stage2 = 8;
  cfg.epochs_stage3 = 8;
  cfg.patience = 5;
  cfg.parts = 4;
  cfg.embedding_dim = 4;
  cfg.prototypes = 6;
  cfg.seed = seed;
  return cfg;
}

struct GroupError {
  const char* name;
  double relative;
  double analytic_norm;
};

/// Analytic vs central-difference gradient of loss_total, per parameter group,
/// on a fuzzy model with d' = 6, p = 2, h = 3, n = 2, c = 2. The relative error
/// of a group is |a - f| / max(|a|, |f|) over its whole gradient vector, and
/// 0 when both norms vanish.
inline std::vector<GroupError> gradient_check(std::uint64_t seed, double step = 1e-5) {
  Rng rng(derive_seed(seed, 99));
  std::ostringstream csv;
  csv.precision(17);
  csv << "a,b,y\n";
  for (int i = 0; i < 12; ++i) {
    csv << standard_normal(rng) << ',' << 3.0 * standard_normal(rng) + 1.0 << ',' << (i % 2 ? "p" : "q") << '\n';
  }
  const Dataset d = parse_dataset(csv.str(), SchemaSpec{"y", {"a", "b"}, {}, {"p", "q"}});
  TrainConfig cfg;
  cfg.bins = 3;
  cfg.parts = 2;
  cfg.embedding_dim = 3;
  cfg.prototypes = 2;
  cfg.lambda_sparsity = 0.3;
  cfg.lambda_diversity = 0.2;
  cfg.seed = seed;
  Model m = initialize_model(d, cfg).model;
  for (Eigen::Index i = 0; i < m.masks.weights.size(); ++i) m.masks.weights.data()[i] = 0.05 + 0.95 * uniform01(rng);
  for (auto& f : m.bins.features) f.bandwidth_raw += 0.3 * standard_normal(rng);
  m.extractor.b1.setConstant(0.1);
  const auto weights = inverse_frequency_weights(d.labels, 2);

  Gradients g = Gradients::zeros_like(m);
  loss_total(m, d.values, d.labels, cfg, &g, weights);
  const std::pair<ParamGroup, const char*> groups[] = {{kBinCenters, "bin centers"}, {kBandwidth, "bandwidth"},
                                                       {kMasks, "masks"},           {kExtractor, "extractor"},
                                                       {kPrototypes, "prototypes"}, {kHead, "head"}};
  std::vector<GroupError> out;
  for (const auto& [group, name] : groups) {
    double diff2 = 0.0, fd2 = 0.0, an2 = 0.0;
    for (const ParamSlot& s : parameter_slots(m, g, group)) {
      for (std::size_t i = 0; i < s.size; ++i) {
        const double v = s.value[i];
        s.value[i] = v + step;
        const double up = loss_total(m, d.values, d.labels, cfg, nullptr, weights).total;
        s.value[i] = v - step;
        const double down = loss_total(m, d.values, d.labels, cfg, nullptr, weights).total;
        s.value[i] = v;
        const double fd = (up - down) / (2.0 * step);
        diff2 += (fd - s.grad[i]) * (fd - s.grad[i]);
        fd2 += fd * fd;
        an2 += s.grad[i] * s.grad[i];
      }
    }
    const double denom = std::max(std::sqrt(fd2), std::sqrt(an2));
    out.push_back({name, denom < 1e-10 ? 0.0 : std::sqrt(diff2) / denom, std::sqrt(an2)});
  }
  return out;
}

/// Random sorted, well-separated centers with a random standardization.
struct RandomBins {
  FeatureBins bins;
  double lo;  // sampling range in original units
  double hi;
};

inline RandomBins random_bins(Rng& rng) {
  const auto k = static_cast<Eigen::Index>(1 + uniform_index(rng, 5));
  RandomBins r;
  r.bins.centers.resize(k);
  double c = uniform(rng, -3.0, 0.0);
  for (Eigen::Index i = 0; i < k; ++i) {
    r.bins.centers(i) = c;
    c += uniform(rng, 0.05, 1.5);
  }
  // Shuffle slots so unsorted centers are exercised too.
  std::vector<double> tmp(r.bins.centers.data(), r.bins.centers.data() + k);
  shuffle(std::span<double>(tmp), rng);
  for (Eigen::Index i = 0; i < k; ++i) r.bins.centers(i) = tmp[static_cast<std::size_t>(i)];
  r.bins.mean = uniform(rng, -50.0, 50.0);
  r.bins.scale = std::exp(uniform(rng, -3.0, 3.0));
  r.bins.bandwidth_raw = FeatureBins::raw_for_sigma(uniform(rng, 0.1, 2.0));
  r.lo = r.bins.mean + r.bins.scale * (r.bins.centers.minCoeff() - 2.0);
  r.hi = r.bins.mean + r.bins.scale * (r.bins.centers.maxCoeff() + 2.0);
  return r;
}

/// Failure counts of the four binning properties over `cases` random cases each.
struct BinningPropertyResult {
  int partition_failures = 0;
  int normalization_failures = 0;
  int limit_failures = 0;
  int roundtrip_failures = 0;
};

inline BinningPropertyResult binning_properties(int cases, std::uint64_t seed) {
  BinningPropertyResult out;
  Rng rng(seed);
  for (int t = 0; t < cases; ++t) {
    // Partition: ascending intervals tile the line and each probe lies in exactly one.
    {
      const RandomBins rb = random_bins(rng);
      const IntervalSet set = feature_intervals(rb.bins);
      const auto asc = set.ascending();
      bool ok = asc.size() == static_cast<std::size_t>(rb.bins.bins()) && std::isinf(asc.front().lower) &&
                asc.front().lower < 0 && std::isinf(asc.back().upper) && asc.back().upper > 0;
      for (std::size_t i = 0; ok && i < asc.size(); ++i) {
        ok = asc[i].lower < asc[i].upper && (i == 0 || asc[i].lower == asc[i - 1].upper);
      }
      std::vector<double> probes;
      for (int q = 0; q < 8; ++q) probes.push_back(uniform(rng, rb.lo, rb.hi));
      for (std::size_t i = 0; i + 1 < asc.size(); ++i) probes.push_back(asc[i].upper);
      for (double x : probes) {
        const auto hits = std::count_if(asc.begin(), asc.end(), [&](const Interval& iv) { return iv.contains(x); });
        ok = ok && hits == 1;
      }
      out.partition_failures += !ok;
    }
    // Normalization: fuzzy weights sum to 1 within 1e-6 and lie in [0, 1].
    {
      const RandomBins rb = random_bins(rng);
      const double z = uniform(rng, -50.0, 50.0);
      const Eigen::VectorXd w = fuzzy_bin(z, rb.bins, 1e-8);
      const bool ok = std::abs(w.sum() - 1.0) <= 1e-6 && w.minCoeff() >= 0.0 && w.maxCoeff() <= 1.0;
      out.normalization_failures += !ok;
    }
    // Fuzzy to hard: at sigma = 1e-3 * span the largest weight sits on the hard bin and is within 1e-3 of 1.
    {
      RandomBins rb = random_bins(rng);
      const double span = rb.bins.centers.maxCoeff() - rb.bins.centers.minCoeff();
      const double sigma = 1e-3 * (span > 0 ? span : 1.0);
      const IntervalSet set = feature_intervals(rb.bins);
      double x = 0.0;
      bool near_boundary = true;
      while (near_boundary) {
        x = uniform(rng, rb.lo, rb.hi);
        near_boundary = false;
        for (const auto& iv : set.ascending()) {
          if (std::isfinite(iv.upper) && std::abs(x - iv.upper) < 0.02 * rb.bins.scale * (span > 0 ? span : 1.0)) {
            near_boundary = true;
          }
        }
      }
      const Eigen::VectorXd w = fuzzy_bin(rb.bins.standardize(x), rb.bins.centers, sigma, 1e-8);
      Eigen::Index arg = 0;
      const double top = w.maxCoeff(&arg);
      const bool ok = arg == set.slot_of(x) && std::abs(top - 1.0) <= 1e-3;
      out.limit_failures += !ok;
    }
    // Round trip: hard bin index of a standardized value equals the slot of the reported interval.
    {
      const RandomBins rb = random_bins(rng);
      const double x = uniform(rng, rb.lo, rb.hi);
      const IntervalSet set = feature_intervals(rb.bins);
      const Eigen::Index by_centers = hard_bin_index(rb.bins.standardize(x), rb.bins.centers);
      Eigen::Index reported = -1;
      for (Eigen::Index s = 0; s < rb.bins.bins(); ++s) {
        if (set.by_slot[static_cast<std::size_t>(s)].contains(x)) reported = s;
      }
      out.roundtrip_failures += by_centers != reported;
    }
  }
  return out;
}

}  // namespace medic::testing

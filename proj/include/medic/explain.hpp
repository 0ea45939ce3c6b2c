#pragma once

#include "medic/binning.hpp"
#include "medic/network.hpp"
#include "medic/schema_data.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace medic {

enum class ConditionKind { interval, category };

/// One active slot of a prototype part: a continuous feature inside one of its
/// bin intervals, or a categorical feature equal to one value.
struct Condition {
  std::string feature;
  std::size_t feature_index = 0;
  ConditionKind kind = ConditionKind::interval;
  std::size_t slot = 0;  // position in the encoded vector
  std::size_t bin = 0;   // bin slot (interval) or vocabulary index (category)
  Interval interval;     // interval only
  std::string value;     // category only

  bool operator==(const Condition&) const = default;
};

/// Physiological limits used to close the unbounded ends of intervals.
using ClinicalBounds = std::map<std::string, std::pair<double, double>>;

/// "Bilirubin ∈ [0.79, 3.43)" or "Hepatomegaly = 0". With bounds, infinite
/// ends (and ends beyond the limits) are clamped for that feature.
std::string render(const Condition& c, const ClinicalBounds* bounds = nullptr);

/// Conditions joined with " ∧ ".
std::string render(std::span<const Condition> conditions, const ClinicalBounds* bounds = nullptr);

/// True when the raw feature row satisfies the condition.
bool satisfied_by(const Condition& c, std::span<const double> row, const IntervalSet& intervals);

struct PrototypeExplanation {
  std::size_t prototype_id = 0;
  Provenance provenance;
  std::vector<Condition> conditions;
  std::vector<double> class_weights;  // head column of this prototype
};

/// Conditions of prototype j: the hard-binned encoding of its provenance row
/// restricted to the mask row of its provenance part.
PrototypeExplanation decode_prototype(const Model& m, std::size_t j);

/// 1 / (1 + dist).
double similarity_from_distance(double dist);

struct Match {
  std::size_t prototype_id = 0;
  double similarity = 0.0;
  double distance = 0.0;
  std::size_t matched_part = 0;
  std::vector<Condition> conditions;
  std::vector<bool> shared;  // per condition: satisfied by the instance
};

struct InstanceExplanation {
  int predicted = 0;
  Eigen::VectorXd probs;
  std::vector<Match> matches;  // most similar first
};

/// Prototypes ranked by the pooled distances of the forward pass (ties to
/// the lower prototype id); the first min(top_k, n) are returned.
InstanceExplanation explain_instance(const Model& m, std::span<const double> row, std::size_t top_k);

struct ReportOptions {
  std::vector<std::size_t> instances;  // dataset rows to explain
  std::size_t top_k = 5;
  const ClinicalBounds* bounds = nullptr;
};

/// Writes into `dir`: intervals.csv/.txt, prototypes.json/.txt and, when
/// instances are requested, explanations.json/.txt. Returns the written paths.
std::vector<std::filesystem::path> export_report(const Model& m, const Dataset& d, const std::filesystem::path& dir,
                                                 const ReportOptions& opts = {});

/// Reads "feature,lower,upper" lines (header optional).
ClinicalBounds read_clinical_bounds(const std::filesystem::path& path);

}  // namespace medic

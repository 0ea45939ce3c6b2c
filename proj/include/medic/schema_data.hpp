#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace medic {

enum class ColumnRole { continuous, categorical, target };

struct Column {
  std::string name;
  ColumnRole role = ColumnRole::continuous;
  std::vector<std::string> vocab;  // categorical only; sorted, duplicate-free
  std::optional<double> impute;    // median (continuous) or vocab index of the mode

  bool operator==(const Column&) const = default;
};

/// Column declaration as written by the user. Roles are never inferred.
struct SchemaSpec {
  std::string target;
  std::vector<std::string> continuous;
  std::vector<std::string> categorical;
  std::vector<std::string> classes;  // optional declared class order
};

SchemaSpec read_schema_spec(const std::filesystem::path& path);
SchemaSpec parse_schema_spec(const std::string& json_text);

/// Typed description of a dataset. `columns` holds the features in file order
/// followed by the single target column.
struct FeatureSchema {
  std::vector<Column> columns;
  std::vector<std::string> classes;

  std::size_t feature_count() const { return columns.size() - 1; }
  std::size_t class_count() const { return classes.size(); }
  const Column& feature(std::size_t i) const { return columns[i]; }
  const Column& target() const { return columns.back(); }
  std::optional<std::size_t> find_feature(const std::string& name) const;

  /// Throws if the schema violates its structural invariants.
  void validate() const;

  bool operator==(const FeatureSchema&) const = default;
};

/// Raw cell values, one row per instance and one column per feature.
/// Continuous cells hold the parsed number, categorical cells the vocab index;
/// missing cells are NaN until imputed.
struct Dataset {
  FeatureSchema schema;
  Eigen::MatrixXd values;
  std::vector<int> labels;
  std::vector<std::size_t> row_ids;  // row position in the source file

  std::size_t rows() const { return labels.size(); }
  std::vector<std::size_t> class_counts() const;
  bool has_missing() const;
  Dataset subset(std::span<const std::size_t> idx) const;
};

/// NaN-aware equality of schema, values, labels and row ids.
bool operator==(const Dataset& a, const Dataset& b);

struct FoldSplit {
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
};

Dataset load_dataset(const std::filesystem::path& path, const SchemaSpec& spec);

/// Loads data against a fixed schema (e.g. one stored with a trained model):
/// the vocabularies and class list are taken as given and any value outside
/// them is an error.
Dataset load_dataset(const std::filesystem::path& path, const FeatureSchema& schema);

Dataset parse_dataset(const std::string& csv_text, const SchemaSpec& spec);
Dataset parse_dataset(const std::string& csv_text, const FeatureSchema& schema);

/// Per-feature imputation values computed on the given rows only.
std::vector<double> fit_imputation(const Dataset& d, std::span<const std::size_t> rows);

/// Fills missing cells with `impute` and records the values in the schema.
Dataset apply_imputation(Dataset d, std::span<const double> impute);

/// fit_imputation on every row followed by apply_imputation.
Dataset impute_missing(const Dataset& d);

std::vector<FoldSplit> stratified_kfold(const Dataset& d, int k, std::uint64_t seed);
std::vector<FoldSplit> stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed);

/// Stratified hold-out of roughly `fraction` of every class; a class keeps at
/// least one training row.
FoldSplit stratified_holdout(std::span<const int> labels, double fraction, std::uint64_t seed);

/// Writes the dataset back as CSV in the layout `load_dataset` reads.
void write_csv(const Dataset& d, const std::filesystem::path& path);
std::string to_csv(const Dataset& d);

SchemaSpec spec_of(const FeatureSchema& schema);

}  // namespace medic

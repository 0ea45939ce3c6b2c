#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

namespace medic {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> counts;

  explicit ConfusionMatrix(std::size_t classes = 0)
      : counts(Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>::Zero(static_cast<Eigen::Index>(classes),
                                                                         static_cast<Eigen::Index>(classes))) {}

  void add(int truth, int predicted) { ++counts(truth, predicted); }
  std::size_t classes() const { return static_cast<std::size_t>(counts.rows()); }
  long total() const { return counts.sum(); }
  /// Recall of every class; throws InputError naming the first empty class row.
  std::vector<double> recalls() const;
};

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, std::size_t classes);

/// Geometric mean of per-class recalls, (prod_k recall_k)^(1/c). For two
/// classes this is sqrt(sensitivity * specificity).
double gmean(const ConfusionMatrix& cm);

/// gmean(), or nullopt when some class has no instances.
std::optional<double> try_gmean(const ConfusionMatrix& cm);

}  // namespace medic

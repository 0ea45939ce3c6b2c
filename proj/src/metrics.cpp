#include "medic/metrics.hpp"

#include "medic/error.hpp"

#include <cmath>
#include <string>

namespace medic {

std::vector<double> ConfusionMatrix::recalls() const {
  std::vector<double> out(classes());
  for (Eigen::Index k = 0; k < counts.rows(); ++k) {
    const long row = counts.row(k).sum();
    if (row <= 0) throw InputError("class " + std::to_string(k) + " has no instances in the confusion matrix");
    out[static_cast<std::size_t>(k)] = static_cast<double>(counts(k, k)) / static_cast<double>(row);
  }
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, std::size_t classes) {
  if (truth.size() != predicted.size()) throw InputError("truth and prediction lengths differ");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

double gmean(const ConfusionMatrix& cm) {
  const auto r = cm.recalls();
  if (r.empty()) throw InputError("empty confusion matrix");
  double product = 1.0;
  for (double x : r) product *= x;
  if (r.size() == 2) return std::sqrt(product);
  return std::pow(product, 1.0 / static_cast<double>(r.size()));
}

std::optional<double> try_gmean(const ConfusionMatrix& cm) {
  for (Eigen::Index k = 0; k < cm.counts.rows(); ++k) {
    if (cm.counts.row(k).sum() <= 0) return std::nullopt;
  }
  return gmean(cm);
}

}  // namespace medic

#pragma once

#include "medic/binning.hpp"
#include "medic/eigen_util.hpp"
#include "medic/schema_data.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace medic {

/// p x d' patching masks. Real-valued while training the fuzzy network,
/// exactly {0, 1} once binarized.
struct PatchMasks {
  Eigen::MatrixXd weights;
  bool binarized = false;

  bool operator==(const PatchMasks& o) const {
    return binarized == o.binarized && same_values(weights, o.weights);
  }
};

/// Shared part encoder d' -> hidden (ReLU) -> h. Weights are stored
/// output-major so that a part embeds as w2 * relu(w1 * part + b1) + b2.
struct Extractor {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;

  Eigen::Index input_width() const { return w1.cols(); }
  Eigen::Index hidden_width() const { return w1.rows(); }
  Eigen::Index output_width() const { return w2.rows(); }
  bool operator==(const Extractor& o) const {
    return same_values(w1, o.w1) && same_values(b1, o.b1) && same_values(w2, o.w2) && same_values(b2, o.b2);
  }
};

/// The training part a prototype was copied from. `source` keeps the raw
/// feature values of that row so the prototype can be decoded without the
/// training data.
struct Provenance {
  std::size_t row = 0;
  std::size_t part = 0;
  std::vector<double> source;

  bool operator==(const Provenance&) const = default;
};

struct PrototypeSet {
  Eigen::MatrixXd z;  // n x h
  std::vector<std::optional<Provenance>> provenance;
  bool frozen = false;

  Eigen::Index count() const { return z.rows(); }
  bool operator==(const PrototypeSet& o) const {
    return frozen == o.frozen && provenance == o.provenance && same_values(z, o.z);
  }
};

/// Linear map from pooled prototype distances to class logits.
struct ClassifierHead {
  Eigen::MatrixXd w;  // c x n
  Eigen::VectorXd b;

  bool operator==(const ClassifierHead& o) const { return same_values(w, o.w) && same_values(b, o.b); }
};

struct Model {
  FeatureSchema schema;
  BinningParams bins;
  PatchMasks masks;
  Extractor extractor;
  PrototypeSet prototypes;
  ClassifierHead head;
  int stage = 0;  // last completed training stage

  EncodingLayout layout() const { return make_layout(schema, bins); }
  /// Throws unless every component agrees on d', p, h, n and c.
  void validate() const;
  bool operator==(const Model&) const = default;
};

struct Pooled {
  Eigen::VectorXd distance;              // n
  std::vector<Eigen::Index> best_part;   // n
};

struct ForwardTrace {
  EncodedInstance encoded;
  Eigen::MatrixXd parts;       // p x d'
  Eigen::MatrixXd embeddings;  // p x h
  Eigen::MatrixXd distances;   // p x n
  Eigen::VectorXd pooled;      // n
  std::vector<Eigen::Index> best_part;
  Eigen::VectorXd probs;       // c
};

/// Row i is mask row i multiplied elementwise with the encoded vector.
template <typename DerivedE, typename DerivedM>
Eigen::Matrix<typename DerivedE::Scalar, Eigen::Dynamic, Eigen::Dynamic> extract_parts(
    const Eigen::MatrixBase<DerivedE>& encoded, const Eigen::MatrixBase<DerivedM>& masks) {
  if (masks.cols() != encoded.size()) throw InputError("mask width does not match the encoded width");
  return (masks.array().rowwise() * encoded.transpose().array()).matrix();
}

/// Embeds a single part. Every embedding in the library goes through this
/// function, so identical parts always give bit-identical embeddings.
inline Eigen::VectorXd embed_part(const Eigen::VectorXd& part, const Extractor& ex) {
  Eigen::VectorXd hidden = ex.w1 * part + ex.b1;
  hidden = hidden.cwiseMax(0.0);
  return ex.w2 * hidden + ex.b2;
}

/// Squared Euclidean distances between embedding rows and prototype rows.
template <typename DerivedE, typename DerivedZ>
Eigen::Matrix<typename DerivedE::Scalar, Eigen::Dynamic, Eigen::Dynamic> prototype_distances(
    const Eigen::MatrixBase<DerivedE>& embeddings, const Eigen::MatrixBase<DerivedZ>& prototypes) {
  using Scalar = typename DerivedE::Scalar;
  if (embeddings.cols() != prototypes.cols()) throw InputError("embedding width does not match prototype width");
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> d(embeddings.rows(), prototypes.rows());
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    for (Eigen::Index j = 0; j < prototypes.rows(); ++j) {
      d(i, j) = (embeddings.row(i) - prototypes.row(j)).squaredNorm();
    }
  }
  return d;
}

/// Column-wise minimum over parts; ties go to the lowest part index.
template <typename Derived>
Pooled pool_min(const Eigen::MatrixBase<Derived>& distances) {
  if (distances.rows() < 1) throw InputError("pooling needs at least one part");
  Pooled out;
  out.distance.resize(distances.cols());
  out.best_part.resize(static_cast<std::size_t>(distances.cols()));
  for (Eigen::Index j = 0; j < distances.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < distances.rows(); ++i) {
      if (distances(i, j) < distances(best, j)) best = i;
    }
    out.distance(j) = distances(best, j);
    out.best_part[static_cast<std::size_t>(j)] = best;
  }
  return out;
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

template <typename Derived>
Eigen::VectorXd classify(const Eigen::MatrixBase<Derived>& pooled, const ClassifierHead& head) {
  if (head.w.cols() != pooled.size()) throw InputError("head width does not match prototype count");
  return softmax((head.w * pooled + head.b).eval());
}

/// Full pass encode -> parts -> embeddings -> distances -> pooling -> head.
ForwardTrace forward(const Model& model, std::span<const double> row);

/// Same as forward() for an already encoded instance (reuses precomputed intervals).
ForwardTrace forward_encoded(const Model& model, const Eigen::VectorXd& encoded);

/// argmax of the probabilities, ties to the lower class index.
int predict_class(const Eigen::VectorXd& probs);

}  // namespace medic

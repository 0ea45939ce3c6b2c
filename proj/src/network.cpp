#include "medic/network.hpp"

#include <string>

namespace medic {

void Model::validate() const {
  const auto layout = make_layout(schema, bins);
  const auto dprime = static_cast<Eigen::Index>(layout.width);
  auto fail = [](const std::string& what) { throw InputError("inconsistent model: " + what); };
  if (masks.weights.cols() != dprime) fail("mask width != encoded width");
  if (masks.weights.rows() < 1) fail("no parts");
  if (extractor.w1.cols() != dprime) fail("extractor input width != encoded width");
  if (extractor.b1.size() != extractor.w1.rows() || extractor.w2.cols() != extractor.w1.rows()) {
    fail("extractor hidden width");
  }
  if (extractor.b2.size() != extractor.w2.rows()) fail("extractor output width");
  if (prototypes.z.cols() != extractor.output_width()) fail("prototype width != embedding width");
  if (prototypes.provenance.size() != static_cast<std::size_t>(prototypes.z.rows())) fail("provenance count");
  if (head.w.cols() != prototypes.z.rows()) fail("head width != prototype count");
  if (head.w.rows() != static_cast<Eigen::Index>(schema.class_count()) || head.b.size() != head.w.rows()) {
    fail("head rows != class count");
  }
  if (stage < 0 || stage > 3) fail("stage marker out of range");
}

ForwardTrace forward_encoded(const Model& model, const Eigen::VectorXd& encoded) {
  ForwardTrace t;
  t.parts = extract_parts(encoded, model.masks.weights);
  t.embeddings.resize(t.parts.rows(), model.extractor.output_width());
  for (Eigen::Index i = 0; i < t.parts.rows(); ++i) {
    const Eigen::VectorXd part = t.parts.row(i).transpose();
    t.embeddings.row(i) = embed_part(part, model.extractor).transpose();
  }
  t.distances = prototype_distances(t.embeddings, model.prototypes.z);
  Pooled pooled = pool_min(t.distances);
  t.pooled = std::move(pooled.distance);
  t.best_part = std::move(pooled.best_part);
  t.probs = classify(t.pooled, model.head);
  t.encoded.vector = encoded;
  return t;
}

ForwardTrace forward(const Model& model, std::span<const double> row) {
  EncodedInstance e = encode_instance(row, model.schema, model.bins);
  ForwardTrace t = forward_encoded(model, e.vector);
  t.encoded = std::move(e);
  return t;
}

int predict_class(const Eigen::VectorXd& probs) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < probs.size(); ++k) {
    if (probs(k) > probs(best)) best = k;
  }
  return static_cast<int>(best);
}

}  // namespace medic

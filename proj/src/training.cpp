#include "medic/training.hpp"

#include "medic/error.hpp"
#include "medic/metrics.hpp"
#include "medic/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace medic {

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { throw InputError("invalid training config: " + what); };
  if (!(lambda_sparsity >= 0.0)) bad("lambda_sparsity must be >= 0");
  if (!(lambda_diversity >= 0.0)) bad("lambda_diversity must be >= 0");
  if (!(learning_rate > 0.0)) bad("learning_rate must be > 0");
  if (batch_size < 1) bad("batch_size must be positive");
  if (epochs_stage1 < 0 || epochs_stage2 < 0 || epochs_stage3 < 0) bad("epoch counts must be >= 0");
  if (patience < 1) bad("patience must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) bad("validation_fraction must be in [0, 1)");
  if (bins < 1) bad("bins must be >= 1");
  if (parts < 1) bad("parts must be >= 1");
  if (embedding_dim < 1) bad("embedding_dim must be >= 1");
  if (prototypes < 1) bad("prototypes must be >= 1");
  if (!(prototype_init_scale > 0.0)) bad("prototype_init_scale must be > 0");
}

Gradients Gradients::zeros_like(const Model& m) {
  Gradients g;
  for (const auto& f : m.bins.features) g.centers.push_back(Eigen::VectorXd::Zero(f.centers.size()));
  g.bandwidth_raw = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.bins.features.size()));
  g.masks = Eigen::MatrixXd::Zero(m.masks.weights.rows(), m.masks.weights.cols());
  g.w1 = Eigen::MatrixXd::Zero(m.extractor.w1.rows(), m.extractor.w1.cols());
  g.b1 = Eigen::VectorXd::Zero(m.extractor.b1.size());
  g.w2 = Eigen::MatrixXd::Zero(m.extractor.w2.rows(), m.extractor.w2.cols());
  g.b2 = Eigen::VectorXd::Zero(m.extractor.b2.size());
  g.prototypes = Eigen::MatrixXd::Zero(m.prototypes.z.rows(), m.prototypes.z.cols());
  g.head_w = Eigen::MatrixXd::Zero(m.head.w.rows(), m.head.w.cols());
  g.head_b = Eigen::VectorXd::Zero(m.head.b.size());
  return g;
}

void Gradients::set_zero() {
  for (auto& c : centers) c.setZero();
  bandwidth_raw.setZero();
  masks.setZero();
  w1.setZero();
  b1.setZero();
  w2.setZero();
  b2.setZero();
  prototypes.setZero();
  head_w.setZero();
  head_b.setZero();
}

std::vector<ParamSlot> parameter_slots(Model& m, Gradients& g, unsigned groups) {
  std::vector<ParamSlot> out;
  auto add = [&](ParamGroup group, auto& value, auto& grad) {
    if ((groups & group) && value.size() > 0) {
      out.push_back({group, value.data(), grad.data(), static_cast<std::size_t>(value.size())});
    }
  };
  for (std::size_t f = 0; f < m.bins.features.size(); ++f) add(kBinCenters, m.bins.features[f].centers, g.centers[f]);
  if (groups & kBandwidth) {
    for (std::size_t f = 0; f < m.bins.features.size(); ++f) {
      out.push_back({kBandwidth, &m.bins.features[f].bandwidth_raw, g.bandwidth_raw.data() + f, 1});
    }
  }
  add(kMasks, m.masks.weights, g.masks);
  add(kExtractor, m.extractor.w1, g.w1);
  add(kExtractor, m.extractor.b1, g.b1);
  add(kExtractor, m.extractor.w2, g.w2);
  add(kExtractor, m.extractor.b2, g.b2);
  add(kPrototypes, m.prototypes.z, g.prototypes);
  add(kHead, m.head.w, g.head_w);
  add(kHead, m.head.b, g.head_b);
  return out;
}

std::vector<double> inverse_frequency_weights(std::span<const int> labels, std::size_t classes) {
  std::vector<double> counts(classes, 0.0);
  for (int y : labels) counts[static_cast<std::size_t>(y)] += 1.0;
  std::size_t present = 0;
  for (double c : counts) present += c > 0.0;
  std::vector<double> w(classes, 0.0);
  for (std::size_t k = 0; k < classes; ++k) {
    if (counts[k] > 0.0) w[k] = static_cast<double>(labels.size()) / (static_cast<double>(present) * counts[k]);
  }
  return w;
}

namespace {

// Reusable per-instance buffers.
struct Scratch {
  Eigen::VectorXd x;       // encoded instance
  Eigen::MatrixXd pre;     // hidden pre-activations, one column per part
  Eigen::MatrixXd hidden;  // post-ReLU
  Eigen::MatrixXd emb;     // embeddings, one column per part
  Eigen::MatrixXd dist;    // p x n
  Eigen::MatrixXd d_emb;   // h x p
  Eigen::VectorXd dx;
  std::vector<char> part_touched;
  Eigen::VectorXd part;
};

void fuzzy_encode(const Model& m, const EncodingLayout& layout, const Eigen::MatrixXd& rows, Eigen::Index r,
                  Eigen::VectorXd& x) {
  x.setZero(static_cast<Eigen::Index>(layout.width));
  for (const auto& s : layout.segments) {
    const double v = rows(r, static_cast<Eigen::Index>(s.feature));
    const auto off = static_cast<Eigen::Index>(s.offset);
    if (s.role == ColumnRole::continuous) {
      const FeatureBins& fb = m.bins.features[s.bins_index];
      x.segment(off, fb.bins()) = fuzzy_bin(fb.standardize(v), fb, m.bins.eps);
    } else {
      const auto k = static_cast<Eigen::Index>(v);
      if (!(v >= 0) || k >= static_cast<Eigen::Index>(s.width)) throw InputError("category index out of range");
      x(off + k) = 1.0;
    }
  }
}

double regularizers(const Model& m, const TrainConfig& cfg, LossBreakdown& lb, Gradients* grad, unsigned groups) {
  const auto& M = m.masks.weights;
  const double mask_scale = cfg.lambda_sparsity / static_cast<double>(M.size());
  lb.sparsity = mask_scale * M.cwiseAbs().sum();
  if (grad && (groups & kMasks)) {
    grad->masks += mask_scale * M.unaryExpr([](double v) { return static_cast<double>((v > 0) - (v < 0)); });
  }

  const auto& Z = m.prototypes.z;
  const Eigen::Index n = Z.rows();
  lb.diversity = 0.0;
  if (n >= 2 && cfg.lambda_diversity > 0.0) {
    const double div_scale = cfg.lambda_diversity / static_cast<double>(n * (n - 1));
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const Eigen::RowVectorXd diff = Z.row(i) - Z.row(j);
        const double norm = diff.norm();
        sum += 2.0 * norm;  // both (i, j) and (j, i)
        if (grad && (groups & kPrototypes) && norm > 0.0) {
          grad->prototypes.row(i) -= div_scale * 2.0 * diff / norm;
          grad->prototypes.row(j) += div_scale * 2.0 * diff / norm;
        }
      }
    }
    lb.diversity = -div_scale * sum;
  }
  return lb.sparsity + lb.diversity;
}

// Cross-entropy part of the objective over rows `idx`. Encodings come from
// `encoded` (one column per row of `rows`) when given, otherwise they are
// computed with fuzzy binning from the raw rows.
double cross_entropy(const Model& m, const EncodingLayout& layout, const Eigen::MatrixXd& rows,
                     const Eigen::MatrixXd* encoded, std::span<const std::size_t> idx, std::span<const int> labels,
                     std::span<const double> class_weights, Gradients* grad, unsigned groups, Scratch& s) {
  const auto& M = m.masks.weights;
  const auto& ex = m.extractor;
  const auto& Z = m.prototypes.z;
  const Eigen::Index p = M.rows();
  const Eigen::Index n = Z.rows();
  const Eigen::Index h = Z.cols();
  const Eigen::Index hid = ex.w1.rows();
  const double inv_batch = 1.0 / static_cast<double>(idx.size());
  const bool need_input_grad = grad && (groups & (kMasks | kBinCenters | kBandwidth));
  const bool fuzzy_grad = grad && encoded == nullptr && (groups & (kBinCenters | kBandwidth));

  s.pre.resize(hid, p);
  s.hidden.resize(hid, p);
  s.emb.resize(h, p);
  s.dist.resize(p, n);
  s.d_emb.resize(h, p);
  s.part_touched.assign(static_cast<std::size_t>(p), 0);

  double ce = 0.0;
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto r = static_cast<Eigen::Index>(idx[b]);
    if (encoded) {
      s.x = encoded->col(r);
    } else {
      fuzzy_encode(m, layout, rows, r, s.x);
    }
    for (Eigen::Index i = 0; i < p; ++i) {
      s.part = M.row(i).transpose().cwiseProduct(s.x);
      s.pre.col(i) = ex.w1 * s.part + ex.b1;
      s.hidden.col(i) = s.pre.col(i).cwiseMax(0.0);
      s.emb.col(i) = ex.w2 * s.hidden.col(i) + ex.b2;
      for (Eigen::Index j = 0; j < n; ++j) s.dist(i, j) = (s.emb.col(i).transpose() - Z.row(j)).squaredNorm();
    }
    const Pooled pooled = pool_min(s.dist);
    const Eigen::VectorXd probs = classify(pooled.distance, m.head);
    const int y = labels[idx[b]];
    const double wy = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)];
    ce += -wy * std::log(std::max(probs(y), std::numeric_limits<double>::min()));

    if (!grad) continue;
    Eigen::VectorXd d_logit = probs;
    d_logit(y) -= 1.0;
    d_logit *= wy * inv_batch;
    if (groups & kHead) {
      grad->head_w.noalias() += d_logit * pooled.distance.transpose();
      grad->head_b += d_logit;
    }
    if (!(groups & (kPrototypes | kExtractor | kMasks | kBinCenters | kBandwidth))) continue;
    const Eigen::VectorXd d_pooled = m.head.w.transpose() * d_logit;

    s.d_emb.setZero();
    std::fill(s.part_touched.begin(), s.part_touched.end(), 0);
    for (Eigen::Index j = 0; j < n; ++j) {
      const Eigen::Index i = pooled.best_part[static_cast<std::size_t>(j)];
      const Eigen::VectorXd diff = s.emb.col(i) - Z.row(j).transpose();
      s.d_emb.col(i) += 2.0 * d_pooled(j) * diff;
      s.part_touched[static_cast<std::size_t>(i)] = 1;
      if (groups & kPrototypes) grad->prototypes.row(j) -= 2.0 * d_pooled(j) * diff.transpose();
    }
    if (!(groups & (kExtractor | kMasks | kBinCenters | kBandwidth))) continue;

    if (need_input_grad) s.dx.setZero(s.x.size());
    for (Eigen::Index i = 0; i < p; ++i) {
      if (!s.part_touched[static_cast<std::size_t>(i)]) continue;
      const Eigen::VectorXd d_hidden = ex.w2.transpose() * s.d_emb.col(i);
      const Eigen::VectorXd d_pre = (s.pre.col(i).array() > 0.0).select(d_hidden, 0.0);
      if (groups & kExtractor) {
        s.part = M.row(i).transpose().cwiseProduct(s.x);
        grad->w2.noalias() += s.d_emb.col(i) * s.hidden.col(i).transpose();
        grad->b2 += s.d_emb.col(i);
        grad->w1.noalias() += d_pre * s.part.transpose();
        grad->b1 += d_pre;
      }
      if (need_input_grad) {
        const Eigen::VectorXd d_part = ex.w1.transpose() * d_pre;
        if (groups & kMasks) grad->masks.row(i) += d_part.cwiseProduct(s.x).transpose();
        s.dx += d_part.cwiseProduct(M.row(i).transpose());
      }
    }
    if (fuzzy_grad) {
      for (const auto& seg : layout.segments) {
        if (seg.role != ColumnRole::continuous) continue;
        const FeatureBins& fb = m.bins.features[seg.bins_index];
        const double z = fb.standardize(rows(r, static_cast<Eigen::Index>(seg.feature)));
        Eigen::VectorXd d_centers = Eigen::VectorXd::Zero(fb.bins());
        double d_raw = 0.0;
        fuzzy_bin_backward(z, fb, m.bins.eps, s.dx.segment(static_cast<Eigen::Index>(seg.offset), fb.bins()),
                           d_centers, d_raw);
        if (groups & kBinCenters) grad->centers[seg.bins_index] += d_centers;
        if (groups & kBandwidth) grad->bandwidth_raw(static_cast<Eigen::Index>(seg.bins_index)) += d_raw;
      }
    }
  }
  return ce * inv_batch;
}

LossBreakdown batch_loss(const Model& m, const EncodingLayout& layout, const Eigen::MatrixXd& rows,
                         const Eigen::MatrixXd* encoded, std::span<const std::size_t> idx, std::span<const int> labels,
                         std::span<const double> class_weights, const TrainConfig& cfg, Gradients* grad,
                         unsigned groups, Scratch& s) {
  LossBreakdown lb;
  lb.ce = cross_entropy(m, layout, rows, encoded, idx, labels, class_weights, grad, groups, s);
  regularizers(m, cfg, lb, grad, groups);
  lb.total = lb.ce + lb.sparsity + lb.diversity;
  return lb;
}

Eigen::MatrixXd hard_encodings(const Model& m, const EncodingLayout& layout, const Eigen::MatrixXd& rows) {
  const auto intervals = all_intervals(m.bins);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(layout.width), rows.rows());
  std::vector<double> row(static_cast<std::size_t>(rows.cols()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index f = 0; f < rows.cols(); ++f) row[static_cast<std::size_t>(f)] = rows(r, f);
    encode_into(row, m.schema, layout, m.bins, intervals, out.col(r));
  }
  return out;
}

class Adam {
 public:
  explicit Adam(double lr) : lr_(lr) {}

  void step(const std::vector<ParamSlot>& slots) {
    if (m_.empty()) {
      for (const auto& s : slots) {
        m_.emplace_back(s.size, 0.0);
        v_.emplace_back(s.size, 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < slots.size(); ++k) {
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < slots[k].size; ++i) {
        const double g = slots[k].grad[i];
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
        slots[k].value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

void check_finite(const LossBreakdown& lb, int stage, int epoch) {
  if (std::isfinite(lb.total)) return;
  std::ostringstream msg;
  msg << "non-finite loss in stage " << stage << " epoch " << epoch << ": ce=" << lb.ce
      << " sparsity=" << lb.sparsity << " diversity=" << lb.diversity;
  throw TrainingError(msg.str());
}

struct Split {
  std::vector<std::size_t> fit;
  std::vector<std::size_t> val;
  std::vector<double> weights;
};

Split make_split(const Dataset& d, const TrainConfig& cfg) {
  if (d.rows() == 0) throw TrainingError("empty training set");
  if (d.has_missing()) throw InputError("training data must be imputed");
  const FoldSplit fs = validation_split(d, cfg);
  Split s{fs.train_idx, fs.test_idx, {}};
  if (cfg.class_weighting) {
    std::vector<int> fit_labels;
    for (auto i : s.fit) fit_labels.push_back(d.labels[i]);
    s.weights = inverse_frequency_weights(fit_labels, d.schema.class_count());
  }
  return s;
}

double validation_gmean(const Model& m, const EncodingLayout& layout, const Eigen::MatrixXd& rows,
                        const Eigen::MatrixXd* encoded, std::span<const std::size_t> idx, std::span<const int> labels,
                        Scratch& s) {
  std::vector<int> truth;
  std::vector<int> pred;
  for (auto r : idx) {
    if (encoded) {
      s.x = encoded->col(static_cast<Eigen::Index>(r));
    } else {
      fuzzy_encode(m, layout, rows, static_cast<Eigen::Index>(r), s.x);
    }
    pred.push_back(predict_class(forward_encoded(m, s.x).probs));
    truth.push_back(labels[r]);
  }
  auto g = try_gmean(confusion_matrix(truth, pred, m.schema.class_count()));
  return g ? *g : std::numeric_limits<double>::quiet_NaN();
}

// Minibatch Adam on `groups` with early stopping on validation loss; the
// parameters of the best validation epoch are kept.
void run_stage(Model& m, int stage, int max_epochs, unsigned groups, const Dataset& d,
               const Eigen::MatrixXd* encoded, const Split& split, const TrainConfig& cfg,
               std::vector<EpochRecord>& log) {
  const EncodingLayout layout = m.layout();
  Rng rng(derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(stage)));
  Adam adam(cfg.learning_rate);
  Gradients grad = Gradients::zeros_like(m);
  Scratch s;
  const auto slots = parameter_slots(m, grad, groups);
  const std::span<const int> labels(d.labels);
  std::vector<std::size_t> order = split.fit;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  Model best = m;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = stage;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(batch, order.size() - start));
      grad.set_zero();
      const LossBreakdown lb = batch_loss(m, layout, d.values, encoded, idx, labels, split.weights, cfg, &grad,
                                          groups, s);
      check_finite(lb, stage, epoch);
      const double share = static_cast<double>(idx.size()) / static_cast<double>(order.size());
      rec.loss.ce += share * lb.ce;
      rec.loss.sparsity += share * lb.sparsity;
      rec.loss.diversity += share * lb.diversity;
      rec.loss.total += share * lb.total;
      adam.step(slots);
    }

    const auto& monitor = split.val.empty() ? split.fit : split.val;
    const LossBreakdown vl = batch_loss(m, layout, d.values, encoded, monitor, labels, split.weights, cfg, nullptr,
                                        groups, s);
    check_finite(vl, stage, epoch);
    rec.val_loss = split.val.empty() ? std::numeric_limits<double>::quiet_NaN() : vl.total;
    rec.val_gmean = split.val.empty() ? std::numeric_limits<double>::quiet_NaN()
                                      : validation_gmean(m, layout, d.values, encoded, split.val, labels, s);
    log.push_back(rec);

    if (vl.ce < best_val) {
      best_val = vl.ce;
      best = m;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (max_epochs > 0) m = std::move(best);
}

}  // namespace

LossBreakdown loss_total(const Model& m, const Eigen::MatrixXd& rows, std::span<const int> labels,
                         const TrainConfig& cfg, Gradients* grad, std::span<const double> class_weights) {
  if (rows.rows() == 0 || labels.size() != static_cast<std::size_t>(rows.rows())) {
    throw InputError("loss_total needs a non-empty batch with one label per row");
  }
  const EncodingLayout layout = m.layout();
  std::vector<std::size_t> idx(labels.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Scratch s;
  if (m.bins.mode == BinMode::hard) {
    const Eigen::MatrixXd enc = hard_encodings(m, layout, rows);
    return batch_loss(m, layout, rows, &enc, idx, labels, class_weights, cfg, grad, kAllParams, s);
  }
  return batch_loss(m, layout, rows, nullptr, idx, labels, class_weights, cfg, grad, kAllParams, s);
}

FoldSplit validation_split(const Dataset& d, const TrainConfig& cfg) {
  if (cfg.validation_fraction <= 0.0) {
    FoldSplit s;
    s.train_idx.resize(d.rows());
    std::iota(s.train_idx.begin(), s.train_idx.end(), std::size_t{0});
    return s;
  }
  return stratified_holdout(d.labels, cfg.validation_fraction, derive_seed(cfg.seed, 1));
}

StageResult initialize_model(const Dataset& d, const TrainConfig& cfg) {
  cfg.validate();
  if (d.rows() == 0) throw TrainingError("empty training set");
  StageResult out;
  BinningInit bi = init_binning(d, cfg.bins);
  out.warnings = std::move(bi.warnings);

  Model& m = out.model;
  m.schema = d.schema;
  m.bins = std::move(bi.params);
  m.bins.mode = BinMode::fuzzy;
  const auto dprime = static_cast<Eigen::Index>(m.layout().width);
  const Eigen::Index p = cfg.parts;
  const Eigen::Index h = cfg.embedding_dim;
  const Eigen::Index hid = 2 * h;
  const Eigen::Index n = cfg.prototypes;
  const auto c = static_cast<Eigen::Index>(d.schema.class_count());

  Rng rng(derive_seed(cfg.seed, 2));
  auto fill = [&](Eigen::MatrixXd& a, Eigen::Index rows, Eigen::Index cols, auto draw) {
    a.resize(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) a(i, j) = draw();
    }
  };
  fill(m.masks.weights, p, dprime, [&] { return uniform01(rng); });
  const double s1 = std::sqrt(2.0 / static_cast<double>(dprime));
  const double s2 = std::sqrt(1.0 / static_cast<double>(hid));
  fill(m.extractor.w1, hid, dprime, [&] { return s1 * standard_normal(rng); });
  m.extractor.b1 = Eigen::VectorXd::Zero(hid);
  fill(m.extractor.w2, h, hid, [&] { return s2 * standard_normal(rng); });
  m.extractor.b2 = Eigen::VectorXd::Zero(h);
  fill(m.prototypes.z, n, h, [&] { return cfg.prototype_init_scale * standard_normal(rng); });
  m.prototypes.provenance.assign(static_cast<std::size_t>(n), std::nullopt);
  const double sh = 1.0 / std::sqrt(static_cast<double>(n));
  fill(m.head.w, c, n, [&] { return sh * standard_normal(rng); });
  m.head.b = Eigen::VectorXd::Zero(c);
  m.stage = 0;

  if (n < 2 && cfg.lambda_diversity > 0.0) {
    out.warnings.push_back("fewer than two prototypes: diversity term is defined as 0");
  }
  m.validate();
  return out;
}

StageResult train_stage1(const Dataset& d, Model model, const TrainConfig& cfg) {
  cfg.validate();
  StageResult out;
  const Split split = make_split(d, cfg);
  model.bins.mode = BinMode::fuzzy;
  run_stage(model, 1, cfg.epochs_stage1, kAllParams, d, nullptr, split, cfg, out.log);
  model.stage = 1;
  out.model = std::move(model);
  return out;
}

StageResult train_stage1(const Dataset& d, const TrainConfig& cfg) {
  StageResult init = initialize_model(d, cfg);
  StageResult out = train_stage1(d, std::move(init.model), cfg);
  out.warnings.insert(out.warnings.begin(), init.warnings.begin(), init.warnings.end());
  return out;
}

Eigen::MatrixXd binarize_masks(const Eigen::MatrixXd& masks) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(masks.rows(), masks.cols());
  for (Eigen::Index i = 0; i < masks.rows(); ++i) {
    const double peak = masks.row(i).cwiseAbs().maxCoeff();
    if (peak == 0.0) {
      out(i, 0) = 1.0;
      continue;
    }
    const double threshold = 0.5 * peak;
    for (Eigen::Index j = 0; j < masks.cols(); ++j) out(i, j) = std::abs(masks(i, j)) >= threshold ? 1.0 : 0.0;
  }
  return out;
}

StageResult train_stage2(const Dataset& d, Model model, const TrainConfig& cfg) {
  cfg.validate();
  if (model.stage < 1) throw TrainingError("stage 2 requires a stage 1 model");
  if (!model.masks.binarized) {
    model.masks.weights = binarize_masks(model.masks.weights);
    model.masks.binarized = true;
  }
  model.bins.mode = BinMode::hard;
  StageResult out;
  const Split split = make_split(d, cfg);
  const Eigen::MatrixXd enc = hard_encodings(model, model.layout(), d.values);
  run_stage(model, 2, cfg.epochs_stage2, kExtractor | kPrototypes | kHead, d, &enc, split, cfg, out.log);
  model.stage = 2;
  out.model = std::move(model);
  return out;
}

Model project_prototypes(const Dataset& d, Model model) {
  if (d.rows() == 0) throw TrainingError("cannot project prototypes onto an empty training set");
  if (model.bins.mode != BinMode::hard || !model.masks.binarized) {
    throw TrainingError("prototype projection requires a stage 2 model");
  }
  const EncodingLayout layout = model.layout();
  const Eigen::MatrixXd enc = hard_encodings(model, layout, d.values);
  const Eigen::Index p = model.masks.weights.rows();
  const Eigen::Index n = model.prototypes.z.rows();

  // Embeddings of every (row, part), row-major. Empty parts are skipped
  // unless nothing else is available.
  Eigen::MatrixXd emb(model.prototypes.z.cols(), static_cast<Eigen::Index>(d.rows()) * p);
  std::vector<char> empty(static_cast<std::size_t>(emb.cols()));
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(d.rows()); ++r) {
    for (Eigen::Index i = 0; i < p; ++i) {
      const Eigen::VectorXd part = model.masks.weights.row(i).transpose().cwiseProduct(enc.col(r));
      emb.col(r * p + i) = embed_part(part, model.extractor);
      empty[static_cast<std::size_t>(r * p + i)] = part.isZero(0.0);
    }
  }
  const bool allow_empty = std::all_of(empty.begin(), empty.end(), [](char e) { return e != 0; });
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < emb.cols(); ++k) {
      if (empty[static_cast<std::size_t>(k)] && !allow_empty) continue;
      const double dist = (emb.col(k).transpose() - model.prototypes.z.row(j)).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = k;
      }
    }
    model.prototypes.z.row(j) = emb.col(best).transpose();
    const auto row = static_cast<std::size_t>(best / p);
    Provenance prov;
    prov.row = d.row_ids[row];
    prov.part = static_cast<std::size_t>(best % p);
    prov.source.resize(d.schema.feature_count());
    for (std::size_t f = 0; f < prov.source.size(); ++f) {
      prov.source[f] = d.values(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(f));
    }
    model.prototypes.provenance[static_cast<std::size_t>(j)] = std::move(prov);
  }
  model.prototypes.frozen = true;
  return model;
}

StageResult train_stage3(const Dataset& d, Model model, const TrainConfig& cfg) {
  cfg.validate();
  if (!model.prototypes.frozen ||
      std::any_of(model.prototypes.provenance.begin(), model.prototypes.provenance.end(),
                  [](const auto& p) { return !p.has_value(); })) {
    throw TrainingError("stage 3 requires projected prototypes");
  }
  StageResult out;
  const Split split = make_split(d, cfg);
  const Eigen::MatrixXd enc = hard_encodings(model, model.layout(), d.values);
  run_stage(model, 3, cfg.epochs_stage3, kHead, d, &enc, split, cfg, out.log);
  model.stage = 3;
  out.model = std::move(model);
  return out;
}

StageResult train_model(const Dataset& d, const TrainConfig& cfg) {
  StageResult s1 = train_stage1(d, cfg);
  StageResult s2 = train_stage2(d, std::move(s1.model), cfg);
  Model projected = project_prototypes(d, std::move(s2.model));
  StageResult s3 = train_stage3(d, std::move(projected), cfg);

  StageResult out;
  out.model = std::move(s3.model);
  out.warnings = std::move(s1.warnings);
  out.log = std::move(s1.log);
  out.log.insert(out.log.end(), s2.log.begin(), s2.log.end());
  out.log.insert(out.log.end(), s3.log.begin(), s3.log.end());
  return out;
}

std::size_t count_unique_prototypes(const Model& m) {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& p : m.prototypes.provenance) {
    if (!p) throw InputError("stage 3 required");
    seen.emplace(p->row, p->part);
  }
  return seen.size();
}

}  // namespace medic

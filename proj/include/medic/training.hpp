#pragma once

#include "medic/network.hpp"
#include "medic/schema_data.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace medic {

struct TrainConfig {
  double lambda_sparsity = 0.1;
  double lambda_diversity = 0.01;
  double learning_rate = 0.01;
  int batch_size = 32;
  int epochs_stage1 = 500;
  int epochs_stage2 = 100;
  int epochs_stage3 = 50;
  int patience = 20;
  double validation_fraction = 0.2;
  bool class_weighting = true;  // inverse class frequency in the cross-entropy
  int bins = 3;                 // K
  int parts = 16;               // p
  int embedding_dim = 8;        // h; the extractor's hidden layer has 2h units
  int prototypes = 32;          // n
  double prototype_init_scale = 0.1;
  std::uint64_t seed = 0;

  /// Throws InputError on out-of-range values.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct LossBreakdown {
  double ce = 0.0;
  double sparsity = 0.0;
  double diversity = 0.0;  // <= 0
  double total = 0.0;
};

/// Parameter groups, combinable as a bit set.
enum ParamGroup : unsigned {
  kBinCenters = 1u << 0,
  kBandwidth = 1u << 1,
  kMasks = 1u << 2,
  kExtractor = 1u << 3,
  kPrototypes = 1u << 4,
  kHead = 1u << 5,
  kAllParams = (1u << 6) - 1,
};

/// Same layout as the trainable parameters of a Model.
struct Gradients {
  std::vector<Eigen::VectorXd> centers;
  Eigen::VectorXd bandwidth_raw;
  Eigen::MatrixXd masks;
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
  Eigen::MatrixXd prototypes;
  Eigen::MatrixXd head_w;
  Eigen::VectorXd head_b;

  static Gradients zeros_like(const Model& m);
  void set_zero();
};

/// A contiguous run of parameters and the matching gradient entries.
struct ParamSlot {
  ParamGroup group;
  double* value;
  double* grad;
  std::size_t size;
};

std::vector<ParamSlot> parameter_slots(Model& m, Gradients& g, unsigned groups = kAllParams);

/// Cross-entropy plus mask sparsity plus prototype diversity on a batch of
/// raw (imputed) feature rows, encoded according to the model's binning
/// mode. With `grad` set, the exact gradient is accumulated into it.
/// `class_weights` (optional, one per class) weights the cross-entropy terms.
LossBreakdown loss_total(const Model& m, const Eigen::MatrixXd& rows, std::span<const int> labels,
                         const TrainConfig& cfg, Gradients* grad = nullptr,
                         std::span<const double> class_weights = {});

/// N / (c * count_k) for every class present in `labels`, 0 for absent ones.
std::vector<double> inverse_frequency_weights(std::span<const int> labels, std::size_t classes);

struct EpochRecord {
  int epoch = 0;
  int stage = 0;
  LossBreakdown loss;     // mean over the epoch's batches
  double val_loss = 0.0;  // NaN when there is no validation split
  double val_gmean = 0.0; // NaN when undefined
};

struct StageResult {
  Model model;
  std::vector<EpochRecord> log;
  std::vector<std::string> warnings;
};

/// Fresh model with quantile-initialized bins, uniform [0,1) masks, random
/// extractor/head and Gaussian prototypes. Standardization and bins use the
/// rows of `d` only.
StageResult initialize_model(const Dataset& d, const TrainConfig& cfg);

/// End-to-end training with fuzzy binning.
StageResult train_stage1(const Dataset& d, const TrainConfig& cfg);
StageResult train_stage1(const Dataset& d, Model model, const TrainConfig& cfg);

/// Per row: entries with |m| >= 0.5 * max|m| become 1, the rest 0. An all-zero
/// row keeps a single 1 at its first position.
Eigen::MatrixXd binarize_masks(const Eigen::MatrixXd& masks);

/// Switches to hard binning and binary masks (if not already done), then
/// fine-tunes extractor, prototypes and head.
StageResult train_stage2(const Dataset& d, Model model, const TrainConfig& cfg);

/// Replaces every prototype by the nearest embedded training part (scan order
/// row-major over rows of `d`, then parts; first minimum wins) and freezes them.
/// All-zero parts are candidates only when every part is all-zero.
Model project_prototypes(const Dataset& d, Model model);

/// Head-only fine-tuning on projected prototypes.
StageResult train_stage3(const Dataset& d, Model model, const TrainConfig& cfg);

/// Stages 1-3 with projection in between.
StageResult train_model(const Dataset& d, const TrainConfig& cfg);

/// Number of distinct (row, part) provenance pairs.
std::size_t count_unique_prototypes(const Model& m);

/// Splits `d` into fitting and validation rows the way the stages do.
FoldSplit validation_split(const Dataset& d, const TrainConfig& cfg);

}  // namespace medic

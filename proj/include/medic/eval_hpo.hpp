#pragma once

#include "medic/metrics.hpp"
#include "medic/random.hpp"
#include "medic/schema_data.hpp"
#include "medic/training.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace medic {

/// Predicted class of every row of `d` (rows must be imputed).
std::vector<int> predict(const Model& m, const Dataset& d);

ConfusionMatrix evaluate(const Model& m, const Dataset& d);

/// What each fold fitted on its training rows.
struct FoldPreprocessing {
  std::vector<double> impute;
  BinningParams bins;  // as initialized, before training
};

struct CvResult {
  std::vector<double> fold_scores;
  double mean = 0.0;
  std::vector<FoldPreprocessing> preprocessing;
};

/// Stratified k-fold evaluation of the full three-stage pipeline. Imputation,
/// standardization and bin initialization are fitted on each training fold.
/// Missing cells in `d` are allowed.
CvResult cross_validate(const Dataset& d, const TrainConfig& cfg, int k, std::uint64_t seed);

enum class ParamType { integer, real, categorical };
enum class ParamScale { linear, log };

struct HyperParam {
  std::string name;
  ParamType type = ParamType::real;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> choices;  // categorical only
  ParamScale scale = ParamScale::linear;
};

struct SearchSpace {
  std::vector<HyperParam> params;

  /// batch_size, hidden_dim, learning_rate and n_prototypes over the ranges
  /// used for the published results.
  static SearchSpace medic_default();
  /// Throws InputError on empty ranges or non-positive log ranges.
  void validate() const;
};

/// One drawn value per hyperparameter, in SearchSpace order.
struct Sample {
  std::vector<std::string> names;
  std::vector<double> values;
};

Sample draw_sample(const SearchSpace& space, Rng& rng);

/// Copies the sampled values into `base`. Known names: batch_size,
/// hidden_dim, learning_rate, n_prototypes, n_parts, bins, lambda_sparsity,
/// lambda_diversity.
TrainConfig apply_sample(TrainConfig base, const Sample& s);

struct TrialRecord {
  int trial = 0;
  Sample params;
  std::vector<double> fold_scores;
  double mean = 0.0;
  double seconds = 0.0;
  std::string error;  // empty on success

  bool ok() const { return error.empty(); }
};

struct HpoResult {
  TrainConfig best;
  int best_trial = -1;
  double best_score = 0.0;
  std::vector<TrialRecord> trials;  // in trial order
};

/// Random search: `budget` configurations are drawn up front from `seed`,
/// each scored by cross_validate on the same folds, and the best mean g-mean
/// wins (ties to the earlier trial). Trials run on up to `threads` threads.
HpoResult hpo_random_search(const SearchSpace& space, int budget, const Dataset& d, int k, std::uint64_t seed,
                            const TrainConfig& base, int threads = 1);

/// CSV: trial, sampled params..., fold scores..., mean_gmean, seconds, error.
void write_trial_log(std::ostream& out, const HpoResult& r);

}  // namespace medic

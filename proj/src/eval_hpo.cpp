#include "medic/eval_hpo.hpp"

#include "medic/error.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

namespace medic {

std::vector<int> predict(const Model& m, const Dataset& d) {
  if (d.has_missing()) throw InputError("prediction needs imputed data");
  const EncodingLayout layout = m.layout();
  const auto intervals = all_intervals(m.bins);
  Eigen::VectorXd x(static_cast<Eigen::Index>(layout.width));
  std::vector<double> row(static_cast<std::size_t>(d.values.cols()));
  std::vector<int> out;
  out.reserve(d.rows());
  for (Eigen::Index r = 0; r < d.values.rows(); ++r) {
    for (Eigen::Index f = 0; f < d.values.cols(); ++f) row[static_cast<std::size_t>(f)] = d.values(r, f);
    encode_into(row, m.schema, layout, m.bins, intervals, x);
    out.push_back(predict_class(forward_encoded(m, x).probs));
  }
  return out;
}

ConfusionMatrix evaluate(const Model& m, const Dataset& d) {
  return confusion_matrix(d.labels, predict(m, d), m.schema.class_count());
}

CvResult cross_validate(const Dataset& d, const TrainConfig& cfg, int k, std::uint64_t seed) {
  cfg.validate();
  CvResult out;
  for (const FoldSplit& fold : stratified_kfold(d, k, seed)) {
    FoldPreprocessing prep;
    prep.impute = fit_imputation(d, fold.train_idx);
    const Dataset train = apply_imputation(d.subset(fold.train_idx), prep.impute);
    const Dataset test = apply_imputation(d.subset(fold.test_idx), prep.impute);
    prep.bins = init_binning(train, cfg.bins).params;
    const StageResult trained = train_model(train, cfg);
    out.fold_scores.push_back(gmean(evaluate(trained.model, test)));
    out.preprocessing.push_back(std::move(prep));
  }
  out.mean = std::accumulate(out.fold_scores.begin(), out.fold_scores.end(), 0.0) /
             static_cast<double>(out.fold_scores.size());
  return out;
}

SearchSpace SearchSpace::medic_default() {
  SearchSpace s;
  HyperParam batch{.name = "batch_size", .type = ParamType::categorical};
  for (int b = 16; b <= 256; b += 16) batch.choices.push_back(b);
  HyperParam protos{.name = "n_prototypes", .type = ParamType::categorical};
  for (int n = 4; n <= 96; n += 4) protos.choices.push_back(n);
  s.params.push_back(batch);
  s.params.push_back({.name = "hidden_dim", .type = ParamType::integer, .lo = 2, .hi = 16});
  s.params.push_back(
      {.name = "learning_rate", .type = ParamType::real, .lo = 1e-5, .hi = 0.1, .scale = ParamScale::log});
  s.params.push_back(protos);
  return s;
}

void SearchSpace::validate() const {
  if (params.empty()) throw InputError("search space is empty");
  for (const auto& p : params) {
    if (p.type == ParamType::categorical) {
      if (p.choices.empty()) throw InputError("no choices for " + p.name);
      continue;
    }
    if (!(p.lo <= p.hi)) throw InputError("empty range for " + p.name);
    if (p.scale == ParamScale::log && !(p.lo > 0.0)) throw InputError("log scale needs a positive range: " + p.name);
  }
}

Sample draw_sample(const SearchSpace& space, Rng& rng) {
  Sample s;
  for (const auto& p : space.params) {
    double v = 0.0;
    switch (p.type) {
      case ParamType::categorical:
        v = p.choices[static_cast<std::size_t>(uniform_index(rng, p.choices.size()))];
        break;
      case ParamType::integer: {
        const auto lo = static_cast<long>(std::ceil(p.lo));
        const auto hi = static_cast<long>(std::floor(p.hi));
        if (p.scale == ParamScale::log) {
          v = std::floor(std::exp(uniform(rng, std::log(static_cast<double>(lo)),
                                          std::log(static_cast<double>(hi) + 1.0))));
          v = std::min(v, static_cast<double>(hi));
        } else {
          v = static_cast<double>(lo + static_cast<long>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1))));
        }
        break;
      }
      case ParamType::real:
        v = p.scale == ParamScale::log ? std::exp(uniform(rng, std::log(p.lo), std::log(p.hi)))
                                       : uniform(rng, p.lo, p.hi);
        break;
    }
    s.names.push_back(p.name);
    s.values.push_back(v);
  }
  return s;
}

TrainConfig apply_sample(TrainConfig base, const Sample& s) {
  for (std::size_t i = 0; i < s.names.size(); ++i) {
    const std::string& name = s.names[i];
    const double v = s.values[i];
    if (name == "batch_size") {
      base.batch_size = static_cast<int>(v);
    } else if (name == "hidden_dim") {
      base.embedding_dim = static_cast<int>(v);
    } else if (name == "learning_rate") {
      base.learning_rate = v;
    } else if (name == "n_prototypes") {
      base.prototypes = static_cast<int>(v);
    } else if (name == "n_parts") {
      base.parts = static_cast<int>(v);
    } else if (name == "bins") {
      base.bins = static_cast<int>(v);
    } else if (name == "lambda_sparsity") {
      base.lambda_sparsity = v;
    } else if (name == "lambda_diversity") {
      base.lambda_diversity = v;
    } else {
      throw InputError("unknown hyperparameter: " + name);
    }
  }
  return base;
}

HpoResult hpo_random_search(const SearchSpace& space, int budget, const Dataset& d, int k, std::uint64_t seed,
                            const TrainConfig& base, int threads) {
  if (budget < 1) throw InputError("trial budget must be at least 1");
  space.validate();
  base.validate();

  HpoResult out;
  Rng rng(derive_seed(seed, 7));
  for (int t = 0; t < budget; ++t) {
    TrialRecord rec;
    rec.trial = t;
    rec.params = draw_sample(space, rng);
    out.trials.push_back(std::move(rec));
  }

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int t = next++; t < budget; t = next++) {
      TrialRecord& rec = out.trials[static_cast<std::size_t>(t)];
      const auto start = std::chrono::steady_clock::now();
      try {
        const CvResult cv = cross_validate(d, apply_sample(base, rec.params), k, seed);
        rec.fold_scores = cv.fold_scores;
        rec.mean = cv.mean;
      } catch (const std::exception& e) {
        rec.error = e.what();
      }
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };
  const int n_threads = std::clamp(threads, 1, budget);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  }

  for (const auto& rec : out.trials) {
    if (rec.ok() && (out.best_trial < 0 || rec.mean > out.best_score)) {
      out.best_trial = rec.trial;
      out.best_score = rec.mean;
    }
  }
  if (out.best_trial < 0) {
    std::ostringstream msg;
    msg << "all " << budget << " trials failed:";
    for (const auto& rec : out.trials) msg << "\n  trial " << rec.trial << ": " << rec.error;
    throw TrainingError(msg.str());
  }
  out.best = apply_sample(base, out.trials[static_cast<std::size_t>(out.best_trial)].params);
  return out;
}

void write_trial_log(std::ostream& out, const HpoResult& r) {
  std::size_t folds = 0;
  for (const auto& t : r.trials) folds = std::max(folds, t.fold_scores.size());
  out << "trial";
  if (!r.trials.empty()) {
    for (const auto& name : r.trials.front().params.names) out << ',' << name;
  }
  for (std::size_t f = 0; f < folds; ++f) out << ",fold" << f + 1;
  out << ",mean_gmean,seconds,error\n";
  out << std::setprecision(17);
  for (const auto& t : r.trials) {
    out << t.trial;
    for (double v : t.params.values) out << ',' << v;
    for (std::size_t f = 0; f < folds; ++f) {
      out << ',';
      if (f < t.fold_scores.size()) out << t.fold_scores[f];
    }
    out << ',';
    if (t.ok()) out << t.mean;
    out << ',' << std::setprecision(3) << std::fixed << t.seconds << std::defaultfloat << std::setprecision(17) << ',';
    std::string err = t.error;
    std::replace(err.begin(), err.end(), '\n', ' ');
    std::replace(err.begin(), err.end(), ',', ';');
    out << err << '\n';
  }
}

}  // namespace medic

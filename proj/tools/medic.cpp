// medic: train, evaluate and explain prototype-parts models on tabular data.

#include "medic/error.hpp"
#include "medic/eval_hpo.hpp"
#include "medic/explain.hpp"
#include "medic/model_io.hpp"
#include "medic/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace medic;

namespace {

// Flags that override the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda_sparsity;
  std::optional<double> lambda_diversity;
  std::optional<double> learning_rate;
  std::optional<int> batch_size;
  std::optional<int> bins;
  std::optional<int> parts;
  std::optional<int> embedding_dim;
  std::optional<int> prototypes;
  std::optional<int> threads;
};

void add_config_flags(CLI::App* cmd, std::string& config, Overrides& o) {
  cmd->add_option("--config", config, "Training config (key = value lines)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--lambda-sparsity", o.lambda_sparsity, "Mask L1 weight");
  cmd->add_option("--lambda-diversity", o.lambda_diversity, "Prototype diversity weight");
  cmd->add_option("--lr", o.learning_rate, "Learning rate");
  cmd->add_option("--batch-size", o.batch_size, "Minibatch size");
  cmd->add_option("--bins", o.bins, "Bins per continuous feature");
  cmd->add_option("--parts", o.parts, "Number of parts");
  cmd->add_option("--embedding-dim", o.embedding_dim, "Part embedding width");
  cmd->add_option("--prototypes", o.prototypes, "Number of prototypes");
}

TrainConfig resolve_config(const std::string& path, const Overrides& o) {
  TrainConfig cfg = path.empty() ? TrainConfig{} : read_config(path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.lambda_sparsity) cfg.lambda_sparsity = *o.lambda_sparsity;
  if (o.lambda_diversity) cfg.lambda_diversity = *o.lambda_diversity;
  if (o.learning_rate) cfg.learning_rate = *o.learning_rate;
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  if (o.bins) cfg.bins = *o.bins;
  if (o.parts) cfg.parts = *o.parts;
  if (o.embedding_dim) cfg.embedding_dim = *o.embedding_dim;
  if (o.prototypes) cfg.prototypes = *o.prototypes;
  cfg.validate();
  return cfg;
}

std::string config_text(const TrainConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "lambda_sparsity = " << c.lambda_sparsity << "\nlambda_diversity = " << c.lambda_diversity
      << "\nlearning_rate = " << c.learning_rate << "\nbatch_size = " << c.batch_size
      << "\nepochs_stage1 = " << c.epochs_stage1 << "\nepochs_stage2 = " << c.epochs_stage2
      << "\nepochs_stage3 = " << c.epochs_stage3 << "\npatience = " << c.patience
      << "\nvalidation_fraction = " << c.validation_fraction
      << "\nclass_weighting = " << (c.class_weighting ? "true" : "false") << "\nbins = " << c.bins
      << "\nparts = " << c.parts << "\nembedding_dim = " << c.embedding_dim << "\nprototypes = " << c.prototypes
      << "\nprototype_init_scale = " << c.prototype_init_scale << "\nseed = " << c.seed << '\n';
  return out.str();
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

void write_epoch_log(const fs::path& path, const std::vector<EpochRecord>& log) {
  std::ofstream out = open_out(path);
  out.precision(17);
  out << "epoch,stage,ce,sparsity,diversity,total,val_loss,val_gmean\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << e.stage << ',' << e.loss.ce << ',' << e.loss.sparsity << ',' << e.loss.diversity << ','
        << e.loss.total << ',' << e.val_loss << ',' << e.val_gmean << '\n';
  }
}

Dataset load_training_data(const std::string& data, const std::string& schema) {
  return load_dataset(data, read_schema_spec(schema));
}

ModelFile load_trained(const std::string& path) {
  ModelFile f = load_model(path);
  if (f.model.stage != 3) throw InputError("model " + path + " has not completed stage 3");
  return f;
}

// Data read against the model's schema, imputed with the stored values.
Dataset load_for_model(const std::string& path, const Model& m) {
  Dataset d;
  try {
    d = load_dataset(path, m.schema);
  } catch (const InputError& e) {
    throw InputError("data does not match the model schema: " + std::string(e.what()));
  }
  std::vector<double> impute;
  for (std::size_t f = 0; f < m.schema.feature_count(); ++f) {
    const auto& v = m.schema.feature(f).impute;
    if (!v) throw InputError("model has no imputation value for " + m.schema.feature(f).name);
    impute.push_back(*v);
  }
  return apply_imputation(std::move(d), impute);
}

std::string fixed4(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

int cmd_train(const std::string& data, const std::string& schema, const std::string& config, const Overrides& o,
              const std::string& out, std::string log_path) {
  const TrainConfig cfg = resolve_config(config, o);
  const Dataset d = impute_missing(load_training_data(data, schema));
  const StageResult r = train_model(d, cfg);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
  ModelFile f;
  f.model = r.model;
  f.config = cfg;
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  save_model(f, out);
  if (log_path.empty()) log_path = out + ".epochs.csv";
  write_epoch_log(log_path, r.log);
  std::cout << "trained " << d.rows() << " rows, " << r.log.size() << " epochs, "
            << count_unique_prototypes(r.model) << " unique prototype parts of " << r.model.prototypes.count()
            << "\nmodel: " << out << "\nepoch log: " << log_path << '\n';
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data, const std::string& csv) {
  const ModelFile f = load_trained(model_path);
  const Dataset d = load_for_model(data, f.model);
  const ConfusionMatrix cm = evaluate(f.model, d);
  const auto& classes = f.model.schema.classes;
  std::cout << "confusion matrix (rows = true, columns = predicted)\n";
  for (std::size_t t = 0; t < classes.size(); ++t) {
    std::cout << "  " << classes[t] << ':';
    for (std::size_t p = 0; p < classes.size(); ++p) std::cout << ' ' << cm.counts(t, p);
    std::cout << '\n';
  }
  const auto recalls = cm.recalls();
  for (std::size_t k = 0; k < classes.size(); ++k) std::cout << "recall " << classes[k] << ": " << fixed4(recalls[k]) << '\n';
  const double g = gmean(cm);
  std::cout << "g-mean: " << fixed4(g) << '\n';
  if (!csv.empty()) {
    std::ofstream out = open_out(csv);
    out << "class,recall\n";
    for (std::size_t k = 0; k < classes.size(); ++k) out << classes[k] << ',' << fixed4(recalls[k]) << '\n';
    out << "gmean," << fixed4(g) << '\n';
  }
  return 0;
}

int cmd_explain(const std::string& model_path, const std::string& data, long row, std::size_t top_k,
                const std::string& out_dir, const std::string& bounds_path) {
  const ModelFile f = load_trained(model_path);
  const Dataset d = load_for_model(data, f.model);
  if (row < 0 || static_cast<std::size_t>(row) >= d.rows()) {
    throw InputError("row " + std::to_string(row) + " is out of range (data has " + std::to_string(d.rows()) +
                     " rows)");
  }
  std::optional<ClinicalBounds> bounds;
  if (!bounds_path.empty()) bounds = read_clinical_bounds(bounds_path);
  const ClinicalBounds* b = bounds ? &*bounds : nullptr;

  std::vector<double> values(static_cast<std::size_t>(d.values.cols()));
  for (Eigen::Index c = 0; c < d.values.cols(); ++c) values[static_cast<std::size_t>(c)] = d.values(row, c);
  const InstanceExplanation e = explain_instance(f.model, values, top_k);
  std::cout << "row " << row << ": predicted " << f.model.schema.classes[static_cast<std::size_t>(e.predicted)]
            << " (probability " << fixed4(e.probs(e.predicted)) << ")\n";
  for (std::size_t i = 0; i < e.matches.size(); ++i) {
    const Match& m = e.matches[i];
    std::printf("%zu. similarity %.3f  prototype %zu\n   ", i + 1, m.similarity, m.prototype_id);
    std::fflush(stdout);
    for (std::size_t c = 0; c < m.conditions.size(); ++c) {
      if (c) std::cout << " ∧ ";
      std::cout << (m.shared[c] ? "*" : "") << render(m.conditions[c], b) << (m.shared[c] ? "*" : "");
    }
    std::cout << '\n';
  }
  std::cout << "(* condition satisfied by this row)\n";
  if (!out_dir.empty()) {
    ReportOptions opts;
    opts.instances = {static_cast<std::size_t>(row)};
    opts.top_k = top_k;
    opts.bounds = b;
    for (const auto& p : export_report(f.model, d, out_dir, opts)) std::cout << "wrote " << p.string() << '\n';
  }
  return 0;
}

int cmd_cv(const std::string& data, const std::string& schema, const std::string& config, const Overrides& o,
           int folds, const std::string& out_dir) {
  const TrainConfig cfg = resolve_config(config, o);
  const Dataset d = load_training_data(data, schema);
  const CvResult r = cross_validate(d, cfg, folds, cfg.seed);
  std::ostringstream csv;
  csv.precision(17);
  csv << "fold,gmean\n";
  for (std::size_t i = 0; i < r.fold_scores.size(); ++i) csv << i + 1 << ',' << r.fold_scores[i] << '\n';
  std::ostringstream summary;
  for (std::size_t i = 0; i < r.fold_scores.size(); ++i) summary << "fold " << i + 1 << ": " << fixed4(r.fold_scores[i]) << '\n';
  summary << "mean g-mean: " << fixed4(r.mean) << '\n';
  std::cout << summary.str();
  if (!out_dir.empty()) {
    open_out(fs::path(out_dir) / "folds.csv") << csv.str();
    open_out(fs::path(out_dir) / "summary.txt") << summary.str();
  }
  return 0;
}

int cmd_hpo(const std::string& data, const std::string& schema, const std::string& config, const Overrides& o,
            int folds, int trials, const std::string& out_dir) {
  const TrainConfig base = resolve_config(config, o);
  const Dataset d = load_training_data(data, schema);
  const HpoResult r =
      hpo_random_search(SearchSpace::medic_default(), trials, d, folds, base.seed, base, o.threads.value_or(1));
  const auto& best = r.trials[static_cast<std::size_t>(r.best_trial)];
  std::ostringstream summary;
  summary << "trials: " << r.trials.size() << "\nbest trial: " << r.best_trial << "\nbest mean g-mean: "
          << fixed4(r.best_score) << '\n';
  for (std::size_t i = 0; i < best.params.names.size(); ++i) {
    summary << "  " << best.params.names[i] << " = " << best.params.values[i] << '\n';
  }
  std::cout << summary.str();
  if (!out_dir.empty()) {
    std::ofstream log = open_out(fs::path(out_dir) / "trials.csv");
    write_trial_log(log, r);
    open_out(fs::path(out_dir) / "summary.txt") << summary.str();
    open_out(fs::path(out_dir) / "best_config.toml") << config_text(r.best);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interpretable prototype-parts classifier for tabular medical data"};
  app.require_subcommand(1);

  std::string data, schema, config, out, log_path, model, csv, bounds;
  Overrides o;
  long row = 0;
  std::size_t top_k = 5;
  int folds = 5;
  int trials = 30;

  auto* train = app.add_subcommand("train", "Run all three training stages and save the model");
  train->add_option("--data", data, "CSV data file")->required();
  train->add_option("--schema", schema, "Schema JSON")->required();
  train->add_option("--out", out, "Model file to write")->required();
  train->add_option("--log", log_path, "Epoch log CSV (default: <out>.epochs.csv)");
  add_config_flags(train, config, o);

  auto* eval = app.add_subcommand("eval", "Print confusion matrix, recalls and g-mean");
  eval->add_option("--model", model, "Model file")->required();
  eval->add_option("--data", data, "CSV data file")->required();
  eval->add_option("--csv", csv, "Also write recalls and g-mean to this CSV");

  auto* explain = app.add_subcommand("explain", "Rank prototypes for one data row");
  explain->add_option("--model", model, "Model file")->required();
  explain->add_option("--data", data, "CSV data file")->required();
  explain->add_option("--row", row, "Row index (0-based, data rows only)")->required();
  explain->add_option("--top-k", top_k, "Number of prototypes to show");
  explain->add_option("--out", out, "Directory for the full report");
  explain->add_option("--bounds", bounds, "CSV of feature,lower,upper clinical limits")->check(CLI::ExistingFile);

  auto* cv = app.add_subcommand("cv", "Stratified k-fold cross-validation");
  cv->add_option("--data", data, "CSV data file")->required();
  cv->add_option("--schema", schema, "Schema JSON")->required();
  cv->add_option("--folds", folds, "Number of folds")->check(CLI::Range(2, 1000));
  cv->add_option("--out", out, "Directory for folds.csv and summary.txt");
  add_config_flags(cv, config, o);

  auto* hpo = app.add_subcommand("hpo", "Random hyperparameter search with cross-validation");
  hpo->add_option("--data", data, "CSV data file")->required();
  hpo->add_option("--schema", schema, "Schema JSON")->required();
  hpo->add_option("--folds", folds, "Number of folds")->check(CLI::Range(2, 1000));
  hpo->add_option("--trials", trials, "Number of trials")->check(CLI::PositiveNumber);
  hpo->add_option("--threads", o.threads, "Trials run in parallel")->check(CLI::PositiveNumber);
  hpo->add_option("--out", out, "Directory for trials.csv, summary.txt and best_config.toml");
  add_config_flags(hpo, config, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(data, schema, config, o, out, log_path);
    if (*eval) return cmd_eval(model, data, csv);
    if (*explain) return cmd_explain(model, data, row, top_k, out, bounds);
    if (*cv) return cmd_cv(data, schema, config, o, folds, out);
    if (*hpo) return cmd_hpo(data, schema, config, o, folds, trials, out);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

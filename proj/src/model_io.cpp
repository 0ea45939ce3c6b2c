#include "medic/model_io.hpp"

#include "medic/error.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace medic {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json matrix_json(const Eigen::MatrixXd& a) {
  ordered_json j;
  j["rows"] = a.rows();
  j["cols"] = a.cols();
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(a.size()));
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) data.push_back(a(r, c));
  }
  j["data"] = data;
  return j;
}

Eigen::MatrixXd matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw InputError("matrix data does not match its shape");
  }
  Eigen::MatrixXd a(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) a(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  }
  return a;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd vector_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

const char* role_name(ColumnRole r) {
  switch (r) {
    case ColumnRole::continuous: return "continuous";
    case ColumnRole::categorical: return "categorical";
    case ColumnRole::target: return "target";
  }
  return "";
}

ColumnRole role_from(const std::string& s) {
  if (s == "continuous") return ColumnRole::continuous;
  if (s == "categorical") return ColumnRole::categorical;
  if (s == "target") return ColumnRole::target;
  throw InputError("unknown column role: " + s);
}

// Field table shared by the JSON form of TrainConfig and the config file.
struct ConfigField {
  const char* name;
  std::function<ordered_json(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  T v{};
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw InputError("config key " + key + " expects true or false, got '" + text + "'");
  } else {
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) throw InputError("config key " + key + " has a bad value '" + text + "'");
    return v;
  }
}

template <typename T>
ConfigField field(const char* name, T TrainConfig::*member) {
  return {name, [member](const TrainConfig& c) { return ordered_json(c.*member); },
          [name, member](TrainConfig& c, const std::string& v) { c.*member = parse_value<T>(name, v); }};
}

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields{
      field("lambda_sparsity", &TrainConfig::lambda_sparsity),
      field("lambda_diversity", &TrainConfig::lambda_diversity),
      field("learning_rate", &TrainConfig::learning_rate),
      field("batch_size", &TrainConfig::batch_size),
      field("epochs_stage1", &TrainConfig::epochs_stage1),
      field("epochs_stage2", &TrainConfig::epochs_stage2),
      field("epochs_stage3", &TrainConfig::epochs_stage3),
      field("patience", &TrainConfig::patience),
      field("validation_fraction", &TrainConfig::validation_fraction),
      field("class_weighting", &TrainConfig::class_weighting),
      field("bins", &TrainConfig::bins),
      field("parts", &TrainConfig::parts),
      field("embedding_dim", &TrainConfig::embedding_dim),
      field("prototypes", &TrainConfig::prototypes),
      field("prototype_init_scale", &TrainConfig::prototype_init_scale),
      field("seed", &TrainConfig::seed),
  };
  return fields;
}

ordered_json config_json(const TrainConfig& c) {
  ordered_json j;
  for (const auto& f : config_fields()) j[f.name] = f.get(c);
  return j;
}

TrainConfig config_from(const json& j) {
  TrainConfig c;
  c.lambda_sparsity = j.at("lambda_sparsity").get<double>();
  c.lambda_diversity = j.at("lambda_diversity").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs_stage1 = j.at("epochs_stage1").get<int>();
  c.epochs_stage2 = j.at("epochs_stage2").get<int>();
  c.epochs_stage3 = j.at("epochs_stage3").get<int>();
  c.patience = j.at("patience").get<int>();
  c.validation_fraction = j.at("validation_fraction").get<double>();
  c.class_weighting = j.at("class_weighting").get<bool>();
  c.bins = j.at("bins").get<int>();
  c.parts = j.at("parts").get<int>();
  c.embedding_dim = j.at("embedding_dim").get<int>();
  c.prototypes = j.at("prototypes").get<int>();
  c.prototype_init_scale = j.at("prototype_init_scale").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string to_json(const ModelFile& f) {
  const Model& m = f.model;
  ordered_json j;
  j["format_version"] = f.format_version;

  ordered_json columns = ordered_json::array();
  for (const auto& c : m.schema.columns) {
    ordered_json cj;
    cj["name"] = c.name;
    cj["role"] = role_name(c.role);
    if (c.role == ColumnRole::categorical) cj["vocab"] = c.vocab;
    cj["impute"] = c.impute ? ordered_json(*c.impute) : ordered_json(nullptr);
    columns.push_back(std::move(cj));
  }
  j["schema"] = {{"columns", columns}, {"classes", m.schema.classes}};

  ordered_json feats = ordered_json::array();
  for (const auto& b : m.bins.features) {
    feats.push_back({{"centers", to_std(b.centers)},
                     {"bandwidth_raw", b.bandwidth_raw},
                     {"mean", b.mean},
                     {"scale", b.scale}});
  }
  j["bins"] = {{"mode", m.bins.mode == BinMode::hard ? "hard" : "fuzzy"}, {"eps", m.bins.eps}, {"features", feats}};
  j["masks"] = {{"binarized", m.masks.binarized}, {"weights", matrix_json(m.masks.weights)}};
  j["extractor"] = {{"w1", matrix_json(m.extractor.w1)},
                    {"b1", to_std(m.extractor.b1)},
                    {"w2", matrix_json(m.extractor.w2)},
                    {"b2", to_std(m.extractor.b2)}};

  ordered_json prov = ordered_json::array();
  for (const auto& p : m.prototypes.provenance) {
    if (p) {
      prov.push_back({{"row", p->row}, {"part", p->part}, {"source", p->source}});
    } else {
      prov.push_back(nullptr);
    }
  }
  j["prototypes"] = {{"frozen", m.prototypes.frozen}, {"z", matrix_json(m.prototypes.z)}, {"provenance", prov}};
  j["head"] = {{"w", matrix_json(m.head.w)}, {"b", to_std(m.head.b)}};
  j["config"] = config_json(f.config);
  j["stage"] = m.stage;
  j["seed"] = f.config.seed;
  return j.dump(1) + "\n";
}

ModelFile model_from_json(const std::string& text) {
  ModelFile f;
  try {
    const json j = json::parse(text);
    f.format_version = j.at("format_version").get<int>();
    if (f.format_version != kModelFormatVersion) {
      throw InputError("unsupported model format version " + std::to_string(f.format_version));
    }
    Model& m = f.model;
    for (const auto& cj : j.at("schema").at("columns")) {
      Column c;
      c.name = cj.at("name").get<std::string>();
      c.role = role_from(cj.at("role").get<std::string>());
      if (cj.contains("vocab")) c.vocab = cj.at("vocab").get<std::vector<std::string>>();
      if (!cj.at("impute").is_null()) c.impute = cj.at("impute").get<double>();
      m.schema.columns.push_back(std::move(c));
    }
    m.schema.classes = j.at("schema").at("classes").get<std::vector<std::string>>();
    m.schema.validate();

    const auto& bj = j.at("bins");
    const auto mode = bj.at("mode").get<std::string>();
    if (mode != "hard" && mode != "fuzzy") throw InputError("unknown binning mode: " + mode);
    m.bins.mode = mode == "hard" ? BinMode::hard : BinMode::fuzzy;
    m.bins.eps = bj.at("eps").get<double>();
    for (const auto& fj : bj.at("features")) {
      FeatureBins b;
      b.centers = vector_from(fj.at("centers"));
      b.bandwidth_raw = fj.at("bandwidth_raw").get<double>();
      b.mean = fj.at("mean").get<double>();
      b.scale = fj.at("scale").get<double>();
      m.bins.features.push_back(std::move(b));
    }
    m.masks.binarized = j.at("masks").at("binarized").get<bool>();
    m.masks.weights = matrix_from(j.at("masks").at("weights"));
    const auto& ej = j.at("extractor");
    m.extractor.w1 = matrix_from(ej.at("w1"));
    m.extractor.b1 = vector_from(ej.at("b1"));
    m.extractor.w2 = matrix_from(ej.at("w2"));
    m.extractor.b2 = vector_from(ej.at("b2"));
    const auto& pj = j.at("prototypes");
    m.prototypes.frozen = pj.at("frozen").get<bool>();
    m.prototypes.z = matrix_from(pj.at("z"));
    for (const auto& p : pj.at("provenance")) {
      if (p.is_null()) {
        m.prototypes.provenance.emplace_back();
        continue;
      }
      Provenance prov;
      prov.row = p.at("row").get<std::size_t>();
      prov.part = p.at("part").get<std::size_t>();
      prov.source = p.at("source").get<std::vector<double>>();
      m.prototypes.provenance.emplace_back(std::move(prov));
    }
    m.head.w = matrix_from(j.at("head").at("w"));
    m.head.b = vector_from(j.at("head").at("b"));
    m.stage = j.at("stage").get<int>();
    f.config = config_from(j.at("config"));
    if (j.at("seed").get<std::uint64_t>() != f.config.seed) throw InputError("model seed does not match its config");
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed model file: ") + e.what());
  }
  if (f.model.stage < 0 || f.model.stage > 3) throw InputError("stage marker out of range");
  f.model.validate();
  return f;
}

void save_model(const ModelFile& f, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << to_json(f);
  if (!out) throw InputError("cannot write " + path.string());
}

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read model file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::map<std::string, const ConfigField*> by_name;
  for (const auto& f : config_fields()) by_name[f.name] = &f;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    const auto it = by_name.find(key);
    if (it == by_name.end()) throw InputError("config line " + std::to_string(lineno) + ": unknown key " + key);
    it->second->set(base, value);
  }
  return base;
}

TrainConfig read_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base);
}

}  // namespace medic

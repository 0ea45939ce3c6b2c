#include "doctest.h"
#include "test_util.hpp"

#include "medic/explain.hpp"
#include "medic/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace medic;
namespace fs = std::filesystem;

namespace {

const Model& trained() {
  static const Model m = [] {
    TrainConfig cfg = testing::quick_config(5);
    cfg.prototypes = 8;
    return train_model(testing::synthetic(120, 21), cfg).model;
  }();
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("medic_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("similarity_from_distance") {
  CHECK(similarity_from_distance(0.0) == 1.0);
  CHECK(similarity_from_distance(1.0) == 0.5);
  CHECK(similarity_from_distance(0.2) > similarity_from_distance(0.3));
  CHECK(similarity_from_distance(1e300) > 0.0);
  CHECK_THROWS_AS(similarity_from_distance(-1e-3), InputError);
}

TEST_CASE("render conditions") {
  Condition bil{"Bilirubin", 0, ConditionKind::interval, 3, 1, Interval{0.79, 3.43}, ""};
  Condition hep{"Hepatomegaly", 1, ConditionKind::category, 7, 0, Interval{}, "0"};
  Condition spi{"Spiders", 2, ConditionKind::category, 9, 0, Interval{}, "0"};
  const std::vector<Condition> all{bil, hep, spi};
  CHECK(render(all) == "Bilirubin ∈ [0.79, 3.43) ∧ Hepatomegaly = 0 ∧ Spiders = 0");
  CHECK(render(std::vector<Condition>{hep}) == "Hepatomegaly = 0");

  Condition alb{"Albumin", 0, ConditionKind::interval, 0, 0, Interval{-std::numeric_limits<double>::infinity(), 3.70}, ""};
  CHECK(render(alb) == "Albumin ∈ (-∞, 3.7)");
  const ClinicalBounds bounds{{"Albumin", {1.5, 5.0}}};
  CHECK(render(alb, &bounds) == "Albumin ∈ [1.5, 3.7)");
  Condition alp{"Alk_Phos", 0, ConditionKind::interval, 0, 2, Interval{1391.277, std::numeric_limits<double>::infinity()}, ""};
  CHECK(render(alp) == "Alk_Phos ∈ [1391, ∞)");
}

TEST_CASE("decode_prototype follows the provenance part") {
  const Model& m = trained();
  const EncodingLayout layout = m.layout();
  BinningParams hard = m.bins;
  hard.mode = BinMode::hard;
  const auto intervals = all_intervals(m.bins);
  for (std::size_t j = 0; j < static_cast<std::size_t>(m.prototypes.count()); ++j) {
    const PrototypeExplanation ex = decode_prototype(m, j);
    const Provenance& prov = *m.prototypes.provenance[j];
    CHECK(ex.provenance == prov);
    const Eigen::VectorXd enc = encode_instance(prov.source, m.schema, hard).vector;
    const Eigen::VectorXd part = m.masks.weights.row(static_cast<Eigen::Index>(prov.part)).transpose().cwiseProduct(enc);
    // one condition per active slot, and every condition sits on a nonzero mask entry
    CHECK(ex.conditions.size() == static_cast<std::size_t>((part.array() != 0.0).count()));
    for (const Condition& c : ex.conditions) {
      CHECK(m.masks.weights(static_cast<Eigen::Index>(prov.part), static_cast<Eigen::Index>(c.slot)) != 0.0);
      CHECK(enc(static_cast<Eigen::Index>(c.slot)) == 1.0);
      const Segment& seg = layout.segment_of(c.slot);
      CHECK(seg.feature == c.feature_index);
      CHECK(c.bin == c.slot - seg.offset);
      if (c.kind == ConditionKind::interval) {
        CHECK(c.interval == intervals[seg.bins_index].by_slot[c.bin]);
        CHECK(c.interval.contains(prov.source[c.feature_index]));
      }
      CHECK(satisfied_by(c, prov.source, seg.role == ColumnRole::continuous ? intervals[seg.bins_index] : IntervalSet{}));
    }
    CHECK(ex.class_weights.size() == 2);
  }
  Model twin = m;
  twin.prototypes.provenance[1] = twin.prototypes.provenance[0];
  twin.prototypes.z.row(1) = twin.prototypes.z.row(0);
  CHECK(decode_prototype(twin, 0).conditions == decode_prototype(twin, 1).conditions);

  Model bare = m;
  bare.prototypes.provenance[0].reset();
  CHECK_THROWS(decode_prototype(bare, 0));
}

TEST_CASE("a single active mask slot gives a single condition") {
  Model m = trained();
  m.masks.weights.row(0).setZero();
  m.masks.weights(0, 0) = 1.0;
  auto& prov = *m.prototypes.provenance[0];
  prov.part = 0;
  BinningParams hard = m.bins;
  hard.mode = BinMode::hard;
  const Eigen::VectorXd enc = encode_instance(prov.source, m.schema, hard).vector;
  CHECK(decode_prototype(m, 0).conditions.size() == static_cast<std::size_t>(enc(0) == 1.0));
}

TEST_CASE("explain_instance ranks by pooled distance") {
  const Model& m = trained();
  const Dataset d = testing::synthetic(30, 77);
  for (std::size_t r = 0; r < 10; ++r) {
    const auto row = testing::row_of(d, r);
    const InstanceExplanation ex = explain_instance(m, row, 100);
    const ForwardTrace t = forward(m, row);
    CHECK(ex.predicted == predict_class(t.probs));
    REQUIRE(ex.matches.size() == static_cast<std::size_t>(m.prototypes.count()));
    for (std::size_t i = 0; i < ex.matches.size(); ++i) {
      const Match& mt = ex.matches[i];
      CHECK(mt.distance == t.pooled(static_cast<Eigen::Index>(mt.prototype_id)));
      CHECK(mt.similarity == similarity_from_distance(mt.distance));
      CHECK(mt.matched_part == static_cast<std::size_t>(t.best_part[mt.prototype_id]));
      CHECK(mt.similarity > 0.0);
      CHECK(mt.similarity <= 1.0);
      CHECK(mt.shared.size() == mt.conditions.size());
      if (i > 0) {
        CHECK(ex.matches[i - 1].distance <= mt.distance);
        if (ex.matches[i - 1].distance == mt.distance) CHECK(ex.matches[i - 1].prototype_id < mt.prototype_id);
      }
    }
    CHECK(explain_instance(m, row, 3).matches.size() == 3);
    const InstanceExplanation none = explain_instance(m, row, 0);
    CHECK(none.matches.empty());
    CHECK(none.predicted == ex.predicted);
  }
}

TEST_CASE("the provenance instance of a prototype matches it with similarity 1") {
  const Model& m = trained();
  for (std::size_t j = 0; j < static_cast<std::size_t>(m.prototypes.count()); ++j) {
    const InstanceExplanation ex = explain_instance(m, m.prototypes.provenance[j]->source, 5);
    REQUIRE(!ex.matches.empty());
    CHECK(ex.matches.front().similarity == 1.0);
    bool found = false;
    for (const Match& mt : explain_instance(m, m.prototypes.provenance[j]->source, 1000).matches) {
      if (mt.prototype_id == j) {
        found = true;
        CHECK(mt.similarity == 1.0);
        CHECK(std::all_of(mt.shared.begin(), mt.shared.end(), [](bool b) { return b; }));
      }
    }
    CHECK(found);
  }
}

TEST_CASE("export_report") {
  const Model& m = trained();
  const Dataset d = testing::synthetic(30, 77);
  ReportOptions opts;
  opts.instances = {0, 3};
  const fs::path a = scratch("report_a"), b = scratch("report_b");
  const auto files = export_report(m, d, a, opts);
  export_report(m, d, b, opts);
  CHECK(files.size() == 6);
  for (const auto& f : files) {
    CAPTURE(f);
    CHECK(slurp(f) == slurp(b / f.filename()));
  }

  std::ifstream csv(a / "intervals.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "feature,interval_1,interval_2,interval_3");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 2);

  const auto protos = nlohmann::json::parse(slurp(a / "prototypes.json"));
  CHECK(protos.size() == static_cast<std::size_t>(m.prototypes.count()));
  const auto expl = nlohmann::json::parse(slurp(a / "explanations.json"));
  CHECK(expl.size() == 2);
  CHECK(expl[0]["matches"].size() == 5);

  const std::string text = slurp(a / "prototypes.txt");
  CHECK(text.find("unique prototype parts: " + std::to_string(count_unique_prototypes(m)) + " of " +
                  std::to_string(m.prototypes.count())) != std::string::npos);
}

TEST_CASE("export_report to an unwritable path fails") {
  const fs::path blocker = scratch("blocker");
  std::ofstream(blocker) << "file";
  CHECK_THROWS(export_report(trained(), testing::synthetic(10, 1), blocker / "sub"));
}

TEST_CASE("clinical bounds file") {
  const fs::path p = scratch("bounds.csv");
  std::ofstream(p) << "feature,lower,upper\nAlbumin,1.5,5\nBilirubin,0.1,30\n";
  const ClinicalBounds b = read_clinical_bounds(p);
  CHECK(b.size() == 2);
  CHECK(b.at("Albumin") == std::pair<double, double>{1.5, 5.0});
}

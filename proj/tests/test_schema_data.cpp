#include "doctest.h"
#include "test_util.hpp"

#include "medic/error.hpp"
#include "medic/schema_data.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace medic;

namespace {

SchemaSpec tiny_spec() { return SchemaSpec{"y", {"x"}, {"c"}, {}}; }

}  // namespace

TEST_CASE("published datasets load with their class counts") {
  const Dataset diabetes = testing::load_named("diabetes");
  CHECK(diabetes.rows() == 768);
  CHECK(diabetes.class_counts() == std::vector<std::size_t>{500, 268});

  const Dataset cirrhosis = testing::load_named("cirrhosis");
  CHECK(cirrhosis.schema.classes == std::vector<std::string>{"D", "CL", "C"});
  CHECK(cirrhosis.class_counts() == std::vector<std::size_t>{125, 19, 168});

  const Dataset ckd = testing::load_named("ckd");
  CHECK(ckd.schema.class_count() == 2);
  CHECK(ckd.rows() > 0);
}

TEST_CASE("load errors") {
  CHECK_THROWS_WITH_AS(parse_dataset("", tiny_spec()), "no rows", InputError);
  CHECK_THROWS_WITH_AS(parse_dataset("x,c,y\n", tiny_spec()), "no rows", InputError);
  CHECK_THROWS_AS(parse_dataset("x,y\n1,a\n", tiny_spec()), InputError);
  CHECK_THROWS_AS(parse_dataset("x,c,y\nabc,u,a\n", tiny_spec()), InputError);
  CHECK_THROWS_AS(parse_dataset("x,c,y\n1,u,z\n", SchemaSpec{"y", {"x"}, {"c"}, {"a", "b"}}), InputError);
  CHECK_THROWS_AS(load_dataset(testing::data_dir() / "does_not_exist.csv", tiny_spec()), InputError);
  CHECK_THROWS_AS(read_schema_spec(testing::data_dir() / "nope.json"), InputError);
}

TEST_CASE("missing cells are flagged and imputed with the lower median and the mode") {
  const Dataset raw = parse_dataset("x,c,y\n1.0,A,a\n,A,b\n3.0,,a\n4.0,B,b\n", tiny_spec());
  CHECK(raw.has_missing());
  CHECK(std::isnan(raw.values(1, 0)));
  const Dataset d = impute_missing(raw);
  CHECK_FALSE(d.has_missing());
  // median of {1, 3, 4} is 3
  CHECK(d.values(1, 0) == 3.0);
  CHECK(d.schema.feature(1).vocab[static_cast<std::size_t>(d.values(2, 1))] == "A");

  const Dataset even = impute_missing(parse_dataset("x,y\n1.0,a\nNA,b\n3.0,a\n", SchemaSpec{"y", {"x"}, {}, {}}));
  CHECK(even.values(1, 0) == 1.0);

  const Dataset cat = impute_missing(parse_dataset("c,y\nA,a\nA,b\n,a\nB,b\n", SchemaSpec{"y", {}, {"c"}, {}}));
  std::vector<std::string> got;
  for (Eigen::Index r = 0; r < 4; ++r) got.push_back(cat.schema.feature(0).vocab[static_cast<std::size_t>(cat.values(r, 0))]);
  CHECK(got == std::vector<std::string>{"A", "A", "A", "B"});
}

TEST_CASE("imputation of a complete dataset is the identity and is idempotent") {
  const Dataset d = testing::load_named("diabetes");
  const Dataset once = impute_missing(d);
  CHECK(once.values == d.values);
  CHECK(once.labels == d.labels);
  const Dataset cirr = impute_missing(testing::load_named("cirrhosis"));
  CHECK(impute_missing(cirr) == cirr);
}

TEST_CASE("a fully missing column is an error naming it") {
  CHECK_THROWS_WITH_AS(impute_missing(parse_dataset("x,c,y\n,A,a\nNA,B,b\n", tiny_spec())),
                       "column x is entirely missing", InputError);
}

TEST_CASE("stratified k-fold") {
  SUBCASE("exact divisibility") {
    std::vector<int> labels{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
    const auto folds = stratified_kfold(labels, 5, 3);
    REQUIRE(folds.size() == 5);
    for (const auto& f : folds) {
      REQUIRE(f.test_idx.size() == 2);
      CHECK(labels[f.test_idx[0]] != labels[f.test_idx[1]]);
    }
  }
  SUBCASE("diabetes fold sizes") {
    const Dataset d = testing::load_named("diabetes");
    for (const auto& f : stratified_kfold(d, 5, 11)) {
      std::size_t zeros = 0, ones = 0;
      for (auto i : f.test_idx) (d.labels[i] == 0 ? zeros : ones)++;
      CHECK(zeros == 100);
      CHECK((ones == 53 || ones == 54));
    }
  }
  SUBCASE("partition, balance and determinism over random label vectors") {
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
      const int classes = 2 + static_cast<int>(uniform_index(rng, 3));
      const int k = 2 + static_cast<int>(uniform_index(rng, 5));
      std::vector<int> labels(static_cast<std::size_t>(k) + uniform_index(rng, 80));
      for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i < static_cast<std::size_t>(classes) ? static_cast<int>(i) : static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(classes)));
      const auto folds = stratified_kfold(labels, k, static_cast<std::uint64_t>(t));
      std::vector<int> seen(labels.size(), 0);
      std::vector<std::vector<int>> per_class(static_cast<std::size_t>(classes));
      for (const auto& f : folds) {
        std::set<std::size_t> train(f.train_idx.begin(), f.train_idx.end());
        CHECK(train.size() + f.test_idx.size() == labels.size());
        std::vector<int> counts(static_cast<std::size_t>(classes), 0);
        for (auto i : f.test_idx) {
          CHECK(train.count(i) == 0);
          ++seen[i];
          ++counts[static_cast<std::size_t>(labels[i])];
        }
        for (int c = 0; c < classes; ++c) per_class[static_cast<std::size_t>(c)].push_back(counts[static_cast<std::size_t>(c)]);
      }
      CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
      for (const auto& counts : per_class) {
        CHECK(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()) <= 1);
      }
      const auto again = stratified_kfold(labels, k, static_cast<std::uint64_t>(t));
      for (std::size_t f = 0; f < folds.size(); ++f) {
        CHECK(again[f].test_idx == folds[f].test_idx);
        CHECK(again[f].train_idx == folds[f].train_idx);
      }
    }
  }
  SUBCASE("errors") {
    std::vector<int> labels{0, 1, 0};
    CHECK_THROWS_AS(stratified_kfold(labels, 4, 0), InputError);
    CHECK_THROWS_AS(stratified_kfold(labels, 1, 0), InputError);
  }
}

TEST_CASE("load, impute, serialize and load again round-trips") {
  for (const char* name : {"cirrhosis", "ckd", "diabetes"}) {
    CAPTURE(name);
    const Dataset d = impute_missing(testing::load_named(name));
    const Dataset back = parse_dataset(to_csv(d), d.schema);
    CHECK(back.values == d.values);
    CHECK(back.labels == d.labels);
    CHECK(back.schema.classes == d.schema.classes);
  }
}

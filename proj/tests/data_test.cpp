// Copyright 2026 The FairClip Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fairclip/data.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "test_util.hpp"

namespace fairclip {
namespace {

RawTable Parse(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in);
}

constexpr const char* kAdultHeader =
    "age,workclass,fnlwgt,education,educational-num,marital-status,occupation,relationship,race,"
    "gender,capital-gain,capital-loss,hours-per-week,native-country,income\n";

std::string AdultRow(int age, const std::string& sex, int gain, int hours, const std::string& income,
                     const std::string& workclass = "Private", int fnlwgt = 100000) {
  std::ostringstream os;
  os << age << "," << workclass << "," << fnlwgt << ",Bachelors,13,Never-married,Sales,Not-in-family,White,"
     << sex << "," << gain << ",0," << hours << ",United-States," << income << "\n";
  return os.str();
}

std::string WriteTemp(const std::string& name, const std::string& text) {
  const std::string path = ::testing::TempDir() + "/" + name;
  std::ofstream(path) << text;
  return path;
}

TEST(CsvTest, ParsesQuotesAndWhitespace) {
  const RawTable t = Parse("a, b ,c\n1, \"x, y\" ,\"he said \"\"hi\"\"\"\n\n 2 ,3,4\r\n");
  EXPECT_EQ(t.header, (std::vector<std::string>{"a", "b", "c"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][1], "x, y");
  EXPECT_EQ(t.rows[0][2], "he said \"hi\"");
  EXPECT_EQ(t.rows[1], (std::vector<std::string>{"2", "3", "4"}));
  EXPECT_EQ(t.line_numbers, (std::vector<std::size_t>{2, 4}));
}

TEST(CsvTest, Errors) {
  EXPECT_FAIRCLIP_ERROR(Parse(""), ErrorCode::kMalformedCsv);
  EXPECT_FAIRCLIP_ERROR(Parse("a,b\n1,2,3\n"), ErrorCode::kMalformedCsv);
  EXPECT_FAIRCLIP_ERROR(Parse("a,b\n\"1,2\n"), ErrorCode::kMalformedCsv);
  EXPECT_FAIRCLIP_ERROR(read_csv("/nonexistent/file.csv"), ErrorCode::kIoError);
}

TEST(ConsolidationTest, MapsAndFallsBack) {
  std::istringstream in("# comment\n[workclass]\nState-gov\tGovernment\n*\tOther\n[race]\nWhite\tWhite\n");
  const ConsolidationMap map = parse_consolidation_map(in);
  EXPECT_EQ(consolidate(map, "workclass", "State-gov"), "Government");
  EXPECT_EQ(consolidate(map, "workclass", "Unknown"), "Other");
  EXPECT_EQ(consolidate(map, "race", "Other"), "Other");
  EXPECT_EQ(consolidate(map, "education", "9th"), "9th");
  std::istringstream bad("State-gov\tGovernment\n");
  EXPECT_FAIRCLIP_ERROR(parse_consolidation_map(bad), ErrorCode::kMalformedCsv);
}

TEST(ConsolidationTest, ShippedMapLoads) {
  const ConsolidationMap map = load_consolidation_map(std::string(FAIRCLIP_DATA_DIR) + "/adult_consolidation.tsv");
  EXPECT_EQ(consolidate(map, "workclass", "Local-gov"), "Government");
  EXPECT_EQ(consolidate(map, "education", "Prof-school"), "Doctorate");
}

TEST(AdultTest, CleansAndEncodes) {
  std::string text = kAdultHeader;
  text += AdultRow(25, "Male", 0, 20, "<=50K");
  text += AdultRow(25, "Male", 0, 20, "<=50K");  // duplicate
  text += AdultRow(50, "Female", 0, 40, ">50K.");
  text += AdultRow(40, "Female", 0, 45, ">50K", "?");  // missing
  text += AdultRow(60, "Male", 0, 60, "<=50K", "State-gov");
  text += AdultRow(33, "Female", 99999, 35, ">50K", "Private", 5);  // outlier
  text += AdultRow(45, "Male", 0, 30, "<=50K", "Local-gov", 7);
  const std::string path = WriteTemp("adult_small.csv", text);
  std::istringstream map_text("[workclass]\nState-gov\tGovernment\nLocal-gov\tGovernment\n");
  const ConsolidationMap map = parse_consolidation_map(map_text);
  AdultOptions options;
  options.outlier_quantile = 0.9;
  AdultLoadReport report;
  const Dataset ds = load_adult(path, TabularSchema::Adult(), map, options, &report);
  EXPECT_EQ(report.raw_rows, 7u);
  EXPECT_EQ(report.after_missing_and_duplicates, 5u);
  EXPECT_EQ(report.after_outliers, 4u);
  ASSERT_EQ(ds.size(), 4u);
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 1, 0, 0}));

  const auto& sex = ds.attribute("sex");
  EXPECT_EQ(sex.levels, (std::vector<std::string>{"Female", "Male"}));
  EXPECT_EQ(sex.values, (std::vector<int>{1, 0, 1, 1}));
  // Ages 25, 50, 60, 45 have median 47.5.
  EXPECT_EQ(ds.attribute("age").values, (std::vector<int>{0, 1, 1, 0}));

  auto column = [&](const std::string& name) {
    const auto it = std::find(ds.feature_names.begin(), ds.feature_names.end(), name);
    EXPECT_NE(it, ds.feature_names.end()) << name;
    return static_cast<std::size_t>(it - ds.feature_names.begin());
  };
  EXPECT_EQ(ds.features(2, column("workclass=Government")), 1.0);
  EXPECT_EQ(ds.features(3, column("workclass=Government")), 1.0);
  EXPECT_EQ(ds.features(0, column("workclass=Private")), 1.0);
  EXPECT_EQ(ds.features(0, column("hours-per-week=<30")), 1.0);
  EXPECT_EQ(ds.features(1, column("hours-per-week=30-40")), 1.0);
  EXPECT_EQ(ds.features(2, column("hours-per-week=>50")), 1.0);
  EXPECT_EQ(ds.features(3, column("hours-per-week=30-40")), 1.0);
  EXPECT_TRUE(std::find(ds.feature_names.begin(), ds.feature_names.end(), "fnlwgt") == ds.feature_names.end());
  EXPECT_TRUE(std::find(ds.feature_names.begin(), ds.feature_names.end(), "sex") != ds.feature_names.end());
}

TEST(AdultTest, ExcludeProtectedAndSchemaErrors) {
  std::string text = kAdultHeader;
  for (int i = 0; i < 6; ++i) text += AdultRow(20 + i, i % 2 ? "Male" : "Female", 10 * i, 40, "<=50K", "Private", i);
  const std::string path = WriteTemp("adult_exclude.csv", text);
  AdultOptions options;
  options.exclude_protected = true;
  const Dataset ds = load_adult(path, TabularSchema::Adult(), {}, options);
  EXPECT_TRUE(std::find(ds.feature_names.begin(), ds.feature_names.end(), "sex") == ds.feature_names.end());
  EXPECT_TRUE(std::find(ds.feature_names.begin(), ds.feature_names.end(), "age") == ds.feature_names.end());
  EXPECT_EQ(ds.attributes.size(), 2u);

  const std::string missing_col = WriteTemp("adult_missing.csv", "age,income\n30,<=50K\n");
  EXPECT_FAIRCLIP_ERROR(load_adult(missing_col, TabularSchema::Adult(), {}), ErrorCode::kSchemaMismatch);
  std::string bad = kAdultHeader;
  bad += AdultRow(30, "Other", 0, 40, "<=50K");
  EXPECT_FAIRCLIP_ERROR(load_adult(WriteTemp("adult_bad.csv", bad), TabularSchema::Adult(), {}),
                        ErrorCode::kSchemaMismatch);
  std::string nonnum = kAdultHeader;
  nonnum += "abc,Private,1,Bachelors,13,x,y,z,White,Male,0,0,40,US,<=50K\n";
  EXPECT_FAIRCLIP_ERROR(load_adult(WriteTemp("adult_nonnum.csv", nonnum), TabularSchema::Adult(), {}),
                        ErrorCode::kMalformedCsv);
}

TEST(AdultTest, HelpersAreIdempotent) {
  const std::vector<double> hours{10, 30, 35, 40, 45, 50, 51};
  const std::vector<double> edges{30, 40, 50};
  std::vector<std::size_t> bins;
  for (double h : hours) bins.push_back(bin_index(h, edges));
  EXPECT_EQ(bins, (std::vector<std::size_t>{0, 1, 1, 1, 2, 2, 3}));
  const std::vector<double> ages{20, 30, 40, 50};
  EXPECT_EQ(binarize_at(ages, 35.0), (std::vector<int>{0, 0, 1, 1}));

  std::string text = kAdultHeader;
  for (int i = 0; i < 20; ++i) text += AdultRow(20 + i, "Male", i == 19 ? 50000 : i, 40, "<=50K", "Private", i);
  const RawTable t = Parse(text);
  const TabularSchema schema = TabularSchema::Adult();
  AdultOptions options;
  options.outlier_quantile = 0.99;
  const AdultFit fit = fit_adult(t, schema, options);
  const RawTable once = drop_outliers(t, schema, fit);
  EXPECT_EQ(once.rows.size(), 19u);
  EXPECT_EQ(drop_outliers(once, schema, fit), once);
}

Dataset Labeled(std::size_t n, double positive_rate) {
  Dataset ds;
  ds.features = DenseMatrix(n, 2);
  ds.labels.resize(n);
  ProtectedAttribute g{"group", {"a", "b"}, std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<double>(i % 100) < positive_rate * 100.0 ? 1 : 0;
    ds.features(i, 0) = static_cast<double>(i);
    ds.features(i, 1) = static_cast<double>(i % 7);
    g.values[i] = i % 3 == 0 ? 1 : 0;
  }
  ds.numeric_columns = {0, 1};
  ds.feature_names = {"i", "i7"};
  ds.attributes.push_back(g);
  return ds;
}

TEST(SplitTest, SizesAndStratification) {
  const Dataset ds = Labeled(1000, 0.25);
  const SplitIndices idx = stratified_split(ds.labels, SplitFractions{}, StreamKey{1, "split", 0, 0});
  EXPECT_EQ(idx.train.size(), 700u);
  EXPECT_EQ(idx.validation.size(), 100u);
  EXPECT_EQ(idx.test.size(), 200u);
  auto positives = [&](const std::vector<std::size_t>& rows) {
    return std::count_if(rows.begin(), rows.end(), [&](std::size_t r) { return ds.labels[r] == 1; });
  };
  EXPECT_EQ(positives(idx.train), 175);
  EXPECT_EQ(positives(idx.validation), 25);
  EXPECT_EQ(positives(idx.test), 50);
  std::vector<std::size_t> all = idx.train;
  all.insert(all.end(), idx.validation.begin(), idx.validation.end());
  all.insert(all.end(), idx.test.begin(), idx.test.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(1000);
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(all, expected);
}

TEST(SplitTest, UnevenStrataStayWithinOne) {
  for (std::size_t n : {37u, 101u, 999u}) {
    const Dataset ds = Labeled(n, 0.31);
    const SplitIndices idx = stratified_split(ds.labels, SplitFractions{}, StreamKey{n, "split", 0, 0});
    EXPECT_EQ(idx.train.size(), static_cast<std::size_t>(std::floor(0.7 * n)));
    EXPECT_EQ(idx.validation.size(), static_cast<std::size_t>(std::floor(0.1 * n)));
    EXPECT_EQ(idx.train.size() + idx.validation.size() + idx.test.size(), n);
    for (int label : {0, 1}) {
      const double stratum = static_cast<double>(std::count(ds.labels.begin(), ds.labels.end(), label));
      const auto in_train = std::count_if(idx.train.begin(), idx.train.end(),
                                          [&](std::size_t r) { return ds.labels[r] == label; });
      EXPECT_LE(std::abs(static_cast<double>(in_train) - 0.7 * stratum), 1.0);
    }
  }
}

TEST(SplitTest, DeterministicAndErrors) {
  const Dataset ds = Labeled(200, 0.5);
  const StreamKey key{4, "split", 0, 0};
  const SplitIndices a = stratified_split(ds.labels, SplitFractions{}, key);
  const SplitIndices b = stratified_split(ds.labels, SplitFractions{}, key);
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(a.train, stratified_split(ds.labels, SplitFractions{}, StreamKey{5, "split", 0, 0}).train);
  EXPECT_FAIRCLIP_ERROR(stratified_split(ds.labels, SplitFractions{0.5, 0.1, 0.1}, key),
                        ErrorCode::kInvalidArgument);
  const std::vector<int> tiny{0, 0, 0, 0, 1, 1};
  EXPECT_FAIRCLIP_ERROR(stratified_split(tiny, SplitFractions{}, key), ErrorCode::kStratumTooSmall);
}

TEST(NormalizerTest, UsesTrainStatisticsOnly) {
  const Dataset ds = Labeled(300, 0.5);
  const DatasetSplits s = split_and_normalize(ds, SplitFractions{}, StreamKey{2, "split", 0, 0});
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t r = 0; r < s.train.size(); ++r) mean += s.train.features(r, c);
    mean /= static_cast<double>(s.train.size());
    for (std::size_t r = 0; r < s.train.size(); ++r) sq += std::pow(s.train.features(r, c) - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq / static_cast<double>(s.train.size()), 1.0, 1e-12);
  }
  const SplitIndices idx = stratified_split(ds.labels, SplitFractions{}, StreamKey{2, "split", 0, 0});
  const Normalizer norm = Normalizer::Fit(ds.subset(idx.train));
  const Dataset test = norm.Apply(ds.subset(idx.test));
  EXPECT_EQ(test.features.values, s.test.features.values);
  const DatasetSplits raw = split_and_normalize(ds, SplitFractions{}, StreamKey{2, "split", 0, 0}, false);
  EXPECT_EQ(raw.test.features.values, ds.subset(idx.test).features.values);
}

TEST(NormalizerTest, ConstantColumnIsCentered) {
  Dataset ds = Labeled(10, 0.5);
  for (std::size_t r = 0; r < 10; ++r) ds.features(r, 1) = 3.0;
  const Dataset out = Normalizer::Fit(ds).Apply(ds);
  for (std::size_t r = 0; r < 10; ++r) EXPECT_EQ(out.features(r, 1), 0.0);
}

TEST(BalanceTest, EqualGroupSizes) {
  const Dataset ds = Labeled(900, 0.4);
  const Dataset b = balance_by_group(ds, "group", StreamKey{1, "balance", 0, 0});
  const auto& g = b.attribute("group").values;
  EXPECT_EQ(std::count(g.begin(), g.end(), 0), 300);
  EXPECT_EQ(std::count(g.begin(), g.end(), 1), 300);
  EXPECT_EQ(b.size(), 600u);
  EXPECT_FAIRCLIP_ERROR(balance_by_group(ds, "race", {}), ErrorCode::kMissingAttribute);
}

TEST(SyntheticTest, GroupsAndLabelNoise) {
  SyntheticSpec spec;
  spec.n = 20000;
  spec.seed = 3;
  const Dataset ds = synth_generate(spec);
  EXPECT_EQ(ds.size(), 20000u);
  EXPECT_EQ(ds.features.cols, 20u);
  const auto& g = ds.attribute("group").values;
  const double minority = static_cast<double>(std::count(g.begin(), g.end(), 1)) / 20000.0;
  EXPECT_NEAR(minority, 0.2, 3.0 * std::sqrt(0.2 * 0.8 / 20000.0));
  const double positives = static_cast<double>(std::count(ds.labels.begin(), ds.labels.end(), 1)) / 20000.0;
  EXPECT_NEAR(positives, 0.5, 0.05);
  double shift = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (g[i] != 1) continue;
    ++count;
    for (std::size_t k = 0; k < 20; ++k) shift += ds.features(i, k);
  }
  EXPECT_NEAR(shift / static_cast<double>(count * 20), 1.0, 0.05);
  EXPECT_EQ(synth_generate(spec).features.values, ds.features.values);
  spec.seed = 4;
  EXPECT_NE(synth_generate(spec).labels, ds.labels);
}

TEST(SyntheticTest, FeatureScaleOnlyScales) {
  SyntheticSpec spec;
  spec.n = 500;
  const Dataset a = synth_generate(spec);
  spec.feature_scale = 0.1;
  const Dataset b = synth_generate(spec);
  EXPECT_EQ(a.labels, b.labels);
  for (std::size_t k = 0; k < a.features.values.size(); ++k) {
    EXPECT_NEAR(b.features.values[k], 0.1 * a.features.values[k], 1e-12);
  }
  spec.minority_fraction = 0.0;
  EXPECT_FAIRCLIP_ERROR(synth_generate(spec), ErrorCode::kInvalidArgument);
}

TEST(CacheTest, RoundTrip) {
  SyntheticSpec spec;
  spec.n = 300;
  spec.dim = 5;
  const Dataset ds = synth_generate(spec);
  std::stringstream buf;
  write_dataset_cache(buf, ds);
  const Dataset back = read_dataset_cache(buf);
  EXPECT_EQ(back.features.values, ds.features.values);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.feature_names, ds.feature_names);
  EXPECT_EQ(back.numeric_columns, ds.numeric_columns);
  EXPECT_EQ(back.provenance, ds.provenance);
  ASSERT_EQ(back.attributes.size(), 1u);
  EXPECT_EQ(back.attributes[0].values, ds.attributes[0].values);
  EXPECT_EQ(back.attributes[0].levels, ds.attributes[0].levels);

  std::stringstream junk("not a cache");
  EXPECT_FAIRCLIP_ERROR(read_dataset_cache(junk), ErrorCode::kIoError);
  std::string truncated;
  {
    std::stringstream full;
    write_dataset_cache(full, ds);
    truncated = full.str().substr(0, 100);
  }
  std::stringstream cut(truncated);
  EXPECT_FAIRCLIP_ERROR(read_dataset_cache(cut), ErrorCode::kIoError);
}

}  // namespace
}  // namespace fairclip

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "simmtm/data.hpp"

namespace simmtm {
namespace {

class TempDir : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("simmtm_data_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  std::filesystem::path write(const std::string& name, const std::string& body) {
    auto path = dir_ / name;
    std::ofstream(path) << body;
    return path;
  }

  std::filesystem::path dir_;
};

using LoadCsv = TempDir;

TEST_F(LoadCsv, NumericTable) {
  RawDataset d = load_csv(write("a.csv", "u,v\n1,2\n3,4\n5,6\n"));
  EXPECT_EQ(d.length(), 3);
  EXPECT_EQ(d.channels(), 2);
  EXPECT_FALSE(d.labeled());
  EXPECT_DOUBLE_EQ(d.values(2, 1), 6.0);
  EXPECT_EQ(d.columns, (std::vector<std::string>{"u", "v"}));
}

TEST_F(LoadCsv, LabelColumn) {
  RawDataset d = load_csv(write("b.csv", "x,label\n0.5,0\n1.5,1\n-2,1\n"));
  EXPECT_EQ(d.channels(), 1);
  EXPECT_EQ(d.num_classes(), 2);
  EXPECT_EQ(d.labels, (std::vector<int>{0, 1, 1}));
}

TEST_F(LoadCsv, UnparsableCellNamesRowAndColumn) {
  try {
    load_csv(write("c.csv", "x,y\n1,2\nabc,3\n"));
    FAIL() << "expected ingestion error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIngestion);
    EXPECT_NE(std::string(e.what()).find("row 2, column 1"), std::string::npos) << e.what();
  }
}

TEST_F(LoadCsv, EmptyFileAndMissingCell) {
  try {
    load_csv(write("d.csv", ""));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEmptyInput);
  }
  EXPECT_THROW(load_csv(write("e.csv", "x,y\n1,\n")), Error);
  try {
    load_csv(dir_ / "missing.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingFile);
  }
}

TEST_F(LoadCsv, WriteThenLoadIsExact) {
  RawDataset d;
  d.columns = {"a", "b"};
  d.values = RowMatrix(2, 2);
  d.values << 0.1, -1e-300, 3.141592653589793, 12345.678901234567;
  d.labels = {1, 0};
  write_csv(d, dir_ / "rt.csv");
  RawDataset back = load_csv(dir_ / "rt.csv");
  EXPECT_EQ(back.values, d.values);
  EXPECT_EQ(back.labels, d.labels);
}

RawDataset column(std::vector<double> v) {
  RawDataset d;
  d.columns = {"x"};
  d.values = ConstRowMatrixMap(v.data(), static_cast<Index>(v.size()), 1);
  return d;
}

TEST(Standardize, PopulationConvention) {
  RawDataset d = column({1, 2, 3});
  Normalization s = fit_normalization(d);
  EXPECT_DOUBLE_EQ(s.mean[0], 2.0);
  EXPECT_NEAR(s.stdev[0], std::sqrt(2.0 / 3.0), 1e-15);
  RawDataset z = standardize(d, s);
  EXPECT_NEAR(z.values(0, 0), -z.values(2, 0), 1e-15);
  EXPECT_NEAR(z.values(1, 0), 0.0, 1e-15);
}

TEST(Standardize, ConstantVariateMapsToZeros) {
  RawDataset d = column({5, 5, 5});
  Normalization s = fit_normalization(d);
  EXPECT_EQ(s.stdev[0], 1.0);
  EXPECT_EQ(s.constant_columns, (std::vector<Index>{0}));
  EXPECT_EQ(standardize(d, s).values, RowMatrix::Zero(3, 1));
  EXPECT_NE(ingestion_report(d, s).find("constant"), std::string::npos);
}

TEST(Standardize, RoundTrip) {
  RawDataset d;
  d.columns = {"a", "b"};
  d.values = RowMatrix::Random(50, 2) * 7.0;
  d.values.col(1).array() += 100.0;
  Normalization s = fit_normalization(d);
  RawDataset back = destandardize(standardize(d, s), s);
  EXPECT_LE((back.values - d.values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Standardize, UsesTrainStatisticsOnly) {
  std::vector<double> v(100);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i * i);
  RawDataset d = column(v);
  ChronologicalSplit split = split_chronological(d, {});
  Normalization from_train = fit_normalization(split.train);
  RawDataset test_a = standardize(split.test, from_train);
  // Changing val/test contents leaves train statistics, hence the transform, untouched.
  split.test.values.array() += 1000.0;
  EXPECT_EQ(fit_normalization(split.train).mean, from_train.mean);
  const RowMatrix shifted = standardize(split.test, from_train).values.array() - 1000.0 / from_train.stdev[0];
  EXPECT_LE((shifted - test_a.values).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Split, ChronologicalOrderingAndFractions) {
  std::vector<double> v(1000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  ChronologicalSplit s = split_chronological(column(v), {});
  EXPECT_EQ(s.train.length(), 700);
  EXPECT_EQ(s.val.length(), 100);
  EXPECT_EQ(s.test.length(), 200);
  EXPECT_LT(s.train.values.maxCoeff(), s.val.values.minCoeff());
  EXPECT_LT(s.val.values.maxCoeff(), s.test.values.minCoeff());
  EXPECT_EQ(s.test_start, 800);
}

TEST(Split, FractionsValidated) {
  SplitSpec bad{0.5, 0.3, 0.3, true};
  EXPECT_THROW(bad.validate(), Error);
  SplitSpec zero{1.0, 0.0, 0.0, true};
  EXPECT_THROW(zero.validate(), Error);
}

TEST(Windows, CountFollowsStrideFormula) {
  std::vector<double> v(10, 0.0);
  EXPECT_EQ(make_windows(column(v), 4, 2, 1).inputs.size(), 5);
  EXPECT_EQ(make_windows(column(v), 4, 2, 3).inputs.size(), 2);
}

TEST(Windows, TargetsFollowInputs) {
  RawDataset d = column({0, 1, 2, 3, 4, 5});
  WindowSet w = make_windows(d, 4, 2, 1);
  ASSERT_EQ(w.inputs.size(), 1);
  for (Index t = 0; t < 4; ++t) EXPECT_EQ(w.inputs.values.at({0, t, 0}), static_cast<double>(t));
  EXPECT_EQ(w.targets.at({0, 0, 0}), 4.0);
  EXPECT_EQ(w.targets.at({0, 1, 0}), 5.0);
}

TEST(Windows, InsufficientData) {
  try {
    make_windows(column({0, 1, 2, 3, 4}), 4, 2, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInsufficientData);
  }
}

TEST(Windows, DistinctStartsGiveDistinctWindows) {
  std::vector<double> v(40);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(0.37 * static_cast<double>(i)) + 0.01 * static_cast<double>(i);
  WindowSet w = make_windows(column(v), 8, 0, 1);
  std::set<std::vector<double>> seen;
  for (Index n = 0; n < w.inputs.size(); ++n) {
    std::vector<double> row;
    for (Index t = 0; t < 8; ++t) row.push_back(w.inputs.values.at({n, t, 0}));
    EXPECT_TRUE(seen.insert(row).second);
  }
}

TEST(FlattenChannels, ShapesAndRoundTrip) {
  Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(48, 0, 47);
  Tensor b = Tensor::from_vector({2, 8, 3}, v);
  Tensor f = flatten_channels(b);
  EXPECT_EQ(f.shape(), (Shape{6, 8, 1}));
  EXPECT_EQ(f.at({4, 5, 0}), b.at({1, 5, 1}));
  EXPECT_EQ(unflatten_channels(f, 3).values(), b.values());

  Tensor single = Tensor::from_vector({2, 8, 1}, v.head(16));
  EXPECT_EQ(flatten_channels(single).shape(), single.shape());
}

TEST(Samples, SegmentAndSplit) {
  RawDataset d;
  d.columns = {"x"};
  d.values = RowMatrix(40, 1);
  for (Index t = 0; t < 40; ++t) {
    d.values(t, 0) = static_cast<double>(t);
    d.labels.push_back(static_cast<int>((t / 4) % 2));
  }
  LabeledSamples s = segment_samples(d, 4);
  EXPECT_EQ(s.size(), 10);
  EXPECT_EQ(s.values.shape(), (Shape{10, 4, 1}));
  SampleSplit split = split_samples(s, {0.6, 0.2, 0.2, false}, 3);
  EXPECT_EQ(split.train.size() + split.val.size() + split.test.size(), 10);
  EXPECT_THROW(segment_samples(d, 3), Error);
}

}  // namespace
}  // namespace simmtm

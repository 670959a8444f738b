#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <set>
#include <sstream>

#include "missforecast/core.hpp"
#include "missforecast/csv.hpp"
#include "missforecast/parallel.hpp"
#include "missforecast/rng.hpp"

using namespace missforecast;

namespace {

MaskedDataset small_dataset() {
  Eigen::MatrixXd x(4, 2);
  x << 1, 2, 3, 4, 5, 6, 7, 8;
  Eigen::VectorXd y(4);
  y << 0.5, 1.5, 2.5, 3.5;
  return MaskedDataset(x, {0, 0, 1, 0, 0, 1, 1, 1}, y, {0, 0, 0, 1}, {"a", "b"});
}

}  // namespace

TEST(Pattern, LittleEndianStrings) {
  const auto p = Pattern::parse("10");
  EXPECT_TRUE(p.missing(0));
  EXPECT_TRUE(p.observed(1));
  EXPECT_EQ(p.to_string(), "10");
  EXPECT_EQ(p.observed_indices(), std::vector<std::size_t>{1});
  EXPECT_EQ(p.missing_indices(), std::vector<std::size_t>{0});
  EXPECT_THROW(Pattern::parse("1x"), InputError);
}

TEST(Pattern, SubsetOrder) {
  EXPECT_TRUE(Pattern::parse("11").observed_subset_of(Pattern::parse("01")));
  EXPECT_TRUE(Pattern::parse("10").observed_subset_of(Pattern::parse("00")));
  EXPECT_FALSE(Pattern::parse("00").observed_subset_of(Pattern::parse("10")));
  EXPECT_TRUE(Pattern::complete(3).is_complete());
}

TEST(Query, MaskedSlotsCannotBeRead) {
  Query q(Pattern::parse("10"), {42.0, 1.0});
  EXPECT_THROW(q.value(0), ContractViolation);
  EXPECT_DOUBLE_EQ(q.value(1), 1.0);
  EXPECT_THROW(Query(Pattern::parse("10"), {1.0}), ContractViolation);
}

TEST(MaskedDataset, MaskIsAuthoritative) {
  const auto ds = small_dataset();
  EXPECT_EQ(ds.n(), 4u);
  EXPECT_THROW(ds.x(1, 0), ContractViolation);
  EXPECT_THROW(ds.y(3), ContractViolation);
  EXPECT_DOUBLE_EQ(ds.x(1, 1), 4.0);
  EXPECT_EQ(ds.pattern(3).to_string(), "11");
  EXPECT_TRUE(ds.column_has_missing(0));
  EXPECT_TRUE(ds.any_y_missing());
}

TEST(MaskedDataset, SubsetKeepsMasks) {
  const auto ds = small_dataset();
  const std::vector<std::size_t> rows{3, 1};
  const auto s = ds.subset(rows);
  EXPECT_EQ(s.pattern(0).to_string(), "11");
  EXPECT_EQ(s.pattern(1).to_string(), "10");
  EXPECT_TRUE(s.y_missing(0));
  EXPECT_DOUBLE_EQ(s.y(1), 1.5);
}

TEST(MaskedDataset, PatternCounts) {
  const auto counts = enumerate_patterns(small_dataset());
  ASSERT_EQ(counts.size(), 4u);
  std::size_t total = 0;
  for (const auto& c : counts) total += c.count;
  EXPECT_EQ(total, 4u);
}

TEST(MaskedDataset, Partition) {
  const auto ds = small_dataset();
  const auto part = ds.partition_row(1);
  EXPECT_EQ(part.observed, std::vector<std::size_t>{1});
  EXPECT_EQ(part.missing, std::vector<std::size_t>{0});
  ASSERT_EQ(part.observed_values.size(), 1u);
  EXPECT_DOUBLE_EQ(part.observed_values[0], 4.0);
}

TEST(PredictiveDistribution, Validation) {
  EXPECT_THROW(PredictiveDistribution::bernoulli(1.5), NumericError);
  EXPECT_THROW(PredictiveDistribution::gaussian(0.0, -1.0), NumericError);
  EXPECT_DOUBLE_EQ(PredictiveDistribution::bernoulli(0.3).point(), 0.3);
  EXPECT_DOUBLE_EQ(PredictiveDistribution::gaussian(2.0, 1.0).point(), 2.0);
}

TEST(Rng, DerivedSeedsArePureAndDistinct) {
  EXPECT_EQ(derive_seed(7, {1, 2}), derive_seed(7, {1, 2}));
  EXPECT_NE(derive_seed(7, {1, 2}), derive_seed(7, {2, 1}));
  EXPECT_NE(derive_seed(7, {1}), derive_seed(8, {1}));
  std::set<std::uint64_t> seen;
  for (std::uint64_t k = 0; k < 1000; ++k) seen.insert(derive_seed(1, {k}));
  EXPECT_EQ(seen.size(), 1000u);
  Rng a = make_rng(5), b = make_rng(5);
  EXPECT_EQ(a(), b());
}

TEST(Parallel, EachIndexOnce) {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; }, 4);
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(Parallel, NestedCallsAndExceptions) {
  std::vector<int> out(16, 0);
  parallel_for(4, [&](std::size_t i) {
    parallel_for(4, [&](std::size_t j) { out[i * 4 + j] = static_cast<int>(i * 4 + j); }, 4);
  }, 4);
  for (int k = 0; k < 16; ++k) EXPECT_EQ(out[static_cast<std::size_t>(k)], k);
  EXPECT_THROW(parallel_for(100, [](std::size_t i) {
    if (i == 37) throw InputError("boom");
  }, 4), InputError);
}

TEST(Csv, MissingCellsAndRoundTrip) {
  std::istringstream in("a,b,y\n1,NA,0\n,2.5,1\n3,4,\n");
  const auto ds = read_dataset_csv(in, "y");
  EXPECT_EQ(ds.n(), 3u);
  EXPECT_EQ(ds.column_names(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(ds.pattern(0).to_string(), "01");
  EXPECT_EQ(ds.pattern(1).to_string(), "10");
  EXPECT_TRUE(ds.y_missing(2));
  std::ostringstream out;
  write_dataset_csv(out, ds);
  std::istringstream back(out.str());
  const auto ds2 = read_dataset_csv(back, "y");
  for (std::size_t i = 0; i < ds.n(); ++i) {
    EXPECT_EQ(ds.pattern(i), ds2.pattern(i));
    EXPECT_EQ(ds.y_missing(i), ds2.y_missing(i));
  }
  EXPECT_DOUBLE_EQ(ds2.x(1, 1), 2.5);
}

TEST(Csv, Errors) {
  std::istringstream bad("a,y\n1,zz\n");
  EXPECT_THROW(read_dataset_csv(bad, "y"), InputError);
  std::istringstream ragged("a,y\n1\n");
  EXPECT_THROW(read_dataset_csv(ragged, "y"), InputError);
  std::istringstream no_outcome("a,b\n1,2\n");
  EXPECT_THROW(read_dataset_csv(no_outcome, "y"), InputError);
  EXPECT_EQ(split_csv_line("\"x,1\",2"), (std::vector<std::string>{"x,1", "2"}));
}

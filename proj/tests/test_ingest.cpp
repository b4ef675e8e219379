#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "lvm/ingest.hpp"
#include "test_util.hpp"

using namespace lvm;

namespace {

VariableSpec ordinal(const std::string& name, int levels, bool invert = false) {
  VariableSpec v;
  v.name = name;
  for (int i = 1; i <= levels; ++i) v.valid_levels.push_back(i);
  v.invalid_codes = {0, 8, 9};
  v.invert_polarity = invert;
  return v;
}

OrdinalDataset load(const std::string& text, const Schema& s, const RowFilter& f = {}, LoadOptions o = {}) {
  std::istringstream in(text);
  return load_dataset(in, s, f, o);
}

const char* kWaves =
    "YEAR,V30,V31\n"
    "1991,1,4\n"
    "1998,2,3\n"
    "2008,3,9\n"
    "1991,4,\n"
    "2008,1,1\n";

}  // namespace

TEST(Schema, RejectsInconsistentSpecs) {
  auto v = ordinal("A", 4);
  v.merges = {{5, 1}};
  EXPECT_THROW(v.validate(), SchemaError);
  v = ordinal("A", 4);
  v.valid_levels = {1, 3, 2};
  EXPECT_THROW(v.validate(), SchemaError);
  v = ordinal("A", 4);
  v.kind = VariableKind::numeric;
  v.invert_polarity = true;
  EXPECT_THROW(v.validate(), SchemaError);
  v = ordinal("A", 4);
  v.invalid_codes.insert(2);
  EXPECT_THROW(v.validate(), SchemaError);
  v = ordinal("A", 0);
  EXPECT_THROW(v.validate(), SchemaError);
}

TEST(Schema, JsonRoundTrip) {
  Schema s;
  s.variables = {ordinal("A", 4, true), ordinal("B", 5)};
  s.variables[1].merges = {{5, 1}};
  s.metadata = {"YEAR"};
  const Schema back = schema_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));
}

TEST(Schema, ShippedIsspSchemaCoversAllVariables) {
  const Schema s = load_schema(lvm::testing::source_path("data/schemas/issp_za5070.json"));
  EXPECT_EQ(s.variables.size(), 34u);
  int inverted = 0;
  for (const auto& v : s.variables) inverted += v.invert_polarity;
  EXPECT_GT(inverted, 0);
  ASSERT_NE(s.find("SEX"), nullptr);
  EXPECT_EQ(s.find("SEX")->kind, VariableKind::nominal);
  EXPECT_EQ(s.find("AGE")->kind, VariableKind::numeric);
}

TEST(Load, FilterKeepsSelectedWaves) {
  Schema s;
  s.variables = {ordinal("V30", 4), ordinal("V31", 4)};
  const auto ds = load(kWaves, s, RowFilter{{{"YEAR", {"1991", "1998"}}}});
  ASSERT_EQ(ds.n_rows(), 3);
  EXPECT_EQ(ds.metadata.at("YEAR"), (std::vector<std::string>{"1991", "1998", "1991"}));
  EXPECT_NE(ds.provenance.filter.find("1998"), std::string::npos);
}

TEST(Load, WavePartitionCountsSumToTotal) {
  Schema s;
  s.variables = {ordinal("V30", 4), ordinal("V31", 4)};
  const auto all = load(kWaves, s);
  const auto a = load(kWaves, s, RowFilter{{{"YEAR", {"1991", "1998"}}}});
  const auto b = load(kWaves, s, RowFilter{{{"YEAR", {"2008"}}}});
  EXPECT_EQ(a.n_rows() + b.n_rows(), all.n_rows());
  EXPECT_EQ(all.n_rows(), 5);
}

TEST(Load, EmptyFilterIsIdentity) {
  Schema s;
  s.variables = {ordinal("A", 3)};
  const auto ds = load("A\n1\n2\n3\n", s);
  ASSERT_EQ(ds.n_rows(), 3);
  for (int r = 0; r < 3; ++r) EXPECT_EQ(ds.cells(r, 0), r + 1);
}

TEST(Load, InvalidCodeMaskedRowRetained) {
  Schema s;
  s.variables = {ordinal("V30", 4), ordinal("V31", 4)};
  const auto ds = load(kWaves, s);
  EXPECT_EQ(ds.n_rows(), 5);
  EXPECT_TRUE(is_missing(ds.cells(2, 1)));
  EXPECT_EQ(ds.cells(2, 0), 3);
  EXPECT_TRUE(is_missing(ds.cells(3, 1)));
}

TEST(Load, TabDelimitedDetected) {
  Schema s;
  s.variables = {ordinal("A", 4), ordinal("B", 4)};
  const auto ds = load("A\tB\n1\t2\n3\t4\n", s);
  ASSERT_EQ(ds.n_rows(), 2);
  EXPECT_EQ(ds.cells(1, 1), 4);
}

TEST(Load, MissingColumnNamed) {
  Schema s;
  s.variables = {ordinal("V99", 4)};
  try {
    load(kWaves, s);
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("V99"), std::string::npos);
  }
}

TEST(Load, UnparseableCellAddressed) {
  Schema s;
  s.variables = {ordinal("A", 4)};
  try {
    load("A\n1\nxyz\n", s);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.row(), 3);
    EXPECT_EQ(e.column(), "A");
  }
}

TEST(Load, UndeclaredCodeRejectedOrMasked) {
  Schema s;
  s.variables = {ordinal("A", 4)};
  EXPECT_THROW(load("A\n1\n6\n", s), DataError);
  LoadOptions o;
  o.unknown_codes_as_missing = true;
  const auto ds = load("A\n1\n6\n", s, {}, o);
  EXPECT_EQ(ds.n_rows(), 2);
  EXPECT_TRUE(is_missing(ds.cells(1, 0)));
  ASSERT_EQ(ds.diagnostics.size(), 1u);
}

TEST(Load, RaggedRowRejected) {
  Schema s;
  s.variables = {ordinal("A", 4)};
  EXPECT_THROW(load("A,B\n1,2\n1\n", s), DataError);
}

TEST(Recode, MotherAttendanceMergedIntoNever) {
  const Schema issp = load_schema(lvm::testing::source_path("data/schemas/issp_za5070.json"));
  Schema s;
  s.variables = {*issp.find("V46")};
  const auto ds = recode(load("V46\n1\n9\n8\n2\n", s));
  EXPECT_EQ(ds.variables[0].valid_levels.size(), 8u);
  EXPECT_EQ(ds.cells(0, 0), 1);
  EXPECT_EQ(ds.cells(1, 0), 1);
  EXPECT_EQ(ds.cells(2, 0), 8);
  EXPECT_EQ(ds.cells(3, 0), 2);
}

TEST(Recode, InversionSwapsEnds) {
  Schema s;
  s.variables = {ordinal("A", 4, true)};
  const auto ds = recode(load("A\n1\n2\n3\n4\n", s));
  EXPECT_EQ(ds.cells(0, 0), 4);
  EXPECT_EQ(ds.cells(1, 0), 3);
  EXPECT_EQ(ds.cells(2, 0), 2);
  EXPECT_EQ(ds.cells(3, 0), 1);
}

TEST(Recode, PlainColumnBitwiseIdentical) {
  Schema s;
  s.variables = {ordinal("A", 5)};
  const auto in = load("A\n5\n\n2\n1\n", s);
  const auto out = recode(in);
  ASSERT_EQ(out.cells.rows(), in.cells.rows());
  for (Eigen::Index r = 0; r < in.cells.rows(); ++r)
    EXPECT_EQ(std::memcmp(&in.cells(r, 0), &out.cells(r, 0), sizeof(double)), 0);
}

TEST(Recode, MergeThenRenumberContiguous) {
  Schema s;
  auto v = ordinal("A", 5, true);
  v.merges = {{2, 1}, {4, 3}};
  s.variables = {v};
  // Survivors 1,3,5 -> ranks 1,2,3 -> inverted 3,2,1.
  const auto ds = recode(load("A\n1\n2\n3\n4\n5\n", s));
  EXPECT_EQ(ds.variables[0].valid_levels, (std::vector<int>{1, 2, 3}));
  const std::vector<double> want{3, 3, 2, 2, 1};
  for (int r = 0; r < 5; ++r) EXPECT_EQ(ds.cells(r, 0), want[static_cast<std::size_t>(r)]);
}

TEST(Recode, ChainedAndCyclicMerges) {
  OrdinalDataset ds;
  auto v = ordinal("A", 3);
  v.merges = {{3, 2}, {2, 1}};
  ds.variables = {v};
  ds.cells = Matrix::Constant(1, 1, 3.0);
  EXPECT_THROW(recode(ds), RecodeError);  // one level left
  v = ordinal("A", 4);
  v.merges = {{4, 3}, {3, 2}};
  ds.variables = {v};
  ds.cells = Matrix::Constant(1, 1, 4.0);
  EXPECT_EQ(recode(ds).cells(0, 0), 2);
  v.merges = {{1, 2}, {2, 1}};
  ds.variables = {v};
  EXPECT_THROW(recode(ds), RecodeError);
}

TEST(RecodeProperty, IdempotentAndInversionInvolutive) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int levels = 2 + static_cast<int>(rng.index(9));
    Schema s;
    auto v = ordinal("A", levels, rng.uniform() < 0.5);
    v.invalid_codes = {0, 98, 99};
    if (levels > 3 && rng.uniform() < 0.5) v.merges = {{levels, 1}};
    s.variables = {v};
    std::ostringstream csv;
    csv << "A\n";
    for (int r = 0; r < 40; ++r) {
      if (rng.uniform() < 0.1)
        csv << "99\n";
      else
        csv << 1 + rng.index(static_cast<std::uint64_t>(levels)) << "\n";
    }
    const auto once = recode(load(csv.str(), s));
    const auto twice = recode(once);
    for (Eigen::Index r = 0; r < once.cells.rows(); ++r) {
      const double a = once.cells(r, 0), b = twice.cells(r, 0);
      ASSERT_TRUE((is_missing(a) && is_missing(b)) || a == b);
    }
    auto flipped = once;
    flipped.variables[0].invert_polarity = true;
    auto back = recode(flipped);
    back.variables[0].invert_polarity = true;
    back = recode(back);
    const int L = static_cast<int>(once.variables[0].valid_levels.size());
    for (Eigen::Index r = 0; r < once.cells.rows(); ++r) {
      const double a = once.cells(r, 0);
      if (is_missing(a)) {
        EXPECT_TRUE(is_missing(flipped.cells(r, 0)));
        continue;
      }
      EXPECT_EQ(back.cells(r, 0), a);
      EXPECT_GE(a, 1);
      EXPECT_LE(a, L);
    }
  }
}

TEST(ToNumeric, NominalExcludedNumericPassesThrough) {
  Schema s;
  VariableSpec age;
  age.name = "AGE";
  age.kind = VariableKind::numeric;
  age.invalid_codes = {999};
  VariableSpec sex;
  sex.name = "SEX";
  sex.kind = VariableKind::nominal;
  sex.valid_levels = {1, 2};
  s.variables = {ordinal("A", 4), age, sex, ordinal("B", 3)};
  const auto m = to_numeric(recode(load("A,AGE,SEX,B\n1,34.5,1,\n4,999,2,\n", s)));
  EXPECT_EQ(m.columns, (std::vector<std::string>{"A", "AGE", "B"}));
  EXPECT_EQ(m.levels, (std::vector<int>{4, 0, 3}));
  EXPECT_EQ(m.cells(0, 1), 34.5);
  EXPECT_TRUE(is_missing(m.cells(1, 1)));
  bool nominal_notice = false, empty_notice = false;
  for (const auto& n : m.notices) {
    nominal_notice |= n.find("SEX") != std::string::npos;
    empty_notice |= n.find("'B'") != std::string::npos;
  }
  EXPECT_TRUE(nominal_notice);
  EXPECT_TRUE(empty_notice);
}

TEST(WriteDelimited, RoundTrips) {
  Schema s;
  s.variables = {ordinal("V30", 4), ordinal("V31", 4)};
  s.metadata = {"YEAR"};
  const auto ds = load(kWaves, s);
  std::ostringstream os;
  write_delimited(os, ds);
  const auto back = load(os.str(), s);
  ASSERT_EQ(back.n_rows(), ds.n_rows());
  EXPECT_EQ(back.metadata, ds.metadata);
  for (Eigen::Index r = 0; r < ds.n_rows(); ++r)
    for (Eigen::Index c = 0; c < 2; ++c) {
      const double a = ds.cells(r, c), b = back.cells(r, c);
      EXPECT_TRUE((is_missing(a) && is_missing(b)) || a == b);
    }
}

TEST(PolarityProperty, PairwiseCompleteCountsPreserved) {
  Schema s;
  s.variables = {ordinal("V30", 4), ordinal("V31", 4, true)};
  const auto raw = load(kWaves, s);
  const auto rec = recode(raw);
  auto complete = [](const Matrix& m) {
    int n = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) n += !is_missing(m(r, 0)) && !is_missing(m(r, 1));
    return n;
  };
  EXPECT_EQ(complete(raw.cells), complete(rec.cells));
}

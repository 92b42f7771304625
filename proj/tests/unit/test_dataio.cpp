#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "ensx/core/error.hpp"
#include "ensx/dataio/dataset.hpp"
#include "ensx/dataio/encoding.hpp"
#include "fixtures.hpp"

using namespace ensx;
using namespace ensx::dataio;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected ensx::Error");
  return ErrorCode::InvalidArgument;
}

std::string balanced_csv(int n) {
  std::string s = "f,label\n";
  for (int i = 0; i < n; ++i) s += std::to_string(i) + "," + (i % 2 ? "b" : "a") + "\n";
  return s;
}

}  // namespace

TEST_CASE("adult sample loads with two classes in first-appearance order") {
  const auto ds = load_csv(std::string(ENSX_DATA_DIR) + "/adult_sample.csv", "income");
  REQUIRE(ds.classes.size() == 2);
  CHECK(ds.classes[0] == "<=50K");
  CHECK(ds.classes[1] == ">50K");
  CHECK(ds.attributes.size() == 14);
  CHECK(ds.rows() == 10000);
  CHECK(ds.dropped_rows == 400);
  const auto age = ds.attribute_index("age");
  REQUIRE(age);
  CHECK(ds.attributes[*age].is_numeric());
  CHECK_FALSE(ds.attributes[*ds.attribute_index("workclass")].is_numeric());
}

TEST_CASE("type inference and hints") {
  const auto ds = parse_csv("a,label\n1,x\n2,y\nx,x\n", "label");
  REQUIRE(ds.attributes.size() == 1);
  CHECK(ds.attributes[0].kind == AttributeKind::Categorical);
  CHECK(ds.attributes[0].categories == std::vector<std::string>{"1", "2", "x"});

  const auto numeric = parse_csv("a,label\n1,x\n2.5,y\n-3e1,x\n", "label");
  CHECK(numeric.attributes[0].is_numeric());
  CHECK(numeric.value(2, 0) == -30.0);

  const auto forced = parse_csv("a,label\n1,x\n2,y\n", "label", {{"a", AttributeKind::Categorical}});
  CHECK(forced.attributes[0].categories == std::vector<std::string>{"1", "2"});
  CHECK(code_of([] { parse_csv("a,label\nq,x\n2,y\n", "label", {{"a", AttributeKind::Numeric}}); }) ==
        ErrorCode::Parse);
}

TEST_CASE("missing values drop rows and are counted") {
  const auto ds = parse_csv("a,b,label\n1,?,x\n2,u,y\n,v,x\n3,w,x\n", "label");
  CHECK(ds.rows() == 2);
  CHECK(ds.dropped_rows == 2);
}

TEST_CASE("quoted fields keep commas, escaped quotes and newlines") {
  const auto fields = split_csv_record(R"("a, b",  c ,"say ""hi""")");
  CHECK(fields == std::vector<std::string>{"a, b", "c", "say \"hi\""});
  const auto ds = parse_csv("\"name\",label\n\"multi\nline\",x\nplain,y\r\n", "label");
  CHECK(ds.attributes[0].categories == std::vector<std::string>{"multi\nline", "plain"});
}

TEST_CASE("load errors") {
  CHECK(code_of([] { load_csv("/nonexistent/file.csv", "label"); }) == ErrorCode::Io);
  CHECK(code_of([] { parse_csv("a,b\n1,2\n", "label"); }) == ErrorCode::NotFound);
  CHECK(code_of([] { parse_csv("label\nx\ny\n", "label"); }) == ErrorCode::Precondition);
  CHECK(code_of([] { parse_csv("a,label\n1,x\n2,x\n", "label"); }) == ErrorCode::Precondition);
  CHECK(code_of([] { parse_csv("a,label\n", "label"); }) == ErrorCode::Precondition);
  CHECK(code_of([] { parse_csv("a,label\n1,x,3\n", "label"); }) == ErrorCode::Parse);
}

TEST_CASE("split is deterministic and stratified") {
  const auto base = parse_csv(balanced_csv(1000), "label");
  const auto a = split_and_fold(base, 0.2, 5, 7);
  const auto b = split_and_fold(base, 0.2, 5, 7);
  CHECK(a.split == b.split);
  CHECK(a.folds == b.folds);
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(split_and_fold(base, 0.2, 5, 8).fingerprint() != a.fingerprint());

  std::map<int, int> test_per_class;
  for (std::size_t r : a.test_rows()) ++test_per_class[a.labels[r]];
  CHECK(std::abs(test_per_class[0] - 100) <= 1);
  CHECK(std::abs(test_per_class[1] - 100) <= 1);

  // 800 training rows over 5 folds; counts taken by enumeration.
  const auto train = a.train_rows();
  REQUIRE(train.size() == 800);
  std::map<int, int> fold_size;
  std::map<std::pair<int, int>, int> fold_class;
  for (std::size_t r : train) {
    REQUIRE(a.folds[r] >= 0);
    REQUIRE(a.folds[r] < 5);
    ++fold_size[a.folds[r]];
    ++fold_class[{a.folds[r], a.labels[r]}];
  }
  int total = 0;
  for (auto [f, size] : fold_size) {
    CHECK(std::abs(size - 160) <= 1);
    total += size;
  }
  CHECK(total == 800);
  for (auto [key, count] : fold_class) CHECK(std::abs(count - 80) <= 1);
  for (std::size_t r : a.test_rows()) CHECK(a.folds[r] == -1);
}

TEST_CASE("stratification holds for skewed classes") {
  std::string csv = "f,label\n";
  for (int i = 0; i < 997; ++i) csv += std::to_string(i) + "," + (i % 7 == 0 ? "rare" : (i % 3 ? "b" : "c")) + "\n";
  const auto ds = split_and_fold(parse_csv(csv, "label"), 0.3, 4, 11);
  std::vector<int> per_class(3), test(3);
  for (std::size_t r = 0; r < ds.rows(); ++r) ++per_class[static_cast<std::size_t>(ds.labels[r])];
  for (std::size_t r : ds.test_rows()) ++test[static_cast<std::size_t>(ds.labels[r])];
  for (int c = 0; c < 3; ++c) CHECK(std::abs(test[c] - per_class[c] * 0.3) <= 1.0);
  std::vector<std::vector<int>> fold_counts(4, std::vector<int>(3));
  for (std::size_t r : ds.train_rows()) ++fold_counts[ds.folds[r]][ds.labels[r]];
  for (int f = 0; f < 4; ++f) {
    for (int c = 0; c < 3; ++c) CHECK(std::abs(fold_counts[f][c] - (per_class[c] - test[c]) / 4.0) <= 1.0);
  }
}

TEST_CASE("split errors") {
  const auto base = parse_csv(balanced_csv(20), "label");
  CHECK(code_of([&] { split_and_fold(base, 0.0, 5, 1); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { split_and_fold(base, 0.5, 1, 1); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { split_and_fold(base, 0.01, 5, 1); }) == ErrorCode::Precondition);
  std::string csv = "f,label\n";
  for (int i = 0; i < 40; ++i) csv += std::to_string(i) + "," + (i < 3 ? "tiny" : "big") + "\n";
  CHECK(code_of([&] { split_and_fold(parse_csv(csv, "label"), 0.2, 5, 1); }) == ErrorCode::Precondition);
}

TEST_CASE("encoding: one-hot, standardization, zero variance") {
  auto ds = parse_csv("c,n,k,label\na,8,5,x\nb,12,5,y\nc,10,5,x\nb,14,5,y\n", "label");
  // Pin the split so the example numbers are exact: rows 0..2 train, row 3 test.
  ds.split = {Split::Train, Split::Train, Split::Train, Split::Test};
  ds.folds = {0, 1, 0, -1};
  ds.fold_count = 2;
  const auto view = encode(ds);
  REQUIRE(view.width() == 5);
  CHECK(view.column_map[1].category == 1);
  // Row 1 has category "b" -> (0, 1, 0).
  CHECK(view.matrix(1, 0) == 0.0);
  CHECK(view.matrix(1, 1) == 1.0);
  CHECK(view.matrix(1, 2) == 0.0);
  // Train values 8, 12, 10: mean 10, population sd sqrt(8/3).
  const double sd = std::sqrt(8.0 / 3.0);
  CHECK(view.means[3] == doctest::Approx(10.0));
  CHECK(view.matrix(3, 3) == doctest::Approx((14.0 - 10.0) / sd));
  CHECK(view.zero_variance == std::vector<std::string>{"k"});
  for (std::size_t r = 0; r < 4; ++r) CHECK(view.matrix(r, 4) == 0.0);
}

TEST_CASE("standardization example: mean 10 sd 2 maps 14 to 2") {
  auto ds = parse_csv("n,label\n8,x\n12,y\n8,x\n12,y\n14,x\n", "label");
  ds.split = {Split::Train, Split::Train, Split::Train, Split::Train, Split::Test};
  ds.folds = {0, 0, 1, 1, -1};
  ds.fold_count = 2;
  const auto view = encode(ds);
  CHECK(view.matrix(4, 0) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("property: one-hot blocks decode to the source categories and sum to 1") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto ds = fixtures::blobs(200, 1.5, seed);
    const auto view = encode(ds);
    const auto attr = *ds.attribute_index("color");
    const auto cols = view.columns_of(attr);
    for (std::size_t r = 0; r < ds.rows(); ++r) {
      CHECK(decode_category(view, r, attr) == static_cast<int>(ds.value(r, attr)));
      double sum = 0.0;
      for (auto c : cols) sum += view.matrix(r, c);
      CHECK(sum == 1.0);
    }
  }
}

TEST_CASE("min/max and standardization come from training rows only") {
  auto ds = fixtures::blobs(100, 1.0, 3);
  const auto a = *ds.attribute_index("x1");
  auto ds2 = ds;
  // Changing a test row must not move the statistics.
  const auto test = ds2.test_rows();
  ds2.values[test[0] * ds2.attributes.size() + a] = 1e6;
  const auto v1 = encode(ds);
  const auto v2 = encode(ds2);
  CHECK(v1.means == v2.means);
  CHECK(v1.scales == v2.scales);
  double lo = 1e300, hi = -1e300;
  for (std::size_t r : ds.train_rows()) {
    lo = std::min(lo, ds.value(r, a));
    hi = std::max(hi, ds.value(r, a));
  }
  CHECK(ds.attributes[a].min == lo);
  CHECK(ds.attributes[a].max == hi);
}

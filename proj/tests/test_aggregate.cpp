#include "doctest.h"
#include "graphmill/aggregate.hpp"
#include "testing/oracles.hpp"

using namespace graphmill;
using testing_support::check_gradient;
using testing_support::max_abs_diff;
using testing_support::naive_aggregate;
using testing_support::random_tensor;

namespace {

std::vector<Index> random_index(std::size_t count, Index num_groups, std::uint64_t salt) {
  auto stream = testing_support::test_stream(salt);
  std::vector<Index> idx(count);
  for (auto& v : idx) v = static_cast<Index>(stream.next_below(static_cast<std::uint64_t>(num_groups)));
  return idx;
}

}  // namespace

TEST_CASE("hand-checked aggregations over two groups") {
  auto values = Tensor<double>::from_data({3}, {1, 2, 3});
  std::vector<Index> idx{0, 0, 1};
  CHECK(aggregate(values, idx, 2, AggKind::sum).data()[0] == 3.0);
  CHECK(aggregate(values, idx, 2, AggKind::sum).data()[1] == 3.0);
  CHECK(aggregate(values, idx, 2, AggKind::mean).data()[0] == 1.5);
  CHECK(aggregate(values, idx, 2, AggKind::mean).data()[1] == 3.0);
  CHECK(aggregate(values, idx, 2, AggKind::max).data()[0] == 2.0);
  CHECK(aggregate(values, idx, 2, AggKind::max).data()[1] == 3.0);
  CHECK(aggregate(values, idx, 2, AggKind::var).data()[0] == 0.25);
  CHECK(aggregate(values, idx, 2, AggKind::var).data()[1] == 0.0);
}

TEST_CASE("empty groups yield zero for every kind") {
  auto values = Tensor<double>::from_data({2}, {4, -2});
  std::vector<Index> idx{0, 0};
  for (AggKind k : {AggKind::sum, AggKind::mean, AggKind::max, AggKind::min, AggKind::median,
                    AggKind::var, AggKind::stddev}) {
    auto out = aggregate(values, idx, 3, k);
    CHECK(out.data()[2] == 0.0);
  }
  // non-empty groups with all-negative values still report the true extremum
  auto neg = Tensor<double>::from_data({2}, {-4, -2});
  CHECK(aggregate(neg, idx, 3, AggKind::max).data()[0] == -2.0);
}

TEST_CASE("errors: bad index, bad layout") {
  auto values = Tensor<double>::from_data({2}, {1, 2});
  std::vector<Index> out_of_range{0, 5};
  CHECK_THROWS_AS(aggregate(values, out_of_range, 2, AggKind::sum), std::out_of_range);
  std::vector<Index> unsorted{1, 0};
  CHECK_THROWS_AS(aggregate(values, unsorted, 2, AggKind::sum, AggLayout::sorted_segments),
                  std::invalid_argument);
}

TEST_CASE("every kind matches the naive per-group loop oracle") {
  auto values = random_tensor<double>({60, 3}, 31);
  auto idx = random_index(60, 7, 32);
  for (AggKind k : {AggKind::sum, AggKind::mean, AggKind::max, AggKind::min, AggKind::median,
                    AggKind::var, AggKind::stddev}) {
    auto got = aggregate(values, idx, 7, k);
    auto want = naive_aggregate(values, idx, 7, k);
    CHECK(max_abs_diff(got, want) <= 1e-12);
  }
}

TEST_CASE("sorted_segments and unsorted_scatter agree bit-for-bit on sorted input") {
  auto values = random_tensor<double>({50, 4}, 33);
  auto idx = random_index(50, 6, 34);
  std::sort(idx.begin(), idx.end());
  for (AggKind k : {AggKind::sum, AggKind::mean, AggKind::max, AggKind::min}) {
    auto a = aggregate(values, idx, 6, k, AggLayout::sorted_segments);
    auto b = aggregate(values, idx, 6, k, AggLayout::unsorted_scatter);
    CHECK(testing_support::bit_equal(a, b));
  }
}

TEST_CASE("permutation invariance of the aggregation result") {
  auto values = random_tensor<double>({40}, 35);
  auto idx = random_index(40, 5, 36);
  // joint shuffle
  auto stream = testing_support::test_stream(37);
  std::vector<Index> order(40);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[stream.next_below(i)]);
  std::vector<double> shuffled_vals(40);
  std::vector<Index> shuffled_idx(40);
  for (std::size_t i = 0; i < order.size(); ++i) {
    shuffled_vals[i] = values.data()[static_cast<std::size_t>(order[i])];
    shuffled_idx[i] = idx[static_cast<std::size_t>(order[i])];
  }
  auto shuffled = Tensor<double>::from_data({40}, shuffled_vals);
  for (AggKind k : {AggKind::max, AggKind::min, AggKind::median}) {
    CHECK(testing_support::bit_equal(aggregate(values, idx, 5, k),
                                     aggregate(shuffled, shuffled_idx, 5, k)));
  }
  for (AggKind k : {AggKind::sum, AggKind::mean, AggKind::var}) {
    CHECK(max_abs_diff(aggregate(values, idx, 5, k), aggregate(shuffled, shuffled_idx, 5, k)) <=
          1e-12);
  }
}

TEST_CASE("std equals sqrt(var) elementwise and var is non-negative") {
  auto values = random_tensor<double>({30, 2}, 38);
  auto idx = random_index(30, 4, 39);
  auto var = aggregate(values, idx, 4, AggKind::var);
  auto sd = aggregate(values, idx, 4, AggKind::stddev);
  for (Index i = 0; i < var.numel(); ++i) {
    CHECK(var.data()[i] >= 0.0);
    CHECK(sd.data()[i] == doctest::Approx(std::sqrt(var.data()[i])).epsilon(1e-12));
  }
}

TEST_CASE("sum/mean/max/min backward against finite differences") {
  auto idx = random_index(20, 4, 40);
  for (AggKind k : {AggKind::sum, AggKind::mean, AggKind::max, AggKind::min}) {
    auto values = random_tensor<double>({20, 2}, 41 + static_cast<std::uint64_t>(k));
    values.set_requires_grad(true);
    check_gradient<double>(values, [&] {
      return sum(mul(aggregate(values, idx, 4, k), Tensor<double>::scalar(1.25)));
    });
  }
}

TEST_CASE("max backward routes gradient to the first attaining position") {
  auto values = Tensor<double>::from_data({3}, {5, 5, 1});
  values.set_requires_grad(true);
  std::vector<Index> idx{0, 0, 0};
  backward(sum(aggregate(values, idx, 1, AggKind::max)));
  CHECK(values.grad().at(0) == 1.0);
  CHECK(values.grad().at(1) == 0.0);
}

TEST_CASE("median/var/std refuse tracked inputs") {
  auto values = random_tensor<double>({6}, 42);
  values.set_requires_grad(true);
  std::vector<Index> idx{0, 0, 0, 1, 1, 1};
  CHECK_THROWS_AS(aggregate(values, idx, 2, AggKind::median), std::invalid_argument);
  CHECK_THROWS_AS(aggregate(values, idx, 2, AggKind::var), std::invalid_argument);
  auto detached = values.detach();
  CHECK_NOTHROW(aggregate(detached, idx, 2, AggKind::var));
}

TEST_CASE("segment_softmax basics") {
  auto values = Tensor<double>::from_data({2}, {0, 0});
  std::vector<Index> idx{0, 0};
  auto out = segment_softmax(values, idx, 1);
  CHECK(out.at(0) == 0.5);
  CHECK(out.at(1) == 0.5);

  auto single = segment_softmax(Tensor<double>::from_data({1}, {3.7}), std::vector<Index>{0}, 1);
  CHECK(single.at(0) == 1.0);
}

TEST_CASE("segment_softmax groups sum to one on random input") {
  auto values = random_tensor<double>({30}, 43, -4.0, 4.0);
  auto idx = random_index(30, 5, 44);
  auto out = segment_softmax(values, idx, 5);
  std::vector<double> sums(5, 0.0);
  for (std::size_t i = 0; i < 30; ++i) sums[static_cast<std::size_t>(idx[i])] += out.data()[i];
  std::vector<bool> nonempty(5, false);
  for (Index g : idx) nonempty[static_cast<std::size_t>(g)] = true;
  for (std::size_t g = 0; g < 5; ++g)
    if (nonempty[g]) CHECK(sums[g] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("segment_softmax gradient") {
  auto values = random_tensor<double>({12}, 45, -2.0, 2.0);
  auto idx = random_index(12, 3, 46);
  values.set_requires_grad(true);
  auto weights = random_tensor<double>({12}, 47);
  check_gradient<double>(values,
                         [&] { return sum(mul(segment_softmax(values, idx, 3), weights)); });
}

TEST_CASE("softmax aggregation: t=0 is the mean, large t approaches the max") {
  auto values = Tensor<double>::from_data({2, 1}, {1, 10});
  std::vector<Index> idx{0, 0};
  auto mean_out = softmax_aggregate(values, idx, 1, Tensor<double>::scalar(0.0));
  CHECK(mean_out.at(0, 0) == doctest::Approx(5.5).epsilon(1e-12));
  auto max_out = softmax_aggregate(values, idx, 1, Tensor<double>::scalar(50.0));
  CHECK(std::abs(max_out.at(0, 0) - 10.0) <= 1e-4);
}

TEST_CASE("softmax aggregation temperature gradient") {
  auto values = random_tensor<double>({15, 2}, 48, -1.5, 1.5);
  auto idx = random_index(15, 3, 49);
  auto t = Tensor<double>::scalar(0.7);
  t.set_requires_grad(true);
  auto coeff = random_tensor<double>({3, 2}, 50);
  check_gradient<double>(
      t, [&] { return sum(mul(softmax_aggregate(values, idx, 3, t), coeff)); });
}

TEST_CASE("multi aggregation stacking") {
  auto values = Tensor<double>::from_data({3}, {1, 2, 3});
  std::vector<Index> idx{0, 0, 1};
  auto spec = AggregationSpec<double>::multi({AggKind::sum, AggKind::max}, MultiCombine::concat);
  auto out = multi_aggregate(values, idx, 2, spec);
  CHECK(out.shape() == Shape{2, 2});
  CHECK(out.at(0, 0) == 3.0);
  CHECK(out.at(0, 1) == 2.0);
  CHECK(out.at(1, 0) == 3.0);
  CHECK(out.at(1, 1) == 3.0);

  auto single = AggregationSpec<double>::multi({AggKind::sum}, MultiCombine::concat);
  CHECK(testing_support::bit_equal(multi_aggregate(values, idx, 2, single),
                                   aggregate(values, idx, 2, AggKind::sum)));

  auto mm = AggregationSpec<double>::multi({AggKind::mean, AggKind::mean}, MultiCombine::sum);
  auto doubled = multi_aggregate(values, idx, 2, mm);
  auto once = aggregate(values, idx, 2, AggKind::mean);
  CHECK(doubled.at(0, 0) == doctest::Approx(2 * once.data()[0]));
}

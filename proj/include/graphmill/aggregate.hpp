#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "graphmill/tensor.hpp"

namespace graphmill {

enum class AggKind { sum, mean, max, min, median, var, stddev, softmax };
enum class AggLayout { sorted_segments, unsorted_scatter };
enum class MultiCombine { concat, sum };

inline const char* to_string(AggKind k) {
  switch (k) {
    case AggKind::sum: return "sum";
    case AggKind::mean: return "mean";
    case AggKind::max: return "max";
    case AggKind::min: return "min";
    case AggKind::median: return "median";
    case AggKind::var: return "var";
    case AggKind::stddev: return "std";
    case AggKind::softmax: return "softmax";
  }
  return "?";
}

inline AggKind agg_kind_from_string(const std::string& name) {
  if (name == "sum") return AggKind::sum;
  if (name == "mean") return AggKind::mean;
  if (name == "max") return AggKind::max;
  if (name == "min") return AggKind::min;
  if (name == "median") return AggKind::median;
  if (name == "var") return AggKind::var;
  if (name == "std") return AggKind::stddev;
  if (name == "softmax") return AggKind::softmax;
  throw std::invalid_argument("unknown aggregation kind: " + name);
}

// Either a single aggregation or an ordered stack of them. The softmax kind
// carries a learnable scalar temperature.
template <typename S>
struct AggregationSpec {
  std::vector<AggKind> kinds{AggKind::sum};
  MultiCombine combine = MultiCombine::concat;
  std::optional<Tensor<S>> temperature;

  static AggregationSpec simple(AggKind k) {
    AggregationSpec s;
    s.kinds = {k};
    return s;
  }
  static AggregationSpec multi(std::vector<AggKind> kinds, MultiCombine combine) {
    if (kinds.empty()) throw std::invalid_argument("AggregationSpec: empty multi list");
    AggregationSpec s;
    s.kinds = std::move(kinds);
    s.combine = combine;
    return s;
  }
  static AggregationSpec softmax(Tensor<S> t) {
    if (t.numel() != 1) throw std::invalid_argument("AggregationSpec: temperature must be scalar");
    AggregationSpec s;
    s.kinds = {AggKind::softmax};
    s.temperature = std::move(t);
    return s;
  }

  bool is_multi() const { return kinds.size() > 1; }
};

namespace detail {

inline void check_group_index(IndexSpan index, Index num_groups, AggLayout layout) {
  check_index_range(index, num_groups, "aggregate");
  if (layout == AggLayout::sorted_segments)
    for (std::size_t i = 1; i < index.size(); ++i)
      if (index[i] < index[i - 1])
        throw std::invalid_argument("aggregate: sorted_segments layout given an unsorted index (position " +
                                    std::to_string(i) + ")");
}

// Per-group bucketing by counting sort; shared by the order-sensitive kinds.
inline std::pair<std::vector<Index>, std::vector<Index>> group_positions(IndexSpan index,
                                                                         Index num_groups) {
  std::vector<Index> offsets(static_cast<std::size_t>(num_groups) + 1, 0);
  for (Index g : index) ++offsets[static_cast<std::size_t>(g) + 1];
  for (Index g = 0; g < num_groups; ++g)
    offsets[static_cast<std::size_t>(g) + 1] += offsets[static_cast<std::size_t>(g)];
  std::vector<Index> positions(index.size());
  std::vector<Index> cursor(offsets.begin(), offsets.end() - 1);
  for (std::size_t i = 0; i < index.size(); ++i)
    positions[static_cast<std::size_t>(cursor[static_cast<std::size_t>(index[i])]++)] =
        static_cast<Index>(i);
  return {std::move(offsets), std::move(positions)};
}

}  // namespace detail

// Per-group reduction of edge-level rows into group-level rows. Both layouts
// accumulate in ascending edge position within each group, so results are
// bit-identical across layouts for a given index. Empty groups yield 0 for
// every kind. sum/mean/max/min are differentiable (max/min route gradient to
// the first attaining position); median/var/stddev are forward-only.
template <typename S>
Tensor<S> aggregate(const Tensor<S>& values, IndexSpan index, Index num_groups, AggKind kind,
                    AggLayout layout = AggLayout::unsorted_scatter);

// Normalized exponentials within each group (per column for rank-2 input),
// computed with per-group max subtraction. Groups sum to one; empty groups
// contribute no outputs. Differentiable.
template <typename S>
Tensor<S> segment_softmax(const Tensor<S>& values, IndexSpan index, Index num_groups);

// out_g = sum_i softmax_g(t * v)_i * v_i. Composed from tracked primitives, so
// it is differentiable in both the values and the temperature. t = 0 recovers
// the mean; t -> +inf approaches the max.
template <typename S>
Tensor<S> softmax_aggregate(const Tensor<S>& values, IndexSpan index, Index num_groups,
                            const Tensor<S>& temperature,
                            AggLayout layout = AggLayout::unsorted_scatter) {
  Tensor<S> scaled = mul(values, temperature);
  Tensor<S> weights = segment_softmax(scaled, index, num_groups);
  return aggregate(mul(values, weights), index, num_groups, AggKind::sum, layout);
}

// Ordered stack of aggregations. concat widens (rank-1 inputs are treated as
// single-column); sum requires equal widths.
template <typename S>
Tensor<S> multi_aggregate(const Tensor<S>& values, IndexSpan index, Index num_groups,
                          const AggregationSpec<S>& spec,
                          AggLayout layout = AggLayout::unsorted_scatter);

// Single entry point honoring an AggregationSpec (single, softmax or multi).
template <typename S>
Tensor<S> aggregate(const Tensor<S>& values, IndexSpan index, Index num_groups,
                    const AggregationSpec<S>& spec,
                    AggLayout layout = AggLayout::unsorted_scatter) {
  if (spec.is_multi()) return multi_aggregate(values, index, num_groups, spec, layout);
  if (spec.kinds[0] == AggKind::softmax) {
    if (!spec.temperature)
      throw std::invalid_argument("aggregate: softmax kind needs a temperature");
    return softmax_aggregate(values, index, num_groups, *spec.temperature, layout);
  }
  return aggregate(values, index, num_groups, spec.kinds[0], layout);
}

// ---------------------------------------------------------------------------
// implementation
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> aggregate(const Tensor<S>& values, IndexSpan index, Index num_groups, AggKind kind,
                    AggLayout layout) {
  static_assert(Tensor<S>::is_floating, "aggregate needs a floating dtype");
  if (values.rows() != static_cast<Index>(index.size()))
    throw std::invalid_argument("aggregate: values rows != index length");
  detail::check_group_index(index, num_groups, layout);
  const Index e = values.rows();
  const Index f = values.row_size();
  Shape out_shape = values.shape();
  if (out_shape.empty()) out_shape = {num_groups};
  out_shape[0] = num_groups;

  const bool tracked = grad_enabled() && values.requires_grad();
  if (tracked && (kind == AggKind::median || kind == AggKind::var || kind == AggKind::stddev))
    throw std::invalid_argument(
        "aggregate: median/var/std are forward-only; detach the values first");

  Tensor<S> out(out_shape);
  auto vv = values.data();
  auto ov = out.data_mut();

  std::vector<Index> counts(static_cast<std::size_t>(num_groups), 0);
  for (Index g : index) ++counts[static_cast<std::size_t>(g)];

  std::vector<Index> argpos;  // first attaining position per (group, column)

  switch (kind) {
    case AggKind::sum:
    case AggKind::mean: {
      for (Index i = 0; i < e; ++i) {
        S* dst = ov.data() + index[static_cast<std::size_t>(i)] * f;
        const S* srcp = vv.data() + i * f;
        for (Index j = 0; j < f; ++j) dst[j] += srcp[j];
      }
      if (kind == AggKind::mean)
        for (Index g = 0; g < num_groups; ++g)
          if (counts[static_cast<std::size_t>(g)] > 0) {
            const S inv = S(1) / static_cast<S>(counts[static_cast<std::size_t>(g)]);
            for (Index j = 0; j < f; ++j) ov[g * f + j] *= inv;
          }
      break;
    }
    case AggKind::max:
    case AggKind::min: {
      argpos.assign(static_cast<std::size_t>(num_groups * f), -1);
      for (Index i = 0; i < e; ++i) {
        const Index g = index[static_cast<std::size_t>(i)];
        for (Index j = 0; j < f; ++j) {
          const S v = vv[i * f + j];
          Index& ap = argpos[static_cast<std::size_t>(g * f + j)];
          const bool better = ap < 0 || (kind == AggKind::max ? v > ov[g * f + j]
                                                              : v < ov[g * f + j]);
          if (better) {
            ov[g * f + j] = v;
            ap = i;
          }
        }
      }
      // empty groups stay 0
      break;
    }
    case AggKind::median: {
      auto [offsets, positions] = detail::group_positions(index, num_groups);
      std::vector<S> scratch;
      for (Index g = 0; g < num_groups; ++g) {
        const Index lo = offsets[static_cast<std::size_t>(g)];
        const Index hi = offsets[static_cast<std::size_t>(g) + 1];
        if (lo == hi) continue;
        for (Index j = 0; j < f; ++j) {
          scratch.clear();
          for (Index p = lo; p < hi; ++p)
            scratch.push_back(vv[positions[static_cast<std::size_t>(p)] * f + j]);
          // lower median, no interpolation
          const std::size_t mid = (scratch.size() - 1) / 2;
          std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(mid),
                           scratch.end());
          ov[g * f + j] = scratch[mid];
        }
      }
      break;
    }
    case AggKind::var:
    case AggKind::stddev: {
      std::vector<S> mu(static_cast<std::size_t>(num_groups * f), S(0));
      for (Index i = 0; i < e; ++i) {
        const Index g = index[static_cast<std::size_t>(i)];
        for (Index j = 0; j < f; ++j) mu[static_cast<std::size_t>(g * f + j)] += vv[i * f + j];
      }
      for (Index g = 0; g < num_groups; ++g)
        if (counts[static_cast<std::size_t>(g)] > 0)
          for (Index j = 0; j < f; ++j)
            mu[static_cast<std::size_t>(g * f + j)] /= static_cast<S>(counts[static_cast<std::size_t>(g)]);
      for (Index i = 0; i < e; ++i) {
        const Index g = index[static_cast<std::size_t>(i)];
        for (Index j = 0; j < f; ++j) {
          const S d = vv[i * f + j] - mu[static_cast<std::size_t>(g * f + j)];
          ov[g * f + j] += d * d;
        }
      }
      for (Index g = 0; g < num_groups; ++g)
        if (counts[static_cast<std::size_t>(g)] > 0)
          for (Index j = 0; j < f; ++j) {
            ov[g * f + j] /= static_cast<S>(counts[static_cast<std::size_t>(g)]);  // population
            if (kind == AggKind::stddev) ov[g * f + j] = std::sqrt(ov[g * f + j]);
          }
      break;
    }
    case AggKind::softmax:
      throw std::invalid_argument("aggregate: softmax kind requires a temperature (use spec overload)");
  }

  if (tracked) {
    auto vi = values.impl();
    std::vector<Index> saved_index(index.begin(), index.end());
    switch (kind) {
      case AggKind::sum:
        detail::attach_node<S>(out, "segment_sum", {vi},
                               [vi, idx = std::move(saved_index), e, f](std::span<const S> g) {
                                 if (!vi->requires_grad) return;
                                 std::vector<S> dv(static_cast<std::size_t>(e * f));
                                 for (Index i = 0; i < e; ++i)
                                   for (Index j = 0; j < f; ++j)
                                     dv[i * f + j] = g[idx[static_cast<std::size_t>(i)] * f + j];
                                 vi->accumulate(dv);
                               });
        break;
      case AggKind::mean:
        detail::attach_node<S>(
            out, "segment_mean", {vi},
            [vi, idx = std::move(saved_index), cnt = counts, e, f](std::span<const S> g) {
              if (!vi->requires_grad) return;
              std::vector<S> dv(static_cast<std::size_t>(e * f));
              for (Index i = 0; i < e; ++i) {
                const Index gi = idx[static_cast<std::size_t>(i)];
                const S inv = S(1) / static_cast<S>(cnt[static_cast<std::size_t>(gi)]);
                for (Index j = 0; j < f; ++j) dv[i * f + j] = g[gi * f + j] * inv;
              }
              vi->accumulate(dv);
            });
        break;
      case AggKind::max:
      case AggKind::min:
        detail::attach_node<S>(out, kind == AggKind::max ? "segment_max" : "segment_min", {vi},
                               [vi, ap = argpos, e, f,
                                ng = num_groups](std::span<const S> g) {
                                 if (!vi->requires_grad) return;
                                 std::vector<S> dv(static_cast<std::size_t>(e * f), S(0));
                                 for (Index g_i = 0; g_i < ng; ++g_i)
                                   for (Index j = 0; j < f; ++j) {
                                     const Index p = ap[static_cast<std::size_t>(g_i * f + j)];
                                     if (p >= 0) dv[p * f + j] += g[g_i * f + j];
                                   }
                                 vi->accumulate(dv);
                               });
        break;
      default:
        break;
    }
  }
  return out;
}

template <typename S>
Tensor<S> segment_softmax(const Tensor<S>& values, IndexSpan index, Index num_groups) {
  static_assert(Tensor<S>::is_floating);
  if (values.rows() != static_cast<Index>(index.size()))
    throw std::invalid_argument("segment_softmax: values rows != index length");
  detail::check_group_index(index, num_groups, AggLayout::unsorted_scatter);
  const Index e = values.rows();
  const Index f = values.row_size();

  Tensor<S> out(values.shape());
  auto vv = values.data();
  auto ov = out.data_mut();

  constexpr S kLowest = std::numeric_limits<S>::lowest();
  std::vector<S> gmax(static_cast<std::size_t>(num_groups * f), kLowest);
  for (Index i = 0; i < e; ++i) {
    const Index g = index[static_cast<std::size_t>(i)];
    for (Index j = 0; j < f; ++j)
      gmax[static_cast<std::size_t>(g * f + j)] =
          std::max(gmax[static_cast<std::size_t>(g * f + j)], vv[i * f + j]);
  }
  std::vector<S> gsum(static_cast<std::size_t>(num_groups * f), S(0));
  for (Index i = 0; i < e; ++i) {
    const Index g = index[static_cast<std::size_t>(i)];
    for (Index j = 0; j < f; ++j) {
      const S x = std::exp(vv[i * f + j] - gmax[static_cast<std::size_t>(g * f + j)]);
      ov[i * f + j] = x;
      gsum[static_cast<std::size_t>(g * f + j)] += x;
    }
  }
  for (Index i = 0; i < e; ++i) {
    const Index g = index[static_cast<std::size_t>(i)];
    for (Index j = 0; j < f; ++j) ov[i * f + j] /= gsum[static_cast<std::size_t>(g * f + j)];
  }

  if (grad_enabled() && values.requires_grad()) {
    auto vi = values.impl();
    std::vector<Index> saved_index(index.begin(), index.end());
    std::vector<S> y(out.data().begin(), out.data().end());
    detail::attach_node<S>(
        out, "segment_softmax", {vi},
        [vi, idx = std::move(saved_index), y = std::move(y), e, f,
         ng = num_groups](std::span<const S> g) {
          if (!vi->requires_grad) return;
          // dv_i = y_i * (g_i - sum_j in group y_j g_j)
          std::vector<S> dot(static_cast<std::size_t>(ng * f), S(0));
          for (Index i = 0; i < e; ++i) {
            const Index gi = idx[static_cast<std::size_t>(i)];
            for (Index j = 0; j < f; ++j)
              dot[static_cast<std::size_t>(gi * f + j)] += y[static_cast<std::size_t>(i * f + j)] * g[i * f + j];
          }
          std::vector<S> dv(static_cast<std::size_t>(e * f));
          for (Index i = 0; i < e; ++i) {
            const Index gi = idx[static_cast<std::size_t>(i)];
            for (Index j = 0; j < f; ++j)
              dv[i * f + j] = y[static_cast<std::size_t>(i * f + j)] *
                              (g[i * f + j] - dot[static_cast<std::size_t>(gi * f + j)]);
          }
          vi->accumulate(dv);
        });
  }
  return out;
}

template <typename S>
Tensor<S> multi_aggregate(const Tensor<S>& values, IndexSpan index, Index num_groups,
                          const AggregationSpec<S>& spec, AggLayout layout) {
  if (spec.kinds.empty()) throw std::invalid_argument("multi_aggregate: empty kind list");
  std::vector<Tensor<S>> parts;
  parts.reserve(spec.kinds.size());
  for (AggKind k : spec.kinds) {
    Tensor<S> part = k == AggKind::softmax
                         ? softmax_aggregate(values, index, num_groups,
                                             spec.temperature ? *spec.temperature
                                                              : Tensor<S>::scalar(S(1)),
                                             layout)
                         : aggregate(values, index, num_groups, k, layout);
    if (part.rank() == 1) part = reshape(part, Shape{num_groups, 1});
    parts.push_back(std::move(part));
  }
  if (parts.size() == 1) {
    if (values.rank() == 1) return reshape(parts[0], Shape{num_groups});
    return parts[0];
  }
  if (spec.combine == MultiCombine::concat) return concat_cols(parts);
  Tensor<S> acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (parts[i].shape() != acc.shape())
      throw std::invalid_argument("multi_aggregate: sum combine needs equal widths");
    acc = add(acc, parts[i]);
  }
  return acc;
}

}  // namespace graphmill

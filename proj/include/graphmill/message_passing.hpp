#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "graphmill/aggregate.hpp"
#include "graphmill/edge_index.hpp"
#include "graphmill/tensor.hpp"

namespace graphmill {

enum class ExecPath { edge_materialize, segment_fused };

inline const char* to_string(ExecPath p) {
  return p == ExecPath::edge_materialize ? "edge_materialize" : "segment_fused";
}

// Message transform injected by explainers: receives the edge-level message
// matrix (original COO edge order) plus the canonical edge-type name (empty
// for homogeneous graphs) and returns a matrix of the same shape.
template <typename S>
using EdgeCallback =
    std::function<Tensor<S>(const Tensor<S>& messages, const std::string& edge_type)>;

// The fused path needs destination-grouped structure and full vectorization;
// an installed edge-level callback forces materialization so the transform
// can be injected uniformly across all edges.
inline ExecPath select_path(const EdgeIndex& e, bool needs_edge_callback) {
  if (needs_edge_callback) return ExecPath::edge_materialize;
  const bool grouped_by_dst = e.sort_order() == SortOrder::by_dst || e.has_csc_cache() ||
                              (e.is_undirected() && e.has_csr_cache());
  return grouped_by_dst ? ExecPath::segment_fused : ExecPath::edge_materialize;
}

// ---------------------------------------------------------------------------
// SpMM: out[v] = reduce_{(w,v) in E} weight_e * x[w]
// ---------------------------------------------------------------------------

namespace detail {

// Destination-grouped iteration order. Undirected indices reuse the CSR cache
// (A = A^T) when the per-edge association does not matter; with edge weights
// the association does matter, so those fall back to a COO sweep.
template <typename S>
void spmm_forward(const EdgeIndex& e, std::span<const S> x, Index f,
                  const S* weight /*COO order, may be null*/, bool mean, std::span<S> out) {
  const Index n_dst = e.num_dst_nodes();
  if (weight && e.is_undirected()) {
    auto src = e.src();
    auto dst = e.dst();
    for (Index i = 0; i < e.num_edges(); ++i) {
      S* o = out.data() + dst[i] * f;
      const S* xi = x.data() + src[i] * f;
      const S w = weight[i];
      for (Index j = 0; j < f; ++j) o[j] += w * xi[j];
    }
  } else {
    const CsrView& by_dst = e.transpose_view();
    for (Index v = 0; v < n_dst; ++v) {
      S* o = out.data() + v * f;
      for (Index k = by_dst.rowptr[static_cast<std::size_t>(v)];
           k < by_dst.rowptr[static_cast<std::size_t>(v) + 1]; ++k) {
        const S* xi = x.data() + by_dst.col[static_cast<std::size_t>(k)] * f;
        if (weight) {
          const S w = weight[by_dst.perm[static_cast<std::size_t>(k)]];
          for (Index j = 0; j < f; ++j) o[j] += w * xi[j];
        } else {
          for (Index j = 0; j < f; ++j) o[j] += xi[j];
        }
      }
    }
  }
  if (mean) {
    std::vector<Index> deg(static_cast<std::size_t>(n_dst), 0);
    for (Index v : e.dst()) ++deg[static_cast<std::size_t>(v)];
    for (Index v = 0; v < n_dst; ++v)
      if (deg[static_cast<std::size_t>(v)] > 0) {
        const S inv = S(1) / static_cast<S>(deg[static_cast<std::size_t>(v)]);
        for (Index j = 0; j < f; ++j) out[v * f + j] *= inv;
      }
  }
}

}  // namespace detail

// Fused sparse-dense product over the destination grouping; sum or mean
// reduction. Backward runs over the source grouping (the CSR cache), which is
// why both caches pay off across repeated layer executions.
template <typename S>
Tensor<S> spmm(const EdgeIndex& e, const Tensor<S>& x,
               const std::type_identity_t<std::optional<Tensor<S>>>& edge_weight, AggKind reduce) {
  static_assert(Tensor<S>::is_floating);
  if (reduce != AggKind::sum && reduce != AggKind::mean)
    throw std::invalid_argument("spmm: reduce must be sum or mean");
  if (x.rows() != e.num_src_nodes())
    throw std::invalid_argument("spmm: feature rows != num_src_nodes");
  if (edge_weight && edge_weight->numel() != e.num_edges())
    throw std::invalid_argument("spmm: edge weight length != num_edges");
  const Index f = x.row_size();
  const bool mean = reduce == AggKind::mean;

  Shape out_shape = x.shape();
  out_shape[0] = e.num_dst_nodes();
  Tensor<S> out(out_shape);
  detail::spmm_forward<S>(e, x.data(), f, edge_weight ? edge_weight->data().data() : nullptr,
                          mean, out.data_mut());

  const Tensor<S>* wt = edge_weight ? &*edge_weight : nullptr;
  const bool tracked = grad_enabled() && (x.requires_grad() || (wt && wt->requires_grad()));
  if (tracked) {
    auto xi = x.impl();
    std::shared_ptr<TensorImpl<S>> wi = wt ? wt->impl() : nullptr;
    std::vector<std::shared_ptr<TensorImpl<S>>> inputs{xi};
    if (wi) inputs.push_back(wi);
    EdgeIndex graph = e;  // shares storage and caches
    detail::attach_node<S>(
        out, "spmm", std::move(inputs), [xi, wi, graph, f, mean](std::span<const S> g) {
          const Index e_count = graph.num_edges();
          const Index n_src = graph.num_src_nodes();
          std::vector<Index> deg;
          if (mean) {
            deg.assign(static_cast<std::size_t>(graph.num_dst_nodes()), 0);
            for (Index v : graph.dst()) ++deg[static_cast<std::size_t>(v)];
          }
          auto scaled_g = [&](Index v, Index j) -> S {
            const S gv = g[v * f + j];
            return mean ? gv / static_cast<S>(std::max<Index>(deg[static_cast<std::size_t>(v)], 1))
                        : gv;
          };
          if (xi->requires_grad) {
            std::vector<S> dx(static_cast<std::size_t>(n_src * f), S(0));
            if (wi && graph.is_undirected()) {
              auto src = graph.src();
              auto dst = graph.dst();
              auto wd = wi->data();
              for (Index i = 0; i < e_count; ++i)
                for (Index j = 0; j < f; ++j)
                  dx[static_cast<std::size_t>(src[i] * f + j)] += wd[i] * scaled_g(dst[i], j);
            } else {
              const CsrView& by_src = graph.to_csr();
              auto wd = wi ? wi->data() : std::span<const S>{};
              for (Index w = 0; w < n_src; ++w)
                for (Index k = by_src.rowptr[static_cast<std::size_t>(w)];
                     k < by_src.rowptr[static_cast<std::size_t>(w) + 1]; ++k) {
                  const Index v = by_src.col[static_cast<std::size_t>(k)];
                  const S coeff = wi ? wd[by_src.perm[static_cast<std::size_t>(k)]] : S(1);
                  for (Index j = 0; j < f; ++j)
                    dx[static_cast<std::size_t>(w * f + j)] += coeff * scaled_g(v, j);
                }
            }
            xi->accumulate(dx);
          }
          if (wi && wi->requires_grad) {
            std::vector<S> dw(static_cast<std::size_t>(e_count), S(0));
            auto src = graph.src();
            auto dst = graph.dst();
            auto xd = xi->data();
            for (Index i = 0; i < e_count; ++i)
              for (Index j = 0; j < f; ++j)
                dw[static_cast<std::size_t>(i)] += scaled_g(dst[i], j) * xd[src[i] * f + j];
            wi->accumulate(dw);
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generic Eq.-style propagate with swappable message/update functions
// ---------------------------------------------------------------------------

template <typename S>
struct MessageFns {
  // g(h_w, e_attr, h_v): all arguments edge-aligned.
  std::function<Tensor<S>(const Tensor<S>&, const std::optional<Tensor<S>>&, const Tensor<S>&)>
      message;
  // f(h_v, aggregated)
  std::function<Tensor<S>(const Tensor<S>&, const Tensor<S>&)> update;
};

namespace detail {

// Destination-grouped edge enumeration for the fused path. Returns edge
// positions (original COO ids) ordered by destination plus the matching
// non-decreasing destination index. Uses the cached grouping when the per-edge
// association is safe; otherwise builds a local one.
inline std::pair<std::vector<Index>, std::vector<Index>> dst_grouped_order(const EdgeIndex& e,
                                                                           bool needs_exact_edges) {
  std::vector<Index> order;
  std::vector<Index> grouped_dst;
  order.reserve(static_cast<std::size_t>(e.num_edges()));
  grouped_dst.reserve(static_cast<std::size_t>(e.num_edges()));
  if (e.is_undirected() && needs_exact_edges) {
    const CsrView local = build_compressed(e.dst(), e.src(), e.num_dst_nodes());
    for (Index v = 0; v < local.num_rows(); ++v)
      for (Index k = local.rowptr[static_cast<std::size_t>(v)];
           k < local.rowptr[static_cast<std::size_t>(v) + 1]; ++k) {
        order.push_back(local.perm[static_cast<std::size_t>(k)]);
        grouped_dst.push_back(v);
      }
  } else {
    const CsrView& by_dst = e.transpose_view();
    for (Index v = 0; v < by_dst.num_rows(); ++v)
      for (Index k = by_dst.rowptr[static_cast<std::size_t>(v)];
           k < by_dst.rowptr[static_cast<std::size_t>(v) + 1]; ++k) {
        order.push_back(by_dst.perm[static_cast<std::size_t>(k)]);
        grouped_dst.push_back(v);
      }
  }
  return {std::move(order), std::move(grouped_dst)};
}

}  // namespace detail

// h'_v = f(h_v, agg_{w in N(v)} c(g(h_w, e_{(w,v)}, h_v))). The two paths agree
// for identity c; the fused path refuses callbacks outright.
template <typename S>
Tensor<S> propagate(const EdgeIndex& e, const Tensor<S>& h_src, const Tensor<S>& h_dst,
                    const std::type_identity_t<std::optional<Tensor<S>>>& edge_attr,
                    const MessageFns<S>& fns,
                    const AggregationSpec<S>& agg, ExecPath path,
                    const EdgeCallback<S>* callback = nullptr,
                    const std::string& edge_type_name = "") {
  if (h_src.rows() != e.num_src_nodes())
    throw std::invalid_argument("propagate: h_src rows != num_src_nodes");
  if (h_dst.rows() != e.num_dst_nodes())
    throw std::invalid_argument("propagate: h_dst rows != num_dst_nodes");
  if (edge_attr && edge_attr->rows() != e.num_edges())
    throw std::invalid_argument("propagate: edge_attr rows != num_edges");
  if (path == ExecPath::segment_fused && callback)
    throw std::invalid_argument("propagate: edge callbacks require the edge_materialize path");

  if (path == ExecPath::edge_materialize) {
    Tensor<S> hw = gather_rows(h_src, e.src());
    Tensor<S> hv = gather_rows(h_dst, e.dst());
    Tensor<S> m = fns.message(hw, edge_attr, hv);
    if (callback) m = (*callback)(m, edge_type_name);
    Tensor<S> agg_out =
        aggregate(m, e.dst(), e.num_dst_nodes(), agg, AggLayout::unsorted_scatter);
    return fns.update(h_dst, agg_out);
  }

  auto [order, grouped_dst] = detail::dst_grouped_order(e, edge_attr.has_value());
  std::vector<Index> src_nodes(order.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    src_nodes[i] = e.src()[static_cast<std::size_t>(order[i])];
  Tensor<S> hw = gather_rows(h_src, src_nodes);
  Tensor<S> hv = gather_rows(h_dst, grouped_dst);
  std::optional<Tensor<S>> ea;
  if (edge_attr) ea = gather_rows(*edge_attr, order);
  Tensor<S> m = fns.message(hw, ea, hv);
  Tensor<S> agg_out =
      aggregate(m, grouped_dst, e.num_dst_nodes(), agg, AggLayout::sorted_segments);
  return fns.update(h_dst, agg_out);
}

// ---------------------------------------------------------------------------
// Concrete layers
// ---------------------------------------------------------------------------

enum class LayerKind { gcn, sage, gin, gat, edgecnn };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::gcn: return "gcn";
    case LayerKind::sage: return "sage";
    case LayerKind::gin: return "gin";
    case LayerKind::gat: return "gat";
    case LayerKind::edgecnn: return "edgecnn";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "gcn") return LayerKind::gcn;
  if (name == "sage") return LayerKind::sage;
  if (name == "gin") return LayerKind::gin;
  if (name == "gat") return LayerKind::gat;
  if (name == "edgecnn") return LayerKind::edgecnn;
  throw std::invalid_argument("unknown layer kind: " + name);
}

// Named parameter bundle for one layer. `weights` keys are stable and sorted,
// so parameter enumeration order is deterministic. The message/update split
// (msg_param_names / upd_param_names) is what the heterogeneous transform
// replicates per edge type vs. per node type.
template <typename S>
struct LayerParams {
  LayerKind kind = LayerKind::gcn;
  Index in_dim = 0;
  Index out_dim = 0;
  int heads = 1;  // gat only
  AggregationSpec<S> aggregation = AggregationSpec<S>::simple(AggKind::sum);
  std::map<std::string, Tensor<S>> weights;

  Index head_dim() const { return out_dim / heads; }

  std::vector<Tensor<S>> parameters() const {
    std::vector<Tensor<S>> out;
    for (const auto& [name, t] : weights) out.push_back(t);
    return out;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = weights.find(name);
    if (it == weights.end())
      throw std::invalid_argument(std::string("layer: missing parameter ") + name);
    return it->second;
  }
};

std::vector<std::string> msg_param_names(LayerKind kind, int heads);
std::vector<std::string> upd_param_names(LayerKind kind);

inline std::vector<std::string> msg_param_names(LayerKind kind, int heads) {
  switch (kind) {
    case LayerKind::gcn: return {"weight"};
    case LayerKind::sage: return {"w_neigh"};
    case LayerKind::gin: return {};
    case LayerKind::gat: {
      std::vector<std::string> names{"weight"};
      for (int h = 0; h < heads; ++h) {
        names.push_back("att_src_h" + std::to_string(h));
        names.push_back("att_dst_h" + std::to_string(h));
      }
      return names;
    }
    case LayerKind::edgecnn: return {"mlp0_w", "mlp0_b", "mlp1_w", "mlp1_b"};
  }
  return {};
}

inline std::vector<std::string> upd_param_names(LayerKind kind) {
  switch (kind) {
    case LayerKind::gcn: return {"bias"};
    case LayerKind::sage: return {"w_self", "bias"};
    case LayerKind::gin: return {"eps", "mlp0_w", "mlp0_b", "mlp1_w", "mlp1_b"};
    case LayerKind::gat: return {"bias"};
    case LayerKind::edgecnn: return {};
  }
  return {};
}

// Uniform(-1/sqrt(in_dim), 1/sqrt(in_dim)) weights, zero biases, zero eps;
// every draw comes from streams derived from `seed`.
template <typename S>
LayerParams<S> make_layer(LayerKind kind, Index in_dim, Index out_dim, std::uint64_t seed,
                          int heads = 1,
                          std::optional<AggregationSpec<S>> agg = std::nullopt) {
  static_assert(Tensor<S>::is_floating);
  if (in_dim <= 0 || out_dim <= 0) throw std::invalid_argument("make_layer: bad dims");
  if (kind == LayerKind::gat && (heads < 1 || out_dim % heads != 0))
    throw std::invalid_argument("make_layer: gat out_dim must divide by heads (heads >= 1)");
  if (kind != LayerKind::gat) heads = 1;

  LayerParams<S> p;
  p.kind = kind;
  p.in_dim = in_dim;
  p.out_dim = out_dim;
  p.heads = heads;
  switch (kind) {
    case LayerKind::gcn:
    case LayerKind::gat: p.aggregation = AggregationSpec<S>::simple(AggKind::sum); break;
    case LayerKind::sage: p.aggregation = AggregationSpec<S>::simple(AggKind::mean); break;
    case LayerKind::gin: p.aggregation = AggregationSpec<S>::simple(AggKind::sum); break;
    case LayerKind::edgecnn: p.aggregation = AggregationSpec<S>::simple(AggKind::max); break;
  }
  if (agg) p.aggregation = std::move(*agg);

  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  std::uint64_t stream_id = 0;
  auto uniform = [&](Shape shape) {
    rng::Stream s(rng::derive(seed, 0x6c61796572ull, stream_id++));
    Tensor<S> t = Tensor<S>::rand_uniform(std::move(shape), -bound, bound, s);
    t.set_requires_grad(true);
    return t;
  };
  auto zeros_param = [&](Shape shape) {
    Tensor<S> t = Tensor<S>::zeros(std::move(shape));
    t.set_requires_grad(true);
    return t;
  };

  switch (kind) {
    case LayerKind::gcn:
      p.weights["weight"] = uniform({in_dim, out_dim});
      p.weights["bias"] = zeros_param({out_dim});
      break;
    case LayerKind::sage:
      p.weights["w_neigh"] = uniform({in_dim, out_dim});
      p.weights["w_self"] = uniform({in_dim, out_dim});
      p.weights["bias"] = zeros_param({out_dim});
      break;
    case LayerKind::gin:
      p.weights["eps"] = zeros_param({});
      p.weights["mlp0_w"] = uniform({in_dim, out_dim});
      p.weights["mlp0_b"] = zeros_param({out_dim});
      p.weights["mlp1_w"] = uniform({out_dim, out_dim});
      p.weights["mlp1_b"] = zeros_param({out_dim});
      break;
    case LayerKind::gat: {
      p.weights["weight"] = uniform({in_dim, out_dim});
      const Index hd = p.head_dim();
      for (int h = 0; h < heads; ++h) {
        p.weights["att_src_h" + std::to_string(h)] = uniform({hd, 1});
        p.weights["att_dst_h" + std::to_string(h)] = uniform({hd, 1});
      }
      p.weights["bias"] = zeros_param({out_dim});
      break;
    }
    case LayerKind::edgecnn:
      p.weights["mlp0_w"] = uniform({2 * in_dim, out_dim});
      p.weights["mlp0_b"] = zeros_param({out_dim});
      p.weights["mlp1_w"] = uniform({out_dim, out_dim});
      p.weights["mlp1_b"] = zeros_param({out_dim});
      break;
  }
  return p;
}

namespace detail {

template <typename S>
Tensor<S> mlp2(const LayerParams<S>& p, const Tensor<S>& x) {
  Tensor<S> h = add(matmul(x, p.at("mlp0_w")), p.at("mlp0_b"));
  h = relu(h);
  return add(matmul(h, p.at("mlp1_w")), p.at("mlp1_b"));
}

// In-degree based symmetric normalization over the (possibly self-loop
// augmented) edge set: 1/sqrt(deg[src] * deg[dst]). Degrees come from the
// base index's FULL arrays so a trimmed prefix view normalizes exactly like
// the untrimmed graph (trimming must not move seed outputs). For bipartite
// indices the source side uses out-degree; zero degrees clamp to one.
template <typename S>
Tensor<S> gcn_norm(const EdgeIndex& base, const EdgeIndex& graph, bool square) {
  const Index n_edges = graph.num_edges();
  std::vector<S> norm(static_cast<std::size_t>(n_edges));
  std::vector<Index> din(static_cast<std::size_t>(base.num_dst_nodes()), 0);
  for (Index v : base.full_dst())
    if (v < base.num_dst_nodes()) ++din[static_cast<std::size_t>(v)];
  auto src = graph.src();
  auto dst = graph.dst();
  if (square) {
    for (auto& d : din) d += 1;  // the self loop every node receives
    for (Index i = 0; i < n_edges; ++i)
      norm[static_cast<std::size_t>(i)] =
          S(1) / std::sqrt(static_cast<S>(din[static_cast<std::size_t>(src[i])]) *
                           static_cast<S>(din[static_cast<std::size_t>(dst[i])]));
  } else {
    std::vector<Index> dout(static_cast<std::size_t>(base.num_src_nodes()), 0);
    for (Index w : base.full_src())
      if (w < base.num_src_nodes()) ++dout[static_cast<std::size_t>(w)];
    for (Index i = 0; i < n_edges; ++i) {
      const S a = static_cast<S>(std::max<Index>(dout[static_cast<std::size_t>(src[i])], 1));
      const S b = static_cast<S>(std::max<Index>(din[static_cast<std::size_t>(dst[i])], 1));
      norm[static_cast<std::size_t>(i)] = S(1) / std::sqrt(a * b);
    }
  }
  return Tensor<S>::from_data({n_edges}, std::move(norm));
}

// Applies the callback to the first `original_edges` message rows, leaving any
// internally appended rows (self loops) untouched.
template <typename S>
Tensor<S> apply_callback_prefix(const Tensor<S>& messages, Index original_edges,
                                const EdgeCallback<S>& cb, const std::string& edge_type) {
  if (messages.rows() == original_edges) return cb(messages, edge_type);
  Tensor<S> head = slice_rows(messages, 0, original_edges);
  Tensor<S> tail = slice_rows(messages, original_edges, messages.rows() - original_edges);
  return concat_rows(cb(head, edge_type), tail);
}

}  // namespace detail

// Neighbor side of one layer: g plus the permutation-invariant reduction, no
// self/update term. Heterogeneous execution calls this once per edge type.
template <typename S>
Tensor<S> layer_neighbor_aggregate(const LayerParams<S>& p, const EdgeIndex& e,
                                   const Tensor<S>& h_src, const Tensor<S>& h_dst,
                                   ExecPath path, const EdgeCallback<S>* cb = nullptr,
                                   const std::string& edge_type_name = "") {
  if (cb && path == ExecPath::segment_fused)
    throw std::invalid_argument("layer: edge callbacks require the edge_materialize path");
  const Index n_dst = e.num_dst_nodes();

  switch (p.kind) {
    case LayerKind::gcn: {
      const bool square = e.num_src_nodes() == e.num_dst_nodes();
      const EdgeIndex graph = square ? with_self_loops(e) : e;
      Tensor<S> x = matmul(h_src, p.at("weight"));
      Tensor<S> norm = detail::gcn_norm<S>(e, graph, square);
      if (path == ExecPath::segment_fused) return spmm(graph, x, norm, AggKind::sum);
      Tensor<S> m = row_scale(gather_rows(x, graph.src()), norm);
      if (cb) m = detail::apply_callback_prefix(m, e.num_edges(), *cb, edge_type_name);
      return aggregate(m, graph.dst(), n_dst, AggKind::sum, AggLayout::unsorted_scatter);
    }
    case LayerKind::sage:
    case LayerKind::gin: {
      const bool plain_sum_mean = !p.aggregation.is_multi() &&
                                  (p.aggregation.kinds[0] == AggKind::sum ||
                                   p.aggregation.kinds[0] == AggKind::mean);
      Tensor<S> agg_raw;
      if (path == ExecPath::segment_fused && plain_sum_mean && !cb) {
        agg_raw = spmm(e, h_src, std::nullopt, p.aggregation.kinds[0]);
      } else if (path == ExecPath::segment_fused) {
        auto [order, grouped_dst] = detail::dst_grouped_order(e, false);
        std::vector<Index> src_nodes(order.size());
        for (std::size_t i = 0; i < order.size(); ++i)
          src_nodes[i] = e.src()[static_cast<std::size_t>(order[i])];
        Tensor<S> m = gather_rows(h_src, src_nodes);
        agg_raw = aggregate(m, grouped_dst, n_dst, p.aggregation, AggLayout::sorted_segments);
      } else {
        Tensor<S> m = gather_rows(h_src, e.src());
        if (cb) m = (*cb)(m, edge_type_name);
        agg_raw = aggregate(m, e.dst(), n_dst, p.aggregation, AggLayout::unsorted_scatter);
      }
      if (p.kind == LayerKind::sage) return matmul(agg_raw, p.at("w_neigh"));
      return agg_raw;
    }
    case LayerKind::gat: {
      Tensor<S> x = matmul(h_src, p.at("weight"));
      Tensor<S> xd = matmul(h_dst, p.at("weight"));
      const Index hd = p.head_dim();
      std::vector<Tensor<S>> head_parts;
      std::vector<Tensor<S>> eager_messages;
      for (int h = 0; h < p.heads; ++h) {
        Tensor<S> xh = slice_cols(x, h * hd, hd);
        Tensor<S> as = reshape(matmul(xh, p.at("att_src_h" + std::to_string(h))),
                               Shape{e.num_src_nodes()});
        Tensor<S> ad = reshape(matmul(slice_cols(xd, h * hd, hd),
                                      p.at("att_dst_h" + std::to_string(h))),
                               Shape{n_dst});
        Tensor<S> logits = leaky_relu(
            add(gather_rows(as, e.src()), gather_rows(ad, e.dst())), 0.2);
        Tensor<S> alpha = segment_softmax(logits, e.dst(), n_dst);
        if (path == ExecPath::segment_fused) {
          head_parts.push_back(spmm(e, xh, alpha, AggKind::sum));
        } else {
          eager_messages.push_back(row_scale(gather_rows(xh, e.src()), alpha));
        }
      }
      if (path == ExecPath::segment_fused)
        return head_parts.size() == 1 ? head_parts[0] : concat_cols(head_parts);
      Tensor<S> m =
          eager_messages.size() == 1 ? eager_messages[0] : concat_cols(eager_messages);
      if (cb) m = (*cb)(m, edge_type_name);
      return aggregate(m, e.dst(), n_dst, AggKind::sum, AggLayout::unsorted_scatter);
    }
    case LayerKind::edgecnn: {
      if (path == ExecPath::segment_fused) {
        auto [order, grouped_dst] = detail::dst_grouped_order(e, false);
        std::vector<Index> src_nodes(order.size());
        for (std::size_t i = 0; i < order.size(); ++i)
          src_nodes[i] = e.src()[static_cast<std::size_t>(order[i])];
        Tensor<S> hw = gather_rows(h_src, src_nodes);
        Tensor<S> hv = gather_rows(h_dst, grouped_dst);
        Tensor<S> m = detail::mlp2(p, concat_cols(hv, sub(hw, hv)));
        return aggregate(m, grouped_dst, n_dst, p.aggregation, AggLayout::sorted_segments);
      }
      Tensor<S> hw = gather_rows(h_src, e.src());
      Tensor<S> hv = gather_rows(h_dst, e.dst());
      Tensor<S> m = detail::mlp2(p, concat_cols(hv, sub(hw, hv)));
      if (cb) m = (*cb)(m, edge_type_name);
      return aggregate(m, e.dst(), n_dst, p.aggregation, AggLayout::unsorted_scatter);
    }
  }
  throw std::logic_error("layer_neighbor_aggregate: unreachable");
}

// Update side of one layer: combines the node's own state with the aggregated
// neighborhood. Heterogeneous execution applies this once per node type.
template <typename S>
Tensor<S> layer_update(const LayerParams<S>& p, const Tensor<S>& h_dst, const Tensor<S>& agg) {
  switch (p.kind) {
    case LayerKind::gcn: return add(agg, p.at("bias"));
    case LayerKind::sage:
      return add(add(agg, matmul(h_dst, p.at("w_self"))), p.at("bias"));
    case LayerKind::gin: {
      Tensor<S> self_scale = add(p.at("eps"), Tensor<S>::scalar(S(1)));
      return detail::mlp2(p, add(mul(h_dst, self_scale), agg));
    }
    case LayerKind::gat: return add(agg, p.at("bias"));
    case LayerKind::edgecnn: return agg;
  }
  throw std::logic_error("layer_update: unreachable");
}

template <typename S>
Tensor<S> layer_forward_bipartite(const LayerParams<S>& p, const EdgeIndex& e,
                                  const Tensor<S>& h_src, const Tensor<S>& h_dst, ExecPath path,
                                  const EdgeCallback<S>* cb = nullptr,
                                  const std::string& edge_type_name = "") {
  Tensor<S> agg = layer_neighbor_aggregate(p, e, h_src, h_dst, path, cb, edge_type_name);
  return layer_update(p, h_dst, agg);
}

template <typename S>
Tensor<S> layer_forward(const LayerParams<S>& p, const EdgeIndex& e, const Tensor<S>& h,
                        std::optional<ExecPath> path_override = std::nullopt,
                        const EdgeCallback<S>* cb = nullptr) {
  if (h.rows() != e.num_src_nodes() || e.num_src_nodes() != e.num_dst_nodes())
    throw std::invalid_argument("layer_forward: square index matching h required");
  const ExecPath path = path_override ? *path_override : select_path(e, cb != nullptr);
  return layer_forward_bipartite(p, e, h, h, path, cb);
}

// ---------------------------------------------------------------------------
// Homogeneous model: layer stack with ReLU in between, optional linear head
// ---------------------------------------------------------------------------

template <typename S>
struct Model {
  std::vector<LayerParams<S>> layers;
  std::optional<Tensor<S>> head_weight;
  std::optional<Tensor<S>> head_bias;

  int num_layers() const { return static_cast<int>(layers.size()); }

  std::vector<Tensor<S>> parameters() const {
    std::vector<Tensor<S>> out;
    for (const auto& l : layers)
      for (auto& t : l.parameters()) out.push_back(t);
    if (head_weight) out.push_back(*head_weight);
    if (head_bias) out.push_back(*head_bias);
    return out;
  }

  Tensor<S> forward(const EdgeIndex& e, const Tensor<S>& x,
                    std::optional<ExecPath> path = std::nullopt,
                    const EdgeCallback<S>* cb = nullptr) const {
    Tensor<S> h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = layer_forward(layers[i], e, h, path, cb);
      if (i + 1 < layers.size()) h = relu(h);
    }
    if (head_weight) {
      h = matmul(h, *head_weight);
      if (head_bias) h = add(h, *head_bias);
    }
    return h;
  }
};

template <typename S>
Model<S> make_model(LayerKind kind, Index in_dim, Index hidden, int num_layers,
                    std::uint64_t seed, std::optional<Index> head_classes = std::nullopt,
                    int heads = 1) {
  Model<S> m;
  for (int i = 0; i < num_layers; ++i)
    m.layers.push_back(make_layer<S>(kind, i == 0 ? in_dim : hidden, hidden,
                                     rng::derive(seed, 0x6d6f64656cull, i), heads));
  if (head_classes) {
    rng::Stream s(rng::derive(seed, 0x68656164ull));
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    m.head_weight = Tensor<S>::rand_uniform({hidden, *head_classes}, -bound, bound, s);
    m.head_weight->set_requires_grad(true);
    m.head_bias = Tensor<S>::zeros({*head_classes});
    m.head_bias->set_requires_grad(true);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Layer micro-benchmark
// ---------------------------------------------------------------------------

struct BenchTiming {
  double mean_ms = 0;
  double std_ms = 0;
};

// Wall time over `repeat` runs after `warmup` unrecorded runs.
template <typename F>
BenchTiming time_loop(F&& fn, int repeat, int warmup = 3) {
  if (repeat < 1) throw std::invalid_argument("time_loop: repeat must be >= 1");
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(repeat));
  for (int i = 0; i < repeat; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  BenchTiming t;
  for (double s : samples) t.mean_ms += s;
  t.mean_ms /= repeat;
  if (repeat > 1) {
    double acc = 0;
    for (double s : samples) acc += (s - t.mean_ms) * (s - t.mean_ms);
    t.std_ms = std::sqrt(acc / repeat);
  }
  return t;
}

// One forward + backward of a single layer on a fixed workload.
template <typename S>
BenchTiming forward_backward_bench(const LayerParams<S>& p, const EdgeIndex& e,
                                   const Tensor<S>& h, int repeat, ExecPath path,
                                   int warmup = 3) {
  return time_loop(
      [&] {
        for (auto& t : p.parameters()) t.zero_grad();
        Tensor<S> out = layer_forward(p, e, h, path);
        backward(sum(out));
      },
      repeat, warmup);
}

}  // namespace graphmill

#pragma once

#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "graphmill/message_passing.hpp"

namespace graphmill {

// (source type, relation, destination type); rendered canonically as
// src__relation__dst in files and on the CLI.
struct EdgeType {
  std::string src;
  std::string rel;
  std::string dst;

  std::string canonical() const { return src + "__" + rel + "__" + dst; }
  bool operator<(const EdgeType& o) const {
    return canonical() < o.canonical();
  }
  bool operator==(const EdgeType& o) const {
    return src == o.src && rel == o.rel && dst == o.dst;
  }

  static EdgeType parse(const std::string& canonical) {
    const auto a = canonical.find("__");
    const auto b = canonical.rfind("__");
    if (a == std::string::npos || b == a)
      throw std::invalid_argument("EdgeType: expected src__relation__dst, got " + canonical);
    return {canonical.substr(0, a), canonical.substr(a + 2, b - a - 2), canonical.substr(b + 2)};
  }
};

using Timestamps = std::vector<std::int64_t>;

// Typed container: per node type a feature matrix (and optional timestamps),
// per edge type an EdgeIndex (and optional edge features / timestamps).
// freeze() pins the container once store adapters alias its memory.
template <typename S>
class HeteroGraph {
 public:
  struct NodeStore {
    Tensor<S> features;  // N_T x F_T
    std::optional<Timestamps> times;
  };
  struct EdgeStore {
    EdgeIndex index;
    std::optional<Tensor<S>> features;
    std::optional<Timestamps> times;
  };

  void add_node_type(const std::string& name, Tensor<S> features,
                     std::optional<Timestamps> times = std::nullopt) {
    check_mutable();
    if (features.rank() != 2)
      throw std::invalid_argument("HeteroGraph: node features must be rank 2");
    if (times && static_cast<Index>(times->size()) != features.rows())
      throw std::invalid_argument("HeteroGraph: node timestamp length mismatch for " + name);
    nodes_[name] = NodeStore{std::move(features), std::move(times)};
  }

  void add_edge_type(const EdgeType& type, EdgeIndex index,
                     std::optional<Tensor<S>> features = std::nullopt,
                     std::optional<Timestamps> times = std::nullopt) {
    check_mutable();
    const auto s = nodes_.find(type.src);
    const auto d = nodes_.find(type.dst);
    if (s == nodes_.end() || d == nodes_.end())
      throw std::invalid_argument("HeteroGraph: edge type " + type.canonical() +
                                  " references undeclared node types");
    if (index.num_src_nodes() != s->second.features.rows() ||
        index.num_dst_nodes() != d->second.features.rows())
      throw std::invalid_argument("HeteroGraph: EdgeIndex bounds disagree with node counts for " +
                                  type.canonical());
    if (features && features->rows() != index.num_edges())
      throw std::invalid_argument("HeteroGraph: edge feature rows mismatch for " +
                                  type.canonical());
    if (times && static_cast<Index>(times->size()) != index.num_edges())
      throw std::invalid_argument("HeteroGraph: edge timestamp length mismatch for " +
                                  type.canonical());
    edges_[type] = EdgeStore{std::move(index), std::move(features), std::move(times)};
  }

  std::vector<std::string> node_types() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : nodes_) out.push_back(name);
    return out;  // std::map iteration: already sorted
  }
  std::vector<EdgeType> edge_types() const {
    std::vector<EdgeType> out;
    for (const auto& [t, _] : edges_) out.push_back(t);
    return out;
  }

  bool has_node_type(const std::string& name) const { return nodes_.count(name) > 0; }
  Index num_nodes(const std::string& type) const { return node(type).features.rows(); }
  const NodeStore& node(const std::string& type) const {
    auto it = nodes_.find(type);
    if (it == nodes_.end()) throw std::invalid_argument("HeteroGraph: unknown node type " + type);
    return it->second;
  }
  const EdgeStore& edge(const EdgeType& type) const {
    auto it = edges_.find(type);
    if (it == edges_.end())
      throw std::invalid_argument("HeteroGraph: unknown edge type " + type.canonical());
    return it->second;
  }

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

 private:
  void check_mutable() const {
    if (frozen_)
      throw std::logic_error(
          "HeteroGraph: container is frozen (store adapters hold views into it)");
  }

  std::map<std::string, NodeStore> nodes_;
  std::map<EdgeType, EdgeStore> edges_;
  bool frozen_ = false;
};

// ---------------------------------------------------------------------------
// Grouped matrix multiplication
// ---------------------------------------------------------------------------

// { H_T W_T } for a stacked weight tensor W of shape [num_groups, F, F'].
// Group sizes may differ; empty groups produce 0 x F' outputs. The backward
// pass yields gradients for every H_T and the full stacked weight.
template <typename S>
std::vector<Tensor<S>> grouped_matmul(const std::vector<Tensor<S>>& inputs,
                                      const Tensor<S>& weights) {
  if (weights.rank() != 3)
    throw std::invalid_argument("grouped_matmul: weights must be [groups, F, F']");
  const Index groups = weights.shape()[0];
  const Index f_in = weights.shape()[1];
  const Index f_out = weights.shape()[2];
  if (static_cast<Index>(inputs.size()) != groups)
    throw std::invalid_argument("grouped_matmul: group count mismatch (" +
                                std::to_string(inputs.size()) + " inputs, " +
                                std::to_string(groups) + " weight slabs)");
  std::vector<Tensor<S>> outputs;
  outputs.reserve(inputs.size());
  for (Index g = 0; g < groups; ++g) {
    const Tensor<S>& h = inputs[static_cast<std::size_t>(g)];
    if (h.rank() != 2 || h.cols() != f_in)
      throw std::invalid_argument("grouped_matmul: group " + std::to_string(g) +
                                  " inner dimension mismatch");
    Tensor<S> w_g = reshape(slice_rows(weights, g, 1), Shape{f_in, f_out});
    outputs.push_back(matmul(h, w_g));
  }
  return outputs;
}

// ---------------------------------------------------------------------------
// Heterogeneous model and nested propagation
// ---------------------------------------------------------------------------

enum class InterCombine { sum, mean, concat_project };

// One GNN layer replicated across a typed graph: message-side parameters per
// edge type, update-side parameters per node type, plus the aggregation that
// bundles messages arriving at the same destination type.
template <typename S>
struct HeteroModel {
  LayerKind kind = LayerKind::gcn;
  Index in_dim = 0;
  Index out_dim = 0;
  int heads = 1;
  InterCombine combine = InterCombine::sum;
  std::map<EdgeType, LayerParams<S>> replicas;        // msg params per edge type
  std::map<std::string, LayerParams<S>> node_update;  // upd params per node type
  std::map<std::string, Tensor<S>> combine_proj;      // concat_project only

  std::vector<Tensor<S>> parameters() const {
    std::vector<Tensor<S>> out;
    for (const auto& [_, r] : replicas)
      for (auto& t : r.parameters()) out.push_back(t);
    for (const auto& [_, u] : node_update)
      for (auto& t : u.parameters()) out.push_back(t);
    for (const auto& [_, w] : combine_proj) out.push_back(w);
    return out;
  }
};

namespace detail {

// Width of the neighbor aggregate fed into layer_update, per kind.
inline Index neighbor_width(LayerKind kind, Index in_dim, Index out_dim) {
  switch (kind) {
    case LayerKind::gin: return in_dim;  // raw feature sum
    case LayerKind::gcn:
    case LayerKind::sage:
    case LayerKind::gat:
    case LayerKind::edgecnn: return out_dim;
  }
  return out_dim;
}

template <typename S>
LayerParams<S> strip_params(const LayerParams<S>& full, const std::vector<std::string>& keep) {
  LayerParams<S> out = full;
  out.weights.clear();
  for (const auto& name : keep) out.weights[name] = full.at(name);
  return out;
}

}  // namespace detail

// Replicates a homogeneous layer template across every edge type (independent
// weights, seeds derived per canonical type name) and attaches per-node-type
// update parameters. All endpoint types must share the template's in_dim.
template <typename S>
HeteroModel<S> to_hetero(const LayerParams<S>& base, const std::vector<std::string>& node_types,
                         const std::vector<EdgeType>& edge_types, InterCombine combine,
                         std::uint64_t seed) {
  HeteroModel<S> model;
  model.kind = base.kind;
  model.in_dim = base.in_dim;
  model.out_dim = base.out_dim;
  model.heads = base.heads;
  model.combine = combine;

  std::map<std::string, int> declared;
  for (const auto& n : node_types) declared[n] = 0;
  for (const auto& et : edge_types) {
    if (!declared.count(et.src) || !declared.count(et.dst))
      throw std::invalid_argument("to_hetero: edge type " + et.canonical() +
                                  " references undeclared node types");
    ++declared[et.dst];
  }

  for (const auto& et : edge_types) {
    const std::uint64_t replica_seed =
        rng::derive(seed, rng::hash_bytes({et.canonical().data(), et.canonical().size()}));
    LayerParams<S> full =
        make_layer<S>(base.kind, base.in_dim, base.out_dim, replica_seed, base.heads);
    full.aggregation = base.aggregation;
    model.replicas[et] = detail::strip_params(full, msg_param_names(base.kind, base.heads));
  }
  for (const auto& nt : node_types) {
    const std::uint64_t update_seed =
        rng::derive(seed, 0x75706474ull, rng::hash_bytes({nt.data(), nt.size()}));
    LayerParams<S> full =
        make_layer<S>(base.kind, base.in_dim, base.out_dim, update_seed, base.heads);
    model.node_update[nt] = detail::strip_params(full, upd_param_names(base.kind));
    if (combine == InterCombine::concat_project) {
      const Index width = detail::neighbor_width(base.kind, base.in_dim, base.out_dim);
      const Index incoming = std::max(declared[nt], 1);
      rng::Stream s(rng::derive(seed, 0x70726f6aull, rng::hash_bytes({nt.data(), nt.size()})));
      Tensor<S> w = Tensor<S>::rand_uniform({incoming * width, width},
                                            -1.0 / std::sqrt(double(width)),
                                            1.0 / std::sqrt(double(width)), s);
      w.set_requires_grad(true);
      model.combine_proj[nt] = std::move(w);
    }
  }
  return model;
}

// Nested message passing: bipartite neighbor aggregation per edge type,
// inter-type combination in sorted edge-type order, then one update per node
// type. Node types with no incoming edge types update against a zero
// aggregate. Per-edge-type work may run concurrently; the merge order is
// always the sorted canonical order, so results are reproducible.
template <typename S>
std::map<std::string, Tensor<S>> hetero_propagate(
    const HeteroGraph<S>& g, const HeteroModel<S>& model,
    const std::map<std::string, Tensor<S>>& h,
    std::optional<ExecPath> path_override = std::nullopt,
    const std::type_identity_t<EdgeCallback<S>>* callback = nullptr,
    bool parallel_edge_types = false) {
  for (const auto& nt : g.node_types())
    if (!h.count(nt)) throw std::invalid_argument("hetero_propagate: missing node type " + nt);

  struct Job {
    EdgeType type;
    const LayerParams<S>* params;
    Tensor<S> result;
  };
  std::vector<Job> jobs;
  for (const auto& et : g.edge_types()) {
    auto it = model.replicas.find(et);
    if (it == model.replicas.end())
      throw std::invalid_argument("hetero_propagate: model lacks a replica for edge type " +
                                  et.canonical());
    jobs.push_back(Job{et, &it->second, Tensor<S>()});
  }

  auto run_job = [&](Job& job) {
    const auto& store = g.edge(job.type);
    const ExecPath path = path_override
                              ? *path_override
                              : select_path(store.index, callback != nullptr);
    job.result = layer_neighbor_aggregate(*job.params, store.index, h.at(job.type.src),
                                          h.at(job.type.dst), path, callback,
                                          job.type.canonical());
  };

  if (parallel_edge_types && jobs.size() > 1) {
    const bool tape = grad_enabled();
    std::vector<std::thread> workers;
    workers.reserve(jobs.size());
    for (auto& job : jobs)
      workers.emplace_back([&run_job, &job, tape] {
        std::optional<NoGradGuard> guard;
        if (!tape) guard.emplace();
        run_job(job);
      });
    for (auto& w : workers) w.join();
  } else {
    for (auto& job : jobs) run_job(job);
  }

  // Bundle messages per destination type in sorted edge-type order.
  std::map<std::string, std::vector<Tensor<S>>> incoming;
  for (auto& job : jobs) incoming[job.type.dst].push_back(std::move(job.result));

  std::map<std::string, Tensor<S>> out;
  for (const auto& nt : g.node_types()) {
    const auto upd_it = model.node_update.find(nt);
    if (upd_it == model.node_update.end())
      throw std::invalid_argument("hetero_propagate: model lacks update params for type " + nt);
    const Tensor<S>& h_t = h.at(nt);

    Tensor<S> combined;
    auto inc_it = incoming.find(nt);
    if (inc_it == incoming.end() || inc_it->second.empty()) {
      const Index width = detail::neighbor_width(model.kind, model.in_dim, model.out_dim);
      combined = Tensor<S>::zeros({h_t.rows(), width});
      if (model.combine == InterCombine::concat_project)
        combined = matmul(combined, model.combine_proj.at(nt));
    } else {
      auto& parts = inc_it->second;
      switch (model.combine) {
        case InterCombine::sum:
        case InterCombine::mean: {
          combined = parts[0];
          for (std::size_t i = 1; i < parts.size(); ++i) combined = add(combined, parts[i]);
          if (model.combine == InterCombine::mean && parts.size() > 1)
            combined = scale(combined, 1.0 / static_cast<double>(parts.size()));
          break;
        }
        case InterCombine::concat_project: {
          Tensor<S> cat = parts.size() == 1 ? parts[0] : concat_cols(parts);
          const Tensor<S>& proj = model.combine_proj.at(nt);
          const Index expected = proj.shape()[0];
          if (cat.cols() < expected) {
            // types receiving fewer edge types than declared pad with zeros
            Tensor<S> pad = Tensor<S>::zeros({cat.rows(), expected - cat.cols()});
            cat = concat_cols(cat, pad);
          }
          combined = matmul(cat, proj);
          break;
        }
      }
    }
    out[nt] = layer_update(upd_it->second, h_t, combined);
  }
  return out;
}

}  // namespace graphmill

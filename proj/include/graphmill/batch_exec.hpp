#pragma once

#include "graphmill/loader.hpp"
#include "graphmill/message_passing.hpp"

namespace graphmill {

// The single forward edge type of a homogeneous (one node type) batch.
inline const EdgeType& homogeneous_edge_type(const SampledSubgraph& batch) {
  const EdgeType* found = nullptr;
  for (const auto& [t, e] : batch.edges) {
    if (found)
      throw std::logic_error("batch has multiple edge types; use the heterogeneous pipeline");
    found = &t;
  }
  if (!found) throw std::logic_error("batch has no edge types");
  return *found;
}

// Runs a layer stack over one sampled batch. With trim enabled, layer l sees
// only the nodes of hops 0..k-l and the edges of hops 1..k-l (prefix views,
// zero copies); seed rows are unaffected either way.
template <typename S>
Tensor<S> model_forward_on_batch(const Model<S>& model, const SampledSubgraph& batch,
                                 const Tensor<S>& features,
                                 std::optional<ExecPath> path = std::nullopt,
                                 bool trim = false) {
  const std::string& nt = batch.single_node_type();
  const EdgeType& et = homogeneous_edge_type(batch);
  const int depth = model.num_layers();
  if (trim && depth > batch.num_hops)
    throw std::invalid_argument("model_forward_on_batch: more layers than sampled hops");

  Tensor<S> h = features;
  for (int l = 0; l < depth; ++l) {
    EdgeIndex e = batch.edges.at(et);
    if (trim) {
      std::map<std::string, Tensor<S>> current{{nt, h}};
      TrimmedBatch<S> view = trim_to_layer(batch, current, l);
      h = view.h.at(nt);
      e = view.edges.at(et);
    }
    h = layer_forward(model.layers[static_cast<std::size_t>(l)], e, h, path);
    if (l + 1 < depth) h = relu(h);
  }
  if (model.head_weight) {
    h = matmul(h, *model.head_weight);
    if (model.head_bias) h = add(h, *model.head_bias);
  }
  return h;
}

// Seed-row slice of a batch output (seeds occupy the hop-0 prefix, but the
// seed_map is authoritative, including repeated seeds).
template <typename S>
Tensor<S> seed_rows(const SampledSubgraph& batch, const Tensor<S>& out) {
  const std::string& nt = batch.single_node_type();
  const auto& positions = batch.seed_map.at(nt);
  return gather_rows(out, positions);
}

}  // namespace graphmill

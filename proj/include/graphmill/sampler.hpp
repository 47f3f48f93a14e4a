#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "graphmill/stores.hpp"

namespace graphmill {

enum class TemporalStrategy { none, uniform, most_recent, anneal };
enum class Direction { directional, bidirectional };

inline const char* to_string(TemporalStrategy s) {
  switch (s) {
    case TemporalStrategy::none: return "none";
    case TemporalStrategy::uniform: return "uniform";
    case TemporalStrategy::most_recent: return "most_recent";
    case TemporalStrategy::anneal: return "anneal";
  }
  return "?";
}

inline TemporalStrategy temporal_strategy_from_string(const std::string& s) {
  if (s == "none") return TemporalStrategy::none;
  if (s == "uniform") return TemporalStrategy::uniform;
  if (s == "most_recent") return TemporalStrategy::most_recent;
  if (s == "anneal") return TemporalStrategy::anneal;
  throw std::invalid_argument("unknown temporal strategy: " + s);
}

struct SamplerConfig {
  std::vector<Index> fanouts;  // per hop; -1 takes every admissible edge
  bool replace = false;
  Direction direction = Direction::directional;
  bool disjoint = false;
  TemporalStrategy temporal = TemporalStrategy::none;
  double anneal_rate = 0.0;  // lambda > 0 when temporal == anneal
  std::uint64_t seed = 0;
  // Parallelize edge-type jobs within a hop; output is identical either way.
  bool parallel_edge_types = false;
};

using SeedMap = std::map<std::string, std::vector<Index>>;
using SeedTimeMap = std::map<std::string, std::vector<std::int64_t>>;

// Relabeled multi-hop subgraph in BFS hop order (seeds first). The per-hop
// counters are prefix-sliceable: nodes of hops 0..h and edges of hops 1..h
// occupy prefixes of the arrays, which is what layer-wise trimming exploits.
struct SampledSubgraph {
  int num_hops = 0;

  std::map<std::string, std::vector<Index>> node_ids;  // original ids per type
  std::map<std::string, std::vector<Index>> num_sampled_nodes_per_hop;  // length k+1

  std::map<EdgeType, EdgeIndex> edges;  // relabeled, bounds = batch node counts
  std::map<EdgeType, std::vector<Index>> edge_ids;  // original COO positions
  std::map<EdgeType, std::vector<Index>> num_sampled_edges_per_hop;  // length k

  SeedMap seed_map;        // position of each input seed in node_ids, per type
  SeedTimeMap seed_times;  // per type, aligned with the input seed order

  Index num_nodes(const std::string& type) const {
    auto it = node_ids.find(type);
    return it == node_ids.end() ? 0 : static_cast<Index>(it->second.size());
  }

  // single-node-type convenience used by the homogeneous pipeline
  const std::string& single_node_type() const {
    if (node_ids.size() != 1)
      throw std::logic_error("SampledSubgraph: not a single-type batch");
    return node_ids.begin()->first;
  }
};

// BFS neighbor sampling over incoming edges (plus reversed outgoing edges
// when direction = bidirectional, emitted under <rel>__rev). Deterministic
// for a fixed (graph, seeds, cfg): every random choice draws from a stream
// keyed by (seed, hop, node, edge type, seed group).
SampledSubgraph sample_neighbors(const GraphStore& gs, const SeedMap& seeds,
                                 const SamplerConfig& cfg);

// Temporal variant: subgraphs are disjoint per seed, and every sampled
// element that carries a timestamp satisfies time <= its seed's time. Types
// without timestamps are sampled without temporal constraints.
SampledSubgraph sample_temporal(const GraphStore& gs, const SeedMap& seeds,
                                const SeedTimeMap& seed_times, const SamplerConfig& cfg);

// ---------------------------------------------------------------------------
// Seed tables
// ---------------------------------------------------------------------------

// One loader batch worth of externally specified seeds (plus optional
// timestamps and labels aligned with the seed order).
struct SeedBatch {
  SeedMap seeds;
  SeedTimeMap times;
  std::map<std::string, std::vector<std::int64_t>> labels;
};

// Parsed seed table row stream: columns node_type,node_id[,time][,label].
struct SeedTable {
  std::vector<std::string> node_type;
  std::vector<Index> node_id;
  std::vector<std::int64_t> time;   // empty when the column is absent
  std::vector<std::int64_t> label;  // empty when the column is absent

  bool has_time() const { return !time.empty(); }
  bool has_label() const { return !label.empty(); }
  std::size_t size() const { return node_id.size(); }
};

SeedTable read_seed_table(const std::string& csv_path);

// Groups consecutive rows into batches of at most `batch_size`.
std::vector<SeedBatch> batch_seed_table(const SeedTable& table, std::size_t batch_size);

// ---------------------------------------------------------------------------
// Layer-wise trimming
// ---------------------------------------------------------------------------

template <typename S>
struct TrimmedBatch {
  std::map<EdgeType, EdgeIndex> edges;   // zero-copy prefixes
  std::map<std::string, Tensor<S>> h;    // zero-copy row prefixes
  std::map<std::string, Index> num_nodes;
};

// Keeps nodes of hops 0..k-l and edges of hops 1..k-l by prefix slicing over
// the per-hop counters; all views share storage with the inputs and seed rows
// are always retained (they are hop 0).
template <typename S>
TrimmedBatch<S> trim_to_layer(const SampledSubgraph& batch,
                              const std::map<std::string, Tensor<S>>& h, int layer_index) {
  const int k = batch.num_hops;
  if (layer_index < 0 || layer_index >= k)
    throw std::out_of_range("trim_to_layer: layer index " + std::to_string(layer_index) +
                            " outside [0, " + std::to_string(k) + ")");
  const int keep_hops = k - layer_index;  // nodes of hops 0..keep_hops

  TrimmedBatch<S> out;
  for (const auto& [type, counts] : batch.num_sampled_nodes_per_hop) {
    Index keep = 0;
    for (int hop = 0; hop <= keep_hops; ++hop) keep += counts[static_cast<std::size_t>(hop)];
    out.num_nodes[type] = keep;
    auto it = h.find(type);
    if (it == h.end()) throw std::invalid_argument("trim_to_layer: missing features for " + type);
    // h may already be a trim of an earlier layer; it must still cover the
    // rows kept here (BFS prefixes nest).
    if (it->second.rows() < keep || it->second.rows() > batch.num_nodes(type))
      throw std::invalid_argument("trim_to_layer: feature rows disagree with batch for " + type);
    out.h[type] = prefix_rows_view(it->second, keep);
  }
  for (const auto& [type, e] : batch.edges) {
    const auto& counts = batch.num_sampled_edges_per_hop.at(type);
    Index keep = 0;
    for (int hop = 0; hop < keep_hops; ++hop) keep += counts[static_cast<std::size_t>(hop)];
    out.edges.emplace(type, e.prefix_edges(keep, out.num_nodes.at(type.src),
                                           out.num_nodes.at(type.dst)));
  }
  return out;
}

}  // namespace graphmill

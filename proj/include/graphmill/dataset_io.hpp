#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "graphmill/stores.hpp"

namespace graphmill {

// On-disk dataset layout (version 1): a directory containing manifest.json
// plus raw little-endian binaries:
//   node_<type>.<f32|f64>.bin        row-major feature matrix
//   node_<type>.time.i64.bin         optional per-node timestamps
//   edge_<src>__<rel>__<dst>.u64.bin |E| (src, dst) pairs of unsigned 64-bit
//   edge_<src>__<rel>__<dst>.time.i64.bin  optional per-edge timestamps
// Byte lengths must match the manifest exactly; no compression.

inline constexpr const char* kDatasetFormat = "graphmill.dataset";
inline constexpr int kDatasetVersion = 1;

struct DatasetManifest {
  struct NodeRecord {
    std::string name;
    Index count = 0;
    Index feature_width = 0;
    Dtype dtype = Dtype::f32;
    bool has_time = false;
  };
  struct EdgeRecord {
    EdgeType type;
    Index edge_count = 0;
    bool has_time = false;
  };
  std::vector<NodeRecord> nodes;
  std::vector<EdgeRecord> edges;
};

namespace detail {

inline std::string dtype_file_token(Dtype d) {
  switch (d) {
    case Dtype::f32: return "f32";
    case Dtype::f64: return "f64";
    case Dtype::i64: return "i64";
  }
  return "?";
}

template <typename T>
void write_binary(const std::filesystem::path& path, const T* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("dataset: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
  if (!out) throw std::runtime_error("dataset: short write to " + path.string());
}

}  // namespace detail

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);

// Serializes a HeteroGraph bit-exactly (features keep their scalar type).
template <typename S>
DatasetManifest save_dataset(const HeteroGraph<S>& g, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  DatasetManifest manifest;
  for (const auto& name : g.node_types()) {
    const auto& store = g.node(name);
    DatasetManifest::NodeRecord rec;
    rec.name = name;
    rec.count = store.features.rows();
    rec.feature_width = store.features.row_size();
    rec.dtype = dtype_of<S>();
    rec.has_time = store.times.has_value();
    manifest.nodes.push_back(rec);

    detail::write_binary(dir / ("node_" + name + "." + detail::dtype_file_token(rec.dtype) + ".bin"),
                         store.features.data().data(),
                         static_cast<std::size_t>(store.features.numel()));
    if (store.times)
      detail::write_binary(dir / ("node_" + name + ".time.i64.bin"), store.times->data(),
                           store.times->size());
  }
  for (const auto& type : g.edge_types()) {
    const auto& store = g.edge(type);
    DatasetManifest::EdgeRecord rec;
    rec.type = type;
    rec.edge_count = store.index.num_edges();
    rec.has_time = store.times.has_value();
    manifest.edges.push_back(rec);

    std::vector<std::uint64_t> pairs;
    pairs.reserve(static_cast<std::size_t>(rec.edge_count) * 2);
    for (Index i = 0; i < rec.edge_count; ++i) {
      pairs.push_back(static_cast<std::uint64_t>(store.index.src()[static_cast<std::size_t>(i)]));
      pairs.push_back(static_cast<std::uint64_t>(store.index.dst()[static_cast<std::size_t>(i)]));
    }
    detail::write_binary(dir / ("edge_" + type.canonical() + ".u64.bin"), pairs.data(),
                         pairs.size());
    if (store.times)
      detail::write_binary(dir / ("edge_" + type.canonical() + ".time.i64.bin"),
                           store.times->data(), store.times->size());
  }
  write_manifest(manifest, dir);
  return manifest;
}

// Opens a dataset directory; features are memory-mapped, structure is
// materialized into EdgeIndex objects shared by all returned handles. Every
// byte length is validated against the manifest before anything is served.
std::pair<std::shared_ptr<FeatureStore>, std::shared_ptr<GraphStore>> load_dataset(
    const std::filesystem::path& dir);

// CSV ingestion: nodes_<type>.csv (id, features..., optional time) and
// edges_<src>__<rel>__<dst>.csv (src, dst, optional time) become a float32
// dataset directory. Referential integrity is validated with file/row
// context in every error.
DatasetManifest convert_csv_dataset(const std::filesystem::path& csv_dir,
                                    const std::filesystem::path& out_dir);

}  // namespace graphmill

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "graphmill/hetero.hpp"

namespace graphmill {

enum class Dtype { f32, f64, i64 };

inline const char* to_string(Dtype d) {
  switch (d) {
    case Dtype::f32: return "float32";
    case Dtype::f64: return "float64";
    case Dtype::i64: return "int64";
  }
  return "?";
}

inline Dtype dtype_from_string(const std::string& s) {
  if (s == "float32") return Dtype::f32;
  if (s == "float64") return Dtype::f64;
  if (s == "int64") return Dtype::i64;
  throw std::invalid_argument("unknown dtype: " + s);
}

template <typename S>
constexpr Dtype dtype_of() {
  if constexpr (std::is_same_v<S, float>) return Dtype::f32;
  if constexpr (std::is_same_v<S, double>) return Dtype::f64;
  return Dtype::i64;
}

struct AttrInfo {
  Dtype dtype;
  Index rows = 0;
  Index width = 0;
};

// Read path for node attributes. Implementations must return rows in the
// exact order requested; repeated indices repeat rows. Safe for unlimited
// concurrent readers.
class FeatureStore {
 public:
  virtual ~FeatureStore() = default;

  virtual std::vector<std::string> node_types() const = 0;
  virtual std::vector<std::string> attrs(const std::string& node_type) const = 0;
  virtual AttrInfo attr_info(const std::string& node_type, const std::string& attr) const = 0;

  virtual Tensor<float> get_f32(const std::string& node_type, IndexSpan rows,
                                const std::string& attr) const = 0;
  virtual Tensor<double> get_f64(const std::string& node_type, IndexSpan rows,
                                 const std::string& attr) const = 0;
  virtual Tensor<std::int64_t> get_i64(const std::string& node_type, IndexSpan rows,
                                       const std::string& attr) const = 0;

  template <typename S>
  Tensor<S> get(const std::string& node_type, IndexSpan rows, const std::string& attr) const {
    if constexpr (std::is_same_v<S, float>) return get_f32(node_type, rows, attr);
    else if constexpr (std::is_same_v<S, double>) return get_f64(node_type, rows, attr);
    else return get_i64(node_type, rows, attr);
  }

  struct Request {
    std::string node_type;
    std::vector<Index> rows;
    std::string attr;
  };

  // Batched convenience; equals the concatenation of individual gets.
  template <typename S>
  std::vector<Tensor<S>> multi_get(const std::vector<Request>& requests) const {
    std::vector<Tensor<S>> out;
    out.reserve(requests.size());
    for (const auto& r : requests) out.push_back(get<S>(r.node_type, r.rows, r.attr));
    return out;
  }
};

// Read path for graph structure. Returned EdgeIndex objects share storage and
// caches with the store, so repeated retrievals reuse compressed views.
class GraphStore {
 public:
  virtual ~GraphStore() = default;

  virtual std::vector<std::string> node_types() const = 0;
  virtual std::vector<EdgeType> edge_types() const = 0;
  virtual Index num_nodes(const std::string& node_type) const = 0;
  virtual EdgeIndex edge_index(const EdgeType& type) const = 0;
  virtual const Timestamps* edge_times(const EdgeType& type) const = 0;
  virtual const Timestamps* node_times(const std::string& node_type) const = 0;
};

namespace detail {

template <typename SrcScalar, typename OutScalar>
Tensor<OutScalar> gather_attr_rows(const SrcScalar* base, Index total_rows, Index width,
                                   IndexSpan rows, const std::string& what) {
  check_index_range(rows, total_rows, what.c_str());
  Tensor<OutScalar> out(Shape{static_cast<Index>(rows.size()), width});
  auto ov = out.data_mut();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const SrcScalar* srcp = base + rows[i] * width;
    OutScalar* dst = ov.data() + static_cast<Index>(i) * width;
    for (Index j = 0; j < width; ++j) dst[j] = static_cast<OutScalar>(srcp[j]);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// In-memory adapters over a HeteroGraph (zero data duplication)
// ---------------------------------------------------------------------------

template <typename S>
class InMemoryFeatureStore final : public FeatureStore {
 public:
  explicit InMemoryFeatureStore(std::shared_ptr<const HeteroGraph<S>> g) : g_(std::move(g)) {}

  std::vector<std::string> node_types() const override { return g_->node_types(); }

  std::vector<std::string> attrs(const std::string& node_type) const override {
    std::vector<std::string> out{"x"};
    if (g_->node(node_type).times) out.push_back("time");
    return out;
  }

  AttrInfo attr_info(const std::string& node_type, const std::string& attr) const override {
    const auto& store = g_->node(node_type);
    if (attr == "x")
      return {dtype_of<S>(), store.features.rows(), store.features.row_size()};
    if (attr == "time" && store.times)
      return {Dtype::i64, static_cast<Index>(store.times->size()), 1};
    throw std::invalid_argument("FeatureStore: unknown attribute " + node_type + "." + attr);
  }

  Tensor<float> get_f32(const std::string& node_type, IndexSpan rows,
                        const std::string& attr) const override {
    return typed_get<float>(node_type, rows, attr);
  }
  Tensor<double> get_f64(const std::string& node_type, IndexSpan rows,
                         const std::string& attr) const override {
    return typed_get<double>(node_type, rows, attr);
  }
  Tensor<std::int64_t> get_i64(const std::string& node_type, IndexSpan rows,
                               const std::string& attr) const override {
    const auto& store = g_->node(node_type);
    if (attr != "time" || !store.times)
      throw std::invalid_argument("FeatureStore: no int64 attribute " + node_type + "." + attr);
    return detail::gather_attr_rows<std::int64_t, std::int64_t>(
        store.times->data(), static_cast<Index>(store.times->size()), 1, rows, "get");
  }

 private:
  template <typename Out>
  Tensor<Out> typed_get(const std::string& node_type, IndexSpan rows,
                        const std::string& attr) const {
    if (attr != "x")
      throw std::invalid_argument("FeatureStore: unknown attribute " + node_type + "." + attr);
    if (dtype_of<Out>() != dtype_of<S>())
      throw std::invalid_argument(std::string("FeatureStore: attribute holds ") +
                                  to_string(dtype_of<S>()) + ", requested " +
                                  to_string(dtype_of<Out>()));
    const auto& feats = g_->node(node_type).features;
    if constexpr (std::is_same_v<Out, S>)
      return detail::gather_attr_rows<S, Out>(feats.data().data(), feats.rows(),
                                              feats.row_size(), rows, "get");
    else
      throw std::logic_error("unreachable");
  }

  std::shared_ptr<const HeteroGraph<S>> g_;
};

template <typename S>
class InMemoryGraphStore final : public GraphStore {
 public:
  explicit InMemoryGraphStore(std::shared_ptr<const HeteroGraph<S>> g) : g_(std::move(g)) {}

  std::vector<std::string> node_types() const override { return g_->node_types(); }
  std::vector<EdgeType> edge_types() const override { return g_->edge_types(); }
  Index num_nodes(const std::string& node_type) const override { return g_->num_nodes(node_type); }

  EdgeIndex edge_index(const EdgeType& type) const override {
    return g_->edge(type).index;  // shared storage and caches
  }
  const Timestamps* edge_times(const EdgeType& type) const override {
    const auto& t = g_->edge(type).times;
    return t ? &*t : nullptr;
  }
  const Timestamps* node_times(const std::string& node_type) const override {
    const auto& t = g_->node(node_type).times;
    return t ? &*t : nullptr;
  }

 private:
  std::shared_ptr<const HeteroGraph<S>> g_;
};

// Adapter views over the container; the container is frozen so later mutation
// through it is rejected rather than silently invalidating the views.
template <typename S>
std::pair<std::shared_ptr<FeatureStore>, std::shared_ptr<GraphStore>> in_memory_stores(
    std::shared_ptr<HeteroGraph<S>> g) {
  g->freeze();
  std::shared_ptr<const HeteroGraph<S>> cg = g;
  return {std::make_shared<InMemoryFeatureStore<S>>(cg),
          std::make_shared<InMemoryGraphStore<S>>(cg)};
}

}  // namespace graphmill

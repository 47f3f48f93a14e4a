#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "graphmill/tensor.hpp"

namespace graphmill {

enum class SortOrder { unsorted, by_src, by_dst };

const char* to_string(SortOrder order);

// Compressed view over a COO edge list. `perm` maps each compressed position
// back to its original COO position, so expanding (rowptr, col) through perm
// reproduces the original pairs bit-exactly.
struct CsrView {
  std::vector<Index> rowptr;  // length num_rows + 1, non-decreasing
  std::vector<Index> col;     // length |E|
  std::vector<Index> perm;    // compressed position -> COO position

  Index num_rows() const { return static_cast<Index>(rowptr.size()) - 1; }
  Index num_entries() const { return static_cast<Index>(col.size()); }
};

// Metadata claims supplied at construction. Claims are verified in O(|E|)
// before being recorded; a claim the arrays do not satisfy is an error, never
// silently trusted (metadata drives kernel dispatch downstream).
struct EdgeIndexClaims {
  std::optional<SortOrder> sort_order;
  std::optional<bool> is_undirected;
};

// COO edge list with sort/undirected metadata and demand-filled CSR/CSC
// caches. Value type: copies share storage and caches. Immutable except for
// idempotent cache population (lock-free reads, compute-then-publish writes)
// and replace_edges, which swaps in a fresh payload and drops caches.
class EdgeIndex {
 public:
  EdgeIndex();
  EdgeIndex(std::vector<Index> src, std::vector<Index> dst, Index num_src_nodes,
            Index num_dst_nodes, const EdgeIndexClaims& claims = {});

  std::span<const Index> src() const { return {src_->data(), static_cast<std::size_t>(num_edges_)}; }
  std::span<const Index> dst() const { return {dst_->data(), static_cast<std::size_t>(num_edges_)}; }
  Index num_edges() const { return num_edges_; }
  Index num_src_nodes() const { return num_src_; }
  Index num_dst_nodes() const { return num_dst_; }
  SortOrder sort_order() const { return sort_order_; }
  bool is_undirected() const { return undirected_; }

  // Trim views remember the untrimmed extent so degree-based normalization
  // can stay consistent with the full graph (entries may reference nodes
  // beyond the view's bounds; degree consumers skip those).
  std::span<const Index> full_src() const { return {src_->data(), src_->size()}; }
  std::span<const Index> full_dst() const { return {dst_->data(), dst_->size()}; }
  bool is_prefix_view() const { return num_edges_ != static_cast<Index>(src_->size()); }

  // Demand-filled caches; repeated calls return the published view.
  const CsrView& to_csr() const;
  const CsrView& to_csc() const;

  // Grouping of A^T by its rows (i.e. of A by destination). For undirected
  // graphs A = A^T, so the CSR cache is returned and no CSC cache is ever
  // allocated.
  const CsrView& transpose_view() const;

  bool has_csr_cache() const { return cache_->csr.load(std::memory_order_acquire) != nullptr; }
  bool has_csc_cache() const { return cache_->csc.load(std::memory_order_acquire) != nullptr; }
  int csr_build_count() const { return cache_->csr_builds.load(); }
  int csc_build_count() const { return cache_->csc_builds.load(); }

  // Stable sort by the requested key. Returns the sorted index and the
  // permutation mapping new positions to old positions. The cache implied by
  // the sort itself is carried into the result.
  std::pair<EdgeIndex, std::vector<Index>> sort_by(SortOrder order) const;

  // Replaces the edge arrays (exclusive access required); drops caches and
  // re-verifies any claims.
  void replace_edges(std::vector<Index> src, std::vector<Index> dst,
                     const EdgeIndexClaims& claims = {});

  // Zero-copy view of the first `count` edges with tightened node bounds.
  // Exists for layer-wise trimming of BFS-ordered batches. The view starts
  // with empty caches of its own.
  EdgeIndex prefix_edges(Index count, Index num_src_nodes, Index num_dst_nodes) const;

 private:
  struct CacheSlot {
    std::atomic<const CsrView*> csr{nullptr};
    std::atomic<const CsrView*> csc{nullptr};
    std::atomic<int> csr_builds{0};
    std::atomic<int> csc_builds{0};
    ~CacheSlot() {
      delete csr.load();
      delete csc.load();
    }
  };

  const CsrView& fill_cache(bool by_dst) const;
  void verify_claims(const EdgeIndexClaims& claims);

  std::shared_ptr<const std::vector<Index>> src_;
  std::shared_ptr<const std::vector<Index>> dst_;
  Index num_edges_ = 0;
  Index num_src_ = 0;
  Index num_dst_ = 0;
  SortOrder sort_order_ = SortOrder::unsorted;
  bool undirected_ = false;
  std::shared_ptr<CacheSlot> cache_;
};

// Counting-sort CSR construction, independent of EdgeIndex caching. Groups by
// `keys` (stable), records the paired values as `col`.
CsrView build_compressed(std::span<const Index> keys, std::span<const Index> values,
                         Index num_rows);

// Appends one (v, v) edge per node after the existing edges. Requires a square
// index. Caller receives the augmented index; metadata is recomputed cheaply.
EdgeIndex with_self_loops(const EdgeIndex& e);

}  // namespace graphmill

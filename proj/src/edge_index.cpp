#include "graphmill/edge_index.hpp"

#include <stdexcept>
#include <string>
#include <unordered_map>

namespace graphmill {

namespace {

struct PairHash {
  std::size_t operator()(const std::pair<Index, Index>& p) const {
    return static_cast<std::size_t>(
        rng::mix(static_cast<std::uint64_t>(p.first) * 0x9e3779b97f4a7c15ull ^
                 static_cast<std::uint64_t>(p.second)));
  }
};

void check_bounds(std::span<const Index> ids, Index bound, const char* which) {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] < 0 || ids[i] >= bound)
      throw std::out_of_range(std::string("EdgeIndex: ") + which + " index " +
                              std::to_string(ids[i]) + " at position " + std::to_string(i) +
                              " outside [0, " + std::to_string(bound) + ")");
}

// Returns the first position violating non-decreasing order, or -1.
Index first_unsorted(std::span<const Index> keys) {
  for (std::size_t i = 1; i < keys.size(); ++i)
    if (keys[i] < keys[i - 1]) return static_cast<Index>(i);
  return -1;
}

}  // namespace

const char* to_string(SortOrder order) {
  switch (order) {
    case SortOrder::unsorted: return "unsorted";
    case SortOrder::by_src: return "by_src";
    case SortOrder::by_dst: return "by_dst";
  }
  return "?";
}

CsrView build_compressed(std::span<const Index> keys, std::span<const Index> values,
                         Index num_rows) {
  const Index e = static_cast<Index>(keys.size());
  CsrView view;
  view.rowptr.assign(static_cast<std::size_t>(num_rows) + 1, 0);
  view.col.resize(static_cast<std::size_t>(e));
  view.perm.resize(static_cast<std::size_t>(e));
  for (Index i = 0; i < e; ++i) ++view.rowptr[static_cast<std::size_t>(keys[i]) + 1];
  for (Index r = 0; r < num_rows; ++r)
    view.rowptr[static_cast<std::size_t>(r) + 1] += view.rowptr[static_cast<std::size_t>(r)];
  std::vector<Index> cursor(view.rowptr.begin(), view.rowptr.end() - 1);
  for (Index i = 0; i < e; ++i) {
    const Index pos = cursor[static_cast<std::size_t>(keys[i])]++;
    view.col[static_cast<std::size_t>(pos)] = values[i];
    view.perm[static_cast<std::size_t>(pos)] = i;
  }
  return view;
}

EdgeIndex::EdgeIndex()
    : src_(std::make_shared<std::vector<Index>>()),
      dst_(std::make_shared<std::vector<Index>>()),
      cache_(std::make_shared<CacheSlot>()) {}

EdgeIndex::EdgeIndex(std::vector<Index> src, std::vector<Index> dst, Index num_src_nodes,
                     Index num_dst_nodes, const EdgeIndexClaims& claims)
    : num_edges_(static_cast<Index>(src.size())),
      num_src_(num_src_nodes),
      num_dst_(num_dst_nodes),
      cache_(std::make_shared<CacheSlot>()) {
  if (src.size() != dst.size())
    throw std::invalid_argument("EdgeIndex: src and dst lengths differ");
  if (num_src_nodes < 0 || num_dst_nodes < 0)
    throw std::invalid_argument("EdgeIndex: negative node count");
  src_ = std::make_shared<std::vector<Index>>(std::move(src));
  dst_ = std::make_shared<std::vector<Index>>(std::move(dst));
  verify_claims(claims);
}

void EdgeIndex::verify_claims(const EdgeIndexClaims& claims) {
  check_bounds(src(), num_src_, "src");
  check_bounds(dst(), num_dst_, "dst");
  sort_order_ = SortOrder::unsorted;
  undirected_ = false;
  if (claims.sort_order && *claims.sort_order != SortOrder::unsorted) {
    const auto keys = *claims.sort_order == SortOrder::by_src ? src() : dst();
    const Index bad = first_unsorted(keys);
    if (bad >= 0)
      throw std::invalid_argument(std::string("EdgeIndex: claim ") +
                                  to_string(*claims.sort_order) +
                                  " violated at position " + std::to_string(bad));
    sort_order_ = *claims.sort_order;
  }
  if (claims.is_undirected && *claims.is_undirected) {
    if (num_src_ != num_dst_)
      throw std::invalid_argument(
          "EdgeIndex: is_undirected claim requires num_src_nodes == num_dst_nodes");
    // Multiset symmetry: count(u,v) must equal count(v,u) for every pair.
    std::unordered_map<std::pair<Index, Index>, Index, PairHash> counts;
    counts.reserve(static_cast<std::size_t>(num_edges_) * 2);
    auto s = src();
    auto d = dst();
    for (Index i = 0; i < num_edges_; ++i) ++counts[{s[i], d[i]}];
    for (Index i = 0; i < num_edges_; ++i) {
      auto it = counts.find({d[i], s[i]});
      const Index mirror = it == counts.end() ? 0 : it->second;
      if (mirror != counts[{s[i], d[i]}])
        throw std::invalid_argument(
            "EdgeIndex: is_undirected claim violated at position " + std::to_string(i) +
            " (edge " + std::to_string(s[i]) + "->" + std::to_string(d[i]) +
            " lacks a matching reverse)");
    }
    undirected_ = true;
  }
}

const CsrView& EdgeIndex::fill_cache(bool by_dst) const {
  auto& slot = by_dst ? cache_->csc : cache_->csr;
  if (const CsrView* hit = slot.load(std::memory_order_acquire)) return *hit;
  const CsrView* built =
      new CsrView(by_dst ? build_compressed(dst(), src(), num_dst_)
                         : build_compressed(src(), dst(), num_src_));
  (by_dst ? cache_->csc_builds : cache_->csr_builds).fetch_add(1);
  const CsrView* expected = nullptr;
  // Compute-then-publish: at most one result wins; losers discard their copy.
  if (!slot.compare_exchange_strong(expected, built, std::memory_order_acq_rel,
                                    std::memory_order_acquire)) {
    delete built;
    return *expected;
  }
  return *built;
}

const CsrView& EdgeIndex::to_csr() const { return fill_cache(/*by_dst=*/false); }

const CsrView& EdgeIndex::to_csc() const { return fill_cache(/*by_dst=*/true); }

const CsrView& EdgeIndex::transpose_view() const {
  if (undirected_) return to_csr();
  return to_csc();
}

std::pair<EdgeIndex, std::vector<Index>> EdgeIndex::sort_by(SortOrder order) const {
  if (order == SortOrder::unsorted)
    throw std::invalid_argument("EdgeIndex: sort_by needs by_src or by_dst");
  const bool by_src = order == SortOrder::by_src;
  const CsrView grouped = build_compressed(by_src ? src() : dst(), by_src ? dst() : src(),
                                           by_src ? num_src_ : num_dst_);
  const Index e = num_edges_;
  std::vector<Index> new_src(static_cast<std::size_t>(e));
  std::vector<Index> new_dst(static_cast<std::size_t>(e));
  auto s = src();
  auto d = dst();
  for (Index i = 0; i < e; ++i) {
    new_src[static_cast<std::size_t>(i)] = s[grouped.perm[static_cast<std::size_t>(i)]];
    new_dst[static_cast<std::size_t>(i)] = d[grouped.perm[static_cast<std::size_t>(i)]];
  }

  EdgeIndex sorted;
  sorted.src_ = std::make_shared<std::vector<Index>>(std::move(new_src));
  sorted.dst_ = std::make_shared<std::vector<Index>>(std::move(new_dst));
  sorted.num_edges_ = e;
  sorted.num_src_ = num_src_;
  sorted.num_dst_ = num_dst_;
  sorted.sort_order_ = order;
  sorted.undirected_ = undirected_;
  sorted.cache_ = std::make_shared<CacheSlot>();

  // The sort itself is the grouped view with identity perm; publish it as the
  // cache the new ordering makes valid.
  auto* carried = new CsrView();
  carried->rowptr = grouped.rowptr;
  carried->col.resize(static_cast<std::size_t>(e));
  carried->perm.resize(static_cast<std::size_t>(e));
  for (Index i = 0; i < e; ++i) {
    carried->col[static_cast<std::size_t>(i)] =
        by_src ? (*sorted.dst_)[static_cast<std::size_t>(i)]
               : (*sorted.src_)[static_cast<std::size_t>(i)];
    carried->perm[static_cast<std::size_t>(i)] = i;
  }
  (by_src ? sorted.cache_->csr : sorted.cache_->csc).store(carried, std::memory_order_release);

  return {std::move(sorted), grouped.perm};
}

void EdgeIndex::replace_edges(std::vector<Index> src, std::vector<Index> dst,
                              const EdgeIndexClaims& claims) {
  if (src.size() != dst.size())
    throw std::invalid_argument("EdgeIndex: src and dst lengths differ");
  num_edges_ = static_cast<Index>(src.size());
  src_ = std::make_shared<std::vector<Index>>(std::move(src));
  dst_ = std::make_shared<std::vector<Index>>(std::move(dst));
  cache_ = std::make_shared<CacheSlot>();  // drop caches
  verify_claims(claims);
}

EdgeIndex EdgeIndex::prefix_edges(Index count, Index num_src_nodes, Index num_dst_nodes) const {
  if (count < 0 || count > num_edges_)
    throw std::out_of_range("EdgeIndex: prefix count out of range");
  EdgeIndex view;
  view.src_ = src_;
  view.dst_ = dst_;
  view.num_edges_ = count;
  view.num_src_ = num_src_nodes;
  view.num_dst_ = num_dst_nodes;
  view.sort_order_ = sort_order_ == SortOrder::unsorted ? SortOrder::unsorted : sort_order_;
  view.undirected_ = false;  // a prefix of an undirected edge set need not be symmetric
  view.cache_ = std::make_shared<CacheSlot>();
  check_bounds(view.src(), num_src_nodes, "src");
  check_bounds(view.dst(), num_dst_nodes, "dst");
  return view;
}

EdgeIndex with_self_loops(const EdgeIndex& e) {
  if (e.num_src_nodes() != e.num_dst_nodes())
    throw std::invalid_argument("with_self_loops: square index required");
  const Index n = e.num_src_nodes();
  std::vector<Index> src(e.src().begin(), e.src().end());
  std::vector<Index> dst(e.dst().begin(), e.dst().end());
  src.reserve(src.size() + static_cast<std::size_t>(n));
  dst.reserve(dst.size() + static_cast<std::size_t>(n));
  for (Index v = 0; v < n; ++v) {
    src.push_back(v);
    dst.push_back(v);
  }
  return EdgeIndex(std::move(src), std::move(dst), n, n);
}

}  // namespace graphmill

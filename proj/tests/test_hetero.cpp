#include <cmath>

#include "doctest.h"
#include "graphmill/hetero.hpp"
#include "testing/oracles.hpp"

using namespace graphmill;
using testing_support::check_gradient;
using testing_support::max_abs_diff;
using testing_support::random_tensor;

namespace {

// user/item/tag graph with four edge types.
template <typename S>
HeteroGraph<S> three_type_graph(std::uint64_t salt) {
  HeteroGraph<S> g;
  g.add_node_type("user", random_tensor<S>({4, 3}, salt));
  g.add_node_type("item", random_tensor<S>({5, 3}, salt + 1));
  g.add_node_type("tag", random_tensor<S>({3, 3}, salt + 2));
  g.add_edge_type(EdgeType{"user", "buys", "item"},
                  EdgeIndex({0, 1, 2, 3, 0}, {0, 1, 2, 3, 4}, 4, 5));
  g.add_edge_type(EdgeType{"item", "bought_by", "user"},
                  EdgeIndex({0, 1, 2, 4}, {1, 2, 3, 0}, 5, 4));
  g.add_edge_type(EdgeType{"tag", "labels", "item"}, EdgeIndex({0, 1, 2}, {0, 2, 4}, 3, 5));
  g.add_edge_type(EdgeType{"user", "follows", "user"}, EdgeIndex({0, 1, 2}, {1, 2, 3}, 4, 4));
  return g;
}

template <typename S>
std::map<std::string, Tensor<S>> features_of(const HeteroGraph<S>& g) {
  std::map<std::string, Tensor<S>> h;
  for (const auto& nt : g.node_types()) h[nt] = g.node(nt).features;
  return h;
}

}  // namespace

TEST_CASE("edge type canonical form round-trips") {
  EdgeType t{"user", "buys", "item"};
  CHECK(t.canonical() == "user__buys__item");
  CHECK(EdgeType::parse("user__buys__item") == t);
  CHECK_THROWS_AS(EdgeType::parse("nonsense"), std::invalid_argument);
}

TEST_CASE("container validates endpoint declarations and bounds") {
  HeteroGraph<double> g;
  g.add_node_type("a", Tensor<double>::zeros({3, 2}));
  CHECK_THROWS_AS(g.add_edge_type(EdgeType{"a", "r", "missing"}, EdgeIndex({0}, {0}, 3, 1)),
                  std::invalid_argument);
  // bounds disagree with node counts
  CHECK_THROWS_AS(g.add_edge_type(EdgeType{"a", "r", "a"}, EdgeIndex({0}, {0}, 4, 3)),
                  std::invalid_argument);
  g.add_edge_type(EdgeType{"a", "r", "a"}, EdgeIndex({0, 2}, {1, 1}, 3, 3));
  CHECK(g.edge_types().size() == 1);

  g.freeze();
  CHECK_THROWS_AS(g.add_node_type("b", Tensor<double>::zeros({1, 2})), std::logic_error);
}

TEST_CASE("grouped_matmul equals independent per-group matmuls") {
  auto h0 = random_tensor<double>({2, 3}, 201);
  auto h1 = random_tensor<double>({4, 3}, 202);
  auto w = random_tensor<double>({2, 3, 5}, 203);
  auto outs = grouped_matmul<double>({h0, h1}, w);
  REQUIRE(outs.size() == 2);
  CHECK(outs[0].shape() == Shape{2, 5});
  CHECK(outs[1].shape() == Shape{4, 5});
  auto w0 = reshape(slice_rows(w, 0, 1), Shape{3, 5});
  auto w1 = reshape(slice_rows(w, 1, 1), Shape{3, 5});
  CHECK(max_abs_diff(outs[0], matmul(h0, w0)) == 0.0);
  CHECK(max_abs_diff(outs[1], matmul(h1, w1)) == 0.0);
}

TEST_CASE("grouped_matmul degenerates to matmul for one group") {
  auto h = random_tensor<double>({3, 4}, 204);
  auto w = random_tensor<double>({1, 4, 2}, 205);
  auto outs = grouped_matmul<double>({h}, w);
  CHECK(max_abs_diff(outs[0], matmul(h, reshape(slice_rows(w, 0, 1), Shape{4, 2}))) == 0.0);
}

TEST_CASE("grouped_matmul handles empty groups and validates shapes") {
  auto h0 = Tensor<double>::zeros({0, 3});
  auto h1 = random_tensor<double>({2, 3}, 206);
  auto w = random_tensor<double>({2, 3, 4}, 207);
  auto outs = grouped_matmul<double>({h0, h1}, w);
  CHECK(outs[0].shape() == Shape{0, 4});

  CHECK_THROWS_AS(grouped_matmul<double>({h1}, w), std::invalid_argument);  // group count
  auto bad = random_tensor<double>({2, 5}, 208);
  CHECK_THROWS_AS(grouped_matmul<double>({h0, bad}, w), std::invalid_argument);  // inner dim
}

TEST_CASE("grouped_matmul weight gradient with unequal group sizes {1,7,3}") {
  std::vector<Tensor<double>> hs{random_tensor<double>({1, 3}, 210),
                                 random_tensor<double>({7, 3}, 211),
                                 random_tensor<double>({3, 3}, 212)};
  auto w = random_tensor<double>({3, 3, 2}, 213);
  w.set_requires_grad(true);
  check_gradient<double>(w, [&] {
    auto outs = grouped_matmul(hs, w);
    Tensor<double> acc = sum(outs[0]);
    for (std::size_t i = 1; i < outs.size(); ++i) acc = add(acc, sum(outs[i]));
    return acc;
  });
}

TEST_CASE("to_hetero replicates message params per edge type with distinct seeds") {
  auto base = make_layer<double>(LayerKind::sage, 3, 4, 77);
  std::vector<EdgeType> ets{EdgeType{"a", "r1", "b"}, EdgeType{"a", "r2", "b"},
                            EdgeType{"b", "r3", "a"}};
  auto model = to_hetero(base, {"a", "b"}, ets, InterCombine::sum, 99);
  CHECK(model.replicas.size() == 3);
  CHECK(model.node_update.size() == 2);
  for (const auto& [et, r] : model.replicas) {
    CHECK(r.weights.count("w_neigh") == 1);
    CHECK(r.weights.count("w_self") == 0);  // update side lives per node type
    CHECK(r.at("w_neigh").shape() == Shape{3, 4});
  }
  // pairwise different initializations under derived seeds
  auto& r1 = model.replicas.at(ets[0]).at("w_neigh");
  auto& r2 = model.replicas.at(ets[1]).at("w_neigh");
  auto& r3 = model.replicas.at(ets[2]).at("w_neigh");
  CHECK_FALSE(testing_support::bit_equal(r1, r2));
  CHECK_FALSE(testing_support::bit_equal(r1, r3));
  CHECK_FALSE(testing_support::bit_equal(r2, r3));
}

TEST_CASE("to_hetero shape audit across a 5-edge-type metadata set") {
  auto base = make_layer<double>(LayerKind::gat, 6, 8, 78, 2);
  std::vector<EdgeType> ets;
  for (int i = 0; i < 5; ++i)
    ets.push_back(EdgeType{"a", "r" + std::to_string(i), "a"});
  auto model = to_hetero(base, {"a"}, ets, InterCombine::sum, 1);
  CHECK(model.replicas.size() == 5);
  for (const auto& [et, r] : model.replicas) {
    CHECK(r.at("weight").shape() == Shape{6, 8});
    CHECK(r.at("att_src_h0").shape() == Shape{4, 1});
    CHECK(r.at("att_dst_h1").shape() == Shape{4, 1});
  }
  CHECK(model.node_update.at("a").at("bias").shape() == Shape{8});
}

TEST_CASE("collapse: single-type single-edge-type hetero equals homogeneous bit-for-bit") {
  for (LayerKind kind : {LayerKind::gcn, LayerKind::sage, LayerKind::gin, LayerKind::gat,
                         LayerKind::edgecnn}) {
    auto base = make_layer<double>(kind, 3, 6, 300 + static_cast<std::uint64_t>(kind),
                                   kind == LayerKind::gat ? 2 : 1);
    HeteroGraph<double> g;
    g.add_node_type("n", random_tensor<double>({8, 3}, 310));
    EdgeType et{"n", "r", "n"};
    g.add_edge_type(et, EdgeIndex({0, 1, 2, 5, 7, 3}, {1, 2, 0, 4, 6, 3}, 8, 8));

    auto model = to_hetero(base, {"n"}, {et}, InterCombine::sum, 5);
    // tie weights to the base layer
    for (const auto& name : msg_param_names(kind, base.heads))
      model.replicas.at(et).weights[name] = base.at(name);
    for (const auto& name : upd_param_names(kind))
      model.node_update.at("n").weights[name] = base.at(name);

    auto h = features_of(g);
    for (ExecPath path : {ExecPath::edge_materialize, ExecPath::segment_fused}) {
      auto hetero_out = hetero_propagate(g, model, h, path);
      auto homo_out = layer_forward(base, g.edge(et).index, h.at("n"), path);
      CHECK(testing_support::bit_equal(hetero_out.at("n"), homo_out));
    }
  }
}

TEST_CASE("two incoming edge types under inter-type sum add their bipartite results") {
  HeteroGraph<double> g;
  g.add_node_type("a", random_tensor<double>({3, 2}, 320));
  g.add_node_type("b", random_tensor<double>({2, 2}, 321));
  g.add_node_type("c", random_tensor<double>({4, 2}, 322));
  EdgeType ab{"a", "x", "b"};
  EdgeType cb{"c", "y", "b"};
  g.add_edge_type(ab, EdgeIndex({0, 1, 2}, {0, 1, 1}, 3, 2));
  g.add_edge_type(cb, EdgeIndex({1, 3}, {0, 1}, 4, 2));

  auto base = make_layer<double>(LayerKind::sage, 2, 3, 323);
  auto model = to_hetero(base, {"a", "b", "c"}, {ab, cb}, InterCombine::sum, 7);
  auto h = features_of(g);
  auto out = hetero_propagate(g, model, h, ExecPath::edge_materialize);

  auto agg_ab = layer_neighbor_aggregate(model.replicas.at(ab), g.edge(ab).index, h.at("a"),
                                         h.at("b"), ExecPath::edge_materialize);
  auto agg_cb = layer_neighbor_aggregate(model.replicas.at(cb), g.edge(cb).index, h.at("c"),
                                         h.at("b"), ExecPath::edge_materialize);
  auto want = layer_update(model.node_update.at("b"), h.at("b"), add(agg_ab, agg_cb));
  CHECK(testing_support::bit_equal(out.at("b"), want));

  // node types with no incoming edge types pass through the update with a zero aggregate
  auto want_a = layer_update(model.node_update.at("a"), h.at("a"),
                             Tensor<double>::zeros({3, 3}));
  CHECK(testing_support::bit_equal(out.at("a"), want_a));
}

TEST_CASE("3-type synthetic graph matches a hand-rolled nested-loop oracle") {
  auto g = three_type_graph<double>(330);
  auto base = make_layer<double>(LayerKind::sage, 3, 4, 331);
  auto ets = g.edge_types();
  auto model = to_hetero(base, g.node_types(), ets, InterCombine::sum, 332);
  auto h = features_of(g);
  auto out = hetero_propagate(g, model, h, ExecPath::segment_fused);

  // oracle: per destination type, loop edge types in sorted order, mean over
  // in-neighbors per node, project, sum across types, then the SAGE update.
  for (const auto& nt : g.node_types()) {
    const Index n = g.num_nodes(nt);
    Tensor<double> acc = Tensor<double>::zeros({n, 4});
    for (const auto& et : ets) {
      if (et.dst != nt) continue;
      const auto& e = g.edge(et).index;
      const auto& h_src = h.at(et.src);
      Tensor<double> mean_feat = Tensor<double>::zeros({n, 3});
      for (Index v = 0; v < n; ++v) {
        std::vector<Index> nbrs;
        for (Index i = 0; i < e.num_edges(); ++i)
          if (e.dst()[static_cast<std::size_t>(i)] == v)
            nbrs.push_back(e.src()[static_cast<std::size_t>(i)]);
        if (nbrs.empty()) continue;
        for (Index j = 0; j < 3; ++j) {
          double s = 0;
          for (Index w : nbrs) s += h_src.at(w, j);
          mean_feat.data_mut()[v * 3 + j] = s / static_cast<double>(nbrs.size());
        }
      }
      acc = add(acc, matmul(mean_feat, model.replicas.at(et).at("w_neigh")));
    }
    const auto& upd = model.node_update.at(nt);
    auto want = add(add(acc, matmul(h.at(nt), upd.at("w_self"))), upd.at("bias"));
    CHECK(max_abs_diff(out.at(nt), want) <= 1e-6);
  }
}

TEST_CASE("inter-type mean averages over incoming edge types") {
  HeteroGraph<double> g;
  g.add_node_type("a", random_tensor<double>({2, 2}, 340));
  g.add_node_type("b", random_tensor<double>({2, 2}, 341));
  EdgeType r1{"a", "r1", "b"};
  EdgeType r2{"a", "r2", "b"};
  g.add_edge_type(r1, EdgeIndex({0, 1}, {0, 1}, 2, 2));
  g.add_edge_type(r2, EdgeIndex({1}, {0}, 2, 2));
  auto base = make_layer<double>(LayerKind::gin, 2, 2, 342);
  auto sum_model = to_hetero(base, {"a", "b"}, {r1, r2}, InterCombine::sum, 343);
  auto mean_model = sum_model;
  mean_model.combine = InterCombine::mean;
  auto h = features_of(g);
  auto s = hetero_propagate(g, sum_model, h, ExecPath::edge_materialize);
  auto m = hetero_propagate(g, mean_model, h, ExecPath::edge_materialize);
  // gin: update(h, agg) with agg halved under mean; verify via the raw aggregates
  auto agg1 = layer_neighbor_aggregate(sum_model.replicas.at(r1), g.edge(r1).index, h.at("a"),
                                       h.at("b"), ExecPath::edge_materialize);
  auto agg2 = layer_neighbor_aggregate(sum_model.replicas.at(r2), g.edge(r2).index, h.at("a"),
                                       h.at("b"), ExecPath::edge_materialize);
  auto upd = sum_model.node_update.at("b");
  CHECK(testing_support::bit_equal(
      s.at("b"), layer_update(upd, h.at("b"), add(agg1, agg2))));
  CHECK(max_abs_diff(m.at("b"),
                     layer_update(upd, h.at("b"), scale(add(agg1, agg2), 0.5))) <= 1e-15);
}

TEST_CASE("edge types never read features of non-endpoint node types (poison audit)") {
  auto g = three_type_graph<double>(350);
  auto base = make_layer<double>(LayerKind::sage, 3, 4, 351);
  auto model = to_hetero(base, g.node_types(), g.edge_types(), InterCombine::sum, 352);
  auto h = features_of(g);
  // poison "tag" features; only outputs of types with tag-incoming edges may change
  auto poisoned = h;
  poisoned["tag"] = Tensor<double>::full({3, 3}, std::numeric_limits<double>::quiet_NaN());
  auto out = hetero_propagate(g, model, poisoned, ExecPath::edge_materialize);
  // tag -> item is the only edge type reading tag features: "user" must stay finite
  for (Index i = 0; i < out.at("user").numel(); ++i)
    CHECK(std::isfinite(out.at("user").data()[i]));
}

TEST_CASE("parallel edge-type execution is deterministic and equals sequential") {
  auto g = three_type_graph<double>(360);
  auto base = make_layer<double>(LayerKind::gin, 3, 3, 361);
  auto model = to_hetero(base, g.node_types(), g.edge_types(), InterCombine::sum, 362);
  auto h = features_of(g);
  auto seq = hetero_propagate(g, model, h, ExecPath::edge_materialize, nullptr, false);
  auto par = hetero_propagate(g, model, h, ExecPath::edge_materialize, nullptr, true);
  for (const auto& nt : g.node_types())
    CHECK(testing_support::bit_equal(seq.at(nt), par.at(nt)));
}

TEST_CASE("hetero gradients flow into replica and update parameters") {
  auto g = three_type_graph<double>(370);
  auto base = make_layer<double>(LayerKind::sage, 3, 2, 371);
  auto model = to_hetero(base, g.node_types(), g.edge_types(), InterCombine::sum, 372);
  auto h = features_of(g);
  auto& w = model.replicas.at(EdgeType{"user", "buys", "item"}).weights.at("w_neigh");
  check_gradient<double>(w, [&] {
    auto out = hetero_propagate(g, model, h, ExecPath::edge_materialize);
    Tensor<double> acc = sum(out.at("user"));
    acc = add(acc, sum(out.at("item")));
    return add(acc, sum(out.at("tag")));
  });
}

#include <filesystem>

#include "doctest.h"
#include "graphmill/dataset_io.hpp"
#include "graphmill/loader.hpp"
#include "testing/oracles.hpp"

using namespace graphmill;
using testing_support::random_tensor;

namespace {

const EdgeType kNN{"n", "to", "n"};

std::shared_ptr<HeteroGraph<float>> loader_graph(std::uint64_t salt) {
  auto stream = testing_support::test_stream(salt);
  const Index n = 50;
  const Index e = 300;
  std::vector<Index> src(static_cast<std::size_t>(e)), dst(static_cast<std::size_t>(e));
  for (Index i = 0; i < e; ++i) {
    src[static_cast<std::size_t>(i)] = static_cast<Index>(stream.next_below(n));
    dst[static_cast<std::size_t>(i)] = static_cast<Index>(stream.next_below(n));
  }
  auto g = std::make_shared<HeteroGraph<float>>();
  g->add_node_type("n", random_tensor<float>({n, 4}, salt + 1));
  g->add_edge_type(kNN, EdgeIndex(src, dst, n, n));
  return g;
}

std::vector<SeedBatch> make_batches(int count, int per_batch) {
  std::vector<SeedBatch> out;
  Index next = 0;
  for (int b = 0; b < count; ++b) {
    SeedBatch sb;
    for (int i = 0; i < per_batch; ++i) sb.seeds["n"].push_back(next++ % 50);
    out.push_back(std::move(sb));
  }
  return out;
}

SamplerConfig loader_cfg() {
  SamplerConfig cfg;
  cfg.fanouts = {4, 4};
  cfg.seed = 17;
  return cfg;
}

bool batches_equal(const MiniBatch<float>& a, const MiniBatch<float>& b) {
  if (a.batch_index != b.batch_index) return false;
  if (a.subgraph.node_ids != b.subgraph.node_ids) return false;
  if (a.subgraph.edge_ids != b.subgraph.edge_ids) return false;
  if (a.subgraph.seed_map != b.subgraph.seed_map) return false;
  for (const auto& [t, f] : a.features)
    if (!testing_support::bit_equal(f, b.features.at(t))) return false;
  return true;
}

}  // namespace

TEST_CASE("worker count never changes the emitted batch sequence") {
  auto g = loader_graph(600);
  auto [fs, gs] = in_memory_stores(g);
  auto seeds = make_batches(12, 5);

  std::vector<MiniBatch<float>> one, four, eight;
  for (auto [workers, sink] : {std::pair<int, std::vector<MiniBatch<float>>*>{1, &one},
                               {4, &four},
                               {8, &eight}}) {
    Loader<float> loader(fs, gs, seeds, loader_cfg(), workers);
    while (auto batch = loader.next()) sink->push_back(std::move(*batch));
  }
  REQUIRE(one.size() == 12);
  REQUIRE(four.size() == 12);
  REQUIRE(eight.size() == 12);
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].batch_index == i);  // ordered delivery
    CHECK(batches_equal(one[i], four[i]));
    CHECK(batches_equal(one[i], eight[i]));
  }
}

TEST_CASE("empty seed stream yields an empty iterator") {
  auto g = loader_graph(601);
  auto [fs, gs] = in_memory_stores(g);
  Loader<float> loader(fs, gs, {}, loader_cfg(), 4);
  CHECK_FALSE(loader.next().has_value());
}

TEST_CASE("features join against the sampled node order") {
  auto g = loader_graph(602);
  auto [fs, gs] = in_memory_stores(g);
  Loader<float> loader(fs, gs, make_batches(1, 3), loader_cfg(), 1);
  auto batch = loader.next();
  REQUIRE(batch.has_value());
  const auto& ids = batch->subgraph.node_ids.at("n");
  REQUIRE(batch->features.at("n").rows() == static_cast<Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (Index j = 0; j < 4; ++j)
      CHECK(batch->features.at("n").at(static_cast<Index>(i), j) ==
            g->node("n").features.at(ids[i], j));
}

TEST_CASE("labels ride along aligned with the seed order") {
  auto g = loader_graph(603);
  auto [fs, gs] = in_memory_stores(g);
  auto seeds = make_batches(2, 3);
  seeds[0].labels["n"] = {7, 8, 9};
  seeds[1].labels["n"] = {1, 2, 3};
  Loader<float> loader(fs, gs, seeds, loader_cfg(), 2);
  auto b0 = loader.next();
  auto b1 = loader.next();
  REQUIRE(b0);
  REQUIRE(b1);
  CHECK(b0->labels.at("n") == std::vector<std::int64_t>{7, 8, 9});
  CHECK(b1->labels.at("n") == std::vector<std::int64_t>{1, 2, 3});
  CHECK(b0->subgraph.seed_map.at("n").size() == 3);
}

TEST_CASE("transforms run inside the pipeline") {
  auto g = loader_graph(604);
  auto [fs, gs] = in_memory_stores(g);
  Loader<float>::Transform tag = [](MiniBatch<float>& mb) {
    mb.labels["n"] = std::vector<std::int64_t>(mb.subgraph.seed_map.at("n").size(),
                                               static_cast<std::int64_t>(mb.batch_index));
  };
  Loader<float> loader(fs, gs, make_batches(3, 2), loader_cfg(), 3, tag);
  std::size_t i = 0;
  while (auto batch = loader.next()) {
    CHECK(batch->labels.at("n") ==
          std::vector<std::int64_t>(2, static_cast<std::int64_t>(i)));
    ++i;
  }
  CHECK(i == 3);
}

TEST_CASE("worker errors surface in order, tagged with the batch index") {
  auto g = loader_graph(605);
  auto [fs, gs] = in_memory_stores(g);
  auto seeds = make_batches(3, 2);
  seeds[1].seeds["n"][0] = 999;  // out of bounds
  for (int workers : {1, 4}) {
    Loader<float> loader(fs, gs, seeds, loader_cfg(), workers);
    CHECK(loader.next().has_value());
    CHECK_THROWS_WITH_AS(loader.next(), doctest::Contains("batch 1"), std::runtime_error);
  }
}

TEST_CASE("backend transparency: file-backed loader equals in-memory loader bit-for-bit") {
  namespace fsn = std::filesystem;
  auto g = loader_graph(606);
  const auto dir = fsn::temp_directory_path() / "graphmill_loader_ds";
  fsn::remove_all(dir);
  save_dataset(*g, dir);

  auto [mem_f, mem_g] = in_memory_stores(g);
  auto [file_f, file_g] = load_dataset(dir);
  auto seeds = make_batches(6, 4);

  Loader<float> mem_loader(mem_f, mem_g, seeds, loader_cfg(), 2);
  Loader<float> file_loader(file_f, file_g, seeds, loader_cfg(), 7);
  while (true) {
    auto a = mem_loader.next();
    auto b = file_loader.next();
    CHECK(a.has_value() == b.has_value());
    if (!a) break;
    CHECK(batches_equal(*a, *b));
  }
  fsn::remove_all(dir);
}

#pragma once

#include <condition_variable>
#include <deque>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>

#include "graphmill/sampler.hpp"

namespace graphmill {

// One pipeline stage output: sampled structure joined with fetched features.
template <typename S>
struct MiniBatch {
  std::size_t batch_index = 0;
  SampledSubgraph subgraph;
  std::map<std::string, Tensor<S>> features;  // batch rows per node type
  std::map<std::string, std::vector<std::int64_t>> labels;  // aligned with seed order
  SeedTimeMap seed_times;
};

// sample -> feature fetch -> join -> optional transform, over a fixed seed
// stream. Batches are delivered strictly in seed order no matter how many
// workers run, and batch i's randomness derives from (cfg.seed, i), so the
// emitted sequence is worker-count invariant. Workers stay at most `capacity`
// batches ahead of the consumer (backpressure).
template <typename S>
class Loader {
 public:
  using Transform = std::function<void(MiniBatch<S>&)>;

  Loader(std::shared_ptr<FeatureStore> fs, std::shared_ptr<GraphStore> gs,
         std::vector<SeedBatch> seed_source, SamplerConfig cfg, int workers,
         Transform transform = nullptr)
      : fs_(std::move(fs)),
        gs_(std::move(gs)),
        seeds_(std::move(seed_source)),
        cfg_(std::move(cfg)),
        workers_(std::max(workers, 1)),
        transform_(std::move(transform)),
        capacity_(static_cast<std::size_t>(std::max(workers, 1)) * 2 + 1) {
    if (workers < 1) throw std::invalid_argument("Loader: workers must be >= 1");
    if (workers_ > 1 && !seeds_.empty()) start_workers();
  }

  ~Loader() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stopped_ = true;
    }
    space_cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  Loader(const Loader&) = delete;
  Loader& operator=(const Loader&) = delete;

  // Next batch in seed order, or nullopt at the end of the stream. Worker
  // errors surface here, tagged with the batch index, in order.
  std::optional<MiniBatch<S>> next() {
    if (deliver_ >= seeds_.size()) return std::nullopt;
    if (workers_ == 1) {
      const std::size_t i = deliver_++;
      return compute(i);
    }
    std::unique_lock<std::mutex> lock(mu_);
    ready_cv_.wait(lock, [&] { return results_.count(deliver_) > 0; });
    Slot slot = std::move(results_.at(deliver_));
    results_.erase(deliver_);
    ++deliver_;
    lock.unlock();
    space_cv_.notify_all();
    if (slot.error) std::rethrow_exception(slot.error);
    return std::move(slot.batch);
  }

  std::size_t size() const { return seeds_.size(); }

 private:
  struct Slot {
    MiniBatch<S> batch;
    std::exception_ptr error;
  };

  MiniBatch<S> compute(std::size_t i) {
    try {
      SamplerConfig cfg = cfg_;
      cfg.seed = rng::derive(cfg_.seed, 0x6261746368ull, i);
      const SeedBatch& sb = seeds_[i];
      MiniBatch<S> mb;
      mb.batch_index = i;
      mb.subgraph = cfg.temporal == TemporalStrategy::none
                        ? sample_neighbors(*gs_, sb.seeds, cfg)
                        : sample_temporal(*gs_, sb.seeds, sb.times, cfg);
      for (const auto& [type, ids] : mb.subgraph.node_ids)
        mb.features[type] = fs_->template get<S>(type, ids, "x");
      mb.labels = sb.labels;
      mb.seed_times = mb.subgraph.seed_times;
      if (transform_) transform_(mb);
      return mb;
    } catch (const std::exception& ex) {
      throw std::runtime_error("batch " + std::to_string(i) + ": " + ex.what());
    }
  }

  void start_workers() {
    for (int w = 0; w < workers_; ++w)
      threads_.emplace_back([this] {
        while (true) {
          std::size_t i;
          {
            std::unique_lock<std::mutex> lock(mu_);
            space_cv_.wait(lock, [&] {
              return stopped_ || claim_ >= seeds_.size() || claim_ < deliver_ + capacity_;
            });
            if (stopped_ || claim_ >= seeds_.size()) return;
            i = claim_++;
          }
          Slot slot;
          try {
            slot.batch = compute(i);
          } catch (...) {
            slot.error = std::current_exception();
          }
          {
            std::lock_guard<std::mutex> lock(mu_);
            results_.emplace(i, std::move(slot));
          }
          ready_cv_.notify_all();
        }
      });
  }

  std::shared_ptr<FeatureStore> fs_;
  std::shared_ptr<GraphStore> gs_;
  std::vector<SeedBatch> seeds_;
  SamplerConfig cfg_;
  int workers_;
  Transform transform_;
  std::size_t capacity_;

  std::mutex mu_;
  std::condition_variable ready_cv_;
  std::condition_variable space_cv_;
  std::map<std::size_t, Slot> results_;
  std::size_t claim_ = 0;
  std::size_t deliver_ = 0;
  bool stopped_ = false;
  std::vector<std::thread> threads_;
};

}  // namespace graphmill

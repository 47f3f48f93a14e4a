#include "graphmill/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <thread>
#include <unordered_map>

#include "graphmill/csv.hpp"

namespace graphmill {

namespace {

struct NodeKey {
  Index orig;
  Index group;  // -1 when not disjoint
  bool operator==(const NodeKey& o) const { return orig == o.orig && group == o.group; }
};
struct NodeKeyHash {
  std::size_t operator()(const NodeKey& k) const {
    return static_cast<std::size_t>(
        rng::mix(static_cast<std::uint64_t>(k.orig) * 0x9e3779b97f4a7c15ull ^
                 static_cast<std::uint64_t>(k.group + 1)));
  }
};

struct NodeRec {
  Index orig;
  Index group;
  std::int64_t seed_time;
  bool has_seed_time;
};

struct TypeState {
  std::vector<NodeRec> recs;  // index = relabeled id, BFS order
  std::unordered_map<NodeKey, Index, NodeKeyHash> dedup;
  std::vector<Index> per_hop;  // nodes discovered per hop
};

struct Chosen {
  Index edge_pos;   // original COO position
  Index neighbor;   // original neighbor id
};

// One unit of per-hop work: expand the current frontier of one node type
// through one edge type (incoming edges, or outgoing for the reversed pass).
struct Job {
  std::size_t etype_idx;
  bool outgoing;
  EdgeType emit_type;                       // type the sampled edges land in
  std::string frontier_type;                // node type being expanded
  std::string neighbor_type;                // node type discovered
  std::vector<std::vector<Chosen>> picked;  // per frontier position
};

class SamplerRun {
 public:
  SamplerRun(const GraphStore& gs, const SamplerConfig& cfg) : gs_(gs), cfg_(cfg) {
    etypes_ = gs.edge_types();
    for (std::size_t i = 0; i < etypes_.size(); ++i) {
      indices_[etypes_[i]] = gs_.edge_index(etypes_[i]);
      etimes_[etypes_[i]] = gs_.edge_times(etypes_[i]);
    }
    for (const auto& nt : gs.node_types()) ntimes_[nt] = gs_.node_times(nt);
  }

  SampledSubgraph run(const SeedMap& seeds, const SeedTimeMap* seed_times) {
    const int k = static_cast<int>(cfg_.fanouts.size());
    for (Index f : cfg_.fanouts)
      if (f < -1) throw std::invalid_argument("sampler: fanouts entries must be >= -1");
    if (cfg_.temporal == TemporalStrategy::anneal && !(cfg_.anneal_rate > 0))
      throw std::invalid_argument("sampler: anneal strategy requires anneal_rate > 0");

    SampledSubgraph out;
    out.num_hops = k;
    for (const auto& nt : gs_.node_types()) {
      states_[nt] = TypeState{};
      states_[nt].per_hop.assign(static_cast<std::size_t>(k) + 1, 0);
    }
    for (const auto& et : etypes_) {
      out.edges.emplace(et, EdgeIndex());
      out.edge_ids[et] = {};
      out.num_sampled_edges_per_hop[et].assign(static_cast<std::size_t>(k), 0);
      edge_src_[et] = {};
      edge_dst_[et] = {};
    }
    if (cfg_.direction == Direction::bidirectional)
      for (const auto& et : etypes_) {
        const EdgeType rev = reversed(et);
        out.edges.emplace(rev, EdgeIndex());
        out.edge_ids[rev] = {};
        out.num_sampled_edges_per_hop[rev].assign(static_cast<std::size_t>(k), 0);
        edge_src_[rev] = {};
        edge_dst_[rev] = {};
      }

    // hop 0: seeds, in sorted type order, in the caller's order
    std::vector<std::pair<std::string, Index>> frontier;  // (type, local id)
    Index group_counter = 0;
    for (const auto& [type, ids] : seeds) {
      if (!states_.count(type)) throw std::invalid_argument("sampler: unknown seed type " + type);
      const Index bound = gs_.num_nodes(type);
      const std::vector<std::int64_t>* times = nullptr;
      if (seed_times) {
        auto it = seed_times->find(type);
        if (it == seed_times->end())
          throw std::invalid_argument("sampler: temporal sampling requires seed times for type " +
                                      type);
        if (it->second.size() != ids.size())
          throw std::invalid_argument("sampler: seed time count mismatch for type " + type);
        times = &it->second;
      }
      auto& st = states_.at(type);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const Index id = ids[i];
        if (id < 0 || id >= bound)
          throw std::out_of_range("sampler: seed " + std::to_string(id) + " outside [0, " +
                                  std::to_string(bound) + ") for type " + type);
        const Index group = cfg_.disjoint ? group_counter++ : -1;
        NodeRec rec{id, group, times ? (*times)[i] : 0, times != nullptr};
        const NodeKey key{id, group};
        auto found = st.dedup.find(key);
        Index local;
        if (found == st.dedup.end()) {
          local = static_cast<Index>(st.recs.size());
          st.recs.push_back(rec);
          st.dedup.emplace(key, local);
          ++st.per_hop[0];
          frontier.emplace_back(type, local);
        } else {
          local = found->second;
        }
        out.seed_map[type].push_back(local);
        if (times) out.seed_times[type].push_back((*times)[i]);
      }
    }

    for (int hop = 1; hop <= k; ++hop) {
      const Index budget = cfg_.fanouts[static_cast<std::size_t>(hop - 1)];
      std::vector<Job> jobs = make_jobs();
      // split the frontier per node type once
      std::map<std::string, std::vector<Index>> frontier_by_type;
      for (const auto& [type, local] : frontier) frontier_by_type[type].push_back(local);

      auto run_job = [&](Job& job) {
        auto fit = frontier_by_type.find(job.frontier_type);
        if (fit == frontier_by_type.end()) return;
        const EdgeIndex& e = indices_.at(etypes_[job.etype_idx]);
        const CsrView& grouped = job.outgoing ? e.to_csr() : e.to_csc();
        const auto& st = states_.at(job.frontier_type);
        job.picked.resize(fit->second.size());
        for (std::size_t fpos = 0; fpos < fit->second.size(); ++fpos) {
          const NodeRec& rec = st.recs[static_cast<std::size_t>(fit->second[fpos])];
          job.picked[fpos] = pick(grouped, rec, budget, hop, job);
        }
      };

      if (cfg_.parallel_edge_types && jobs.size() > 1) {
        std::vector<std::thread> workers;
        workers.reserve(jobs.size());
        for (auto& job : jobs) workers.emplace_back([&run_job, &job] { run_job(job); });
        for (auto& w : workers) w.join();
      } else {
        for (auto& job : jobs) run_job(job);
      }

      // deterministic merge in job order, frontier order, selection order
      std::vector<std::pair<std::string, Index>> next_frontier;
      for (auto& job : jobs) {
        auto fit = frontier_by_type.find(job.frontier_type);
        if (fit == frontier_by_type.end()) continue;
        auto& nbr_state = states_.at(job.neighbor_type);
        auto& frontier_state = states_.at(job.frontier_type);
        for (std::size_t fpos = 0; fpos < fit->second.size(); ++fpos) {
          const Index frontier_local = fit->second[fpos];
          const NodeRec frec = frontier_state.recs[static_cast<std::size_t>(frontier_local)];
          for (const Chosen& c : job.picked[fpos]) {
            const NodeKey key{c.neighbor, frec.group};
            auto found = nbr_state.dedup.find(key);
            Index nbr_local;
            if (found == nbr_state.dedup.end()) {
              nbr_local = static_cast<Index>(nbr_state.recs.size());
              nbr_state.recs.push_back(
                  NodeRec{c.neighbor, frec.group, frec.seed_time, frec.has_seed_time});
              nbr_state.dedup.emplace(key, nbr_local);
              ++nbr_state.per_hop[static_cast<std::size_t>(hop)];
              next_frontier.emplace_back(job.neighbor_type, nbr_local);
            } else {
              nbr_local = found->second;
            }
            edge_src_[job.emit_type].push_back(nbr_local);
            edge_dst_[job.emit_type].push_back(frontier_local);
            out.edge_ids[job.emit_type].push_back(c.edge_pos);
            ++out.num_sampled_edges_per_hop[job.emit_type][static_cast<std::size_t>(hop - 1)];
          }
        }
      }
      frontier = std::move(next_frontier);
    }

    // materialize outputs
    for (auto& [type, st] : states_) {
      auto& ids = out.node_ids[type];
      ids.reserve(st.recs.size());
      for (const auto& rec : st.recs) ids.push_back(rec.orig);
      out.num_sampled_nodes_per_hop[type] = st.per_hop;
    }
    for (auto& [et, src] : edge_src_) {
      const Index n_src = out.num_nodes(et.src);
      const Index n_dst = out.num_nodes(et.dst);
      out.edges.at(et) = EdgeIndex(std::move(src), std::move(edge_dst_.at(et)), n_src, n_dst);
    }
    // drop edge types the run never touched? they stay as valid empty indices
    return out;
  }

 private:
  EdgeType reversed(const EdgeType& et) const {
    return EdgeType{et.dst, et.rel + "__rev", et.src};
  }

  std::vector<Job> make_jobs() const {
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < etypes_.size(); ++i) {
      const EdgeType& et = etypes_[i];
      jobs.push_back(Job{i, false, et, et.dst, et.src, {}});
    }
    if (cfg_.direction == Direction::bidirectional)
      for (std::size_t i = 0; i < etypes_.size(); ++i) {
        const EdgeType& et = etypes_[i];
        jobs.push_back(Job{i, true, reversed(et), et.src, et.dst, {}});
      }
    return jobs;
  }

  // Selects up to `budget` admissible edges for one frontier node.
  std::vector<Chosen> pick(const CsrView& grouped, const NodeRec& rec, Index budget, int hop,
                           const Job& job) const {
    std::vector<Chosen> admissible;
    const Timestamps* etime = etimes_.at(etypes_[job.etype_idx]);
    const Timestamps* ntime = ntimes_.at(job.neighbor_type);
    const bool temporal = cfg_.temporal != TemporalStrategy::none && rec.has_seed_time;
    for (Index p = grouped.rowptr[static_cast<std::size_t>(rec.orig)];
         p < grouped.rowptr[static_cast<std::size_t>(rec.orig) + 1]; ++p) {
      const Index edge_pos = grouped.perm[static_cast<std::size_t>(p)];
      const Index neighbor = grouped.col[static_cast<std::size_t>(p)];
      if (temporal) {
        if (etime && (*etime)[static_cast<std::size_t>(edge_pos)] > rec.seed_time) continue;
        if (ntime && (*ntime)[static_cast<std::size_t>(neighbor)] > rec.seed_time) continue;
      }
      admissible.push_back(Chosen{edge_pos, neighbor});
    }
    if (admissible.empty()) return admissible;

    const Index n = static_cast<Index>(admissible.size());
    const bool take_all = budget < 0 || (!cfg_.replace && budget >= n);

    if (cfg_.temporal == TemporalStrategy::most_recent) {
      // ties broken toward the larger original edge position
      std::sort(admissible.begin(), admissible.end(), [&](const Chosen& a, const Chosen& b) {
        const std::int64_t ta = etime ? (*etime)[static_cast<std::size_t>(a.edge_pos)] : 0;
        const std::int64_t tb = etime ? (*etime)[static_cast<std::size_t>(b.edge_pos)] : 0;
        if (ta != tb) return ta > tb;
        return a.edge_pos > b.edge_pos;
      });
      if (budget >= 0 && n > budget) admissible.resize(static_cast<std::size_t>(budget));
      return admissible;
    }

    if (take_all && cfg_.temporal != TemporalStrategy::anneal) return admissible;

    rng::Stream stream(rng::derive(
        cfg_.seed, static_cast<std::uint64_t>(hop),
        static_cast<std::uint64_t>(rec.orig),
        (static_cast<std::uint64_t>(job.etype_idx) << 1 | (job.outgoing ? 1u : 0u)) ^
            rng::mix(static_cast<std::uint64_t>(rec.group + 1))));

    std::vector<Chosen> result;
    const Index want = budget < 0 ? n : budget;

    if (cfg_.temporal == TemporalStrategy::anneal) {
      auto log_weight = [&](const Chosen& c) {
        const std::int64_t t = etime ? (*etime)[static_cast<std::size_t>(c.edge_pos)]
                                     : rec.seed_time;
        return -cfg_.anneal_rate * static_cast<double>(rec.seed_time - t);
      };
      if (cfg_.replace) {
        std::vector<double> w(static_cast<std::size_t>(n));
        double wmax = -1e300;
        for (Index i = 0; i < n; ++i)
          wmax = std::max(wmax, log_weight(admissible[static_cast<std::size_t>(i)]));
        double total = 0;
        for (Index i = 0; i < n; ++i) {
          w[static_cast<std::size_t>(i)] =
              std::exp(log_weight(admissible[static_cast<std::size_t>(i)]) - wmax);
          total += w[static_cast<std::size_t>(i)];
        }
        for (Index d = 0; d < want; ++d) {
          double r = stream.next_real() * total;
          Index pickidx = n - 1;
          for (Index i = 0; i < n; ++i) {
            r -= w[static_cast<std::size_t>(i)];
            if (r <= 0) {
              pickidx = i;
              break;
            }
          }
          result.push_back(admissible[static_cast<std::size_t>(pickidx)]);
        }
        return result;
      }
      // Gumbel top-k draws without replacement with probability proportional
      // to exp(-lambda * (t_seed - t_e)), stable in log space.
      std::vector<std::pair<double, Index>> keys(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) {
        const double u = stream.next_real();
        const double gumbel = -std::log(-std::log(std::max(u, 1e-300)));
        keys[static_cast<std::size_t>(i)] = {
            log_weight(admissible[static_cast<std::size_t>(i)]) + gumbel, i};
      }
      const Index take = std::min(want, n);
      std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(take),
                        keys.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      for (Index i = 0; i < take; ++i)
        result.push_back(admissible[static_cast<std::size_t>(keys[static_cast<std::size_t>(i)].second)]);
      return result;
    }

    if (cfg_.replace) {
      for (Index d = 0; d < want; ++d)
        result.push_back(
            admissible[static_cast<std::size_t>(stream.next_below(static_cast<std::uint64_t>(n)))]);
      return result;
    }

    // uniform without replacement: partial Fisher-Yates over the admissible set
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    const Index take = std::min(want, n);
    for (Index j = 0; j < take; ++j) {
      const Index swap_with =
          j + static_cast<Index>(stream.next_below(static_cast<std::uint64_t>(n - j)));
      std::swap(order[static_cast<std::size_t>(j)], order[static_cast<std::size_t>(swap_with)]);
      result.push_back(admissible[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])]);
    }
    return result;
  }

  const GraphStore& gs_;
  const SamplerConfig& cfg_;
  std::vector<EdgeType> etypes_;
  std::map<EdgeType, EdgeIndex> indices_;
  std::map<EdgeType, const Timestamps*> etimes_;
  std::map<std::string, const Timestamps*> ntimes_;
  std::map<std::string, TypeState> states_;
  std::map<EdgeType, std::vector<Index>> edge_src_;
  std::map<EdgeType, std::vector<Index>> edge_dst_;
};

}  // namespace

SampledSubgraph sample_neighbors(const GraphStore& gs, const SeedMap& seeds,
                                 const SamplerConfig& cfg) {
  if (cfg.temporal != TemporalStrategy::none)
    throw std::invalid_argument(
        "sample_neighbors: temporal strategies go through sample_temporal");
  SamplerRun run(gs, cfg);
  return run.run(seeds, nullptr);
}

SampledSubgraph sample_temporal(const GraphStore& gs, const SeedMap& seeds,
                                const SeedTimeMap& seed_times, const SamplerConfig& cfg) {
  if (cfg.temporal == TemporalStrategy::none)
    throw std::invalid_argument("sample_temporal: strategy must not be none");
  bool any_times = false;
  for (const auto& et : gs.edge_types())
    if (gs.edge_times(et)) any_times = true;
  for (const auto& nt : gs.node_types())
    if (gs.node_times(nt)) any_times = true;
  if (!any_times)
    throw std::invalid_argument(
        "sample_temporal: no node or edge type carries timestamps");
  SamplerConfig forced = cfg;
  forced.disjoint = true;  // temporal batches are disjoint per seed
  SamplerRun run(gs, forced);
  return run.run(seeds, &seed_times);
}

SeedTable read_seed_table(const std::string& csv_path) {
  const Csv csv = read_csv(csv_path);
  const int type_col = csv.require_column("node_type");
  const int id_col = csv.require_column("node_id");
  const int time_col = csv.column("time");
  const int label_col = csv.column("label");

  SeedTable table;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    if (row.size() != csv.header.size())
      throw std::runtime_error("seed table: row " + std::to_string(r + 1) + " is ragged");
    auto parse = [&](int col) {
      try {
        return static_cast<std::int64_t>(std::stoll(row[static_cast<std::size_t>(col)]));
      } catch (const std::exception&) {
        throw std::runtime_error("seed table: row " + std::to_string(r + 1) +
                                 ": cannot parse '" + row[static_cast<std::size_t>(col)] + "'");
      }
    };
    table.node_type.push_back(row[static_cast<std::size_t>(type_col)]);
    table.node_id.push_back(parse(id_col));
    if (time_col >= 0) table.time.push_back(parse(time_col));
    if (label_col >= 0) table.label.push_back(parse(label_col));
  }
  return table;
}

std::vector<SeedBatch> batch_seed_table(const SeedTable& table, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch_seed_table: batch_size must be > 0");
  std::vector<SeedBatch> out;
  for (std::size_t start = 0; start < table.size(); start += batch_size) {
    const std::size_t end = std::min(table.size(), start + batch_size);
    SeedBatch b;
    for (std::size_t i = start; i < end; ++i) {
      const std::string& t = table.node_type[i];
      b.seeds[t].push_back(table.node_id[i]);
      if (table.has_time()) b.times[t].push_back(table.time[i]);
      if (table.has_label()) b.labels[t].push_back(table.label[i]);
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace graphmill

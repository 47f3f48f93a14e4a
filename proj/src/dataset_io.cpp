#include "graphmill/dataset_io.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <map>
#include <set>

#include "graphmill/csv.hpp"
#include "json.hpp"

namespace graphmill {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

void write_manifest(const DatasetManifest& manifest, const fs::path& dir) {
  ordered_json j;
  j["format"] = kDatasetFormat;
  j["version"] = kDatasetVersion;
  j["node_types"] = ordered_json::array();
  for (const auto& n : manifest.nodes) {
    ordered_json rec;
    rec["name"] = n.name;
    rec["count"] = n.count;
    rec["feature_width"] = n.feature_width;
    rec["dtype"] = to_string(n.dtype);
    rec["has_time"] = n.has_time;
    j["node_types"].push_back(rec);
  }
  j["edge_types"] = ordered_json::array();
  for (const auto& e : manifest.edges) {
    ordered_json rec;
    rec["src"] = e.type.src;
    rec["rel"] = e.type.rel;
    rec["dst"] = e.type.dst;
    rec["edge_count"] = e.edge_count;
    rec["has_time"] = e.has_time;
    j["edge_types"].push_back(rec);
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("dataset: cannot write manifest in " + dir.string());
  out << j.dump(2) << "\n";
}

DatasetManifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("dataset: missing manifest " + path.string());
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& ex) {
    throw std::runtime_error("dataset: unparseable manifest " + path.string() + ": " + ex.what());
  }
  if (!j.contains("format") || j["format"] != kDatasetFormat)
    throw std::runtime_error("dataset: corrupt magic in " + path.string() +
                             " (expected format '" + kDatasetFormat + "')");
  if (!j.contains("version") || j["version"].get<int>() != kDatasetVersion)
    throw std::runtime_error("dataset: unsupported version in " + path.string());

  DatasetManifest manifest;
  for (const auto& rec : j.at("node_types")) {
    DatasetManifest::NodeRecord n;
    n.name = rec.at("name").get<std::string>();
    n.count = rec.at("count").get<Index>();
    n.feature_width = rec.at("feature_width").get<Index>();
    n.dtype = dtype_from_string(rec.at("dtype").get<std::string>());
    n.has_time = rec.at("has_time").get<bool>();
    if (n.count < 0 || n.feature_width < 0)
      throw std::runtime_error("dataset: negative extent for node type " + n.name);
    manifest.nodes.push_back(std::move(n));
  }
  for (const auto& rec : j.at("edge_types")) {
    DatasetManifest::EdgeRecord e;
    e.type = EdgeType{rec.at("src").get<std::string>(), rec.at("rel").get<std::string>(),
                      rec.at("dst").get<std::string>()};
    e.edge_count = rec.at("edge_count").get<Index>();
    e.has_time = rec.at("has_time").get<bool>();
    if (e.edge_count < 0)
      throw std::runtime_error("dataset: negative edge count for " + e.type.canonical());
    manifest.edges.push_back(std::move(e));
  }
  return manifest;
}

// ---------------------------------------------------------------------------
// file-backed stores
// ---------------------------------------------------------------------------

namespace {

class MappedFile {
 public:
  MappedFile() = default;

  // Validates the byte length before mapping; a mismatch names the file.
  MappedFile(const fs::path& path, std::size_t expected_bytes) : path_(path.string()) {
    const int fd = ::open(path_.c_str(), O_RDONLY);
    if (fd < 0) throw std::runtime_error("dataset: cannot open " + path_);
    struct stat st{};
    if (::fstat(fd, &st) != 0) {
      ::close(fd);
      throw std::runtime_error("dataset: cannot stat " + path_);
    }
    if (static_cast<std::size_t>(st.st_size) != expected_bytes) {
      ::close(fd);
      throw std::runtime_error("dataset: " + path_ + " holds " + std::to_string(st.st_size) +
                               " bytes, manifest requires " + std::to_string(expected_bytes));
    }
    size_ = expected_bytes;
    if (size_ > 0) {
      data_ = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd, 0);
      if (data_ == MAP_FAILED) {
        ::close(fd);
        throw std::runtime_error("dataset: mmap failed for " + path_);
      }
    }
    ::close(fd);
  }

  MappedFile(MappedFile&& o) noexcept { *this = std::move(o); }
  MappedFile& operator=(MappedFile&& o) noexcept {
    release();
    data_ = o.data_;
    size_ = o.size_;
    path_ = std::move(o.path_);
    o.data_ = nullptr;
    o.size_ = 0;
    return *this;
  }
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;
  ~MappedFile() { release(); }

  template <typename T>
  const T* as() const {
    return reinterpret_cast<const T*>(data_);
  }

 private:
  void release() {
    if (data_ && data_ != MAP_FAILED) ::munmap(data_, size_);
    data_ = nullptr;
  }

  void* data_ = nullptr;
  std::size_t size_ = 0;
  std::string path_;
};

struct NodeColumn {
  DatasetManifest::NodeRecord rec;
  MappedFile features;
  std::optional<Timestamps> times;
};

class FileFeatureStore final : public FeatureStore {
 public:
  explicit FileFeatureStore(std::shared_ptr<const std::map<std::string, NodeColumn>> nodes)
      : nodes_(std::move(nodes)) {}

  std::vector<std::string> node_types() const override {
    std::vector<std::string> out;
    for (const auto& [name, _] : *nodes_) out.push_back(name);
    return out;
  }

  std::vector<std::string> attrs(const std::string& node_type) const override {
    std::vector<std::string> out{"x"};
    if (column(node_type).times) out.push_back("time");
    return out;
  }

  AttrInfo attr_info(const std::string& node_type, const std::string& attr) const override {
    const auto& col = column(node_type);
    if (attr == "x") return {col.rec.dtype, col.rec.count, col.rec.feature_width};
    if (attr == "time" && col.times) return {Dtype::i64, col.rec.count, 1};
    throw std::invalid_argument("FeatureStore: unknown attribute " + node_type + "." + attr);
  }

  Tensor<float> get_f32(const std::string& node_type, IndexSpan rows,
                        const std::string& attr) const override {
    const auto& col = checked(node_type, attr, Dtype::f32);
    return detail::gather_attr_rows<float, float>(col.features.as<float>(), col.rec.count,
                                                  col.rec.feature_width, rows, "get");
  }
  Tensor<double> get_f64(const std::string& node_type, IndexSpan rows,
                         const std::string& attr) const override {
    const auto& col = checked(node_type, attr, Dtype::f64);
    return detail::gather_attr_rows<double, double>(col.features.as<double>(), col.rec.count,
                                                    col.rec.feature_width, rows, "get");
  }
  Tensor<std::int64_t> get_i64(const std::string& node_type, IndexSpan rows,
                               const std::string& attr) const override {
    const auto& col = column(node_type);
    if (attr != "time" || !col.times)
      throw std::invalid_argument("FeatureStore: no int64 attribute " + node_type + "." + attr);
    return detail::gather_attr_rows<std::int64_t, std::int64_t>(
        col.times->data(), static_cast<Index>(col.times->size()), 1, rows, "get");
  }

 private:
  const NodeColumn& column(const std::string& node_type) const {
    auto it = nodes_->find(node_type);
    if (it == nodes_->end())
      throw std::invalid_argument("FeatureStore: unknown node type " + node_type);
    return it->second;
  }
  const NodeColumn& checked(const std::string& node_type, const std::string& attr,
                            Dtype want) const {
    const auto& col = column(node_type);
    if (attr != "x")
      throw std::invalid_argument("FeatureStore: unknown attribute " + node_type + "." + attr);
    if (col.rec.dtype != want)
      throw std::invalid_argument(std::string("FeatureStore: attribute holds ") +
                                  to_string(col.rec.dtype) + ", requested " + to_string(want));
    return col;
  }

  std::shared_ptr<const std::map<std::string, NodeColumn>> nodes_;
};

struct EdgeColumn {
  EdgeIndex index;
  std::optional<Timestamps> times;
};

class FileGraphStore final : public GraphStore {
 public:
  FileGraphStore(std::shared_ptr<const std::map<std::string, NodeColumn>> nodes,
                 std::shared_ptr<const std::map<EdgeType, EdgeColumn>> edges)
      : nodes_(std::move(nodes)), edges_(std::move(edges)) {}

  std::vector<std::string> node_types() const override {
    std::vector<std::string> out;
    for (const auto& [name, _] : *nodes_) out.push_back(name);
    return out;
  }
  std::vector<EdgeType> edge_types() const override {
    std::vector<EdgeType> out;
    for (const auto& [t, _] : *edges_) out.push_back(t);
    return out;
  }
  Index num_nodes(const std::string& node_type) const override {
    auto it = nodes_->find(node_type);
    if (it == nodes_->end())
      throw std::invalid_argument("GraphStore: unknown node type " + node_type);
    return it->second.rec.count;
  }
  EdgeIndex edge_index(const EdgeType& type) const override { return column(type).index; }
  const Timestamps* edge_times(const EdgeType& type) const override {
    const auto& t = column(type).times;
    return t ? &*t : nullptr;
  }
  const Timestamps* node_times(const std::string& node_type) const override {
    auto it = nodes_->find(node_type);
    if (it == nodes_->end())
      throw std::invalid_argument("GraphStore: unknown node type " + node_type);
    return it->second.times ? &*it->second.times : nullptr;
  }

 private:
  const EdgeColumn& column(const EdgeType& type) const {
    auto it = edges_->find(type);
    if (it == edges_->end())
      throw std::invalid_argument("GraphStore: unknown edge type " + type.canonical());
    return it->second;
  }

  std::shared_ptr<const std::map<std::string, NodeColumn>> nodes_;
  std::shared_ptr<const std::map<EdgeType, EdgeColumn>> edges_;
};

Timestamps read_times(const fs::path& path, Index count) {
  MappedFile file(path, static_cast<std::size_t>(count) * sizeof(std::int64_t));
  const std::int64_t* p = file.as<std::int64_t>();
  return Timestamps(p, p + count);
}

std::size_t dtype_size(Dtype d) {
  return d == Dtype::f32 ? sizeof(float) : sizeof(double);
}

}  // namespace

std::pair<std::shared_ptr<FeatureStore>, std::shared_ptr<GraphStore>> load_dataset(
    const fs::path& dir) {
  const DatasetManifest manifest = read_manifest(dir);

  auto nodes = std::make_shared<std::map<std::string, NodeColumn>>();
  for (const auto& rec : manifest.nodes) {
    NodeColumn col;
    col.rec = rec;
    const fs::path feat =
        dir / ("node_" + rec.name + "." + detail::dtype_file_token(rec.dtype) + ".bin");
    col.features = MappedFile(
        feat, static_cast<std::size_t>(rec.count * rec.feature_width) * dtype_size(rec.dtype));
    if (rec.has_time)
      col.times = read_times(dir / ("node_" + rec.name + ".time.i64.bin"), rec.count);
    nodes->emplace(rec.name, std::move(col));
  }

  auto edges = std::make_shared<std::map<EdgeType, EdgeColumn>>();
  for (const auto& rec : manifest.edges) {
    const auto s = nodes->find(rec.type.src);
    const auto d = nodes->find(rec.type.dst);
    if (s == nodes->end() || d == nodes->end())
      throw std::runtime_error("dataset: edge type " + rec.type.canonical() +
                               " references unknown node types");
    const fs::path pairs_path = dir / ("edge_" + rec.type.canonical() + ".u64.bin");
    MappedFile pairs(pairs_path,
                     static_cast<std::size_t>(rec.edge_count) * 2 * sizeof(std::uint64_t));
    std::vector<Index> src(static_cast<std::size_t>(rec.edge_count));
    std::vector<Index> dst(static_cast<std::size_t>(rec.edge_count));
    const std::uint64_t* p = pairs.as<std::uint64_t>();
    for (Index i = 0; i < rec.edge_count; ++i) {
      src[static_cast<std::size_t>(i)] = static_cast<Index>(p[2 * i]);
      dst[static_cast<std::size_t>(i)] = static_cast<Index>(p[2 * i + 1]);
    }
    EdgeColumn col;
    // bounds validated by the EdgeIndex constructor
    col.index = EdgeIndex(std::move(src), std::move(dst), s->second.rec.count,
                          d->second.rec.count);
    if (rec.has_time)
      col.times = read_times(dir / ("edge_" + rec.type.canonical() + ".time.i64.bin"),
                             rec.edge_count);
    edges->emplace(rec.type, std::move(col));
  }

  return {std::make_shared<FileFeatureStore>(nodes),
          std::make_shared<FileGraphStore>(nodes, edges)};
}

// ---------------------------------------------------------------------------
// CSV conversion
// ---------------------------------------------------------------------------

namespace {

double parse_number(const std::string& cell, const std::string& file, std::size_t row) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("convert: " + file + " row " + std::to_string(row + 1) +
                             ": cannot parse '" + cell + "'");
  }
}

std::int64_t parse_int(const std::string& cell, const std::string& file, std::size_t row) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(cell, &used);
    if (used != cell.size()) throw std::invalid_argument("trailing characters");
    return static_cast<std::int64_t>(v);
  } catch (const std::exception&) {
    throw std::runtime_error("convert: " + file + " row " + std::to_string(row + 1) +
                             ": cannot parse integer '" + cell + "'");
  }
}

}  // namespace

DatasetManifest convert_csv_dataset(const fs::path& csv_dir, const fs::path& out_dir) {
  std::vector<fs::path> node_files, edge_files;
  for (const auto& entry : fs::directory_iterator(csv_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with("nodes_") && name.ends_with(".csv")) node_files.push_back(entry.path());
    if (name.starts_with("edges_") && name.ends_with(".csv")) edge_files.push_back(entry.path());
  }
  std::sort(node_files.begin(), node_files.end());
  std::sort(edge_files.begin(), edge_files.end());
  if (node_files.empty()) throw std::runtime_error("convert: no nodes_<type>.csv in " + csv_dir.string());

  HeteroGraph<float> g;
  for (const auto& path : node_files) {
    const std::string fname = path.filename().string();
    const std::string type = fname.substr(6, fname.size() - 6 - 4);
    const Csv csv = read_csv(path.string());
    const int id_col = csv.require_column("id");
    const int time_col = csv.column("time");
    std::vector<int> feat_cols;
    for (std::size_t c = 0; c < csv.header.size(); ++c)
      if (static_cast<int>(c) != id_col && static_cast<int>(c) != time_col)
        feat_cols.push_back(static_cast<int>(c));

    const Index n = static_cast<Index>(csv.rows.size());
    const Index width = static_cast<Index>(feat_cols.size());
    Tensor<float> feats({n, width});
    std::optional<Timestamps> times;
    if (time_col >= 0) times = Timestamps(static_cast<std::size_t>(n), 0);
    std::vector<bool> seen(static_cast<std::size_t>(n), false);

    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
      const auto& row = csv.rows[r];
      if (row.size() != csv.header.size())
        throw std::runtime_error("convert: " + fname + " row " + std::to_string(r + 1) +
                                 ": expected " + std::to_string(csv.header.size()) +
                                 " cells, found " + std::to_string(row.size()));
      const std::int64_t id = parse_int(row[static_cast<std::size_t>(id_col)], fname, r);
      if (id < 0 || id >= n)
        throw std::runtime_error("convert: " + fname + " row " + std::to_string(r + 1) +
                                 ": id " + std::to_string(id) + " outside [0, " +
                                 std::to_string(n) + ")");
      if (seen[static_cast<std::size_t>(id)])
        throw std::runtime_error("convert: " + fname + " row " + std::to_string(r + 1) +
                                 ": duplicate id " + std::to_string(id));
      seen[static_cast<std::size_t>(id)] = true;
      auto fv = feats.data_mut();
      for (Index j = 0; j < width; ++j)
        fv[id * width + j] = static_cast<float>(
            parse_number(row[static_cast<std::size_t>(feat_cols[static_cast<std::size_t>(j)])],
                         fname, r));
      if (times) (*times)[static_cast<std::size_t>(id)] =
          parse_int(row[static_cast<std::size_t>(time_col)], fname, r);
    }
    g.add_node_type(type, std::move(feats), std::move(times));
  }

  for (const auto& path : edge_files) {
    const std::string fname = path.filename().string();
    const EdgeType type = EdgeType::parse(fname.substr(6, fname.size() - 6 - 4));
    if (!g.has_node_type(type.src) || !g.has_node_type(type.dst))
      throw std::runtime_error("convert: " + fname + " references undeclared node types");
    const Csv csv = read_csv(path.string());
    const int src_col = csv.require_column("src");
    const int dst_col = csv.require_column("dst");
    const int time_col = csv.column("time");

    const Index n_src = g.num_nodes(type.src);
    const Index n_dst = g.num_nodes(type.dst);
    std::vector<Index> src, dst;
    std::optional<Timestamps> times;
    if (time_col >= 0) times.emplace();
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
      const auto& row = csv.rows[r];
      if (row.size() != csv.header.size())
        throw std::runtime_error("convert: " + fname + " row " + std::to_string(r + 1) +
                                 ": ragged row");
      const std::int64_t s = parse_int(row[static_cast<std::size_t>(src_col)], fname, r);
      const std::int64_t d = parse_int(row[static_cast<std::size_t>(dst_col)], fname, r);
      if (s < 0 || s >= n_src)
        throw std::runtime_error("convert: " + fname + " row " + std::to_string(r + 1) +
                                 ": src id " + std::to_string(s) + " has no node of type " +
                                 type.src);
      if (d < 0 || d >= n_dst)
        throw std::runtime_error("convert: " + fname + " row " + std::to_string(r + 1) +
                                 ": dst id " + std::to_string(d) + " has no node of type " +
                                 type.dst);
      src.push_back(s);
      dst.push_back(d);
      if (times) times->push_back(parse_int(row[static_cast<std::size_t>(time_col)], fname, r));
    }
    g.add_edge_type(type, EdgeIndex(std::move(src), std::move(dst), n_src, n_dst), std::nullopt,
                    std::move(times));
  }

  return save_dataset(g, out_dir);
}

}  // namespace graphmill

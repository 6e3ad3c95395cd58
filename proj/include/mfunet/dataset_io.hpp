#pragma once

// On-disk dataset layout:
//
//   <dir>/manifest.json            metadata, splits, generation costs
//   <dir>/samples/<id>_<level>.bin one graph (plus the k-NN map to the next
//                                  finer level) per binary blob
//
// Blob layout (little-endian):
//   "MFGB" | u32 version | u32 n_arrays
//   per array: u32 name_len | name | u8 dtype (0 = f64, 1 = i64) |
//              u32 rank | u64 extents[rank] | payload
//   u64 FNV-1a hash of every preceding byte
//
// See README for the mesh exchange format read by read_mesh_exchange().

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "mfunet/crosslevel.hpp"
#include "mfunet/error.hpp"
#include "mfunet/graph.hpp"

namespace mfunet {

static_assert(std::endian::native == std::endian::little, "blob IO assumes a little-endian host");

inline constexpr std::uint32_t blob_version = 1;
inline constexpr int manifest_schema_version = 1;

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// A named array in a blob. Exactly one of f64 / i64 is populated.
struct BlobArray {
  std::vector<std::uint64_t> extents;
  std::vector<double> f64;
  std::vector<std::int64_t> i64;
  bool is_int = false;
};

using Blob = std::map<std::string, BlobArray>;

inline BlobArray blob_f64(std::vector<std::uint64_t> extents, std::vector<double> v) {
  BlobArray a;
  a.extents = std::move(extents);
  a.f64 = std::move(v);
  return a;
}

inline BlobArray blob_i64(std::vector<std::uint64_t> extents, std::vector<std::int64_t> v) {
  BlobArray a;
  a.extents = std::move(extents);
  a.i64 = std::move(v);
  a.is_int = true;
  return a;
}

namespace detail {

template <class T>
void put(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end, std::string path)
      : buf_(buf), end_(end), path_(std::move(path)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) {
    if (end_ - pos_ < n) throw FormatError(path_ + ": truncated blob");
  }
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

inline std::string encode_blob(const Blob& blob, std::uint32_t version = blob_version) {
  std::string buf = "MFGB";
  detail::put<std::uint32_t>(buf, version);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(blob.size()));
  for (const auto& [name, a] : blob) {
    std::uint64_t n = 1;
    for (auto e : a.extents) n *= e;
    if (n != (a.is_int ? a.i64.size() : a.f64.size()))
      throw ShapeError("blob array '" + name + "' extents do not match its data");
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    detail::put<std::uint8_t>(buf, a.is_int ? 1 : 0);
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(a.extents.size()));
    for (auto e : a.extents) detail::put<std::uint64_t>(buf, e);
    if (a.is_int)
      buf.append(reinterpret_cast<const char*>(a.i64.data()), a.i64.size() * sizeof(std::int64_t));
    else
      buf.append(reinterpret_cast<const char*>(a.f64.data()), a.f64.size() * sizeof(double));
  }
  detail::put<std::uint64_t>(buf, fnv1a64(buf.data(), buf.size()));
  return buf;
}

/// `source` names the blob in error messages.
inline Blob decode_blob(const std::string& buf, const std::string& source) {
  if (buf.size() < 4 + 4 + 4 + 8 || buf.compare(0, 4, "MFGB") != 0)
    throw FormatError(source + ": not an MFGB blob");
  const std::size_t body = buf.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + body, 8);
  if (fnv1a64(buf.data(), body) != stored) throw ChecksumError("checksum mismatch in " + source);
  detail::Reader r(buf, body, source);
  char magic[4];
  r.bytes(magic, 4);
  const auto version = r.get<std::uint32_t>();
  if (version != blob_version)
    throw VersionError(source + ": blob version " + std::to_string(version) +
                       " is not supported (reader version " + std::to_string(blob_version) + ")");
  const auto count = r.get<std::uint32_t>();
  Blob blob;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.get<std::uint32_t>(), '\0');
    r.bytes(name.data(), name.size());
    BlobArray a;
    const auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw FormatError(source + ": unknown dtype in array '" + name + "'");
    a.is_int = dtype == 1;
    a.extents.resize(r.get<std::uint32_t>());
    std::uint64_t n = 1;
    for (auto& e : a.extents) {
      e = r.get<std::uint64_t>();
      n *= e;
    }
    if (n > body) throw FormatError(source + ": array '" + name + "' larger than the file");
    if (a.is_int) {
      a.i64.resize(n);
      r.bytes(a.i64.data(), n * sizeof(std::int64_t));
    } else {
      a.f64.resize(n);
      r.bytes(a.f64.data(), n * sizeof(double));
    }
    blob.emplace(std::move(name), std::move(a));
  }
  if (!r.done()) throw FormatError(source + ": trailing bytes");
  return blob;
}

inline void write_blob(const std::filesystem::path& path, const Blob& blob) {
  detail::write_file(path, encode_blob(blob));
}

inline Blob read_blob(const std::filesystem::path& path) {
  return decode_blob(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// GraphSample <-> blob

namespace detail {

inline const BlobArray& field(const Blob& b, const std::string& name, const std::string& src) {
  auto it = b.find(name);
  if (it == b.end()) throw FormatError(src + ": missing array '" + name + "'");
  return it->second;
}

inline Array2<double> to_array2(const BlobArray& a, const std::string& name, const std::string& src) {
  if (a.is_int || a.extents.size() != 2) throw FormatError(src + ": '" + name + "' must be 2D f64");
  Array2<double> out;
  out.rows = a.extents[0];
  out.cols = a.extents[1];
  out.data = a.f64;
  return out;
}

inline std::vector<std::int64_t> widen(std::span<const int> v) { return {v.begin(), v.end()}; }

}  // namespace detail

/// The graph and, when present, the k-NN map from this (coarser) level to the
/// next finer one.
inline Blob graph_to_blob(const GraphSample& g, const KnnMap* to_finer) {
  using U = std::uint64_t;
  Blob b;
  b["meta"] = blob_i64({2}, {static_cast<std::int64_t>(g.dim), g.level});
  b["coords"] = blob_f64({g.coords.rows, g.coords.cols}, g.coords.data);
  b["node_attrs"] = blob_f64({g.node_attrs.rows, g.node_attrs.cols}, g.node_attrs.data);
  b["edge_index"] = blob_i64({g.edge_index.rows, U{2}}, detail::widen(g.edge_index.data));
  b["edge_attrs"] = blob_f64({g.edge_attrs.rows, g.edge_attrs.cols}, g.edge_attrs.data);
  b["targets"] = blob_f64({g.targets.rows, g.targets.cols}, g.targets.data);
  std::vector<std::int64_t> cat(g.categorical_node_columns.begin(), g.categorical_node_columns.end());
  b["categorical_columns"] = blob_i64({cat.size()}, cat);
  if (to_finer) {
    b["knn_index"] = blob_i64({to_finer->n_coarse, to_finer->k}, detail::widen(to_finer->index));
    b["knn_distance"] = blob_f64({to_finer->n_coarse, to_finer->k}, to_finer->distance);
    b["knn_fine_nodes"] = blob_i64({1}, {static_cast<std::int64_t>(to_finer->n_fine)});
  }
  return b;
}

inline GraphSample graph_from_blob(const Blob& b, const std::string& src, KnnMap* to_finer) {
  GraphSample g;
  const auto& meta = detail::field(b, "meta", src);
  if (!meta.is_int || meta.i64.size() != 2) throw FormatError(src + ": bad meta");
  g.dim = static_cast<std::size_t>(meta.i64[0]);
  g.level = static_cast<int>(meta.i64[1]);
  g.coords = detail::to_array2(detail::field(b, "coords", src), "coords", src);
  g.node_attrs = detail::to_array2(detail::field(b, "node_attrs", src), "node_attrs", src);
  g.edge_attrs = detail::to_array2(detail::field(b, "edge_attrs", src), "edge_attrs", src);
  g.targets = detail::to_array2(detail::field(b, "targets", src), "targets", src);
  const auto& ei = detail::field(b, "edge_index", src);
  if (!ei.is_int || ei.extents.size() != 2 || ei.extents[1] != 2)
    throw FormatError(src + ": 'edge_index' must be [E x 2] i64");
  g.edge_index = Array2<int>(ei.extents[0], 2);
  for (std::size_t i = 0; i < ei.i64.size(); ++i) {
    if (ei.i64[i] < 0 || static_cast<std::size_t>(ei.i64[i]) >= g.node_attrs.rows)
      throw FormatError(src + ": edge endpoint out of range");
    g.edge_index.data[i] = static_cast<int>(ei.i64[i]);
  }
  for (auto c : detail::field(b, "categorical_columns", src).i64)
    g.categorical_node_columns.push_back(static_cast<std::size_t>(c));
  if (to_finer) {
    auto it = b.find("knn_index");
    if (it == b.end()) throw FormatError(src + ": missing k-NN map to the finer level");
    const auto& ki = it->second;
    to_finer->n_coarse = ki.extents.at(0);
    to_finer->k = ki.extents.at(1);
    to_finer->n_fine = static_cast<std::size_t>(detail::field(b, "knn_fine_nodes", src).i64.at(0));
    to_finer->index.assign(ki.i64.begin(), ki.i64.end());
    to_finer->distance = detail::field(b, "knn_distance", src).f64;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Manifest

enum class Split { Train, Test };

inline const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

struct SampleEntry {
  std::string id;
  Split split = Split::Train;
  std::vector<std::string> files;        // finest first, relative to the dataset dir
  std::vector<std::size_t> node_counts;  // finest first
  nlohmann::json spec;                   // free-form summary of the physical problem
};

struct DatasetManifest {
  int schema_version = manifest_schema_version;
  std::string problem = "cantilever_beam";
  std::vector<std::size_t> resolutions;  // target node counts, coarse to fine
  std::size_t k = 4;
  std::uint64_t seed = 0;
  nlohmann::json generator = nlohmann::json::object();  // generation parameters
  std::vector<SampleEntry> samples;
  /// Mean wall-clock seconds to mesh and solve one sample, per resolution
  /// (same order as `resolutions`).
  std::vector<double> cost_seconds;

  std::size_t n_levels() const { return resolutions.size(); }

  /// Entries of one split, in manifest order.
  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].split == s) out.push_back(i);
    return out;
  }
};

inline nlohmann::json to_json(const DatasetManifest& m, bool include_timing = true) {
  nlohmann::json j;
  j["schema_version"] = m.schema_version;
  j["problem"] = m.problem;
  j["resolutions"] = m.resolutions;
  j["k"] = m.k;
  j["seed"] = m.seed;
  j["generator"] = m.generator;
  auto& arr = j["samples"] = nlohmann::json::array();
  for (const auto& s : m.samples)
    arr.push_back({{"id", s.id},
                   {"split", to_string(s.split)},
                   {"files", s.files},
                   {"node_counts", s.node_counts},
                   {"spec", s.spec}});
  if (include_timing) j["cost_seconds"] = m.cost_seconds;
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j, const std::string& src) {
  try {
    DatasetManifest m;
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != manifest_schema_version)
      throw VersionError(src + ": manifest schema version " + std::to_string(m.schema_version) +
                         " is not supported (reader version " +
                         std::to_string(manifest_schema_version) + ")");
    m.problem = j.at("problem").get<std::string>();
    m.resolutions = j.at("resolutions").get<std::vector<std::size_t>>();
    m.k = j.at("k").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.generator = j.value("generator", nlohmann::json::object());
    m.cost_seconds = j.value("cost_seconds", std::vector<double>{});
    for (const auto& e : j.at("samples")) {
      SampleEntry s;
      s.id = e.at("id").get<std::string>();
      const auto split = e.at("split").get<std::string>();
      if (split != "train" && split != "test") throw FormatError(src + ": unknown split " + split);
      s.split = split == "train" ? Split::Train : Split::Test;
      s.files = e.at("files").get<std::vector<std::string>>();
      s.node_counts = e.at("node_counts").get<std::vector<std::size_t>>();
      s.spec = e.value("spec", nlohmann::json::object());
      if (s.files.size() != m.resolutions.size())
        throw FormatError(src + ": sample " + s.id + " lists " + std::to_string(s.files.size()) +
                          " files for " + std::to_string(m.resolutions.size()) + " resolutions");
      m.samples.push_back(std::move(s));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(src + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Dataset directories

struct Dataset {
  DatasetManifest manifest;
  std::vector<MultiFidelitySample> samples;  // manifest order
};

inline std::string sample_file_name(const std::string& id, std::size_t level) {
  return "samples/" + id + "_" + std::to_string(level) + ".bin";
}

/// Writes one sample's blobs and returns their relative paths (finest first).
inline std::vector<std::string> save_sample(const std::filesystem::path& dir,
                                            const MultiFidelitySample& s) {
  s.validate();
  std::vector<std::string> files;
  for (std::size_t l = 0; l < s.levels.size(); ++l) {
    const KnnMap* to_finer = l > 0 ? &s.maps[l - 1] : nullptr;
    files.push_back(sample_file_name(s.id, l));
    write_blob(dir / files.back(), graph_to_blob(s.levels[l], to_finer));
  }
  return files;
}

inline MultiFidelitySample load_sample(const std::filesystem::path& dir, const SampleEntry& e) {
  MultiFidelitySample s;
  s.id = e.id;
  s.maps.resize(e.files.empty() ? 0 : e.files.size() - 1);
  for (std::size_t l = 0; l < e.files.size(); ++l) {
    const auto path = dir / e.files[l];
    if (!std::filesystem::exists(path)) throw IoError("missing sample file " + path.string());
    s.levels.push_back(graph_from_blob(read_blob(path), path.string(), l > 0 ? &s.maps[l - 1] : nullptr));
  }
  s.validate();
  return s;
}

inline void save_manifest(const std::filesystem::path& dir, const DatasetManifest& m) {
  detail::write_file(dir / "manifest.json", to_json(m).dump(2) + "\n");
}

inline DatasetManifest load_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  const auto text = detail::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return manifest_from_json(j, path.string());
}

/// Writes every sample and the manifest; entry files are filled in.
inline void save_dataset(const std::filesystem::path& dir, DatasetManifest& manifest,
                         const std::vector<MultiFidelitySample>& samples) {
  if (samples.size() != manifest.samples.size())
    throw ShapeError("save_dataset: manifest and sample counts differ");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].id != manifest.samples[i].id)
      throw ShapeError("save_dataset: sample order differs from manifest at " + samples[i].id);
    manifest.samples[i].files = save_sample(dir, samples[i]);
  }
  save_manifest(dir, manifest);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.manifest = load_manifest(dir);
  for (const auto& e : d.manifest.samples) d.samples.push_back(load_sample(dir, e));
  return d;
}

// ---------------------------------------------------------------------------
// Mesh exchange format (external FEM output)

/// Reads one mesh in the plain-text exchange format and converts it to a
/// graph. Node attributes are [coords (dim), node-type one-hot {interior,
/// fixed, free_boundary} (3), loaded flag (1), extra features (F)].
inline GraphSample read_mesh_exchange(std::istream& in, const std::string& src, int level = 0) {
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    lines.push_back(line);
  }
  std::size_t pos = 0;
  auto next = [&](const char* what) -> std::istringstream {
    if (pos >= lines.size()) throw FormatError(src + ": unexpected end of file, expected " + what);
    return std::istringstream(lines[pos++]);
  };
  auto expect_word = [&](std::istringstream& ss, const std::string& word) {
    std::string w;
    ss >> w;
    if (w != word) throw FormatError(src + ": expected '" + word + "' on line " + std::to_string(pos));
  };

  auto header = next("header");
  expect_word(header, "mfunet-mesh");
  int version = 0;
  header >> version;
  if (version != 1) throw VersionError(src + ": mesh exchange version " + std::to_string(version) + " is not supported");

  auto dim_line = next("dim");
  expect_word(dim_line, "dim");
  std::size_t dim = 0;
  dim_line >> dim;
  if (dim != 2 && dim != 3) throw FormatError(src + ": dim must be 2 or 3");

  auto nodes_line = next("nodes");
  expect_word(nodes_line, "nodes");
  std::size_t n = 0, n_targets = 0, n_features = 0;
  nodes_line >> n >> n_targets >> n_features;
  if (!nodes_line || n == 0 || n_targets == 0) throw FormatError(src + ": bad 'nodes' line");

  GraphSample g;
  g.dim = dim;
  g.level = level;
  g.coords = Array2<double>(n, dim);
  g.targets = Array2<double>(n, n_targets);
  const std::size_t d_n = dim + 4 + n_features;
  g.node_attrs = Array2<double>(n, d_n, 0.0);
  g.categorical_node_columns = {dim, dim + 1, dim + 2, dim + 3};
  for (std::size_t i = 0; i < n; ++i) {
    auto ss = next("node row");
    for (std::size_t a = 0; a < dim; ++a) ss >> g.coords(i, a);
    std::string tag;
    ss >> tag;
    for (std::size_t t = 0; t < n_targets; ++t) ss >> g.targets(i, t);
    for (std::size_t f = 0; f < n_features; ++f) ss >> g.node_attrs(i, dim + 4 + f);
    if (!ss) throw FormatError(src + ": malformed node row " + std::to_string(i));
    for (std::size_t a = 0; a < dim; ++a) g.node_attrs(i, a) = g.coords(i, a);
    if (tag == "interior") g.node_attrs(i, dim) = 1.0;
    else if (tag == "fixed") g.node_attrs(i, dim + 1) = 1.0;
    else if (tag == "free_boundary") g.node_attrs(i, dim + 2) = 1.0;
    else if (tag == "loaded") {
      g.node_attrs(i, dim + 2) = 1.0;
      g.node_attrs(i, dim + 3) = 1.0;
    } else throw FormatError(src + ": unknown node tag '" + tag + "'");
  }

  auto cells_line = next("cells");
  expect_word(cells_line, "cells");
  std::size_t m = 0, per_cell = 0;
  cells_line >> m >> per_cell;
  if (!cells_line || per_cell < 2) throw FormatError(src + ": bad 'cells' line");
  std::vector<std::vector<int>> cells(m, std::vector<int>(per_cell));
  for (std::size_t c = 0; c < m; ++c) {
    auto ss = next("cell row");
    for (auto& v : cells[c]) {
      ss >> v;
      if (!ss || v < 0 || static_cast<std::size_t>(v) >= n)
        throw FormatError(src + ": bad node index in cell " + std::to_string(c));
    }
  }
  build_edges(g, unique_edges(cells));
  return g;
}

inline GraphSample read_mesh_exchange(const std::filesystem::path& path, int level = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_mesh_exchange(in, path.string(), level);
}

}  // namespace mfunet

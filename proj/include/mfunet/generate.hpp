#pragma once

// Multi-resolution beam dataset generation.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "mfunet/crosslevel.hpp"
#include "mfunet/dataset_io.hpp"
#include "mfunet/femgen.hpp"
#include "mfunet/graph.hpp"
#include "mfunet/random.hpp"

namespace mfunet {

struct GenerateOptions {
  std::size_t n_train = 60;
  std::size_t n_test = 15;
  std::size_t train_offset = 0;  // index of the first training sample
  /// Target node counts, strictly increasing (coarse to fine).
  std::vector<std::size_t> resolutions{50, 100, 200};
  double noise_amp = 0.1;
  NoiseMode noise_mode = NoiseMode::Absolute;
  std::size_t k = 4;
  std::uint64_t seed = 0;
  BeamSampling sampling;
  Material material;
  int max_redraws = 8;
  unsigned threads = 0;  // 0: hardware concurrency

  void validate() const {
    if (resolutions.empty()) throw ConfigError("generate: resolutions must not be empty");
    for (std::size_t i = 1; i < resolutions.size(); ++i)
      if (resolutions[i] <= resolutions[i - 1])
        throw ConfigError("generate: resolutions must be strictly increasing");
    if (n_train + n_test < 1) throw ConfigError("generate: need at least one sample");
    if (k < 1) throw ConfigError("generate: k must be >= 1");
    material.validate();
  }
};

/// Seed of the physical problem behind sample `index` of a split. Train and
/// test draw from separate streams, so growing one split never changes the
/// other, and a larger training set extends a smaller one.
inline std::uint64_t sample_seed(std::uint64_t master, Split split, std::size_t index,
                                 int redraw = 0) {
  const std::uint64_t stream = split == Split::Train ? 0x7a1 : 0x7e5;
  return derive_seed(master, stream ^ (static_cast<std::uint64_t>(redraw) << 32), index);
}

inline std::string sample_id(Split split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05zu", to_string(split), index);
  return buf;
}

struct GeneratedSample {
  MultiFidelitySample sample;
  BeamSpec spec;
  std::vector<double> seconds;  // per resolution, coarse to fine
};

/// Meshes and solves one problem at every resolution. On a meshing or solver
/// failure the problem is redrawn from a fresh seed, up to max_redraws times.
inline GeneratedSample generate_sample(const GenerateOptions& o, Split split, std::size_t index) {
  std::string last_error;
  for (int redraw = 0; redraw <= o.max_redraws; ++redraw) {
    try {
      GeneratedSample out;
      out.spec = sample_spec(sample_seed(o.seed, split, index, redraw), o.sampling);
      out.sample.id = sample_id(split, index);
      const std::size_t n_levels = o.resolutions.size();
      out.sample.levels.resize(n_levels);
      out.seconds.resize(n_levels);
      for (std::size_t r = 0; r < n_levels; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        MeshOptions mo;
        mo.target_nodes = o.resolutions[r];
        mo.noise_amp = o.noise_amp;
        mo.noise_mode = o.noise_mode;
        const TriMesh mesh = mesh_beam(out.spec, mo);
        const FemSolution sol = solve_elasticity(mesh, o.material, out.spec);
        out.seconds[r] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const std::size_t level = n_levels - 1 - r;  // finest first
        out.sample.levels[level] = mesh_to_graph(mesh, sol, out.spec, static_cast<int>(level));
      }
      build_maps(out.sample, o.k);
      out.sample.validate();
      return out;
    } catch (const MeshError& e) {
      last_error = e.what();
    } catch (const SolverError& e) {
      last_error = e.what();
    }
  }
  throw SolverError("sample " + sample_id(split, index) + " failed after " +
                    std::to_string(o.max_redraws + 1) + " draws: " + last_error);
}

inline nlohmann::json spec_summary(const BeamSpec& s) {
  return {{"seed", s.seed},
          {"length", s.length},
          {"height", s.height},
          {"fixed_side", to_string(s.fixed_side)},
          {"load_kind", to_string(s.load_kind)},
          {"load_edge", to_string(s.load_edge)},
          {"load_start", {s.load_start.x, s.load_start.y}},
          {"load_end", {s.load_end.x, s.load_end.y}},
          {"load_direction", {s.load_direction.x, s.load_direction.y}},
          {"load_total", s.load_total}};
}

/// Generates train and test samples in parallel and returns them with a
/// manifest (train entries first). Nothing is written to disk.
inline Dataset generate_dataset(const GenerateOptions& o) {
  o.validate();
  struct Job {
    Split split;
    std::size_t index;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < o.n_train; ++i) jobs.push_back({Split::Train, o.train_offset + i});
  for (std::size_t i = 0; i < o.n_test; ++i) jobs.push_back({Split::Test, i});

  std::vector<GeneratedSample> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      try {
        results[j] = generate_sample(o, jobs[j].split, jobs[j].index);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  unsigned threads = o.threads ? o.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, jobs.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  Dataset d;
  auto& m = d.manifest;
  m.resolutions = o.resolutions;
  m.k = o.k;
  m.seed = o.seed;
  m.generator = {{"noise_amp", o.noise_amp},
                 {"noise_mode", o.noise_mode == NoiseMode::Absolute ? "absolute" : "relative"},
                 {"length_range", {o.sampling.length_min, o.sampling.length_max}},
                 {"height_range", {o.sampling.height_min, o.sampling.height_max}},
                 {"load_total", o.sampling.load_total},
                 {"youngs_modulus", o.material.youngs_modulus},
                 {"poisson_ratio", o.material.poisson_ratio}};
  m.cost_seconds.assign(o.resolutions.size(), 0.0);
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    auto& r = results[j];
    SampleEntry e;
    e.id = r.sample.id;
    e.split = jobs[j].split;
    for (const auto& g : r.sample.levels) e.node_counts.push_back(g.n_nodes());
    e.spec = spec_summary(r.spec);
    for (std::size_t l = 0; l < r.sample.levels.size(); ++l)
      e.files.push_back(sample_file_name(e.id, l));
    for (std::size_t k = 0; k < r.seconds.size(); ++k) m.cost_seconds[k] += r.seconds[k];
    m.samples.push_back(std::move(e));
    d.samples.push_back(std::move(r.sample));
  }
  for (auto& c : m.cost_seconds) c /= static_cast<double>(jobs.size());
  return d;
}

/// generate_dataset followed by save_dataset.
inline Dataset generate_dataset(const GenerateOptions& o, const std::filesystem::path& out_dir) {
  Dataset d = generate_dataset(o);
  save_dataset(out_dir, d.manifest, d.samples);
  return d;
}

}  // namespace mfunet

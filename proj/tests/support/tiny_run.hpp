#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "mfunet/config.hpp"

namespace mfunet::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("mfunet_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// A run small enough to train in well under a second.
inline ExperimentConfig tiny_run(const std::filesystem::path& out, Variant v = Variant::MfUnet,
                                 std::size_t levels = 2) {
  ExperimentConfig c;
  c.seed = 11;
  c.out = out.string();
  c.variant = v;
  c.n_levels = levels;
  c.dataset.gen.n_train = 3;
  c.dataset.gen.n_test = 2;
  c.dataset.gen.resolutions = {12, 24, 48};
  c.dataset.gen.threads = 1;
  c.model.hidden = c.model.latent = c.model.block_hidden = 8;
  c.model.n_gn_blocks = 2;
  c.model.coupling_block_index = 1;
  c.training.epochs = 3;
  c.lr = 1e-3;
  c.scheduler.eta_max = c.lr;
  c.scheduler.t0 = 3;
  return c;
}

}  // namespace mfunet::testing

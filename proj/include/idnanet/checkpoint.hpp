#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "idnanet/layers.hpp"

namespace idna {

template <typename S>
struct NamedTensor {
  std::string name;
  Tensor<S> value;
};

/// Binary snapshot: magic `IDNA1`, format version, run-config text, epoch, RNG state,
/// parameters by canonical path, branch weights and optimizer accumulators. Scalars are
/// stored raw, so a round trip is bitwise.
template <typename S>
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_text;
  std::int64_t epoch = 0;
  std::string rng_state;  ///< textual std::mt19937_64 state
  std::vector<NamedTensor<S>> parameters;
  Tensor<S> lambda;
  std::vector<NamedTensor<S>> accumulators;  ///< Adagrad state, same order as parameters then λ
};

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<S>& ckpt);

/// IoError when unreadable, FormatError on a bad magic or truncated file, VersionError on
/// an unknown format version or a scalar-width mismatch.
template <typename S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path);

template <typename S>
std::vector<NamedTensor<S>> snapshot(const ParameterSet<S>& params);

/// Copies values into `params`. VersionError unless names and shapes match one to one.
template <typename S>
void restore(ParameterSet<S>& params, const std::vector<NamedTensor<S>>& values);

}  // namespace idna

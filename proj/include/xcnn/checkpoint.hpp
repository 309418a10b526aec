#pragma once

#include "xcnn/network.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace xcnn {

/// Little-endian container:
///
///   "XCNNCKPT" u32 version  str name  u32 classes  str config  u32 scalar_bytes  u32 records
///   per record: str name  u32 rank  u64 dims[rank]  values[prod(dims)]
///
/// where `str` is a u32 byte length followed by the bytes and `config` is the
/// architecture in the declarative text format. Records hold every parameter,
/// the batch-norm running statistics (`<layer>.running_mean|running_var`) and
/// any caller extras such as `input_norm.mean`.
template <typename Scalar>
struct Checkpoint {
  ArchitectureSpec spec;
  int scalar_bytes = sizeof(Scalar);
  std::vector<std::pair<std::string, Tensor<Scalar>>> records;

  const Tensor<Scalar>* find(const std::string& name) const;
  const Tensor<Scalar>& at(const std::string& name) const;
};

inline constexpr std::uint32_t checkpoint_version = 1;

template <typename Scalar>
Checkpoint<Scalar> make_checkpoint(const NetworkGraph<Scalar>& graph,
                                   const std::map<std::string, Tensor<Scalar>>& extras = {});

template <typename Scalar>
void save_checkpoint(const std::string& path, const Checkpoint<Scalar>& checkpoint);

template <typename Scalar>
void save_checkpoint(const std::string& path, const NetworkGraph<Scalar>& graph,
                     const std::map<std::string, Tensor<Scalar>>& extras = {});

/// Reads a checkpoint of either precision, converting values to Scalar.
template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path);

/// Copies parameters and batch-norm statistics into `graph`. Every tensor the
/// graph owns must be present with a matching shape.
template <typename Scalar>
void apply_checkpoint(const Checkpoint<Scalar>& checkpoint, NetworkGraph<Scalar>& graph);

/// Rebuilds the network described by the checkpoint and loads its weights.
template <typename Scalar>
NetworkGraph<Scalar> restore_network(const Checkpoint<Scalar>& checkpoint);

}  // namespace xcnn

#pragma once

#include "xcnn/architecture.hpp"
#include "xcnn/layers.hpp"
#include "xcnn/random.hpp"
#include "xcnn/tape.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace xcnn {

enum class ParamRole { weight, bias, gamma, beta };

template <typename Scalar>
struct Parameter {
  std::string name;
  ParamRole role;
  Var<Scalar> var;
};

/// Per-layer bookkeeping exposed for introspection and the CLI.
struct LayerInfo {
  std::string id;
  LayerKind kind;
  Shape output;  // per-sample shape, [C,H,W] or [D]
  Index params = 0;
};

/// Materialized parameters plus the executable forward program of an
/// ArchitectureSpec. Layer ids look like `Y.b0.3.conv`, `x0.Y-U.0.conv`,
/// `x0.U.concat` and `tail.1.dense`.
template <typename Scalar>
class NetworkGraph {
 public:
  /// Shape-checks the spec and Xavier-initializes every weight from `rng`.
  static NetworkGraph build(const ArchitectureSpec& spec, Rng& rng);

  const ArchitectureSpec& spec() const { return spec_; }
  const std::vector<LayerInfo>& layers() const { return layers_; }
  const LayerInfo& layer(const std::string& id) const;

  std::vector<Parameter<Scalar>>& parameters() { return params_; }
  const std::vector<Parameter<Scalar>>& parameters() const { return params_; }
  Parameter<Scalar>& parameter(const std::string& name);
  const Parameter<Scalar>& parameter(const std::string& name) const;

  /// Every trainable tensor, in declaration order.
  std::vector<Var<Scalar>> trainable() const;
  /// Convolution and dense weights only (the L2 set).
  std::vector<Var<Scalar>> weights() const;

  std::map<std::string, BatchNormState<Scalar>>& batchnorm_states() { return bn_states_; }
  const std::map<std::string, BatchNormState<Scalar>>& batchnorm_states() const { return bn_states_; }

  /// Logits [N, num_classes]. The batch must be [N, input_channels, size, size].
  Var<Scalar> forward(Tape<Scalar>& tape, const Var<Scalar>& batch, Mode mode, Rng& rng);

  /// Output of layer `id`; evaluation stops as soon as it is produced.
  Var<Scalar> forward_to(Tape<Scalar>& tape, const Var<Scalar>& batch, const std::string& id, Mode mode, Rng& rng);

  /// Runs cross segment `index` on per-superlayer feature maps (keyed by
  /// superlayer name). Each destination gets its self edge output followed by
  /// its incoming cross edges in superlayer order, channel-concatenated.
  std::map<std::string, Var<Scalar>> cross_segment(Tape<Scalar>& tape, std::size_t index,
                                                   const std::map<std::string, Var<Scalar>>& features, Mode mode,
                                                   Rng& rng);

  /// Infer-mode logits without recording.
  Tensor<Scalar> predict_logits(const Tensor<Scalar>& batch);

  void zero_grad();

 private:
  struct Unit {
    LayerSpec spec;
    std::string id;
    int weight = -1, bias = -1;  // indices into params_
    int gamma = -1, beta = -1;
  };
  struct Edge {
    std::size_t from = 0, to = 0;
    std::vector<Unit> units;
  };
  struct Segment {
    Index after_pool = 0;
    std::vector<Edge> self_edges;  // one per superlayer, indexed by superlayer
    std::vector<Edge> cross_edges;
  };

  // Stops and returns the matching layer's output when `stop_at` is set.
  struct Probe {
    const std::string* stop_at = nullptr;
    std::optional<Var<Scalar>> hit;
    bool done() const { return hit.has_value(); }
  };

  Var<Scalar> run(Tape<Scalar>& tape, const Var<Scalar>& batch, Mode mode, Rng& rng, Probe& probe);
  Var<Scalar> run_units(Tape<Scalar>& tape, const std::vector<Unit>& units, Var<Scalar> x, Mode mode, Rng& rng,
                        Probe& probe);
  std::vector<Var<Scalar>> run_segment(Tape<Scalar>& tape, const Segment& seg, std::size_t index,
                                       const std::vector<Var<Scalar>>& in, Mode mode, Rng& rng, Probe& probe);
  Var<Scalar> apply(Tape<Scalar>& tape, const Unit& unit, const Var<Scalar>& x, Mode mode, Rng& rng);

  ArchitectureSpec spec_;
  std::vector<Parameter<Scalar>> params_;
  std::map<std::string, BatchNormState<Scalar>> bn_states_;
  std::vector<LayerInfo> layers_;
  std::vector<std::vector<std::vector<Unit>>> streams_;  // [superlayer][block][layer]
  std::vector<Segment> segments_;
  std::vector<Unit> tail_;
};

/// build() on a named preset.
template <typename Scalar>
NetworkGraph<Scalar> build_preset(std::string_view name, Index num_classes, Rng& rng,
                                  const PresetOptions& options = {});

/// Exact count of trainable scalars.
template <typename Scalar>
Index count_params(const NetworkGraph<Scalar>& graph);

}  // namespace xcnn

#include "xcnn/network.hpp"

#include "xcnn/ops.hpp"
#include "xcnn/optim.hpp"

#include <numeric>
#include <stdexcept>

namespace xcnn {

namespace {

std::string segment_prefix(std::size_t k) { return "x" + std::to_string(k); }

Shape concat_shapes(const std::vector<Shape>& shapes, const std::string& where) {
  Shape out = shapes.front();
  out[0] = 0;
  for (const auto& s : shapes) {
    if (s.size() != out.size() || !std::equal(s.begin() + 1, s.end(), out.begin() + 1))
      throw std::invalid_argument(where + ": cannot concatenate " + shape_string(s) + " with " +
                                  shape_string(shapes.front()));
    out[0] += s[0];
  }
  return out;
}

}  // namespace

template <typename Scalar>
NetworkGraph<Scalar> NetworkGraph<Scalar>::build(const ArchitectureSpec& spec, Rng& rng) {
  validate(spec);
  NetworkGraph g;
  g.spec_ = spec;

  auto add_param = [&](const std::string& name, ParamRole role, Tensor<Scalar> value) {
    g.params_.push_back({name, role, Var<Scalar>::leaf(std::move(value), true)});
    return static_cast<int>(g.params_.size() - 1);
  };

  // Materializes one layer on a per-sample input shape and returns its output shape.
  auto make_unit = [&](const LayerSpec& l, const std::string& id, const Shape& in) {
    Unit u{l, id};
    Shape out = in;
    auto fail = [&](const std::string& msg) {
      throw std::invalid_argument("layer " + id + " on input " + shape_string(in) + ": " + msg);
    };
    switch (l.kind) {
      case LayerKind::conv: {
        if (in.size() != 3) fail("convolution needs a [C,H,W] input");
        const Index pad = l.effective_padding();
        const Index h = in[1] + 2 * pad - l.kernel + 1, w = in[2] + 2 * pad - l.kernel + 1;
        if (h < 1 || w < 1) fail("kernel larger than the padded input");
        u.weight = add_param(id + ".weight", ParamRole::weight, xavier_init<Scalar>({l.units, in[0], l.kernel, l.kernel}, rng));
        u.bias = add_param(id + ".bias", ParamRole::bias, Tensor<Scalar>({l.units}));
        out = {l.units, h, w};
        break;
      }
      case LayerKind::maxout:
        if (in[0] % l.pieces != 0) fail("channels not divisible by the maxout piece count");
        out[0] = in[0] / l.pieces;
        break;
      case LayerKind::maxpool:
        if (in.size() != 3 || in[1] < l.window || (in[1] - l.window) % l.stride != 0 ||
            (in[2] - l.window) % l.stride != 0)
          fail("spatial size not divisible by the pooling stride");
        out = {in[0], (in[1] - l.window) / l.stride + 1, (in[2] - l.window) / l.stride + 1};
        break;
      case LayerKind::global_maxpool:
        if (in.size() != 3 || in[1] != in[2]) fail("global pooling needs a square [C,H,W] input");
        out = {in[0], 1, 1};
        break;
      case LayerKind::batchnorm:
        u.gamma = add_param(id + ".gamma", ParamRole::gamma, Tensor<Scalar>::constant({in[0]}, Scalar(1)));
        u.beta = add_param(id + ".beta", ParamRole::beta, Tensor<Scalar>({in[0]}));
        g.bn_states_.emplace(id, BatchNormState<Scalar>::fresh(in[0]));
        break;
      case LayerKind::flatten:
        out = {shape_size(in)};
        break;
      case LayerKind::dense: {
        if (in.size() != 1) fail("dense needs a flattened input");
        const Index units = l.units == 0 ? spec.num_classes : l.units;
        u.weight = add_param(id + ".weight", ParamRole::weight, xavier_init<Scalar>({in[0], units}, rng));
        u.bias = add_param(id + ".bias", ParamRole::bias, Tensor<Scalar>({units}));
        out = {units};
        break;
      }
      default:
        break;
    }
    Index count = 0;
    for (int idx : {u.weight, u.bias, u.gamma, u.beta})
      if (idx >= 0) count += g.params_[static_cast<std::size_t>(idx)].var.value().size();
    g.layers_.push_back({id, l.kind, out, count});
    return std::make_pair(std::move(u), out);
  };

  auto make_stack = [&](const LayerStack& stack, const std::string& prefix, Shape shape) {
    std::vector<Unit> units;
    for (std::size_t j = 0; j < stack.size(); ++j) {
      auto [u, out] = make_unit(stack[j], prefix + "." + std::to_string(j) + "." + std::string(kind_name(stack[j].kind)), shape);
      units.push_back(std::move(u));
      shape = out;
    }
    return std::make_pair(std::move(units), shape);
  };

  const std::size_t streams = spec.superlayers.size();
  std::vector<Shape> shapes;
  std::map<std::string, std::size_t> index_of;
  for (std::size_t s = 0; s < streams; ++s) {
    index_of[spec.superlayers[s].name] = s;
    shapes.push_back({static_cast<Index>(spec.superlayers[s].input_channels.size()), spec.input_size, spec.input_size});
  }
  g.streams_.resize(streams);

  const std::size_t blocks = spec.superlayers.front().blocks.size();
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t s = 0; s < streams; ++s) {
      const auto& sl = spec.superlayers[s];
      auto [units, out] = make_stack(sl.blocks[b], sl.name + ".b" + std::to_string(b), shapes[s]);
      g.streams_[s].push_back(std::move(units));
      shapes[s] = out;
    }
    for (std::size_t k = 0; k < spec.cross.size(); ++k) {
      const auto& cs = spec.cross[k];
      if (cs.after_pool != static_cast<Index>(b)) continue;
      Segment seg;
      seg.after_pool = cs.after_pool;
      seg.self_edges.resize(streams);
      std::vector<std::vector<Shape>> incoming(streams);
      for (const auto& e : cs.self_edges) {
        const std::size_t s = index_of.at(e.from);
        auto [units, out] = make_stack(e.layers, segment_prefix(k) + "." + e.from + "-" + e.to, shapes[s]);
        seg.self_edges[s] = {s, s, std::move(units)};
        incoming[s].insert(incoming[s].begin(), out);
      }
      // Cross edges grouped by destination, sources in superlayer order.
      for (std::size_t d = 0; d < streams; ++d)
        for (std::size_t s = 0; s < streams; ++s)
          for (const auto& e : cs.cross_edges) {
            if (index_of.at(e.from) != s || index_of.at(e.to) != d) continue;
            auto [units, out] = make_stack(e.layers, segment_prefix(k) + "." + e.from + "-" + e.to, shapes[s]);
            seg.cross_edges.push_back({s, d, std::move(units)});
            incoming[d].push_back(out);
          }
      for (std::size_t d = 0; d < streams; ++d) {
        const std::string id = segment_prefix(k) + "." + spec.superlayers[d].name + ".concat";
        shapes[d] = concat_shapes(incoming[d], id);
        g.layers_.push_back({id, LayerKind::concat, shapes[d], 0});
      }
      g.segments_.push_back(std::move(seg));
    }
  }

  Shape tail_in = shapes.front();
  if (streams > 1) {
    tail_in = concat_shapes(shapes, "tail.concat");
    g.layers_.push_back({"tail.concat", LayerKind::concat, tail_in, 0});
  }
  auto [tail, out] = make_stack(spec.tail, "tail", tail_in);
  if (out != Shape{spec.num_classes})
    throw std::invalid_argument("architecture '" + spec.name + "': tail produces " + shape_string(out) +
                                ", expected [" + std::to_string(spec.num_classes) + "] class scores");
  g.tail_ = std::move(tail);
  return g;
}

template <typename Scalar>
const LayerInfo& NetworkGraph<Scalar>::layer(const std::string& id) const {
  for (const auto& l : layers_)
    if (l.id == id) return l;
  throw std::invalid_argument("unknown layer id '" + id + "'");
}

template <typename Scalar>
Parameter<Scalar>& NetworkGraph<Scalar>::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw std::invalid_argument("unknown parameter '" + name + "'");
}

template <typename Scalar>
const Parameter<Scalar>& NetworkGraph<Scalar>::parameter(const std::string& name) const {
  return const_cast<NetworkGraph*>(this)->parameter(name);
}

template <typename Scalar>
std::vector<Var<Scalar>> NetworkGraph<Scalar>::trainable() const {
  std::vector<Var<Scalar>> out;
  for (const auto& p : params_) out.push_back(p.var);
  return out;
}

template <typename Scalar>
std::vector<Var<Scalar>> NetworkGraph<Scalar>::weights() const {
  std::vector<Var<Scalar>> out;
  for (const auto& p : params_)
    if (p.role == ParamRole::weight) out.push_back(p.var);
  return out;
}

template <typename Scalar>
void NetworkGraph<Scalar>::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

template <typename Scalar>
Var<Scalar> NetworkGraph<Scalar>::apply(Tape<Scalar>& tape, const Unit& u, const Var<Scalar>& x, Mode mode,
                                        Rng& rng) {
  auto param = [&](int i) { return params_[static_cast<std::size_t>(i)].var; };
  const LayerSpec& l = u.spec;
  switch (l.kind) {
    case LayerKind::conv: return conv2d(tape, x, param(u.weight), param(u.bias), 1, l.effective_padding());
    case LayerKind::relu: return relu(tape, x);
    case LayerKind::maxout: return maxout(tape, x, l.pieces);
    case LayerKind::maxpool: return maxpool2d(tape, x, l.window, l.stride);
    case LayerKind::global_maxpool: return maxpool2d(tape, x, x.shape()[2], x.shape()[2]);
    case LayerKind::batchnorm: return batchnorm(tape, x, param(u.gamma), param(u.beta), mode, bn_states_.at(u.id));
    case LayerKind::dropout: return dropout(tape, x, l.rate, mode, rng);
    case LayerKind::flatten: return flatten(tape, x);
    case LayerKind::dense: return dense(tape, x, param(u.weight), param(u.bias));
    case LayerKind::identity:
    case LayerKind::softmax:  // fused into the loss; forward yields logits
    case LayerKind::concat: return x;
  }
  return x;
}

template <typename Scalar>
Var<Scalar> NetworkGraph<Scalar>::run_units(Tape<Scalar>& tape, const std::vector<Unit>& units, Var<Scalar> x,
                                            Mode mode, Rng& rng, Probe& probe) {
  for (const auto& u : units) {
    x = apply(tape, u, x, mode, rng);
    if (probe.stop_at && u.id == *probe.stop_at) {
      probe.hit = x;
      return x;
    }
  }
  return x;
}

template <typename Scalar>
std::vector<Var<Scalar>> NetworkGraph<Scalar>::run_segment(Tape<Scalar>& tape, const Segment& seg,
                                                           std::size_t index, const std::vector<Var<Scalar>>& in,
                                                           Mode mode, Rng& rng, Probe& probe) {
  const std::size_t streams = in.size();
  std::vector<std::vector<Var<Scalar>>> parts(streams);
  for (std::size_t d = 0; d < streams; ++d) {
    parts[d].push_back(run_units(tape, seg.self_edges[d].units, in[d], mode, rng, probe));
    if (probe.done()) return {};
  }
  for (const auto& e : seg.cross_edges) {
    parts[e.to].push_back(run_units(tape, e.units, in[e.from], mode, rng, probe));
    if (probe.done()) return {};
  }
  std::vector<Var<Scalar>> out;
  for (std::size_t d = 0; d < streams; ++d) {
    out.push_back(concat(tape, parts[d]));
    if (probe.stop_at && *probe.stop_at == segment_prefix(index) + "." + spec_.superlayers[d].name + ".concat") {
      probe.hit = out.back();
      return {};
    }
  }
  return out;
}

template <typename Scalar>
Var<Scalar> NetworkGraph<Scalar>::run(Tape<Scalar>& tape, const Var<Scalar>& batch, Mode mode, Rng& rng,
                                      Probe& probe) {
  const Shape& bs = batch.shape();
  const Shape expected{spec_.input_channels, spec_.input_size, spec_.input_size};
  if (bs.size() != 4 || !std::equal(bs.begin() + 1, bs.end(), expected.begin()))
    throw std::invalid_argument("forward: batch " + shape_string(bs) + " does not match [N," +
                                std::to_string(expected[0]) + "," + std::to_string(expected[1]) + "," +
                                std::to_string(expected[2]) + "]");

  const std::size_t streams = spec_.superlayers.size();
  std::vector<Var<Scalar>> cur;
  for (const auto& sl : spec_.superlayers) {
    const Index count = static_cast<Index>(sl.input_channels.size());
    cur.push_back(count == spec_.input_channels ? batch
                                                : slice_channels(tape, batch, sl.input_channels.front(), count));
  }

  std::size_t next_segment = 0;
  for (std::size_t b = 0; b < streams_.front().size(); ++b) {
    for (std::size_t s = 0; s < streams; ++s) {
      cur[s] = run_units(tape, streams_[s][b], cur[s], mode, rng, probe);
      if (probe.done()) return *probe.hit;
    }
    if (next_segment < segments_.size() && segments_[next_segment].after_pool == static_cast<Index>(b)) {
      cur = run_segment(tape, segments_[next_segment], next_segment, cur, mode, rng, probe);
      if (probe.done()) return *probe.hit;
      ++next_segment;
    }
  }

  Var<Scalar> x = streams > 1 ? concat(tape, cur) : cur.front();
  if (probe.stop_at && *probe.stop_at == "tail.concat") return x;
  x = run_units(tape, tail_, x, mode, rng, probe);
  return probe.done() ? *probe.hit : x;
}

template <typename Scalar>
Var<Scalar> NetworkGraph<Scalar>::forward(Tape<Scalar>& tape, const Var<Scalar>& batch, Mode mode, Rng& rng) {
  Probe probe;
  return run(tape, batch, mode, rng, probe);
}

template <typename Scalar>
Var<Scalar> NetworkGraph<Scalar>::forward_to(Tape<Scalar>& tape, const Var<Scalar>& batch, const std::string& id,
                                             Mode mode, Rng& rng) {
  if (layer(id).kind == LayerKind::softmax)
    throw std::invalid_argument("forward_to: softmax is fused into the loss; use predict_logits");
  Probe probe{&id, std::nullopt};
  return run(tape, batch, mode, rng, probe);
}

template <typename Scalar>
std::map<std::string, Var<Scalar>> NetworkGraph<Scalar>::cross_segment(
    Tape<Scalar>& tape, std::size_t index, const std::map<std::string, Var<Scalar>>& features, Mode mode, Rng& rng) {
  if (index >= segments_.size()) throw std::invalid_argument("cross_segment: no segment " + std::to_string(index));
  std::vector<Var<Scalar>> in;
  for (const auto& sl : spec_.superlayers) {
    auto it = features.find(sl.name);
    if (it == features.end()) throw std::invalid_argument("cross_segment: missing features for " + sl.name);
    in.push_back(it->second);
  }
  Probe probe;
  auto out = run_segment(tape, segments_[index], index, in, mode, rng, probe);
  std::map<std::string, Var<Scalar>> result;
  for (std::size_t d = 0; d < out.size(); ++d) result.emplace(spec_.superlayers[d].name, out[d]);
  return result;
}

template <typename Scalar>
Tensor<Scalar> NetworkGraph<Scalar>::predict_logits(const Tensor<Scalar>& batch) {
  Tape<Scalar> tape(false);
  Rng unused(0);
  return forward(tape, Var<Scalar>::leaf(batch), Mode::infer, unused).value();
}

template <typename Scalar>
NetworkGraph<Scalar> build_preset(std::string_view name, Index num_classes, Rng& rng, const PresetOptions& options) {
  PresetOptions o = options;
  o.num_classes = num_classes;
  return NetworkGraph<Scalar>::build(preset_spec(name, o), rng);
}

template <typename Scalar>
Index count_params(const NetworkGraph<Scalar>& graph) {
  Index n = 0;
  for (const auto& p : graph.parameters()) n += p.var.value().size();
  return n;
}

template class NetworkGraph<float>;
template class NetworkGraph<double>;
template NetworkGraph<float> build_preset(std::string_view, Index, Rng&, const PresetOptions&);
template NetworkGraph<double> build_preset(std::string_view, Index, Rng&, const PresetOptions&);
template Index count_params(const NetworkGraph<float>&);
template Index count_params(const NetworkGraph<double>&);

}  // namespace xcnn

#include "xcnn/architecture.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace xcnn {

std::string_view kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxout: return "maxout";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::global_maxpool: return "gmaxpool";
    case LayerKind::batchnorm: return "bn";
    case LayerKind::dropout: return "dropout";
    case LayerKind::dense: return "dense";
    case LayerKind::flatten: return "flatten";
    case LayerKind::concat: return "concat";
    case LayerKind::identity: return "identity";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

LayerSpec LayerSpec::conv(Index kernel, Index filters, Index padding) {
  LayerSpec l{LayerKind::conv};
  l.kernel = kernel;
  l.units = filters;
  l.padding = padding;
  return l;
}

LayerSpec LayerSpec::maxout(Index pieces) {
  LayerSpec l{LayerKind::maxout};
  l.pieces = pieces;
  return l;
}

LayerSpec LayerSpec::maxpool(Index window, Index stride) {
  LayerSpec l{LayerKind::maxpool};
  l.window = window;
  l.stride = stride;
  return l;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec l{LayerKind::dropout};
  l.rate = rate;
  return l;
}

LayerSpec LayerSpec::dense(Index units) {
  LayerSpec l{LayerKind::dense};
  l.units = units;
  return l;
}

namespace {

void validate_layer(const LayerSpec& l, const std::string& where) {
  auto fail = [&](const std::string& msg) { throw std::invalid_argument(where + ": " + msg); };
  switch (l.kind) {
    case LayerKind::conv:
      if (l.kernel < 1 || l.units < 1) fail("conv needs a positive kernel size and filter count");
      break;
    case LayerKind::maxout:
      if (l.pieces != 2 && l.pieces != 5) fail("maxout pieces must be 2 or 5, got " + std::to_string(l.pieces));
      break;
    case LayerKind::maxpool:
      if (l.window < 1 || l.stride < 1) fail("maxpool needs a positive window and stride");
      break;
    case LayerKind::dropout:
      if (!(l.rate >= 0.0 && l.rate < 1.0)) fail("dropout rate must be in [0, 1)");
      break;
    case LayerKind::dense:
      if (l.units < 0) fail("dense width must be positive");
      break;
    case LayerKind::concat:
      fail("concat is implicit at merge points and cannot appear in a layer stack");
      break;
    default:
      break;
  }
}

Index pool_count(const SuperlayerSpec& s) {
  Index n = 0;
  for (const auto& block : s.blocks)
    for (const auto& l : block) n += (l.kind == LayerKind::maxpool || l.kind == LayerKind::global_maxpool);
  return n;
}

}  // namespace

void validate(const ArchitectureSpec& spec) {
  auto fail = [&](const std::string& msg) { throw std::invalid_argument("architecture '" + spec.name + "': " + msg); };
  if (spec.num_classes < 2) fail("num_classes must be at least 2");
  if (spec.input_size < 1 || spec.input_channels < 1) fail("input size and channel count must be positive");
  if (spec.superlayers.empty()) fail("no superlayers");

  std::set<std::string> names;
  const std::size_t blocks = spec.superlayers.front().blocks.size();
  const Index pools = pool_count(spec.superlayers.front());
  for (const auto& s : spec.superlayers) {
    if (s.name.empty() || !names.insert(s.name).second) fail("superlayer names must be unique and non-empty");
    if (s.input_channels.empty()) fail("superlayer " + s.name + " has no input channels");
    for (std::size_t i = 0; i < s.input_channels.size(); ++i) {
      const Index c = s.input_channels[i];
      if (c < 0 || c >= spec.input_channels) fail("superlayer " + s.name + " reads channel " + std::to_string(c));
      if (i > 0 && c != s.input_channels[i - 1] + 1)
        fail("superlayer " + s.name + " input channels must be contiguous");
    }
    if (s.blocks.size() != blocks) fail("all superlayers need the same number of blocks");
    if (pool_count(s) != pools) fail("all superlayers need the same number of pooling points");
    for (std::size_t b = 0; b < s.blocks.size(); ++b)
      for (const auto& l : s.blocks[b]) validate_layer(l, s.name + " block " + std::to_string(b));
  }

  std::set<Index> seen_segments;
  for (const auto& seg : spec.cross) {
    const std::string where = "cross segment after pool " + std::to_string(seg.after_pool);
    if (seg.after_pool < 0 || seg.after_pool + 1 >= static_cast<Index>(blocks))
      fail(where + " must sit between two blocks");
    if (!seen_segments.insert(seg.after_pool).second) fail("duplicate " + where);
    std::set<std::string> self;
    for (const auto& e : seg.self_edges) {
      if (e.from != e.to) fail(where + ": self edge " + e.from + "->" + e.to + " crosses superlayers");
      if (!names.count(e.from)) fail(where + ": unknown superlayer " + e.from);
      if (!self.insert(e.from).second) fail(where + ": duplicate self edge for " + e.from);
      for (const auto& l : e.layers) validate_layer(l, where);
    }
    if (self.size() != names.size()) fail(where + ": every superlayer needs a self edge");
    std::set<std::pair<std::string, std::string>> cross;
    for (const auto& e : seg.cross_edges) {
      if (e.from == e.to) fail(where + ": cross edge must join two different superlayers");
      if (!names.count(e.from) || !names.count(e.to)) fail(where + ": unknown superlayer in " + e.from + "->" + e.to);
      if (!cross.insert({e.from, e.to}).second) fail(where + ": duplicate edge " + e.from + "->" + e.to);
      for (const auto& l : e.layers) validate_layer(l, where);
    }
  }
  if (spec.tail.empty()) fail("tail is empty");
  for (const auto& l : spec.tail) validate_layer(l, "tail");
}

// ---------------------------------------------------------------------------
// Presets

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"kerasnet", "x-kerasnet", "fitnet4", "x-fitnet4"};
  return names;
}

bool is_preset(std::string_view name) {
  const auto& n = preset_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

bool is_cross_modal(std::string_view name) { return name.starts_with("x-"); }

std::string paired_preset(std::string_view name) {
  if (!is_preset(name)) throw std::invalid_argument("unknown preset '" + std::string(name) + "'");
  return is_cross_modal(name) ? std::string(name.substr(2)) : "x-" + std::string(name);
}

namespace {

LayerStack keras_block(Index filters) {
  return {LayerSpec::conv(3, filters), LayerSpec::relu(), LayerSpec::conv(3, filters), LayerSpec::relu(),
          LayerSpec::maxpool(2, 2), LayerSpec::dropout(0.25)};
}

LayerStack keras_tail() {
  return {LayerSpec::flatten(), LayerSpec::dense(512), LayerSpec::relu(), LayerSpec::dropout(0.5),
          LayerSpec::classifier(), LayerSpec::softmax()};
}

// One hidden maxout unit: conv producing 2*maps pieces, 2-way maxout, batch norm.
void append_maxout_conv(LayerStack& stack, Index kernel, Index maps, BatchNormPlacement bn) {
  stack.push_back(LayerSpec::conv(kernel, 2 * maps));
  if (bn == BatchNormPlacement::before_activation) {
    stack.push_back(LayerSpec::batchnorm());
    stack.push_back(LayerSpec::maxout(2));
  } else {
    stack.push_back(LayerSpec::maxout(2));
    stack.push_back(LayerSpec::batchnorm());
  }
}

LayerStack fitnet_cross_edge(Index maps, const PresetOptions& o) {
  LayerStack stack;
  if (o.fitnet_cross == CrossActivation::maxout) {
    append_maxout_conv(stack, 1, maps, o.batchnorm);
  } else {
    stack.push_back(LayerSpec::conv(1, maps));
    stack.push_back(LayerSpec::batchnorm());
  }
  return stack;
}

// Stage widths per block: {maps, repeats} runs.
using Stage = std::vector<std::pair<Index, Index>>;

std::vector<LayerStack> fitnet_blocks(const std::vector<Stage>& stages, const PresetOptions& o) {
  std::vector<LayerStack> blocks;
  for (std::size_t b = 0; b < stages.size(); ++b) {
    LayerStack stack;
    if (b == 0) stack.push_back(LayerSpec::dropout(0.2));
    for (auto [maps, repeats] : stages[b])
      for (Index r = 0; r < repeats; ++r) append_maxout_conv(stack, 3, maps, o.batchnorm);
    stack.push_back(b + 1 == stages.size() ? LayerSpec::global_maxpool() : LayerSpec::maxpool(2, 2));
    stack.push_back(LayerSpec::dropout(0.2));
    blocks.push_back(std::move(stack));
  }
  return blocks;
}

LayerStack fitnet_tail(BatchNormPlacement bn) {
  LayerStack t{LayerSpec::flatten(), LayerSpec::dense(5 * 500)};
  if (bn == BatchNormPlacement::before_activation) {
    t.push_back(LayerSpec::batchnorm());
    t.push_back(LayerSpec::maxout(5));
  } else {
    t.push_back(LayerSpec::maxout(5));
    t.push_back(LayerSpec::batchnorm());
  }
  t.push_back(LayerSpec::dropout(0.2));
  t.push_back(LayerSpec::classifier());
  t.push_back(LayerSpec::softmax());
  return t;
}

CrossSegmentSpec yuv_segment(Index after_pool, const LayerStack& self_y, const LayerStack& self_uv,
                             const LayerStack& y_to_uv, const LayerStack& uv_to_y) {
  CrossSegmentSpec seg;
  seg.after_pool = after_pool;
  seg.self_edges = {{"Y", "Y", self_y}, {"U", "U", self_uv}, {"V", "V", self_uv}};
  seg.cross_edges = {{"Y", "U", y_to_uv}, {"Y", "V", y_to_uv}, {"U", "Y", uv_to_y}, {"V", "Y", uv_to_y}};
  return seg;
}

}  // namespace

ArchitectureSpec preset_spec(std::string_view name, const PresetOptions& o) {
  ArchitectureSpec a;
  a.name = std::string(name);
  a.num_classes = o.num_classes;
  a.input_size = o.input_size;
  a.input_channels = 3;

  if (name == "kerasnet") {
    a.superlayers = {{"YUV", {0, 1, 2}, {keras_block(64), keras_block(128)}}};
    a.tail = keras_tail();
  } else if (name == "x-kerasnet") {
    a.superlayers = {{"Y", {0}, {keras_block(32), keras_block(64)}},
                     {"U", {1}, {keras_block(16), keras_block(32)}},
                     {"V", {2}, {keras_block(16), keras_block(32)}}};
    const LayerStack y_to_uv{LayerSpec::conv(1, 32), LayerSpec::relu()};
    const LayerStack uv_to_y{LayerSpec::conv(1, 16), LayerSpec::relu()};
    a.cross = {yuv_segment(0, {}, {}, y_to_uv, uv_to_y)};
    a.tail = keras_tail();
  } else if (name == "fitnet4") {
    a.superlayers = {{"YUV", {0, 1, 2}, fitnet_blocks({{{32, 3}, {48, 2}}, {{80, 6}}, {{128, 6}}}, o)}};
    a.tail = fitnet_tail(o.batchnorm);
  } else if (name == "x-fitnet4") {
    a.superlayers = {{"Y", {0}, fitnet_blocks({{{24, 3}, {36, 2}}, {{60, 6}}, {{96, 6}}}, o)},
                     {"U", {1}, fitnet_blocks({{{12, 3}, {18, 2}}, {{30, 6}}, {{48, 6}}}, o)},
                     {"V", {2}, fitnet_blocks({{{12, 3}, {18, 2}}, {{30, 6}}, {{48, 6}}}, o)}};
    a.cross = {yuv_segment(0, fitnet_cross_edge(36, o), fitnet_cross_edge(18, o), fitnet_cross_edge(12, o),
                           fitnet_cross_edge(12, o)),
               yuv_segment(1, fitnet_cross_edge(60, o), fitnet_cross_edge(30, o), fitnet_cross_edge(18, o),
                           fitnet_cross_edge(18, o))};
    a.tail = fitnet_tail(o.batchnorm);
  } else {
    throw std::invalid_argument("unknown preset '" + std::string(name) +
                                "' (expected kerasnet, x-kerasnet, fitnet4 or x-fitnet4)");
  }
  validate(a);
  return a;
}

// ---------------------------------------------------------------------------
// Config text

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(std::string(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string> words(std::string_view s) {
  std::istringstream is{std::string(s)};
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

Index to_index(const std::string& s, std::string_view token) {
  Index v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::invalid_argument("bad integer '" + s + "' in layer token '" + std::string(token) + "'");
  return v;
}

double to_double(const std::string& s, std::string_view token) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty())
    throw std::invalid_argument("bad number '" + s + "' in layer token '" + std::string(token) + "'");
  return v;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string format_stack(const LayerStack& stack) {
  if (stack.empty()) return "identity";
  std::string out;
  for (const auto& l : stack) {
    if (!out.empty()) out += ' ';
    out += format_layer(l);
  }
  return out;
}

LayerStack parse_stack(std::string_view text) {
  LayerStack out;
  for (const auto& w : words(text)) {
    LayerSpec l = parse_layer(w);
    if (l.kind != LayerKind::identity || words(text).size() > 1) out.push_back(l);
  }
  return out;
}

}  // namespace

std::string format_layer(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::conv:
      return "conv:" + std::to_string(l.kernel) + ":" + std::to_string(l.units) +
             (l.padding >= 0 ? ":" + std::to_string(l.padding) : "");
    case LayerKind::maxout: return "maxout:" + std::to_string(l.pieces);
    case LayerKind::maxpool:
      return "maxpool:" + std::to_string(l.window) + (l.stride != l.window ? ":" + std::to_string(l.stride) : "");
    case LayerKind::dropout: return "dropout:" + format_double(l.rate);
    case LayerKind::dense: return "dense:" + (l.units == 0 ? std::string("classes") : std::to_string(l.units));
    default: return std::string(kind_name(l.kind));
  }
}

LayerSpec parse_layer(std::string_view token) {
  const auto parts = split(token, ':');
  const std::string& head = parts[0];
  auto want = [&](std::size_t lo, std::size_t hi) {
    if (parts.size() < lo + 1 || parts.size() > hi + 1)
      throw std::invalid_argument("layer token '" + std::string(token) + "' has the wrong number of arguments");
  };
  if (head == "conv") {
    want(2, 3);
    return LayerSpec::conv(to_index(parts[1], token), to_index(parts[2], token),
                           parts.size() == 4 ? to_index(parts[3], token) : -1);
  }
  if (head == "maxout") {
    want(1, 1);
    return LayerSpec::maxout(to_index(parts[1], token));
  }
  if (head == "maxpool") {
    want(1, 2);
    const Index w = to_index(parts[1], token);
    return LayerSpec::maxpool(w, parts.size() == 3 ? to_index(parts[2], token) : w);
  }
  if (head == "dropout") {
    want(1, 1);
    return LayerSpec::dropout(to_double(parts[1], token));
  }
  if (head == "dense") {
    want(1, 1);
    return LayerSpec::dense(parts[1] == "classes" ? 0 : to_index(parts[1], token));
  }
  want(0, 0);
  for (LayerKind k : {LayerKind::relu, LayerKind::global_maxpool, LayerKind::batchnorm, LayerKind::flatten,
                      LayerKind::identity, LayerKind::softmax, LayerKind::concat})
    if (head == kind_name(k)) return LayerSpec{k};
  throw std::invalid_argument("unknown layer token '" + std::string(token) + "'");
}

std::string format_config(const ArchitectureSpec& spec) {
  std::ostringstream os;
  os << "name = " << spec.name << "\n";
  os << "classes = " << spec.num_classes << "\n";
  os << "input_size = " << spec.input_size << "\n";
  os << "input_channels = " << spec.input_channels << "\n";
  for (const auto& s : spec.superlayers) {
    os << "\n[superlayer " << s.name << "]\n";
    os << "channels = ";
    for (std::size_t i = 0; i < s.input_channels.size(); ++i) os << (i ? "," : "") << s.input_channels[i];
    os << "\n";
    for (const auto& b : s.blocks) os << "block = " << format_stack(b) << "\n";
  }
  for (const auto& seg : spec.cross) {
    os << "\n[cross " << seg.after_pool << "]\n";
    for (const auto& e : seg.self_edges) os << e.from << " -> " << e.to << " = " << format_stack(e.layers) << "\n";
    for (const auto& e : seg.cross_edges) os << e.from << " -> " << e.to << " = " << format_stack(e.layers) << "\n";
  }
  os << "\n[tail]\nlayers = " << format_stack(spec.tail) << "\n";
  return os.str();
}

ArchitectureSpec parse_config(std::string_view text) {
  ArchitectureSpec spec;
  enum class Section { global, superlayer, cross, tail } section = Section::global;
  SuperlayerSpec* current_super = nullptr;
  CrossSegmentSpec* current_cross = nullptr;
  bool tail_seen = false;

  std::istringstream is{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    auto fail = [&](const std::string& msg) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + msg);
    };
    const std::string line = trim(std::string_view(raw).substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      const auto head = words(std::string_view(line).substr(1, line.size() - 2));
      if (head.size() == 2 && head[0] == "superlayer") {
        section = Section::superlayer;
        spec.superlayers.push_back({head[1], {}, {}});
        current_super = &spec.superlayers.back();
      } else if (head.size() == 2 && head[0] == "cross") {
        section = Section::cross;
        CrossSegmentSpec seg;
        try {
          seg.after_pool = std::stoll(head[1]);
        } catch (const std::exception&) {
          fail("cross section needs a pool index");
        }
        spec.cross.push_back(seg);
        current_cross = &spec.cross.back();
      } else if (head.size() == 1 && head[0] == "tail") {
        section = Section::tail;
      } else {
        fail("unknown section '" + line + "'");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    try {
      switch (section) {
        case Section::global:
          if (key == "name") spec.name = value;
          else if (key == "classes") spec.num_classes = std::stoll(value);
          else if (key == "input_size") spec.input_size = std::stoll(value);
          else if (key == "input_channels") spec.input_channels = std::stoll(value);
          else fail("unknown key '" + key + "'");
          break;
        case Section::superlayer:
          if (key == "channels") {
            for (const auto& c : split(value, ',')) current_super->input_channels.push_back(std::stoll(trim(c)));
          } else if (key == "block") {
            current_super->blocks.push_back(parse_stack(value));
          } else {
            fail("unknown key '" + key + "'");
          }
          break;
        case Section::cross: {
          const auto arrow = key.find("->");
          if (arrow == std::string::npos) fail("cross edges are written 'FROM -> TO = layers'");
          EdgeSpec e{trim(std::string_view(key).substr(0, arrow)), trim(std::string_view(key).substr(arrow + 2)),
                     parse_stack(value)};
          (e.from == e.to ? current_cross->self_edges : current_cross->cross_edges).push_back(std::move(e));
          break;
        }
        case Section::tail:
          if (key != "layers") fail("unknown key '" + key + "'");
          if (tail_seen) fail("tail given twice");
          tail_seen = true;
          spec.tail = parse_stack(value);
          break;
      }
    } catch (const std::invalid_argument& err) {
      const std::string what = err.what();
      if (what.starts_with("config line")) throw;
      fail(what);
    }
  }
  validate(spec);
  return spec;
}

ArchitectureSpec load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open architecture config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace xcnn

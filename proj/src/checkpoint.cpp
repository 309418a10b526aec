#include "xcnn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace xcnn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char magic[8] = {'X', 'C', 'N', 'N', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open '" + path + "' for writing");
  }
  template <typename T>
  void put(T v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void put_raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void finish(const std::string& path) {
    out_.flush();
    if (!out_) throw std::runtime_error("write to '" + path + "' failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  }
  void read(void* p, std::size_t n) {
    const auto offset = in_.tellg();
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw std::runtime_error("checkpoint '" + path_ + "' truncated at byte " + std::to_string(offset));
  }
  template <typename T>
  T get() {
    T v;
    read(&v, sizeof v);
    return v;
  }
  std::string get_string() {
    std::string s(get<std::uint32_t>(), '\0');
    read(s.data(), s.size());
    return s;
  }
  bool at_end() { return in_.peek() == std::ifstream::traits_type::eof(); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
};

template <typename Stored, typename Scalar>
Tensor<Scalar> read_values(Reader& r, const Shape& shape) {
  Tensor<Stored> t(shape);
  r.read(t.ptr(), sizeof(Stored) * static_cast<std::size_t>(t.size()));
  if constexpr (std::is_same_v<Stored, Scalar>)
    return t;
  else
    return t.template cast<Scalar>();
}

}  // namespace

template <typename Scalar>
const Tensor<Scalar>* Checkpoint<Scalar>::find(const std::string& name) const {
  for (const auto& [n, t] : records)
    if (n == name) return &t;
  return nullptr;
}

template <typename Scalar>
const Tensor<Scalar>& Checkpoint<Scalar>::at(const std::string& name) const {
  if (const auto* t = find(name)) return *t;
  throw std::invalid_argument("checkpoint has no record '" + name + "'");
}

template <typename Scalar>
Checkpoint<Scalar> make_checkpoint(const NetworkGraph<Scalar>& graph,
                                   const std::map<std::string, Tensor<Scalar>>& extras) {
  Checkpoint<Scalar> c;
  c.spec = graph.spec();
  for (const auto& p : graph.parameters()) c.records.emplace_back(p.name, p.var.value());
  for (const auto& [id, s] : graph.batchnorm_states()) {
    c.records.emplace_back(id + ".running_mean", s.running_mean);
    c.records.emplace_back(id + ".running_var", s.running_var);
  }
  for (const auto& [name, t] : extras) c.records.emplace_back(name, t);
  return c;
}

template <typename Scalar>
void save_checkpoint(const std::string& path, const Checkpoint<Scalar>& c) {
  Writer w(path);
  w.put_raw(magic, sizeof magic);
  w.put(checkpoint_version);
  w.put_string(c.spec.name);
  w.put(static_cast<std::uint32_t>(c.spec.num_classes));
  w.put_string(format_config(c.spec));
  w.put(static_cast<std::uint32_t>(sizeof(Scalar)));
  w.put(static_cast<std::uint32_t>(c.records.size()));
  for (const auto& [name, t] : c.records) {
    w.put_string(name);
    w.put(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) w.put(static_cast<std::uint64_t>(d));
    w.put_raw(t.ptr(), sizeof(Scalar) * static_cast<std::size_t>(t.size()));
  }
  w.finish(path);
}

template <typename Scalar>
void save_checkpoint(const std::string& path, const NetworkGraph<Scalar>& graph,
                     const std::map<std::string, Tensor<Scalar>>& extras) {
  save_checkpoint(path, make_checkpoint(graph, extras));
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path) {
  Reader r(path);
  char m[sizeof magic];
  r.read(m, sizeof m);
  if (std::memcmp(m, magic, sizeof magic) != 0) throw std::runtime_error("'" + path + "' is not a checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != checkpoint_version)
    throw std::runtime_error("checkpoint '" + path + "' has unsupported version " + std::to_string(version));

  Checkpoint<Scalar> c;
  const std::string name = r.get_string();
  const auto classes = r.get<std::uint32_t>();
  c.spec = parse_config(r.get_string());
  if (c.spec.name != name || c.spec.num_classes != static_cast<Index>(classes))
    throw std::runtime_error("checkpoint '" + path + "': header disagrees with the embedded architecture");
  c.scalar_bytes = static_cast<int>(r.get<std::uint32_t>());
  if (c.scalar_bytes != 4 && c.scalar_bytes != 8)
    throw std::runtime_error("checkpoint '" + path + "': scalar width " + std::to_string(c.scalar_bytes));

  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string rec = r.get_string();
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = static_cast<Index>(r.get<std::uint64_t>());
    c.records.emplace_back(std::move(rec), c.scalar_bytes == 4 ? read_values<float, Scalar>(r, shape)
                                                               : read_values<double, Scalar>(r, shape));
  }
  if (!r.at_end()) throw std::runtime_error("checkpoint '" + path + "' has trailing bytes");
  return c;
}

template <typename Scalar>
void apply_checkpoint(const Checkpoint<Scalar>& c, NetworkGraph<Scalar>& graph) {
  if (c.spec != graph.spec())
    throw std::invalid_argument("checkpoint architecture '" + c.spec.name + "' does not match network '" +
                                graph.spec().name + "'");
  for (auto& p : graph.parameters()) {
    const auto& t = c.at(p.name);
    require_same_shape(p.var.shape(), t.shape(), "checkpoint record " + p.name);
    p.var.value() = t;
  }
  for (auto& [id, s] : graph.batchnorm_states()) {
    const auto& mean = c.at(id + ".running_mean");
    const auto& var = c.at(id + ".running_var");
    require_same_shape(s.running_mean.shape(), mean.shape(), "checkpoint record " + id + ".running_mean");
    require_same_shape(s.running_var.shape(), var.shape(), "checkpoint record " + id + ".running_var");
    s.running_mean = mean;
    s.running_var = var;
  }
}

template <typename Scalar>
NetworkGraph<Scalar> restore_network(const Checkpoint<Scalar>& c) {
  Rng rng(0);
  auto graph = NetworkGraph<Scalar>::build(c.spec, rng);
  apply_checkpoint(c, graph);
  return graph;
}

#define XCNN_INSTANTIATE_CHECKPOINT(S)                                                                        \
  template struct Checkpoint<S>;                                                                              \
  template Checkpoint<S> make_checkpoint(const NetworkGraph<S>&, const std::map<std::string, Tensor<S>>&);    \
  template void save_checkpoint(const std::string&, const Checkpoint<S>&);                                    \
  template void save_checkpoint(const std::string&, const NetworkGraph<S>&,                                   \
                                const std::map<std::string, Tensor<S>>&);                                     \
  template Checkpoint<S> load_checkpoint(const std::string&);                                                 \
  template void apply_checkpoint(const Checkpoint<S>&, NetworkGraph<S>&);                                     \
  template NetworkGraph<S> restore_network(const Checkpoint<S>&);

XCNN_INSTANTIATE_CHECKPOINT(float)
XCNN_INSTANTIATE_CHECKPOINT(double)

}  // namespace xcnn

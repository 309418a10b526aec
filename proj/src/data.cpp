#include "xcnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <stdexcept>

namespace fs = std::filesystem;

namespace xcnn {

namespace {

constexpr Index cifar_side = 32;
constexpr Index cifar_pixels = 3 * cifar_side * cifar_side;

std::vector<std::string> train_files(Variant v) {
  if (v == Variant::cifar100) return {"train.bin"};
  return {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"};
}

std::string test_file(Variant v) { return v == Variant::cifar100 ? "test.bin" : "test_batch.bin"; }

bool has_files(const fs::path& dir, Variant v) {
  for (const auto& f : train_files(v))
    if (!fs::is_regular_file(dir / f)) return false;
  return fs::is_regular_file(dir / test_file(v));
}

void rescale_pixels(Dataset& d, Index channels, Index side) {
  d.images = Tensor<float>({d.size(), channels, side, side});
  for (Index i = 0; i < d.images.size(); ++i) d.images[i] = static_cast<float>(d.pixels[static_cast<std::size_t>(i)]) / 255.0f;
}

void append(Dataset& into, const Dataset& from) {
  into.labels.insert(into.labels.end(), from.labels.begin(), from.labels.end());
  into.coarse_labels.insert(into.coarse_labels.end(), from.coarse_labels.begin(), from.coarse_labels.end());
  into.pixels.insert(into.pixels.end(), from.pixels.begin(), from.pixels.end());
}

}  // namespace

std::string_view variant_name(Variant v) { return v == Variant::cifar100 ? "cifar100" : "cifar10"; }

Variant parse_variant(std::string_view name) {
  if (name == "cifar10") return Variant::cifar10;
  if (name == "cifar100") return Variant::cifar100;
  throw std::invalid_argument("unknown dataset '" + std::string(name) + "' (expected cifar10 or cifar100)");
}

Index variant_classes(Variant v) { return v == Variant::cifar100 ? 100 : 10; }

Index cifar_record_bytes(Variant v) { return cifar_pixels + (v == Variant::cifar100 ? 2 : 1); }

std::string find_cifar_dir(const std::string& dir, Variant v) {
  if (dir.empty()) return {};
  const fs::path base(dir);
  for (const fs::path& candidate :
       {base, base / (v == Variant::cifar100 ? "cifar-100-binary" : "cifar-10-batches-bin")})
    if (has_files(candidate, v)) return candidate.string();
  return {};
}

std::string resolve_data_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  const char* env = std::getenv("DATA_DIR");
  return env ? std::string(env) : std::string();
}

Dataset read_cifar_file(const std::string& path, Variant v, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto record = static_cast<std::size_t>(cifar_record_bytes(v));
  if (bytes.empty()) throw std::runtime_error("'" + path + "' is empty");
  if (bytes.size() % record != 0)
    throw std::runtime_error("'" + path + "' truncated: partial record at byte offset " +
                             std::to_string(bytes.size() / record * record) + " (file is " +
                             std::to_string(bytes.size()) + " bytes, records are " + std::to_string(record) + ")");

  Dataset d;
  d.variant = v;
  d.split = split;
  const std::size_t n = bytes.size() / record;
  const Index classes = variant_classes(v);
  d.pixels.reserve(n * cifar_pixels);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* r = bytes.data() + i * record;
    const int label = v == Variant::cifar100 ? r[1] : r[0];
    if (label >= classes)
      throw std::runtime_error("'" + path + "': label " + std::to_string(label) + " out of range at byte offset " +
                               std::to_string(i * record));
    if (v == Variant::cifar100) d.coarse_labels.push_back(r[0]);
    d.labels.push_back(label);
    const std::uint8_t* px = r + (record - cifar_pixels);
    d.pixels.insert(d.pixels.end(), px, px + cifar_pixels);
  }
  rescale_pixels(d, 3, cifar_side);
  return d;
}

std::pair<Dataset, Dataset> load_cifar(const std::string& dir, Variant v) {
  const std::string found = find_cifar_dir(dir, v);
  if (found.empty())
    throw std::runtime_error("no " + std::string(variant_name(v)) + " binary files under '" + dir + "'");
  Dataset train;
  train.variant = v;
  for (const auto& f : train_files(v)) append(train, read_cifar_file((fs::path(found) / f).string(), v, Split::train));
  rescale_pixels(train, 3, cifar_side);
  return {std::move(train), read_cifar_file((fs::path(found) / test_file(v)).string(), v, Split::test)};
}

std::vector<std::uint8_t> serialize_record(const Dataset& data, Index i) {
  if (i < 0 || i >= data.size()) throw std::out_of_range("serialize_record: index " + std::to_string(i));
  const auto per = static_cast<std::size_t>(data.images.size() / std::max<Index>(data.size(), 1));
  if (data.pixels.size() != per * data.labels.size())
    throw std::invalid_argument("serialize_record: dataset does not carry its source bytes");
  std::vector<std::uint8_t> out;
  if (data.variant == Variant::cifar100) out.push_back(static_cast<std::uint8_t>(data.coarse_labels.at(i)));
  out.push_back(static_cast<std::uint8_t>(data.labels[static_cast<std::size_t>(i)]));
  const auto begin = data.pixels.begin() + static_cast<std::ptrdiff_t>(per * static_cast<std::size_t>(i));
  out.insert(out.end(), begin, begin + static_cast<std::ptrdiff_t>(per));
  return out;
}

void rgb_to_yuv_pixel(double r, double g, double b, double& y, double& u, double& v) {
  y = 0.299 * r + 0.587 * g + 0.114 * b;
  u = 0.492 * (b - y);
  v = 0.877 * (r - y);
}

Dataset rgb_to_yuv(Dataset data) {
  if (data.colourspace != Colourspace::rgb) throw std::invalid_argument("rgb_to_yuv: dataset is already YUV");
  if (data.images.rank() != 4 || data.images.dim(1) != 3)
    throw std::invalid_argument("rgb_to_yuv: expected [N,3,H,W], got " + shape_string(data.images.shape()));
  const Index n = data.images.dim(0), plane = data.images.dim(2) * data.images.dim(3);
  float* p = data.images.ptr();
  for (Index i = 0; i < n; ++i) {
    float* r = p + i * 3 * plane;
    float* g = r + plane;
    float* b = g + plane;
    for (Index k = 0; k < plane; ++k) {
      double y, u, v;
      rgb_to_yuv_pixel(r[k], g[k], b[k], y, u, v);
      r[k] = static_cast<float>(y);
      g[k] = static_cast<float>(u);
      b[k] = static_cast<float>(v);
    }
  }
  data.colourspace = Colourspace::yuv;
  return data;
}

Tensor<float> NormalizationStats::mean_tensor() const {
  Tensor<float> t({static_cast<Index>(mean.size())});
  for (std::size_t c = 0; c < mean.size(); ++c) t[static_cast<Index>(c)] = static_cast<float>(mean[c]);
  return t;
}

Tensor<float> NormalizationStats::stddev_tensor() const {
  Tensor<float> t({static_cast<Index>(stddev.size())});
  for (std::size_t c = 0; c < stddev.size(); ++c) t[static_cast<Index>(c)] = static_cast<float>(stddev[c]);
  return t;
}

NormalizationStats compute_normalization(const Dataset& train) {
  const auto& x = train.images;
  if (x.rank() != 4 || x.dim(0) == 0) throw std::invalid_argument("compute_normalization: empty or non-image dataset");
  const Index n = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  NormalizationStats s;
  for (Index c = 0; c < channels; ++c) {
    double sum = 0, sq = 0;
    for (Index i = 0; i < n; ++i) {
      const float* p = x.ptr() + (i * channels + c) * plane;
      for (Index k = 0; k < plane; ++k) sum += p[k];
    }
    const double count = static_cast<double>(n * plane), mean = sum / count;
    for (Index i = 0; i < n; ++i) {
      const float* p = x.ptr() + (i * channels + c) * plane;
      for (Index k = 0; k < plane; ++k) sq += (p[k] - mean) * (p[k] - mean);
    }
    s.mean.push_back(mean);
    s.stddev.push_back(std::sqrt(std::max(sq / count, NormalizationStats::eps)));
  }
  return s;
}

void apply_normalization(Dataset& data, const NormalizationStats& stats) {
  auto& x = data.images;
  const Index n = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (static_cast<std::size_t>(channels) != stats.mean.size())
    throw std::invalid_argument("apply_normalization: statistics cover " + std::to_string(stats.mean.size()) +
                                " channels, data has " + std::to_string(channels));
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < channels; ++c) {
      float* p = x.ptr() + (i * channels + c) * plane;
      const auto ci = static_cast<std::size_t>(c);
      for (Index k = 0; k < plane; ++k) p[k] = static_cast<float>((p[k] - stats.mean[ci]) / stats.stddev[ci]);
    }
}

NormalizedPair normalize_input(Dataset train, Dataset test) {
  if (train.colourspace != test.colourspace)
    throw std::invalid_argument("normalize_input: train and test are in different colour spaces");
  NormalizedPair out{std::move(train), std::move(test), {}};
  out.stats = compute_normalization(out.train);
  apply_normalization(out.train, out.stats);
  apply_normalization(out.test, out.stats);
  return out;
}

Dataset select(const Dataset& data, std::span<const Index> indices) {
  Dataset out;
  out.colourspace = data.colourspace;
  out.split = data.split;
  out.variant = data.variant;
  const Shape& s = data.images.shape();
  const Index per = shape_size(s) / std::max<Index>(s.at(0), 1);
  Shape shape = s;
  shape[0] = static_cast<Index>(indices.size());
  out.images = Tensor<float>(shape);
  const bool bytes = data.pixels.size() == static_cast<std::size_t>(per * data.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const Index i = indices[j];
    if (i < 0 || i >= data.size()) throw std::out_of_range("select: index " + std::to_string(i));
    std::copy_n(data.images.ptr() + i * per, per, out.images.ptr() + static_cast<Index>(j) * per);
    out.labels.push_back(data.labels[static_cast<std::size_t>(i)]);
    if (!data.coarse_labels.empty()) out.coarse_labels.push_back(data.coarse_labels[static_cast<std::size_t>(i)]);
    if (bytes) {
      const auto b = data.pixels.begin() + i * per;
      out.pixels.insert(out.pixels.end(), b, b + per);
    }
  }
  return out;
}

Dataset subset(const Dataset& data, double percent, bool stratified) {
  if (!(percent > 0.0 && percent <= 100.0))
    throw std::invalid_argument("subset: percent must be in (0, 100], got " + std::to_string(percent));
  auto take = [percent](Index n) { return static_cast<Index>(std::ceil(percent * static_cast<double>(n) / 100.0 - 1e-9)); };
  std::vector<Index> keep;
  if (!stratified) {
    keep.resize(static_cast<std::size_t>(take(data.size())));
    std::iota(keep.begin(), keep.end(), Index{0});
  } else {
    const auto counts = class_counts(data);
    std::vector<Index> quota(counts.size()), used(counts.size(), 0);
    for (std::size_t c = 0; c < counts.size(); ++c) quota[c] = take(counts[c]);
    for (Index i = 0; i < data.size(); ++i) {
      const auto c = static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)]);
      if (used[c] < quota[c]) {
        ++used[c];
        keep.push_back(i);
      }
    }
  }
  if (keep.empty()) throw std::invalid_argument("subset: " + std::to_string(percent) + "% of the data is empty");
  return select(data, keep);
}

std::vector<Index> class_counts(const Dataset& data) {
  std::vector<Index> counts(static_cast<std::size_t>(data.num_classes()), 0);
  for (int l : data.labels) ++counts.at(static_cast<std::size_t>(l));
  return counts;
}

Tensor<float> translate(const Tensor<float>& batch, Index dx, Index dy) {
  const Index n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  Tensor<float> out(batch.shape());
  for (Index p = 0; p < n * c; ++p) {
    const float* src = batch.ptr() + p * h * w;
    float* dst = out.ptr() + p * h * w;
    for (Index y = std::max<Index>(0, dy); y < std::min(h, h + dy); ++y)
      for (Index x = std::max<Index>(0, dx); x < std::min(w, w + dx); ++x) dst[y * w + x] = src[(y - dy) * w + (x - dx)];
  }
  return out;
}

Tensor<float> flip_horizontal(const Tensor<float>& batch) {
  const Index rows = batch.size() / batch.dim(3), w = batch.dim(3);
  Tensor<float> out(batch.shape());
  for (Index r = 0; r < rows; ++r)
    for (Index x = 0; x < w; ++x) out[r * w + x] = batch[r * w + (w - 1 - x)];
  return out;
}

Tensor<float> augment(const Tensor<float>& batch, const AugmentConfig& config, Rng& rng) {
  if (batch.rank() != 4) throw std::invalid_argument("augment: expected [N,C,H,W], got " + shape_string(batch.shape()));
  if (config.max_shift < 0 || config.max_shift >= batch.dim(2))
    throw std::invalid_argument("augment: max_shift " + std::to_string(config.max_shift) + " out of range");
  const Index n = batch.dim(0), per = batch.size() / std::max<Index>(n, 1);
  Shape one = batch.shape();
  one[0] = 1;
  Tensor<float> out(batch.shape());
  std::uniform_int_distribution<Index> shift(-config.max_shift, config.max_shift);
  for (Index i = 0; i < n; ++i) {
    Tensor<float> img(one, batch.data().segment(i * per, per));
    const Index dx = shift(rng), dy = shift(rng);
    if (dx != 0 || dy != 0) img = translate(img, dx, dy);
    if (config.horizontal_flip && uniform01(rng) < 0.5) img = flip_horizontal(img);
    out.data().segment(i * per, per) = img.data();
  }
  return out;
}

std::pair<Dataset, Dataset> synthetic_cifar(const SyntheticConfig& config) {
  if (config.train < 1 || config.test < 1 || config.size < 1)
    throw std::invalid_argument("synthetic_cifar: sizes must be positive");
  const Index classes = variant_classes(config.variant);
  const Index per = 3 * config.size * config.size;
  Rng rng = derive_rng({config.seed, 0x53594e});
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);

  std::vector<double> patterns(static_cast<std::size_t>(classes * per));
  for (auto& p : patterns) p = gauss(rng);

  auto make = [&](Index n, Split split) {
    Dataset d;
    d.variant = config.variant;
    d.split = split;
    d.pixels.reserve(static_cast<std::size_t>(n * per));
    for (Index i = 0; i < n; ++i) {
      const int l = label(rng);
      d.labels.push_back(l);
      if (config.variant == Variant::cifar100) d.coarse_labels.push_back(l / 5);
      const double* pattern = patterns.data() + l * per;
      for (Index k = 0; k < per; ++k) {
        const double v = 0.5 + config.noise * gauss(rng) + config.signal * pattern[k];
        d.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
      }
    }
    rescale_pixels(d, 3, config.size);
    return d;
  };
  Dataset train = make(config.train, Split::train);
  return {std::move(train), make(config.test, Split::test)};
}

void write_cifar(const std::string& dir, const Dataset& train, const Dataset& test) {
  for (const Dataset* d : {&train, &test})
    if (d->images.shape() != Shape{d->size(), 3, cifar_side, cifar_side} ||
        d->pixels.size() != static_cast<std::size_t>(d->size() * cifar_pixels))
      throw std::invalid_argument("write_cifar: datasets must be 3x32x32 and carry their source bytes");
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const Dataset& d, Index begin, Index end) {
    const std::string path = (fs::path(dir) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    for (Index i = begin; i < end; ++i) {
      const auto rec = serialize_record(d, i);
      out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
    }
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
  };
  const auto files = train_files(train.variant);
  const Index chunks = static_cast<Index>(files.size());
  if (train.size() < chunks)
    throw std::invalid_argument("write_cifar: need at least " + std::to_string(chunks) + " training images");
  for (Index f = 0; f < chunks; ++f)
    write(files[static_cast<std::size_t>(f)], train, train.size() * f / chunks, train.size() * (f + 1) / chunks);
  write(test_file(test.variant), test, 0, test.size());
}

}  // namespace xcnn

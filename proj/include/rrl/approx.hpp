#pragma once

// Small multilayer perceptron with hand-derived gradients, flat parameter
// storage, Adam/SGD updates and a bit-exact checkpoint format.

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rrl/common.hpp"

namespace rrl::approx {

struct Block {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;

  std::size_t size() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
  bool operator==(const Block&) const = default;
};

// Maps named tensors onto one flat array.
class Layout {
 public:
  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    if (name.empty() || name.find_first_of(":;\n=") != std::string::npos)
      throw UsageError("invalid block name '" + name + "'");
    if (find(name)) throw UsageError("duplicate block '" + name + "'");
    Block b{std::move(name), std::move(shape), total_};
    total_ += b.size();
    blocks_.push_back(std::move(b));
    return blocks_.back().offset;
  }

  const Block* find(std::string_view name) const {
    for (const auto& b : blocks_)
      if (b.name == name) return &b;
    return nullptr;
  }

  const Block& block(std::string_view name) const {
    if (const Block* b = find(name)) return *b;
    throw UsageError("no block named '" + std::string(name) + "'");
  }

  const std::vector<Block>& blocks() const noexcept { return blocks_; }
  std::size_t size() const noexcept { return total_; }

  // "name:3x4;bias:4"
  std::string describe() const {
    std::string out;
    for (const auto& b : blocks_) {
      if (!out.empty()) out += ';';
      out += b.name + ':';
      for (std::size_t i = 0; i < b.shape.size(); ++i) {
        if (i) out += 'x';
        out += std::to_string(b.shape[i]);
      }
    }
    return out;
  }

  static Layout parse(std::string_view text) {
    Layout layout;
    while (!text.empty()) {
      const auto end = text.find(';');
      const std::string_view entry = text.substr(0, end);
      const auto colon = entry.rfind(':');
      if (colon == std::string_view::npos) throw ConfigError("malformed layout entry");
      std::vector<std::size_t> shape;
      std::string_view dims = entry.substr(colon + 1);
      while (!dims.empty()) {
        const auto x = dims.find('x');
        const std::string_view d = dims.substr(0, x);
        std::size_t v = 0;
        auto [p, ec] = std::from_chars(d.data(), d.data() + d.size(), v);
        if (ec != std::errc() || p != d.data() + d.size()) throw ConfigError("malformed layout shape");
        shape.push_back(v);
        dims = x == std::string_view::npos ? std::string_view{} : dims.substr(x + 1);
      }
      layout.add(std::string(entry.substr(0, colon)), std::move(shape));
      text = end == std::string_view::npos ? std::string_view{} : text.substr(end + 1);
    }
    return layout;
  }

  bool operator==(const Layout& other) const { return blocks_ == other.blocks_; }

 private:
  std::vector<Block> blocks_;
  std::size_t total_ = 0;
};

namespace detail {
inline std::uint64_t next_identity() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

// Trainable scalars. Every mutable access bumps the generation so activation
// caches taken earlier are detected as stale.
class ParameterSet {
 public:
  ParameterSet() : identity_(detail::next_identity()) {}
  explicit ParameterSet(Layout layout)
      : layout_(std::move(layout)), values_(layout_.size(), 0.0), identity_(detail::next_identity()) {}
  ParameterSet(Layout layout, std::vector<double> values)
      : layout_(std::move(layout)), values_(std::move(values)), identity_(detail::next_identity()) {
    if (values_.size() != layout_.size()) throw UsageError("parameter count does not match layout");
  }
  ParameterSet(const ParameterSet& other)
      : layout_(other.layout_), values_(other.values_), identity_(detail::next_identity()) {}
  ParameterSet& operator=(const ParameterSet& other) {
    if (this != &other) {
      layout_ = other.layout_;
      values_ = other.values_;
      ++generation_;
    }
    return *this;
  }
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  const Layout& layout() const noexcept { return layout_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> mutable_values() noexcept {
    ++generation_;
    return values_;
  }

  std::span<const double> block(std::string_view name) const {
    const Block& b = layout_.block(name);
    return std::span<const double>(values_).subspan(b.offset, b.size());
  }
  std::span<double> mutable_block(std::string_view name) {
    const Block& b = layout_.block(name);
    ++generation_;
    return std::span<double>(values_).subspan(b.offset, b.size());
  }

  std::uint64_t identity() const noexcept { return identity_; }
  std::uint64_t generation() const noexcept { return generation_; }

 private:
  Layout layout_;
  std::vector<double> values_;
  std::uint64_t identity_;
  std::uint64_t generation_ = 0;
};

class GradientBuffer {
 public:
  GradientBuffer() = default;
  explicit GradientBuffer(const Layout& layout) : layout_(layout), values_(layout.size(), 0.0) {}

  const Layout& layout() const noexcept { return layout_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> block(std::string_view name) const {
    const Block& b = layout_.block(name);
    return std::span<const double>(values_).subspan(b.offset, b.size());
  }

  void zero() { std::fill(values_.begin(), values_.end(), 0.0); }

  double norm() const {
    double s = 0.0;
    for (double g : values_) s += g * g;
    return std::sqrt(s);
  }

  void scale(double factor) {
    for (double& g : values_) g *= factor;
  }

  GradientBuffer& operator+=(const GradientBuffer& other) {
    if (other.values_.size() != values_.size()) throw UsageError("gradient layout mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
  }

 private:
  Layout layout_;
  std::vector<double> values_;
};

enum class Activation { identity, tanh };

// Fills an in x out weight block (stored input-major, w[i * out + j]) with a
// scaled orthogonal matrix.
inline void orthogonal_init(std::span<double> w, std::size_t in, std::size_t out, double gain, Rng& rng) {
  if (w.size() != in * out) throw UsageError("orthogonal_init: size mismatch");
  const std::size_t tall = std::max(in, out), wide = std::min(in, out);
  // Columns of q (tall x wide) are made orthonormal by modified Gram-Schmidt.
  std::vector<double> q(tall * wide);
  for (double& v : q) v = standard_normal(rng);
  for (std::size_t c = 0; c < wide; ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double dot = 0.0;
      for (std::size_t r = 0; r < tall; ++r) dot += q[r * wide + c] * q[r * wide + p];
      for (std::size_t r = 0; r < tall; ++r) q[r * wide + c] -= dot * q[r * wide + p];
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < tall; ++r) norm += q[r * wide + c] * q[r * wide + c];
    norm = std::sqrt(norm);
    for (std::size_t r = 0; r < tall; ++r) q[r * wide + c] /= norm;
  }
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = 0; j < out; ++j)
      w[i * out + j] = gain * (in >= out ? q[i * wide + j] : q[j * wide + i]);
}

// Fully connected network. Layer k owns blocks "<prefix>.l<k>.w" (in x out)
// and "<prefix>.l<k>.b" (out). Hidden layers use `hidden`, the last layer
// uses `output`.
class Mlp {
 public:
  struct Cache {
    std::uint64_t params_identity = 0;
    std::uint64_t params_generation = 0;
    // activations[0] is the input, activations[k + 1] the output of layer k.
    std::vector<std::vector<double>> activations;
  };

  struct Result {
    std::vector<double> output;
    Cache cache;
  };

  Mlp() = default;
  Mlp(std::string prefix, std::vector<std::size_t> dims, Activation hidden = Activation::tanh,
      Activation output = Activation::identity)
      : prefix_(std::move(prefix)), dims_(std::move(dims)), hidden_(hidden), output_(output) {
    if (dims_.size() < 2) throw UsageError("Mlp needs at least input and output sizes");
  }

  std::size_t input_size() const noexcept { return dims_.front(); }
  std::size_t output_size() const noexcept { return dims_.back(); }
  std::size_t num_layers() const noexcept { return dims_.size() - 1; }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  const std::string& prefix() const noexcept { return prefix_; }

  std::string weight_name(std::size_t k) const { return prefix_ + ".l" + std::to_string(k) + ".w"; }
  std::string bias_name(std::size_t k) const { return prefix_ + ".l" + std::to_string(k) + ".b"; }

  // Registers this network's blocks and remembers their offsets.
  void declare(Layout& layout) {
    offsets_.clear();
    for (std::size_t k = 0; k < num_layers(); ++k) {
      const std::size_t w = layout.add(weight_name(k), {dims_[k], dims_[k + 1]});
      const std::size_t b = layout.add(bias_name(k), {dims_[k + 1]});
      offsets_.push_back({w, b});
    }
    required_size_ = layout.size();
  }

  // Resolves offsets against an existing layout (e.g. one read from disk).
  void bind(const Layout& layout) {
    offsets_.clear();
    required_size_ = 0;
    for (std::size_t k = 0; k < num_layers(); ++k) {
      const Block& w = layout.block(weight_name(k));
      const Block& b = layout.block(bias_name(k));
      if (w.shape != std::vector<std::size_t>{dims_[k], dims_[k + 1]} ||
          b.shape != std::vector<std::size_t>{dims_[k + 1]})
        throw ConfigError("layout shape mismatch for " + weight_name(k));
      offsets_.push_back({w.offset, b.offset});
      required_size_ = std::max({required_size_, w.offset + w.size(), b.offset + b.size()});
    }
  }

  // Orthogonal weights with `hidden_gain` (output layer: `output_gain`), zero biases.
  void initialize(ParameterSet& params, double hidden_gain, double output_gain, Rng& rng) const {
    check_bound(params);
    auto values = params.mutable_values();
    for (std::size_t k = 0; k < num_layers(); ++k) {
      const double gain = k + 1 == num_layers() ? output_gain : hidden_gain;
      orthogonal_init(values.subspan(offsets_[k].weight, dims_[k] * dims_[k + 1]), dims_[k],
                      dims_[k + 1], gain, rng);
      std::fill_n(values.begin() + offsets_[k].bias, dims_[k + 1], 0.0);
    }
  }

  Result forward(const ParameterSet& params, std::span<const double> input) const {
    Result r;
    r.output = forward(params, input, &r.cache);
    return r;
  }

  std::vector<double> forward(const ParameterSet& params, std::span<const double> input,
                              Cache* cache) const {
    check_bound(params);
    if (input.size() != input_size())
      throw UsageError("Mlp input has " + std::to_string(input.size()) + " entries, expected " +
                       std::to_string(input_size()));
    const auto values = params.values();
    std::vector<double> x(input.begin(), input.end());
    if (cache) {
      cache->params_identity = params.identity();
      cache->params_generation = params.generation();
      cache->activations.clear();
      cache->activations.push_back(x);
    }
    for (std::size_t k = 0; k < num_layers(); ++k) {
      const std::size_t in = dims_[k], out = dims_[k + 1];
      const double* w = values.data() + offsets_[k].weight;
      const double* b = values.data() + offsets_[k].bias;
      std::vector<double> y(b, b + out);
      for (std::size_t i = 0; i < in; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* row = w + i * out;
        for (std::size_t j = 0; j < out; ++j) y[j] += xi * row[j];
      }
      if (activation(k) == Activation::tanh)
        for (double& v : y) v = std::tanh(v);
      x = std::move(y);
      if (cache) cache->activations.push_back(x);
    }
    return x;
  }

  // Accumulates d(output . output_grad)/d(theta) into `grads` and returns the
  // gradient with respect to the input.
  std::vector<double> backward(const ParameterSet& params, const Cache& cache,
                               std::span<const double> output_grad, GradientBuffer& grads) const {
    check_bound(params);
    if (cache.params_identity != params.identity() || cache.params_generation != params.generation())
      throw UsageError("activation cache is stale or belongs to other parameters");
    if (cache.activations.size() != num_layers() + 1) throw UsageError("activation cache is incomplete");
    if (output_grad.size() != output_size()) throw UsageError("output gradient has wrong size");
    if (grads.values().size() != params.size()) throw UsageError("gradient buffer layout mismatch");
    const auto values = params.values();
    auto g_all = grads.values();
    std::vector<double> g(output_grad.begin(), output_grad.end());
    for (std::size_t k = num_layers(); k-- > 0;) {
      const std::size_t in = dims_[k], out = dims_[k + 1];
      const auto& y = cache.activations[k + 1];
      const auto& x = cache.activations[k];
      if (activation(k) == Activation::tanh)
        for (std::size_t j = 0; j < out; ++j) g[j] *= 1.0 - y[j] * y[j];
      const double* w = values.data() + offsets_[k].weight;
      double* gw = g_all.data() + offsets_[k].weight;
      double* gb = g_all.data() + offsets_[k].bias;
      for (std::size_t j = 0; j < out; ++j) gb[j] += g[j];
      std::vector<double> gx(in, 0.0);
      for (std::size_t i = 0; i < in; ++i) {
        const double xi = x[i];
        double* grow = gw + i * out;
        const double* row = w + i * out;
        double acc = 0.0;
        for (std::size_t j = 0; j < out; ++j) {
          grow[j] += xi * g[j];
          acc += row[j] * g[j];
        }
        gx[i] = acc;
      }
      g = std::move(gx);
    }
    return g;
  }

  GradientBuffer backward(const ParameterSet& params, const Cache& cache,
                          std::span<const double> output_grad) const {
    GradientBuffer grads(params.layout());
    backward(params, cache, output_grad, grads);
    return grads;
  }

  // Weight connecting input i to output j of layer k.
  double weight(const ParameterSet& params, std::size_t k, std::size_t out_index,
                std::size_t in_index) const {
    check_bound(params);
    return params.values()[offsets_.at(k).weight + in_index * dims_[k + 1] + out_index];
  }

 private:
  struct Offsets {
    std::size_t weight;
    std::size_t bias;
  };

  Activation activation(std::size_t k) const { return k + 1 == num_layers() ? output_ : hidden_; }

  void check_bound(const ParameterSet& params) const {
    if (offsets_.size() != num_layers()) throw UsageError("Mlp used before declare()/bind()");
    if (params.size() < required_size_) throw UsageError("parameter set does not match the network layout");
  }

  std::string prefix_;
  std::vector<std::size_t> dims_;
  Activation hidden_ = Activation::tanh;
  Activation output_ = Activation::identity;
  std::vector<Offsets> offsets_;
  std::size_t required_size_ = 0;
};

// values <- values - lr * grads
inline ParameterSet sgd_step(const ParameterSet& params, const GradientBuffer& grads, double lr) {
  if (!(grads.layout() == params.layout())) throw UsageError("sgd_step: layout mismatch");
  ParameterSet next = params;
  auto v = next.mutable_values();
  const auto g = grads.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  return next;
}

struct OptimizerConfig {
  enum class Kind { sgd, adam };
  Kind kind = Kind::adam;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-5;
};

// In-place optimizer carrying Adam moments between steps.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerConfig config, const Layout& layout)
      : config_(config), layout_(layout), m_(layout.size(), 0.0), v_(layout.size(), 0.0) {}

  const OptimizerConfig& config() const noexcept { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  std::uint64_t steps() const noexcept { return t_; }

  void step(ParameterSet& params, const GradientBuffer& grads) {
    if (!(params.layout() == layout_) || !(grads.layout() == layout_))
      throw UsageError("optimizer layout mismatch");
    auto p = params.mutable_values();
    const auto g = grads.values();
    ++t_;
    if (config_.kind == OptimizerConfig::Kind::sgd) {
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= config_.lr * g[i];
      return;
    }
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const double step = config_.lr * std::sqrt(c2) / c1;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g[i];
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g[i] * g[i];
      p[i] -= step * m_[i] / (std::sqrt(v_[i]) + config_.eps);
    }
  }

 private:
  OptimizerConfig config_;
  Layout layout_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

// Checkpoint file: text header of key=value lines terminated by "---", then
// the parameter values as little-endian IEEE-754 doubles.
struct Checkpoint {
  int schema_version = 1;
  std::string kind = "approx";
  std::map<std::string, std::string> extra;
  ParameterSet params;
};

inline constexpr std::string_view kCheckpointMagic = "RRL-CHECKPOINT";

inline void save_checkpoint(std::ostream& out, const ParameterSet& params, std::string_view kind = "approx",
                            const std::map<std::string, std::string>& extra = {}) {
  out << kCheckpointMagic << '\n'
      << "schema_version=1\n"
      << "kind=" << kind << '\n'
      << "layout=" << params.layout().describe() << '\n'
      << "count=" << params.size() << '\n';
  for (const auto& [k, v] : extra) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw UsageError("checkpoint metadata must be single-line key=value");
    out << k << '=' << v << '\n';
  }
  out << "---\n";
  std::string bytes(params.size() * 8, '\0');
  const auto values = params.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed to write checkpoint");
}

inline Checkpoint load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) throw ConfigError("not a checkpoint file");
  std::map<std::string, std::string> header;
  while (std::getline(in, line) && line != "---") {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed checkpoint header line: " + line);
    header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (line != "---") throw ConfigError("truncated checkpoint header");
  auto take = [&](const std::string& key) {
    auto it = header.find(key);
    if (it == header.end()) throw ConfigError("checkpoint header lacks '" + key + "'");
    std::string v = it->second;
    header.erase(it);
    return v;
  };
  Checkpoint ckpt;
  ckpt.schema_version = std::stoi(take("schema_version"));
  if (ckpt.schema_version != 1)
    throw ConfigError("unsupported checkpoint schema_version " + std::to_string(ckpt.schema_version));
  ckpt.kind = take("kind");
  Layout layout = Layout::parse(take("layout"));
  const std::size_t count = std::stoull(take("count"));
  if (count != layout.size()) throw ConfigError("checkpoint count does not match its layout");
  ckpt.extra = std::move(header);
  std::string bytes(count * 8, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw ConfigError("truncated checkpoint data");
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
  ckpt.params = ParameterSet(std::move(layout), std::move(values));
  return ckpt;
}

inline void save_checkpoint_file(const std::filesystem::path& path, const ParameterSet& params,
                                 std::string_view kind = "approx",
                                 const std::map<std::string, std::string>& extra = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  save_checkpoint(out, params, kind, extra);
}

inline Checkpoint load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace rrl::approx

// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bokeh/data_synth.hpp"
#include "bokeh/loss_metrics.hpp"
#include "bokeh/model.hpp"

namespace bokeh {

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamHyper&) const = default;
};

template <class T>
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;  // aligned with ParamStore order
  std::vector<Tensor<T>> v;

  explicit AdamState(AdamHyper h = {}) : hyper(h) {}

  static AdamState for_params(const ParamStore<T>& params, AdamHyper h = {}) {
    AdamState s(h);
    for (const auto& [name, p] : params) {
      s.m.push_back(Tensor<T>::zeros(p.shape()));
      s.v.push_back(Tensor<T>::zeros(p.shape()));
    }
    return s;
  }
};

/// One bias-corrected Adam update of every parameter. Throws before touching
/// anything if some parameter has no gradient.
template <class T>
void adam_step(ParamStore<T>& params, AdamState<T>& st) {
  if (st.m.empty() && params.size() != 0) st = AdamState<T>::for_params(params, st.hyper);
  if (st.m.size() != params.size() || st.v.size() != params.size())
    throw std::invalid_argument("adam_step: optimizer state does not match the parameter set");
  std::size_t i = 0;
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) throw std::invalid_argument("adam_step: missing gradient for '" + name + "'");
    if (st.m[i].shape() != p.shape() || st.v[i].shape() != p.shape())
      throw ShapeError("adam_step: moment shape mismatch for '" + name + "'");
    ++i;
  }
  ++st.step;
  const auto& h = st.hyper;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(st.step));
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  i = 0;
  for (const auto& [name, pv] : params) {
    Var<T> p = pv;
    auto& value = p.mutable_value();
    const auto& g = p.grad();
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      m[k] = b1 * m[k] + (T{1} - b1) * g[k];
      v[k] = b2 * v[k] + (T{1} - b2) * g[k] * g[k];
      const double mhat = static_cast<double>(m[k]) / c1;
      const double vhat = static_cast<double>(v[k]) / c2;
      value[k] = static_cast<T>(static_cast<double>(value[k]) - h.lr * mhat / (std::sqrt(vhat) + h.eps));
    }
    ++i;
  }
}

/// L2 norm over every allocated parameter gradient.
template <class T>
double grad_norm(const ParamStore<T>& params) {
  double acc = 0.0;
  for (const auto& [name, p] : params)
    if (p.has_grad())
      for (T g : p.grad().data()) acc += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(acc);
}

/// Rescales gradients so their global norm is at most max_norm. Returns the
/// norm before clipping.
template <class T>
double clip_grad_norm(ParamStore<T>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (const auto& [name, pv] : params) {
      Var<T> p = pv;
      if (p.has_grad())
        for (auto& g : p.mutable_grad().data()) g *= s;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (little-endian):
//   "BKLC" | u32 version | u32 json_len | config JSON
//   u64 global_step | u64 rng_state
//   u32 n_params | n_params x record
//   u8 has_adam [ u64 step | f64 lr, beta1, beta2, eps | u32 n | n x (m record, v record) ]
// record = u32 name_len | name | u32 rank | rank x u32 extent | f32 data

inline constexpr std::array<char, 4> kCheckpointMagic{'B', 'K', 'L', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor<float> value;

  bool operator==(const NamedTensor&) const = default;
};

struct AdamSnapshot {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<NamedTensor> m, v;
};

struct Checkpoint {
  ModelConfig config;
  std::uint64_t global_step = 0;
  std::uint64_t rng_state = 0;
  std::vector<NamedTensor> params;
  std::optional<AdamSnapshot> adam;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class ByteWriter {
 public:
  template <class U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_record(const NamedTensor& t) {
    put(static_cast<std::uint32_t>(t.name.size()));
    put_bytes(t.name.data(), t.name.size());
    put(static_cast<std::uint32_t>(t.value.rank()));
    for (auto e : t.value.shape()) put(static_cast<std::uint32_t>(e));
    put_bytes(t.value.raw(), t.value.size() * sizeof(float));
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, b_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  NamedTensor get_record() {
    NamedTensor t;
    const auto len = get<std::uint32_t>("name length");
    t.name = get_string(len, "name");
    const auto rank = get<std::uint32_t>("rank");
    if (rank < 1 || rank > 4) fail("bad rank " + std::to_string(rank) + " for '" + t.name + "'");
    Shape s;
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto e = get<std::uint32_t>("extent");
      if (e == 0) fail("zero extent for '" + t.name + "'");
      s.push_back(e);
      count *= e;
      if (count > (b_.size() - pos_) / sizeof(float)) fail("tensor '" + t.name + "' exceeds file");
    }
    t.value = Tensor<float>::zeros(s);
    need(count * sizeof(float), "tensor data");
    std::memcpy(t.value.raw(), b_.data() + pos_, count * sizeof(float));
    pos_ += count * sizeof(float);
    return t;
  }
  bool at_end() const { return pos_ == b_.size(); }
  std::size_t pos() const { return pos_; }
  [[noreturn]] void fail(const std::string& msg) const {
    throw CheckpointError("checkpoint: " + msg + " (at byte " + std::to_string(pos_) + ")");
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) fail(std::string("truncated while reading ") + what);
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.put(kCheckpointVersion);
  const std::string json = nlohmann::json(c.config).dump();
  w.put(static_cast<std::uint32_t>(json.size()));
  w.put_bytes(json.data(), json.size());
  w.put(c.global_step);
  w.put(c.rng_state);
  w.put(static_cast<std::uint32_t>(c.params.size()));
  for (const auto& p : c.params) w.put_record(p);
  w.put(static_cast<std::uint8_t>(c.adam ? 1 : 0));
  if (c.adam) {
    const auto& a = *c.adam;
    if (a.m.size() != a.v.size()) throw CheckpointError("checkpoint: Adam moment counts differ");
    w.put(a.step);
    w.put(a.hyper.lr);
    w.put(a.hyper.beta1);
    w.put(a.hyper.beta2);
    w.put(a.hyper.eps);
    w.put(static_cast<std::uint32_t>(a.m.size()));
    for (std::size_t i = 0; i < a.m.size(); ++i) {
      w.put_record(a.m[i]);
      w.put_record(a.v[i]);
    }
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.get_string(4, "magic") != std::string(kCheckpointMagic.data(), 4)) r.fail("bad magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint c;
  const auto json_len = r.get<std::uint32_t>("config length");
  const std::string json = r.get_string(json_len, "config");
  try {
    c.config = nlohmann::json::parse(json).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad config: ") + e.what());
  }
  c.global_step = r.get<std::uint64_t>("global step");
  c.rng_state = r.get<std::uint64_t>("rng state");
  const auto n = r.get<std::uint32_t>("parameter count");
  for (std::uint32_t i = 0; i < n; ++i) c.params.push_back(r.get_record());
  const auto has_adam = r.get<std::uint8_t>("optimizer flag");
  if (has_adam > 1) r.fail("bad optimizer flag");
  if (has_adam) {
    AdamSnapshot a;
    a.step = r.get<std::uint64_t>("optimizer step");
    a.hyper.lr = r.get<double>("lr");
    a.hyper.beta1 = r.get<double>("beta1");
    a.hyper.beta2 = r.get<double>("beta2");
    a.hyper.eps = r.get<double>("eps");
    const auto k = r.get<std::uint32_t>("moment count");
    for (std::uint32_t i = 0; i < k; ++i) {
      a.m.push_back(r.get_record());
      a.v.push_back(r.get_record());
    }
    c.adam = std::move(a);
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto bytes = encode_checkpoint(c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot create '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

template <class T>
std::vector<NamedTensor> snapshot_params(const ParamStore<T>& params) {
  std::vector<NamedTensor> out;
  for (const auto& [name, p] : params) out.push_back({name, p.value().template cast<float>()});
  return out;
}

template <class T>
Checkpoint make_checkpoint(const Model<T>& model, const AdamState<T>* adam, std::uint64_t global_step,
                           std::uint64_t rng_state) {
  Checkpoint c;
  c.config = model.config();
  c.global_step = global_step;
  c.rng_state = rng_state;
  c.params = snapshot_params(model.params());
  if (adam) {
    AdamSnapshot a;
    a.hyper = adam->hyper;
    a.step = adam->step;
    std::size_t i = 0;
    for (const auto& [name, p] : model.params()) {
      if (i < adam->m.size()) {
        a.m.push_back({name, adam->m[i].template cast<float>()});
        a.v.push_back({name, adam->v[i].template cast<float>()});
      }
      ++i;
    }
    c.adam = std::move(a);
  }
  return c;
}

/// Copies checkpoint tensors into `model` (and `adam` when given). The
/// configuration, parameter names and shapes must all match.
template <class T>
void apply_checkpoint(const Checkpoint& c, Model<T>& model, AdamState<T>* adam = nullptr) {
  if (!(c.config == model.config())) throw CheckpointError("checkpoint: model configuration mismatch");
  auto& params = model.params();
  if (c.params.size() != params.size())
    throw CheckpointError("checkpoint: expected " + std::to_string(params.size()) + " parameters, found " +
                          std::to_string(c.params.size()));
  std::size_t i = 0;
  for (const auto& [name, p] : params) {
    const auto& rec = c.params[i++];
    if (rec.name != name) throw CheckpointError("checkpoint: expected parameter '" + name + "', found '" + rec.name + "'");
    if (rec.value.shape() != p.shape())
      throw CheckpointError("checkpoint: shape mismatch for '" + name + "': " + to_string(rec.value.shape()) +
                            " vs " + to_string(p.shape()));
  }
  if (adam && c.adam) {
    if (c.adam->m.size() != params.size() && !c.adam->m.empty())
      throw CheckpointError("checkpoint: optimizer state does not match the parameter set");
    i = 0;
    for (const auto& [name, p] : params) {
      if (c.adam->m.empty()) break;
      if (c.adam->m[i].name != name || c.adam->m[i].value.shape() != p.shape() ||
          c.adam->v[i].value.shape() != p.shape())
        throw CheckpointError("checkpoint: optimizer state mismatch for '" + name + "'");
      ++i;
    }
  }
  i = 0;
  for (const auto& [name, pv] : params) {
    Var<T> p = pv;
    p.mutable_value() = c.params[i++].value.template cast<T>();
  }
  if (adam) {
    if (!c.adam) throw CheckpointError("checkpoint: no optimizer state stored");
    adam->hyper = c.adam->hyper;
    adam->step = c.adam->step;
    adam->m.clear();
    adam->v.clear();
    for (std::size_t k = 0; k < c.adam->m.size(); ++k) {
      adam->m.push_back(c.adam->m[k].value.template cast<T>());
      adam->v.push_back(c.adam->v[k].value.template cast<T>());
    }
  }
}

template <class T>
Model<T> model_from_checkpoint(const Checkpoint& c) {
  Model<T> m = Model<T>::build(c.config, 0);
  apply_checkpoint(c, m);
  return m;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t batch_size = 4;
  std::size_t patch = 64;
  std::size_t steps = 1000;
  double lr = 5e-4;
  double loss_weight = kDefaultPerceptualWeight;
  std::uint64_t seed = 0;
  double clip_norm = 0.0;  // 0 disables clipping
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_path;

  /// Batch, learning rate and patch size of the full-scale recipe.
  static TrainConfig full_scale_preset() {
    TrainConfig c;
    c.batch_size = 4;
    c.lr = 5e-4;
    c.patch = 512;
    return c;
  }
};

struct StepRecord {
  std::uint64_t step = 0;
  double loss = 0, l1 = 0, perceptual = 0, grad_norm = 0;
};

inline constexpr const char* kTrainCsvHeader = "step,loss,l1,perceptual,grad_norm";

inline void write_step_row(std::ostream& os, const StepRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g\n", static_cast<unsigned long long>(r.step), r.loss,
                r.l1, r.perceptual, r.grad_norm);
  os << buf;
}

/// Raised when a step produces a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Visiting order of epoch `epoch` over `n` samples: a Fisher-Yates shuffle
/// seeded from (seed, epoch), so any step's batch can be recomputed without
/// replaying earlier epochs.
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(derive_seed(seed, 0xE90C4ULL + epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  return order;
}

/// Sequential trainer. Pairs are visited in a fresh shuffled order every
/// epoch; batch composition, crops and every update depend only on the seed
/// and the step counter, so a run resumed from a checkpoint follows the
/// uninterrupted trajectory exactly.
template <class T>
class Trainer {
 public:
  Trainer(Model<T>& model, std::vector<SamplePair> data, TrainConfig cfg)
      : model_(model), data_(std::move(data)), cfg_(std::move(cfg)), rng_(cfg_.seed) {
    if (data_.empty()) throw std::invalid_argument("Trainer: dataset is empty");
    if (cfg_.batch_size == 0) throw std::invalid_argument("Trainer: batch size must be >= 1");
    const auto& s0 = data_.front().input.shape();
    for (const auto& p : data_)
      if (p.input.shape() != s0 || p.target.shape() != s0)
        throw ShapeError("Trainer: all pairs must share one image size");
    if (s0.size() != 3 || s0[0] != 3) throw ShapeError("Trainer: pairs must be 3 x H x W, got " + to_string(s0));
    crop_h_ = std::min(cfg_.patch, s0[1]);
    crop_w_ = std::min(cfg_.patch, s0[2]);
    const std::size_t factor = model_.config().downsample_factor();
    if (crop_h_ % factor != 0 || crop_w_ % factor != 0)
      throw ShapeError("Trainer: patch " + std::to_string(crop_h_) + "x" + std::to_string(crop_w_) +
                       " not divisible by " + std::to_string(factor));
    adam_ = AdamState<T>::for_params(model_.params(), AdamHyper{cfg_.lr});
  }

  StepRecord step() {
    const std::size_t B = cfg_.batch_size, H = data_.front().input.dim(1), W = data_.front().input.dim(2);
    Tensor<T> x({B, 3, crop_h_, crop_w_}), y({B, 3, crop_h_, crop_w_});
    std::vector<double> fs(B);
    for (std::size_t b = 0; b < B; ++b) {
      const std::uint64_t k = global_step_ * B + b, n = data_.size();
      if (order_epoch_ != k / n) {
        order_epoch_ = k / n;
        order_ = epoch_order(cfg_.seed, order_epoch_, data_.size());
      }
      const auto& p = data_[order_[k % n]];
      const std::size_t y0 = rng_.uniform_int(H - crop_h_ + 1), x0 = rng_.uniform_int(W - crop_w_ + 1);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t r = 0; r < crop_h_; ++r)
          for (std::size_t q = 0; q < crop_w_; ++q) {
            const std::size_t src = (c * H + y0 + r) * W + x0 + q;
            const std::size_t dst = ((b * 3 + c) * crop_h_ + r) * crop_w_ + q;
            x.raw()[dst] = static_cast<T>(p.input.raw()[src]);
            y.raw()[dst] = static_cast<T>(p.target.raw()[src]);
          }
      fs[b] = p.f_target;
    }
    Var<T> pred = model_.forward(Var<T>::constant(std::move(x)), std::span<const double>(fs));
    auto terms = combined_loss(pred, y, proxy_, cfg_.loss_weight);
    StepRecord rec;
    rec.step = global_step_ + 1;
    rec.loss = static_cast<double>(terms.total.value()[0]);
    rec.l1 = static_cast<double>(terms.l1);
    rec.perceptual = static_cast<double>(terms.perceptual);
    backward(terms.total);
    rec.grad_norm = clip_grad_norm(model_.params(), cfg_.clip_norm);
    if (!std::isfinite(rec.loss) || !std::isfinite(rec.grad_norm)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << rec.step << ": loss=" << rec.loss << " l1=" << rec.l1
          << " perceptual=" << rec.perceptual << " grad_norm=" << rec.grad_norm;
      for (const auto& [name, p] : model_.params()) {
        double n2 = 0;
        if (p.has_grad())
          for (T g : p.grad().data()) n2 += static_cast<double>(g) * static_cast<double>(g);
        if (!std::isfinite(n2)) msg << "\n  non-finite gradient in " << name;
      }
      model_.params().zero_grad();
      throw TrainingError(msg.str());
    }
    adam_step(model_.params(), adam_);
    model_.params().zero_grad();
    ++global_step_;
    if (cfg_.checkpoint_every && !cfg_.checkpoint_path.empty() && global_step_ % cfg_.checkpoint_every == 0)
      save_checkpoint(cfg_.checkpoint_path, checkpoint());
    return rec;
  }

  /// Runs until `cfg.steps` total steps, optionally streaming CSV rows.
  std::vector<StepRecord> run(std::ostream* csv = nullptr,
                              const std::function<void(const StepRecord&)>& on_step = {}) {
    std::vector<StepRecord> out;
    while (global_step_ < cfg_.steps) {
      out.push_back(step());
      if (csv) write_step_row(*csv, out.back());
      if (on_step) on_step(out.back());
    }
    return out;
  }

  Checkpoint checkpoint() const { return make_checkpoint(model_, &adam_, global_step_, rng_.state()); }

  void restore(const Checkpoint& c) {
    apply_checkpoint(c, model_, &adam_);
    if (adam_.m.empty()) adam_ = AdamState<T>::for_params(model_.params(), adam_.hyper);
    global_step_ = c.global_step;
    rng_.set_state(c.rng_state);
  }

  std::uint64_t global_step() const { return global_step_; }
  const TrainConfig& config() const { return cfg_; }
  const AdamState<T>& adam() const { return adam_; }
  const PerceptualProxy<T>& proxy() const { return proxy_; }

 private:
  Model<T>& model_;
  std::vector<SamplePair> data_;
  TrainConfig cfg_;
  SplitMix64 rng_;
  AdamState<T> adam_;
  PerceptualProxy<T> proxy_;
  std::uint64_t global_step_ = 0;
  std::size_t crop_h_ = 0, crop_w_ = 0;
  std::vector<std::size_t> order_;
  std::uint64_t order_epoch_ = std::numeric_limits<std::uint64_t>::max();
};

/// Mean combined loss of the model over every pair, full frame, no updates.
template <class T>
double dataset_loss(const Model<T>& model, const std::vector<SamplePair>& data, double loss_weight,
                    const PerceptualProxy<T>& proxy) {
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& p : data) {
    const auto& s = p.input.shape();
    Tensor<T> x = p.input.template cast<T>().reshaped({1, s[0], s[1], s[2]});
    Tensor<T> y = p.target.template cast<T>().reshaped({1, s[0], s[1], s[2]});
    Var<T> pred = model.forward(Var<T>::constant(std::move(x)), p.f_target);
    total += static_cast<double>(combined_loss(pred, y, proxy, loss_weight).total.value()[0]);
  }
  return total / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Evaluation

/// Pairs are matched to a requested f-number within a twelfth of a stop.
inline constexpr double kStopMatchTolerance = 1.0 / 12.0;

inline bool same_stop(double a, double b) { return std::abs(std::log2(a / b)) < kStopMatchTolerance; }

inline std::string f_column(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", f);
  return buf;
}

struct EvalOptions {
  /// Score the unprocessed input instead of the model output.
  bool input_baseline = false;
};

/// Per-sample rows for every pair whose target f matches an entry of
/// `f_list`, followed by one "mean" row per f and an overall "mean" row
/// labelled "all".
template <class T>
std::vector<MetricRow> evaluate(const Model<T>& model, const std::vector<SamplePair>& data,
                                const std::vector<double>& f_list, EvalOptions opt = {}) {
  std::vector<MetricRow> rows;
  std::vector<MetricRow> means;
  double sp = 0, ss = 0, sl = 0;
  std::size_t total = 0;
  for (double f : f_list) {
    double mp = 0, ms = 0, ml = 0;
    std::size_t n = 0;
    for (const auto& p : data) {
      if (!same_stop(p.f_target, f)) continue;
      const Tensor<float> out =
          opt.input_baseline ? p.input : model.infer(p.input.template cast<T>(), p.f_target).template cast<float>();
      const Tensor<float> pred = out.reshaped(p.target.shape());
      MetricRow r{std::to_string(p.seed), f_column(f), psnr(pred, p.target), ssim(pred, p.target),
                  mean_abs_error(pred, p.target)};
      mp += r.psnr;
      ms += r.ssim;
      ml += r.l1;
      ++n;
      rows.push_back(std::move(r));
    }
    if (n) {
      means.push_back({"mean", f_column(f), mp / n, ms / n, ml / n});
      sp += mp;
      ss += ms;
      sl += ml;
      total += n;
    }
  }
  rows.insert(rows.end(), means.begin(), means.end());
  if (total) rows.push_back({"mean", "all", sp / total, ss / total, sl / total});
  return rows;
}

}  // namespace bokeh

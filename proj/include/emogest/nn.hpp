#pragma once

// Layers and optimization on top of the autograd engine: parameter registry,
// linear/conv layers, layer norm, multi-head attention blocks, squeeze-
// excitation residual conv blocks, sinusoidal positions, Adam.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "emogest/autograd.hpp"
#include "emogest/rng.hpp"

namespace emogest::nn {

using ag::Var;

// ---------------------------------------------------------------------------
// parameter registry
// ---------------------------------------------------------------------------

class ParamStore {
 public:
  Var add(const std::string& name, Tensor init) {
    for (const auto& [n, v] : items_)
      if (n == name) throw std::logic_error("ParamStore: duplicate parameter '" + name + "'");
    Var v = ag::leaf(std::move(init));
    items_.emplace_back(name, v);
    return v;
  }

  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }

  Var find(const std::string& name) const {
    for (const auto& [n, v] : items_)
      if (n == name) return v;
    throw std::out_of_range("ParamStore: no parameter '" + name + "'");
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : items_) n += v->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, v] : items_)
      if (!v->grad.empty()) v->grad.fill(0.0);
  }

  void freeze() {
    for (auto& [name, v] : items_) v->requires_grad = false;
    frozen_ = true;
  }

  bool frozen() const { return frozen_; }

  // FNV-1a over the raw value bytes; detects any weight drift.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& [name, v] : items_) {
      for (unsigned char ch : name) {
        h ^= ch;
        h *= 1099511628211ULL;
      }
      const auto* bytes = reinterpret_cast<const unsigned char*>(v->value.data());
      for (std::size_t i = 0; i < v->value.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    }
    return h;
  }

  // Copy values from a same-named snapshot (shape-checked).
  void load_values(const std::vector<std::pair<std::string, Tensor>>& named) {
    for (const auto& [name, t] : named) {
      Var v = find(name);
      if (!v->value.same_shape(t))
        throw std::runtime_error("ParamStore: shape mismatch loading '" + name + "'");
      v->value = t;
    }
  }

  std::vector<std::pair<std::string, Tensor>> snapshot() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(items_.size());
    for (const auto& [name, v] : items_) out.emplace_back(name, v->value);
    return out;
  }

 private:
  std::vector<std::pair<std::string, Var>> items_;
  bool frozen_ = false;
};

inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::vector<std::size_t> shape,
                     Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return rng.uniform_tensor(std::move(shape), -a, a);
}

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

struct Linear {
  Var w, b;  // w {in,out}, b {1,out}

  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    w = ps.add(prefix + ".w", glorot(in, out, {in, out}, rng));
    b = ps.add(prefix + ".b", Tensor({1, out}));
  }

  Var operator()(const Var& x) const { return ag::add_rv(ag::matmul(x, w), b); }
};

struct LayerNorm {
  Var gain, bias;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& prefix, std::size_t dim) {
    gain = ps.add(prefix + ".gain", Tensor::ones({1, dim}));
    bias = ps.add(prefix + ".bias", Tensor({1, dim}));
  }

  Var operator()(const Var& x) const {
    using namespace ag;
    Var mu = mean_axis1(x);                       // {R,1}
    Var xc = sub_cv(x, mu);
    Var var = mean_axis1(mul(xc, xc));            // {R,1}
    Var sd = sqrt_(add_scalar(var, eps));
    return add_rv(mul_rv(div_cv(xc, sd), gain), bias);
  }
};

// Per-channel mean/std restatistics of {L,D} content to a given style.
// Channels with vanishing spread are normalized against a clamped sigma; the
// caller can inspect which ones via degenerate_channels.
inline Var adain(const Var& content, const Var& gamma, const Var& beta,
                 double sigma_floor = 1e-8) {
  using namespace ag;
  Var mu = mean_axis0(content);                    // {1,D}
  Var xc = sub_rv(content, mu);
  Var var = mean_axis0(mul(xc, xc));               // population variance
  Var sd = clamp_min(sqrt_(var), sigma_floor);
  return add_rv(mul_rv(div_rv(xc, sd), gamma), beta);
}

inline std::vector<std::size_t> degenerate_channels(const Tensor& content,
                                                    double sigma_floor = 1e-8) {
  const std::size_t R = content.rows(), C = content.cols();
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < C; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < R; ++r) m += content(r, c);
    m /= static_cast<double>(R);
    double v = 0.0;
    for (std::size_t r = 0; r < R; ++r) v += (content(r, c) - m) * (content(r, c) - m);
    if (std::sqrt(v / static_cast<double>(R)) < sigma_floor) out.push_back(c);
  }
  return out;
}

// Sinusoidal positions evaluated at normalized time t/(T-1); window lengths
// other than the training one sample the same curves, which is how shorter
// windows are handled downstream.
inline Tensor sinusoidal_positions(std::size_t frames, std::size_t dim, double scale = 10.0) {
  Tensor pe({frames, dim});
  for (std::size_t t = 0; t < frames; ++t) {
    const double pos = frames > 1 ? static_cast<double>(t) / static_cast<double>(frames - 1) : 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double freq = std::pow(scale * 10.0, static_cast<double>(d / 2 * 2) /
                                                     static_cast<double>(dim));
      const double arg = pos * freq * 2.0 * M_PI / scale;
      pe(t, d) = (d % 2 == 0) ? std::sin(arg) : std::cos(arg);
    }
  }
  return pe;
}

// Pre-norm transformer block: x + MHA(LN(x), kv), then x + FFN(LN(x)).
// Self-attention when kv is the block input itself (pass nullptr).
struct AttentionBlock {
  LayerNorm ln1, ln2;
  Linear wq, wk, wv, wo;
  Linear ff1, ff2;
  std::size_t heads = 1;

  AttentionBlock() = default;
  AttentionBlock(ParamStore& ps, const std::string& prefix, std::size_t dim, std::size_t heads_,
                 std::size_t ff_hidden, Rng& rng)
      : ln1(ps, prefix + ".ln1", dim),
        ln2(ps, prefix + ".ln2", dim),
        wq(ps, prefix + ".wq", dim, dim, rng),
        wk(ps, prefix + ".wk", dim, dim, rng),
        wv(ps, prefix + ".wv", dim, dim, rng),
        wo(ps, prefix + ".wo", dim, dim, rng),
        ff1(ps, prefix + ".ff1", dim, ff_hidden, rng),
        ff2(ps, prefix + ".ff2", ff_hidden, dim, rng),
        heads(heads_) {
    if (dim % heads_ != 0) throw std::invalid_argument("AttentionBlock: dim % heads != 0");
  }

  Var operator()(const Var& x, const Var& kv_or_null) const {
    using namespace ag;
    Var qn = ln1(x);
    Var kv = kv_or_null ? kv_or_null : qn;
    Var q = wq(qn), k = wk(kv), v = wv(kv);
    const std::size_t dim = q->value.cols();
    const std::size_t dh = dim / heads;
    std::vector<Var> head_outs;
    head_outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = slice_cols(q, h * dh, (h + 1) * dh);
      Var kh = slice_cols(k, h * dh, (h + 1) * dh);
      Var vh = slice_cols(v, h * dh, (h + 1) * dh);
      head_outs.push_back(attention(qh, kh, vh));
    }
    Var attended = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    Var h1 = add(x, wo(attended));
    Var ff = ff2(relu(ff1(ln2(h1))));
    return add(h1, ff);
  }
};

// ---------------------------------------------------------------------------
// conv blocks
// ---------------------------------------------------------------------------

struct Conv2dLayer {
  Var w, b;
  std::size_t kh = 3, kw = 3, sh = 1, sw = 1, ph = 1, pw = 1;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore& ps, const std::string& prefix, std::size_t in_ch, std::size_t out_ch,
              std::size_t kh_, std::size_t kw_, std::size_t sh_, std::size_t sw_, std::size_t ph_,
              std::size_t pw_, Rng& rng)
      : kh(kh_), kw(kw_), sh(sh_), sw(sw_), ph(ph_), pw(pw_) {
    const std::size_t fan_in = in_ch * kh * kw;
    w = ps.add(prefix + ".w", glorot(fan_in, out_ch, {out_ch, fan_in}, rng));
    b = ps.add(prefix + ".b", Tensor({1, out_ch}));
  }

  Var operator()(const Var& x) const { return ag::conv2d(x, w, b, kh, kw, sh, sw, ph, pw); }
};

struct SqueezeExcite {
  Linear fc1, fc2;

  SqueezeExcite() = default;
  SqueezeExcite(ParamStore& ps, const std::string& prefix, std::size_t channels,
                std::size_t reduced, Rng& rng)
      : fc1(ps, prefix + ".fc1", channels, reduced, rng),
        fc2(ps, prefix + ".fc2", reduced, channels, rng) {}

  Var operator()(const Var& x) const {
    using namespace ag;
    Var s = sigmoid(fc2(relu(fc1(channel_mean(x)))));
    return scale_channels(x, s);
  }
};

// Residual 3x3 conv pair with squeeze-excitation gating; shortcut is a
// strided 1x1 conv when shape changes.
struct SEResBlock {
  Conv2dLayer conv1, conv2, shortcut;
  SqueezeExcite se;
  bool projected = false;

  SEResBlock() = default;
  SEResBlock(ParamStore& ps, const std::string& prefix, std::size_t in_ch, std::size_t out_ch,
             std::size_t stride, Rng& rng)
      : conv1(ps, prefix + ".conv1", in_ch, out_ch, 3, 3, stride, stride, 1, 1, rng),
        conv2(ps, prefix + ".conv2", out_ch, out_ch, 3, 3, 1, 1, 1, 1, rng),
        se(ps, prefix + ".se", out_ch, std::max<std::size_t>(out_ch / 4, 1), rng) {
    if (in_ch != out_ch || stride != 1) {
      shortcut = Conv2dLayer(ps, prefix + ".shortcut", in_ch, out_ch, 1, 1, stride, stride, 0, 0,
                             rng);
      projected = true;
    }
  }

  Var operator()(const Var& x) const {
    using namespace ag;
    Var h = se(conv2(relu(conv1(x))));
    Var skip = projected ? shortcut(x) : x;
    return relu(add(h, skip));
  }
};

struct Conv1dLayer {
  Var w, b;
  std::size_t k = 5, stride = 2, pad = 2;

  Conv1dLayer() = default;
  Conv1dLayer(ParamStore& ps, const std::string& prefix, std::size_t in_ch, std::size_t out_ch,
              std::size_t k_, std::size_t stride_, std::size_t pad_, Rng& rng)
      : k(k_), stride(stride_), pad(pad_) {
    const std::size_t fan_in = in_ch * k;
    w = ps.add(prefix + ".w", glorot(fan_in, out_ch, {out_ch, fan_in}, rng));
    b = ps.add(prefix + ".b", Tensor({1, out_ch}));
  }

  Var operator()(const Var& x) const { return ag::conv1d(x, w, b, k, stride, pad); }
};

// ---------------------------------------------------------------------------
// optimization
// ---------------------------------------------------------------------------

inline double global_grad_norm(const ParamStore& ps) {
  double sq = 0.0;
  for (const auto& [name, v] : ps.items()) {
    if (v->grad.empty()) continue;
    for (std::size_t i = 0; i < v->grad.size(); ++i) sq += v->grad[i] * v->grad[i];
  }
  return std::sqrt(sq);
}

inline void clip_grad_norm(ParamStore& ps, double max_norm) {
  if (max_norm <= 0) return;
  const double norm = global_grad_norm(ps);
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (const auto& [name, v] : ps.items()) {
    if (v->grad.empty()) continue;
    flat(v->grad) *= scale;
  }
}

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& ps) {
    const auto& items = ps.items();
    if (m_.empty()) {
      m_.resize(items.size());
      v_.resize(items.size());
      for (std::size_t i = 0; i < items.size(); ++i) {
        m_[i] = Tensor(items[i].second->value.shape());
        v_[i] = Tensor(items[i].second->value.shape());
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < items.size(); ++i) {
      const Var& p = items[i].second;
      if (p->grad.empty() || !p->requires_grad) continue;
      for (std::size_t j = 0; j < p->value.size(); ++j) {
        const double g = p->grad[j];
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        p->value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace emogest::nn

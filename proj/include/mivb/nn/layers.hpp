#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mivb/nn/tensor.hpp"

namespace mivb::nn {

enum class Mode { train, eval };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string nm, Tensor<T> v) : name(std::move(nm)), value(std::move(v)) {
    grad = Tensor<T>(value.n(), value.c(), value.h(), value.w());
  }
  void zero_grad() { grad.fill(T(0)); }
};

// A differentiable layer. forward() caches what backward() needs, so a layer
// instance serves one forward/backward pair at a time. backward() always
// returns the input gradient; parameter gradients are accumulated only when
// `param_grads` is set.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) = 0;
  virtual std::vector<Parameter<T>*> parameters() { return {}; }
  // Non-trainable state that a checkpoint must carry (batch-norm statistics).
  virtual std::vector<Tensor<T>*> buffers() { return {}; }
  virtual std::unique_ptr<Layer<T>> clone() const = 0;
  virtual std::string name() const = 0;
};

template <typename T>
using LayerPtr = std::unique_ptr<Layer<T>>;

namespace detail {

template <typename T>
void kaiming_normal(Tensor<T>& w, int fan, std::mt19937_64& rng, double gain = std::sqrt(2.0)) {
  std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(std::max(fan, 1))));
  for (auto& v : w.storage()) v = static_cast<T>(dist(rng));
}

inline int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// Output columns [lo, hi) whose input column ow * stride - pad + kj lies inside [0, w).
inline std::pair<int, int> valid_range(int w, int wo, int stride, int pad, int kj) {
  int lo = 0;
  while (lo < wo && lo * stride - pad + kj < 0) ++lo;
  int hi = wo;
  while (hi > lo && (hi - 1) * stride - pad + kj >= w) --hi;
  return {lo, hi};
}

// cols: [C*k*k, N*Ho*Wo], column index n*Ho*Wo + oh*Wo + ow.
template <typename T>
void im2col(const Tensor<T>& x, int k, int stride, int pad, int ho, int wo, RowMatrix<T>& cols) {
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  const std::size_t hw_out = static_cast<std::size_t>(ho) * wo;
  cols.resize(static_cast<Eigen::Index>(c) * k * k, static_cast<Eigen::Index>(n * hw_out));
  for (int ci = 0; ci < c; ++ci)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols.data() + ((static_cast<std::size_t>(ci) * k + ki) * k + kj) * n * hw_out;
        const auto [lo, hi] = valid_range(w, wo, stride, pad, kj);
        for (int b = 0; b < n; ++b) {
          const T* src = x.data() + x.index(b, ci, 0, 0);
          T* dst = row + b * hw_out;
          for (int oh = 0; oh < ho; ++oh) {
            T* d = dst + oh * wo;
            const int ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= h) {
              std::fill_n(d, wo, T(0));
              continue;
            }
            std::fill_n(d, lo, T(0));
            std::fill(d + hi, d + wo, T(0));
            const T* s = src + ih * w - pad + kj;
            if (stride == 1) {
              std::copy(s + lo, s + hi, d + lo);
            } else {
              for (int ow = lo; ow < hi; ++ow) d[ow] = s[ow * stride];
            }
          }
        }
      }
}

template <typename T>
void col2im(const RowMatrix<T>& cols, int k, int stride, int pad, int ho, int wo, Tensor<T>& x) {
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  const std::size_t hw_out = static_cast<std::size_t>(ho) * wo;
  x.fill(T(0));
  for (int ci = 0; ci < c; ++ci)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols.data() + ((static_cast<std::size_t>(ci) * k + ki) * k + kj) * n * hw_out;
        const auto [lo, hi] = valid_range(w, wo, stride, pad, kj);
        for (int b = 0; b < n; ++b) {
          T* dst = x.data() + x.index(b, ci, 0, 0);
          const T* src = row + b * hw_out;
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= h) continue;
            T* d = dst + ih * w - pad + kj;
            const T* s = src + oh * wo;
            for (int ow = lo; ow < hi; ++ow) d[ow * stride] += s[ow];
          }
        }
      }
}

// [C, N*HW] matrix <-> NCHW tensor.
template <typename T>
void channel_major_to_nchw(const RowMatrix<T>& m, Tensor<T>& out) {
  const std::size_t hw = static_cast<std::size_t>(out.h()) * out.w();
  for (int ch = 0; ch < out.c(); ++ch)
    for (int b = 0; b < out.n(); ++b)
      std::copy_n(m.data() + (static_cast<std::size_t>(ch) * out.n() + b) * hw, hw,
                  out.data() + out.index(b, ch, 0, 0));
}

template <typename T>
RowMatrix<T> nchw_to_channel_major(const Tensor<T>& t) {
  const std::size_t hw = static_cast<std::size_t>(t.h()) * t.w();
  RowMatrix<T> m(t.c(), static_cast<Eigen::Index>(t.n() * hw));
  for (int ch = 0; ch < t.c(); ++ch)
    for (int b = 0; b < t.n(); ++b)
      std::copy_n(t.data() + t.index(b, ch, 0, 0), hw, m.data() + (static_cast<std::size_t>(ch) * t.n() + b) * hw);
  return m;
}

}  // namespace detail

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, bool bias, std::mt19937_64& rng)
      : in_(in_ch), out_(out_ch), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias),
        weight_("weight", Tensor<T>(out_ch, in_ch, kernel, kernel)) {
    detail::kaiming_normal(weight_.value, in_ch * kernel * kernel, rng);
    if (has_bias_) bias_ = Parameter<T>("bias", Tensor<T>(out_ch, 1, 1, 1));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.c() != in_) throw std::invalid_argument("Conv2d: expected " + std::to_string(in_) + " channels, got " + x.shape_string());
    input_ = x;
    const int ho = detail::conv_out(x.h(), k_, stride_, pad_), wo = detail::conv_out(x.w(), k_, stride_, pad_);
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("Conv2d: input too small " + x.shape_string());
    RowMatrix<T> cols;
    detail::im2col(x, k_, stride_, pad_, ho, wo, cols);
    ConstMatrixMap<T> wm(weight_.value.data(), out_, static_cast<Eigen::Index>(in_) * k_ * k_);
    RowMatrix<T> res = wm * cols;
    if (has_bias_)
      for (int o = 0; o < out_; ++o) res.row(o).array() += bias_.value[o];
    Tensor<T> out(x.n(), out_, ho, wo);
    detail::channel_major_to_nchw(res, out);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& g, bool param_grads) override {
    const int ho = g.h(), wo = g.w();
    RowMatrix<T> gm = detail::nchw_to_channel_major(g);
    ConstMatrixMap<T> wm(weight_.value.data(), out_, static_cast<Eigen::Index>(in_) * k_ * k_);
    RowMatrix<T> cols;
    if (param_grads) {
      detail::im2col(input_, k_, stride_, pad_, ho, wo, cols);
      MatrixMap<T> gw(weight_.grad.data(), out_, static_cast<Eigen::Index>(in_) * k_ * k_);
      gw.noalias() += gm * cols.transpose();
      if (has_bias_)
        for (int o = 0; o < out_; ++o) bias_.grad[o] += gm.row(o).sum();
    }
    cols.noalias() = wm.transpose() * gm;
    Tensor<T> gin(input_.n(), input_.c(), input_.h(), input_.w());
    detail::col2im(cols, k_, stride_, pad_, ho, wo, gin);
    return gin;
  }

  std::vector<Parameter<T>*> parameters() override {
    if (has_bias_) return {&weight_, &bias_};
    return {&weight_};
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }
  std::string name() const override { return "conv2d"; }

  Parameter<T>& weight() { return weight_; }
  int out_channels() const { return out_; }

 private:
  int in_, out_, k_, stride_, pad_;
  bool has_bias_;
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

// Weight layout (in_ch, out_ch, k, k). Output extent (in - 1) * stride - 2 * pad + k.
template <typename T>
class ConvTranspose2d final : public Layer<T> {
 public:
  ConvTranspose2d(int in_ch, int out_ch, int kernel, int stride, int pad, bool bias, std::mt19937_64& rng)
      : in_(in_ch), out_(out_ch), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias),
        weight_("weight", Tensor<T>(in_ch, out_ch, kernel, kernel)) {
    detail::kaiming_normal(weight_.value, in_ch * kernel * kernel / (stride * stride), rng);
    if (has_bias_) bias_ = Parameter<T>("bias", Tensor<T>(out_ch, 1, 1, 1));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.c() != in_) throw std::invalid_argument("ConvTranspose2d: channel mismatch " + x.shape_string());
    input_ = x;
    const int ho = (x.h() - 1) * stride_ - 2 * pad_ + k_, wo = (x.w() - 1) * stride_ - 2 * pad_ + k_;
    RowMatrix<T> xm = detail::nchw_to_channel_major(x);
    ConstMatrixMap<T> wm(weight_.value.data(), in_, static_cast<Eigen::Index>(out_) * k_ * k_);
    RowMatrix<T> cols = wm.transpose() * xm;
    Tensor<T> out(x.n(), out_, ho, wo);
    detail::col2im(cols, k_, stride_, pad_, x.h(), x.w(), out);
    if (has_bias_)
      for (int b = 0; b < out.n(); ++b)
        for (int o = 0; o < out_; ++o) {
          T* p = out.data() + out.index(b, o, 0, 0);
          for (int i = 0; i < ho * wo; ++i) p[i] += bias_.value[o];
        }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& g, bool param_grads) override {
    RowMatrix<T> cols;
    detail::im2col(g, k_, stride_, pad_, input_.h(), input_.w(), cols);
    ConstMatrixMap<T> wm(weight_.value.data(), in_, static_cast<Eigen::Index>(out_) * k_ * k_);
    if (param_grads) {
      RowMatrix<T> xm = detail::nchw_to_channel_major(input_);
      MatrixMap<T> gw(weight_.grad.data(), in_, static_cast<Eigen::Index>(out_) * k_ * k_);
      gw.noalias() += xm * cols.transpose();
      if (has_bias_)
        for (int b = 0; b < g.n(); ++b)
          for (int o = 0; o < out_; ++o) {
            const T* p = g.data() + g.index(b, o, 0, 0);
            T s = 0;
            for (int i = 0; i < g.h() * g.w(); ++i) s += p[i];
            bias_.grad[o] += s;
          }
    }
    RowMatrix<T> gin_m = wm * cols;
    Tensor<T> gin(input_.n(), in_, input_.h(), input_.w());
    detail::channel_major_to_nchw(gin_m, gin);
    return gin;
  }

  std::vector<Parameter<T>*> parameters() override {
    if (has_bias_) return {&weight_, &bias_};
    return {&weight_};
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ConvTranspose2d>(*this); }
  std::string name() const override { return "conv_transpose2d"; }

 private:
  int in_, out_, k_, stride_, pad_;
  bool has_bias_;
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

// Fully connected layer over the flattened (c, h, w) sample; output (n, out, 1, 1).
template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(int in_features, int out_features, std::mt19937_64& rng, double gain = 1.0)
      : in_(in_features), out_(out_features),
        weight_("weight", Tensor<T>(out_features, in_features, 1, 1)),
        bias_("bias", Tensor<T>(out_features, 1, 1, 1)) {
    detail::kaiming_normal(weight_.value, in_features, rng, gain);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (static_cast<int>(x.sample_size()) != in_)
      throw std::invalid_argument("Linear: expected " + std::to_string(in_) + " features, got " + x.shape_string());
    input_ = x;
    ConstMatrixMap<T> xm(x.data(), x.n(), in_);
    ConstMatrixMap<T> wm(weight_.value.data(), out_, in_);
    Tensor<T> out(x.n(), out_, 1, 1);
    MatrixMap<T> om(out.data(), x.n(), out_);
    om.noalias() = xm * wm.transpose();
    for (int b = 0; b < x.n(); ++b)
      for (int o = 0; o < out_; ++o) om(b, o) += bias_.value[o];
    return out;
  }

  Tensor<T> backward(const Tensor<T>& g, bool param_grads) override {
    ConstMatrixMap<T> gm(g.data(), g.n(), out_);
    ConstMatrixMap<T> wm(weight_.value.data(), out_, in_);
    if (param_grads) {
      ConstMatrixMap<T> xm(input_.data(), input_.n(), in_);
      MatrixMap<T> gw(weight_.grad.data(), out_, in_);
      gw.noalias() += gm.transpose() * xm;
      for (int b = 0; b < g.n(); ++b)
        for (int o = 0; o < out_; ++o) bias_.grad[o] += gm(b, o);
    }
    Tensor<T> gin(input_.n(), input_.c(), input_.h(), input_.w());
    MatrixMap<T> gi(gin.data(), input_.n(), in_);
    gi.noalias() = gm * wm;
    return gin;
  }

  std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Linear>(*this); }
  std::string name() const override { return "linear"; }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  int in_, out_;
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5)
      : c_(channels), momentum_(momentum), eps_(eps),
        gamma_("gamma", Tensor<T>(channels, 1, 1, 1, T(1))), beta_("beta", Tensor<T>(channels, 1, 1, 1)),
        running_mean_(channels, 1, 1, 1), running_var_(channels, 1, 1, 1, T(1)) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    if (x.c() != c_) throw std::invalid_argument("BatchNorm2d: channel mismatch");
    const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
    const double count = static_cast<double>(hw) * x.n();
    Tensor<T> out(x.n(), x.c(), x.h(), x.w());
    mode_ = mode;
    xhat_ = Tensor<T>(x.n(), x.c(), x.h(), x.w());
    inv_std_.assign(c_, T(0));
    for (int ch = 0; ch < c_; ++ch) {
      double mean, var;
      if (mode == Mode::train) {
        double s = 0, s2 = 0;
        for (int b = 0; b < x.n(); ++b) {
          const T* p = x.data() + x.index(b, ch, 0, 0);
          for (std::size_t i = 0; i < hw; ++i) s += p[i];
        }
        mean = s / count;
        for (int b = 0; b < x.n(); ++b) {
          const T* p = x.data() + x.index(b, ch, 0, 0);
          for (std::size_t i = 0; i < hw; ++i) s2 += (p[i] - mean) * (p[i] - mean);
        }
        var = s2 / count;
        const double unbiased = count > 1 ? s2 / (count - 1) : var;
        running_mean_[ch] = static_cast<T>((1 - momentum_) * running_mean_[ch] + momentum_ * mean);
        running_var_[ch] = static_cast<T>((1 - momentum_) * running_var_[ch] + momentum_ * unbiased);
      } else {
        mean = running_mean_[ch];
        var = running_var_[ch];
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(var + eps_));
      inv_std_[ch] = inv;
      const T m = static_cast<T>(mean);
      for (int b = 0; b < x.n(); ++b) {
        const std::size_t off = x.index(b, ch, 0, 0);
        for (std::size_t i = 0; i < hw; ++i) {
          const T xh = (x[off + i] - m) * inv;
          xhat_[off + i] = xh;
          out[off + i] = gamma_.value[ch] * xh + beta_.value[ch];
        }
      }
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& g, bool param_grads) override {
    const std::size_t hw = static_cast<std::size_t>(g.h()) * g.w();
    const double count = static_cast<double>(hw) * g.n();
    Tensor<T> gin(g.n(), g.c(), g.h(), g.w());
    for (int ch = 0; ch < c_; ++ch) {
      double sg = 0, sgx = 0;
      for (int b = 0; b < g.n(); ++b) {
        const std::size_t off = g.index(b, ch, 0, 0);
        for (std::size_t i = 0; i < hw; ++i) {
          sg += g[off + i];
          sgx += g[off + i] * xhat_[off + i];
        }
      }
      if (param_grads) {
        gamma_.grad[ch] += static_cast<T>(sgx);
        beta_.grad[ch] += static_cast<T>(sg);
      }
      const T scale = gamma_.value[ch] * inv_std_[ch];
      for (int b = 0; b < g.n(); ++b) {
        const std::size_t off = g.index(b, ch, 0, 0);
        if (mode_ == Mode::train) {
          const T mg = static_cast<T>(sg / count), mgx = static_cast<T>(sgx / count);
          for (std::size_t i = 0; i < hw; ++i) gin[off + i] = scale * (g[off + i] - mg - xhat_[off + i] * mgx);
        } else {
          for (std::size_t i = 0; i < hw; ++i) gin[off + i] = scale * g[off + i];
        }
      }
    }
    return gin;
  }

  std::vector<Parameter<T>*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Tensor<T>*> buffers() override { return {&running_mean_, &running_var_}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
  std::string name() const override { return "batchnorm2d"; }

 private:
  int c_;
  double momentum_, eps_;
  Parameter<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  Mode mode_ = Mode::eval;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

// slope == 0 gives a plain rectifier.
template <typename T>
class LeakyReLU final : public Layer<T> {
 public:
  explicit LeakyReLU(double slope = 0.0) : slope_(static_cast<T>(slope)) {}

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    input_ = x;
    Tensor<T> out = x;
    for (auto& v : out.storage())
      if (v < T(0)) v *= slope_;
    return out;
  }
  Tensor<T> backward(const Tensor<T>& g, bool) override {
    Tensor<T> gin = g;
    for (std::size_t i = 0; i < gin.size(); ++i)
      if (input_[i] < T(0)) gin[i] *= slope_;
    return gin;
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<LeakyReLU>(*this); }
  std::string name() const override { return slope_ == T(0) ? "relu" : "leaky_relu"; }

 private:
  T slope_;
  Tensor<T> input_;
};

template <typename T>
std::unique_ptr<Layer<T>> make_relu() {
  return std::make_unique<LeakyReLU<T>>(0.0);
}

// Inverted dropout; identity in eval mode. Owns its RNG so runs are reproducible.
template <typename T>
class Dropout final : public Layer<T> {
 public:
  Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
    if (rate < 0 || rate >= 1) throw std::invalid_argument("Dropout: rate must be in [0, 1)");
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    active_ = mode == Mode::train && rate_ > 0;
    if (!active_) return x;
    mask_ = Tensor<T>(x.n(), x.c(), x.h(), x.w());
    std::bernoulli_distribution keep(1.0 - rate_);
    const T scale = static_cast<T>(1.0 / (1.0 - rate_));
    Tensor<T> out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
      mask_[i] = keep(rng_) ? scale : T(0);
      out[i] *= mask_[i];
    }
    return out;
  }
  Tensor<T> backward(const Tensor<T>& g, bool) override {
    if (!active_) return g;
    Tensor<T> gin = g;
    for (std::size_t i = 0; i < gin.size(); ++i) gin[i] *= mask_[i];
    return gin;
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dropout>(*this); }
  std::string name() const override { return "dropout"; }

 private:
  double rate_;
  std::mt19937_64 rng_;
  bool active_ = false;
  Tensor<T> mask_;
};

template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = Tensor<T>(0, x.c(), x.h(), x.w());
    in_n_ = x.n();
    const int ho = x.h() / 2, wo = x.w() / 2;
    if (ho == 0 || wo == 0) throw std::invalid_argument("MaxPool2d: input too small " + x.shape_string());
    Tensor<T> out(x.n(), x.c(), ho, wo);
    argmax_.assign(out.size(), 0);
    for (int b = 0; b < x.n(); ++b)
      for (int ch = 0; ch < x.c(); ++ch)
        for (int i = 0; i < ho; ++i)
          for (int j = 0; j < wo; ++j) {
            std::size_t best = x.index(b, ch, 2 * i, 2 * j);
            for (int di = 0; di < 2; ++di)
              for (int dj = 0; dj < 2; ++dj) {
                const std::size_t idx = x.index(b, ch, 2 * i + di, 2 * j + dj);
                if (x[idx] > x[best]) best = idx;
              }
            const std::size_t o = out.index(b, ch, i, j);
            out[o] = x[best];
            argmax_[o] = best;
          }
    return out;
  }
  Tensor<T> backward(const Tensor<T>& g, bool) override {
    Tensor<T> gin(in_n_, in_shape_.c(), in_shape_.h(), in_shape_.w());
    for (std::size_t o = 0; o < g.size(); ++o) gin[argmax_[o]] += g[o];
    return gin;
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2d>(*this); }
  std::string name() const override { return "maxpool2d"; }

 private:
  Tensor<T> in_shape_;
  int in_n_ = 0;
  std::vector<std::size_t> argmax_;
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    n_ = x.n();
    c_ = x.c();
    h_ = x.h();
    w_ = x.w();
    Tensor<T> out(x.n(), x.c(), 1, 1);
    const std::size_t hw = static_cast<std::size_t>(h_) * w_;
    for (int b = 0; b < n_; ++b)
      for (int ch = 0; ch < c_; ++ch) {
        const T* p = x.data() + x.index(b, ch, 0, 0);
        T s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
        out.at(b, ch, 0, 0) = s / static_cast<T>(hw);
      }
    return out;
  }
  Tensor<T> backward(const Tensor<T>& g, bool) override {
    Tensor<T> gin(n_, c_, h_, w_);
    const std::size_t hw = static_cast<std::size_t>(h_) * w_;
    for (int b = 0; b < n_; ++b)
      for (int ch = 0; ch < c_; ++ch) {
        const T v = g.at(b, ch, 0, 0) / static_cast<T>(hw);
        std::fill_n(gin.data() + gin.index(b, ch, 0, 0), hw, v);
      }
    return gin;
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  std::string name() const override { return "global_avg_pool"; }

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
};

// Maps unbounded values into the pixel range: 127.5 * (tanh(x) + 1).
template <typename T>
class TanhToPixels final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    out_ = x;
    for (auto& v : out_.storage()) v = std::tanh(v);
    Tensor<T> px = out_;
    for (auto& v : px.storage()) v = T(127.5) * (v + T(1));
    return px;
  }
  Tensor<T> backward(const Tensor<T>& g, bool) override {
    Tensor<T> gin = g;
    for (std::size_t i = 0; i < gin.size(); ++i) gin[i] *= T(127.5) * (T(1) - out_[i] * out_[i]);
    return gin;
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<TanhToPixels>(*this); }
  std::string name() const override { return "tanh_to_pixels"; }

 private:
  Tensor<T> out_;
};

template <typename T>
class Sequential final : public Layer<T> {
 public:
  Sequential() = default;
  Sequential(const Sequential& o) {
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  Sequential& operator=(const Sequential& o) {
    if (this != &o) {
      layers_.clear();
      for (const auto& l : o.layers_) layers_.push_back(l->clone());
    }
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  Sequential& add(LayerPtr<T> layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h, mode);
    return h;
  }
  Tensor<T> backward(const Tensor<T>& g, bool param_grads) override {
    Tensor<T> h = g;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) h = (*it)->backward(h, param_grads);
    return h;
  }
  std::vector<Parameter<T>*> parameters() override {
    std::vector<Parameter<T>*> out;
    for (auto& l : layers_)
      for (auto* p : l->parameters()) out.push_back(p);
    return out;
  }
  std::vector<Tensor<T>*> buffers() override {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers_)
      for (auto* b : l->buffers()) out.push_back(b);
    return out;
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Sequential>(*this); }
  std::string name() const override { return "sequential"; }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }

 private:
  std::vector<LayerPtr<T>> layers_;
};

// Pre-activation wide residual block: BN-ReLU-conv3x3-BN-ReLU-[dropout]-conv3x3,
// with a 1x1 projection shortcut when shape changes.
template <typename T>
class WideBasicBlock final : public Layer<T> {
 public:
  WideBasicBlock(int in_ch, int out_ch, int stride, double dropout, std::mt19937_64& rng)
      : equal_(in_ch == out_ch && stride == 1), bn1_(in_ch), relu1_(0.0),
        conv1_(in_ch, out_ch, 3, stride, 1, false, rng), bn2_(out_ch), relu2_(0.0),
        drop_(dropout, rng()), conv2_(out_ch, out_ch, 3, 1, 1, false, rng) {
    if (!equal_) shortcut_ = std::make_unique<Conv2d<T>>(in_ch, out_ch, 1, stride, 0, false, rng);
  }
  WideBasicBlock(const WideBasicBlock& o)
      : equal_(o.equal_), bn1_(o.bn1_), relu1_(o.relu1_), conv1_(o.conv1_), bn2_(o.bn2_), relu2_(o.relu2_),
        drop_(o.drop_), conv2_(o.conv2_) {
    if (o.shortcut_) shortcut_ = std::make_unique<Conv2d<T>>(*o.shortcut_);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> a = relu1_.forward(bn1_.forward(x, mode), mode);
    Tensor<T> h = conv1_.forward(a, mode);
    h = relu2_.forward(bn2_.forward(h, mode), mode);
    h = conv2_.forward(drop_.forward(h, mode), mode);
    if (equal_)
      h += x;
    else
      h += shortcut_->forward(a, mode);
    return h;
  }

  Tensor<T> backward(const Tensor<T>& g, bool pg) override {
    Tensor<T> gh = drop_.backward(conv2_.backward(g, pg), pg);
    gh = conv1_.backward(bn2_.backward(relu2_.backward(gh, pg), pg), pg);
    if (!equal_) gh += shortcut_->backward(g, pg);
    Tensor<T> gx = bn1_.backward(relu1_.backward(gh, pg), pg);
    if (equal_) gx += g;
    return gx;
  }

  std::vector<Parameter<T>*> parameters() override {
    std::vector<Parameter<T>*> out;
    for (Layer<T>* l : sublayers())
      for (auto* p : l->parameters()) out.push_back(p);
    return out;
  }
  std::vector<Tensor<T>*> buffers() override {
    std::vector<Tensor<T>*> out;
    for (Layer<T>* l : sublayers())
      for (auto* b : l->buffers()) out.push_back(b);
    return out;
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<WideBasicBlock>(*this); }
  std::string name() const override { return "wide_basic_block"; }

 private:
  std::vector<Layer<T>*> sublayers() {
    std::vector<Layer<T>*> v{&bn1_, &conv1_, &bn2_, &conv2_};
    if (shortcut_) v.push_back(shortcut_.get());
    return v;
  }

  bool equal_;
  BatchNorm2d<T> bn1_;
  LeakyReLU<T> relu1_;
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn2_;
  LeakyReLU<T> relu2_;
  Dropout<T> drop_;
  Conv2d<T> conv2_;
  std::unique_ptr<Conv2d<T>> shortcut_;
};

}  // namespace mivb::nn

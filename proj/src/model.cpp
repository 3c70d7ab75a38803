#include "ntp/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ntp/io.hpp"
#include "ntp/mathutil.hpp"
#include "ntp/parallel.hpp"
#include "json.hpp"

namespace ntp::model {

using nlohmann::json;
namespace fs = std::filesystem;

std::size_t SparsityMask::zeros() const {
  std::size_t z = 0;
  for (const auto k : keep) z += (k == 0);
  return z;
}

double SparsityMask::sparsity() const {
  if (keep.empty()) throw std::invalid_argument("empty mask");
  return static_cast<double>(zeros()) / static_cast<double>(keep.size());
}

double density(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("density of empty vector");
  std::size_t nz = 0;
  for (const double x : v) nz += (x != 0.0);
  return static_cast<double>(nz) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

namespace {

struct Dims {
  std::size_t c = 0, h = 0, w = 0;
  std::size_t numel() const { return c * h * w; }
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Dims out_dims(Dims in) const = 0;
  virtual std::size_t param_count() const { return 0; }
  virtual void assign_storage(std::span<double>) {}
  virtual void init_params(Rng&) {}
  virtual void describe(const std::string&, std::size_t, std::vector<TensorDesc>&) const {}
  virtual void forward(const Batch& in, Batch& out, std::size_t b, std::size_t e) const = 0;
  /// din is zero-initialized for [b,e); g covers this layer's parameters.
  virtual void backward(const Batch& in, const Batch& out, const Batch& dout, Batch& din,
                        std::size_t b, std::size_t e, std::span<double> g) const = 0;
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t stride, std::size_t pad)
      : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad) {}

  Dims out_dims(Dims in) const override {
    if (in.c != in_c_) throw std::invalid_argument("conv channel mismatch");
    const std::size_t oh = (in.h + 2 * pad_ - k_) / stride_ + 1;
    const std::size_t ow = (in.w + 2 * pad_ - k_) / stride_ + 1;
    return {out_c_, oh, ow};
  }
  std::size_t param_count() const override { return out_c_ * in_c_ * k_ * k_ + out_c_; }
  void assign_storage(std::span<double> p) override {
    weight_ = p.subspan(0, out_c_ * in_c_ * k_ * k_);
    bias_ = p.subspan(weight_.size(), out_c_);
  }
  void init_params(Rng& rng) override {
    const double scale = std::sqrt(2.0 / static_cast<double>(in_c_ * k_ * k_));
    for (auto& w : weight_) w = rng.normal(0.0, scale);
    for (auto& b : bias_) b = 0.0;
  }
  void describe(const std::string& prefix, std::size_t base, std::vector<TensorDesc>& out) const override {
    out.push_back({prefix + ".weight", {out_c_, in_c_, k_, k_}, true, false, base, weight_.size()});
    out.push_back({prefix + ".bias", {out_c_}, false, false, base + weight_.size(), bias_.size()});
  }

  void forward(const Batch& in, Batch& out, std::size_t b, std::size_t e) const override {
    const std::size_t H = in.h, W = in.w, OH = out.h, OW = out.w;
    for (std::size_t s = b; s < e; ++s) {
      const double* is = in.sample(s);
      double* os = out.sample(s);
      for (std::size_t oc = 0; oc < out_c_; ++oc) {
        double* plane = os + oc * OH * OW;
        std::fill(plane, plane + OH * OW, bias_[oc]);
        for (std::size_t ic = 0; ic < in_c_; ++ic) {
          const double* iplane = is + ic * H * W;
          for (std::size_t ky = 0; ky < k_; ++ky) {
            for (std::size_t kx = 0; kx < k_; ++kx) {
              const double wv = weight_[((oc * in_c_ + ic) * k_ + ky) * k_ + kx];
              if (wv == 0.0) continue;  // pruned weights cost nothing
              forward_tap(iplane, plane, wv, H, W, OH, OW, ky, kx);
            }
          }
        }
      }
    }
  }

  void backward(const Batch& in, const Batch&, const Batch& dout, Batch& din, std::size_t b,
                std::size_t e, std::span<double> g) const override {
    const std::size_t H = in.h, W = in.w, OH = dout.h, OW = dout.w;
    std::span<double> gw = g.subspan(0, weight_.size());
    std::span<double> gb = g.subspan(weight_.size(), bias_.size());
    for (std::size_t s = b; s < e; ++s) {
      const double* is = in.sample(s);
      const double* ds = dout.sample(s);
      double* dis = din.sample(s);
      for (std::size_t oc = 0; oc < out_c_; ++oc) {
        const double* dplane = ds + oc * OH * OW;
        double acc = 0.0;
        for (std::size_t i = 0; i < OH * OW; ++i) acc += dplane[i];
        gb[oc] += acc;
        for (std::size_t ic = 0; ic < in_c_; ++ic) {
          const double* iplane = is + ic * H * W;
          double* diplane = dis + ic * H * W;
          for (std::size_t ky = 0; ky < k_; ++ky) {
            for (std::size_t kx = 0; kx < k_; ++kx) {
              const std::size_t widx = ((oc * in_c_ + ic) * k_ + ky) * k_ + kx;
              gw[widx] += backward_tap(iplane, diplane, dplane, weight_[widx], H, W, OH, OW, ky, kx);
            }
          }
        }
      }
    }
  }

 private:
  // valid output range for a kernel tap: iy = oy*stride + ky - pad in [0, H)
  static std::pair<std::size_t, std::size_t> tap_range(std::size_t size, std::size_t osize,
                                                       std::size_t k_off, std::size_t stride,
                                                       std::size_t pad) {
    std::size_t lo = 0;
    if (k_off < pad) lo = (pad - k_off + stride - 1) / stride;
    std::size_t hi = osize;
    // need oy*stride + k_off - pad <= size-1
    const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(size) - 1 -
                               (static_cast<std::ptrdiff_t>(k_off) - static_cast<std::ptrdiff_t>(pad));
    if (top < 0) return {0, 0};
    hi = std::min<std::size_t>(hi, static_cast<std::size_t>(top) / stride + 1);
    return {lo, std::max(lo, hi) == lo && hi < lo ? lo : hi};
  }

  void forward_tap(const double* iplane, double* oplane, double wv, std::size_t H, std::size_t W,
                   std::size_t OH, std::size_t OW, std::size_t ky, std::size_t kx) const {
    const auto [oy0, oy1] = tap_range(H, OH, ky, stride_, pad_);
    const auto [ox0, ox1] = tap_range(W, OW, kx, stride_, pad_);
    for (std::size_t oy = oy0; oy < oy1; ++oy) {
      const std::size_t iy = oy * stride_ + ky - pad_;
      const double* irow = iplane + iy * W + (ox0 * stride_ + kx - pad_);
      double* orow = oplane + oy * OW;
      if (stride_ == 1) {
        for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox - ox0];
      } else {
        for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[(ox - ox0) * stride_];
      }
    }
  }

  double backward_tap(const double* iplane, double* diplane, const double* dplane, double wv,
                      std::size_t H, std::size_t W, std::size_t OH, std::size_t OW, std::size_t ky,
                      std::size_t kx) const {
    const auto [oy0, oy1] = tap_range(H, OH, ky, stride_, pad_);
    const auto [ox0, ox1] = tap_range(W, OW, kx, stride_, pad_);
    double gw = 0.0;
    for (std::size_t oy = oy0; oy < oy1; ++oy) {
      const std::size_t iy = oy * stride_ + ky - pad_;
      const std::size_t ibase = iy * W + (ox0 * stride_ + kx - pad_);
      const double* drow = dplane + oy * OW;
      for (std::size_t ox = ox0; ox < ox1; ++ox) {
        const std::size_t ii = ibase + (ox - ox0) * stride_;
        const double gy = drow[ox];
        gw += gy * iplane[ii];
        diplane[ii] += wv * gy;
      }
    }
    return gw;
  }

  std::size_t in_c_, out_c_, k_, stride_, pad_;
  std::span<double> weight_, bias_;
};

class Linear final : public Layer {
 public:
  Linear(std::size_t in, std::size_t out) : in_(in), out_(out) {}

  Dims out_dims(Dims in) const override {
    if (in.numel() != in_) throw std::invalid_argument("linear input size mismatch");
    return {out_, 1, 1};
  }
  std::size_t param_count() const override { return out_ * in_ + out_; }
  void assign_storage(std::span<double> p) override {
    weight_ = p.subspan(0, out_ * in_);
    bias_ = p.subspan(weight_.size(), out_);
  }
  void init_params(Rng& rng) override {
    const double scale = std::sqrt(2.0 / static_cast<double>(in_));
    for (auto& w : weight_) w = rng.normal(0.0, scale);
    for (auto& b : bias_) b = 0.0;
  }
  void describe(const std::string& prefix, std::size_t base, std::vector<TensorDesc>& out) const override {
    out.push_back({prefix + ".weight", {out_, in_}, true, false, base, weight_.size()});
    out.push_back({prefix + ".bias", {out_}, false, false, base + weight_.size(), bias_.size()});
  }

  void forward(const Batch& in, Batch& out, std::size_t b, std::size_t e) const override {
    for (std::size_t s = b; s < e; ++s) {
      const double* x = in.sample(s);
      double* y = out.sample(s);
      for (std::size_t o = 0; o < out_; ++o) {
        const double* row = weight_.data() + o * in_;
        double acc = bias_[o];
        for (std::size_t i = 0; i < in_; ++i) acc += row[i] * x[i];
        y[o] = acc;
      }
    }
  }

  void backward(const Batch& in, const Batch&, const Batch& dout, Batch& din, std::size_t b,
                std::size_t e, std::span<double> g) const override {
    std::span<double> gw = g.subspan(0, weight_.size());
    std::span<double> gb = g.subspan(weight_.size(), bias_.size());
    for (std::size_t s = b; s < e; ++s) {
      const double* x = in.sample(s);
      const double* dy = dout.sample(s);
      double* dx = din.sample(s);
      for (std::size_t o = 0; o < out_; ++o) {
        const double gy = dy[o];
        if (gy == 0.0) continue;
        gb[o] += gy;
        const double* row = weight_.data() + o * in_;
        double* grow = gw.data() + o * in_;
        for (std::size_t i = 0; i < in_; ++i) {
          grow[i] += gy * x[i];
          dx[i] += gy * row[i];
        }
      }
    }
  }

 private:
  std::size_t in_, out_;
  std::span<double> weight_, bias_;
};

class ReLU final : public Layer {
 public:
  Dims out_dims(Dims in) const override { return in; }
  void forward(const Batch& in, Batch& out, std::size_t b, std::size_t e) const override {
    const std::size_t f = in.feature_size();
    for (std::size_t s = b; s < e; ++s) {
      const double* x = in.sample(s);
      double* y = out.sample(s);
      for (std::size_t i = 0; i < f; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    }
  }
  void backward(const Batch& in, const Batch&, const Batch& dout, Batch& din, std::size_t b,
                std::size_t e, std::span<double>) const override {
    const std::size_t f = in.feature_size();
    for (std::size_t s = b; s < e; ++s) {
      const double* x = in.sample(s);
      const double* dy = dout.sample(s);
      double* dx = din.sample(s);
      for (std::size_t i = 0; i < f; ++i) dx[i] += x[i] > 0.0 ? dy[i] : 0.0;
    }
  }
};

class Tanh final : public Layer {
 public:
  Dims out_dims(Dims in) const override { return in; }
  void forward(const Batch& in, Batch& out, std::size_t b, std::size_t e) const override {
    const std::size_t f = in.feature_size();
    for (std::size_t s = b; s < e; ++s) {
      const double* x = in.sample(s);
      double* y = out.sample(s);
      for (std::size_t i = 0; i < f; ++i) y[i] = std::tanh(x[i]);
    }
  }
  void backward(const Batch&, const Batch& out, const Batch& dout, Batch& din, std::size_t b,
                std::size_t e, std::span<double>) const override {
    const std::size_t f = out.feature_size();
    for (std::size_t s = b; s < e; ++s) {
      const double* y = out.sample(s);
      const double* dy = dout.sample(s);
      double* dx = din.sample(s);
      for (std::size_t i = 0; i < f; ++i) dx[i] += dy[i] * (1.0 - y[i] * y[i]);
    }
  }
};

class AvgPool2 final : public Layer {
 public:
  Dims out_dims(Dims in) const override {
    if (in.h % 2 || in.w % 2) throw std::invalid_argument("avgpool needs even spatial dims");
    return {in.c, in.h / 2, in.w / 2};
  }
  void forward(const Batch& in, Batch& out, std::size_t b, std::size_t e) const override {
    for (std::size_t s = b; s < e; ++s)
      for (std::size_t c = 0; c < in.c; ++c) {
        const double* ip = in.sample(s) + c * in.h * in.w;
        double* op = out.sample(s) + c * out.h * out.w;
        for (std::size_t y = 0; y < out.h; ++y)
          for (std::size_t x = 0; x < out.w; ++x) {
            const double* r0 = ip + (2 * y) * in.w + 2 * x;
            const double* r1 = r0 + in.w;
            op[y * out.w + x] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
          }
      }
  }
  void backward(const Batch& in, const Batch& out, const Batch& dout, Batch& din, std::size_t b,
                std::size_t e, std::span<double>) const override {
    for (std::size_t s = b; s < e; ++s)
      for (std::size_t c = 0; c < in.c; ++c) {
        const double* dp = dout.sample(s) + c * out.h * out.w;
        double* dip = din.sample(s) + c * in.h * in.w;
        for (std::size_t y = 0; y < out.h; ++y)
          for (std::size_t x = 0; x < out.w; ++x) {
            const double g = 0.25 * dp[y * out.w + x];
            double* r0 = dip + (2 * y) * in.w + 2 * x;
            double* r1 = r0 + in.w;
            r0[0] += g;
            r0[1] += g;
            r1[0] += g;
            r1[1] += g;
          }
      }
  }
};

class MaxPool2 final : public Layer {
 public:
  Dims out_dims(Dims in) const override {
    if (in.h % 2 || in.w % 2) throw std::invalid_argument("maxpool needs even spatial dims");
    return {in.c, in.h / 2, in.w / 2};
  }
  void forward(const Batch& in, Batch& out, std::size_t b, std::size_t e) const override {
    for (std::size_t s = b; s < e; ++s)
      for (std::size_t c = 0; c < in.c; ++c) {
        const double* ip = in.sample(s) + c * in.h * in.w;
        double* op = out.sample(s) + c * out.h * out.w;
        for (std::size_t y = 0; y < out.h; ++y)
          for (std::size_t x = 0; x < out.w; ++x) {
            const double* r0 = ip + (2 * y) * in.w + 2 * x;
            const double* r1 = r0 + in.w;
            op[y * out.w + x] = std::max(std::max(r0[0], r0[1]), std::max(r1[0], r1[1]));
          }
      }
  }
  void backward(const Batch& in, const Batch&, const Batch& dout, Batch& din, std::size_t b,
                std::size_t e, std::span<double>) const override {
    // argmax recomputed; first maximum (row-major order) wins
    for (std::size_t s = b; s < e; ++s)
      for (std::size_t c = 0; c < in.c; ++c) {
        const double* ip = in.sample(s) + c * in.h * in.w;
        const double* dp = dout.sample(s) + c * (in.h / 2) * (in.w / 2);
        double* dip = din.sample(s) + c * in.h * in.w;
        for (std::size_t y = 0; y < in.h / 2; ++y)
          for (std::size_t x = 0; x < in.w / 2; ++x) {
            const std::size_t base = (2 * y) * in.w + 2 * x;
            const std::size_t idx[4] = {base, base + 1, base + in.w, base + in.w + 1};
            std::size_t best = idx[0];
            for (int k = 1; k < 4; ++k)
              if (ip[idx[k]] > ip[best]) best = idx[k];
            dip[best] += dp[y * (in.w / 2) + x];
          }
      }
  }
};

class GlobalAvgPool final : public Layer {
 public:
  Dims out_dims(Dims in) const override { return {in.c, 1, 1}; }
  void forward(const Batch& in, Batch& out, std::size_t b, std::size_t e) const override {
    const double inv = 1.0 / static_cast<double>(in.h * in.w);
    for (std::size_t s = b; s < e; ++s)
      for (std::size_t c = 0; c < in.c; ++c) {
        const double* ip = in.sample(s) + c * in.h * in.w;
        double acc = 0.0;
        for (std::size_t i = 0; i < in.h * in.w; ++i) acc += ip[i];
        out.sample(s)[c] = acc * inv;
      }
  }
  void backward(const Batch& in, const Batch&, const Batch& dout, Batch& din, std::size_t b,
                std::size_t e, std::span<double>) const override {
    const double inv = 1.0 / static_cast<double>(in.h * in.w);
    for (std::size_t s = b; s < e; ++s)
      for (std::size_t c = 0; c < in.c; ++c) {
        const double g = dout.sample(s)[c] * inv;
        double* dip = din.sample(s) + c * in.h * in.w;
        for (std::size_t i = 0; i < in.h * in.w; ++i) dip[i] += g;
      }
  }
};

class Flatten final : public Layer {
 public:
  Dims out_dims(Dims in) const override { return {in.numel(), 1, 1}; }
  void forward(const Batch& in, Batch& out, std::size_t b, std::size_t e) const override {
    const std::size_t f = in.feature_size();
    for (std::size_t s = b; s < e; ++s)
      std::memcpy(out.sample(s), in.sample(s), f * sizeof(double));
  }
  void backward(const Batch& in, const Batch&, const Batch& dout, Batch& din, std::size_t b,
                std::size_t e, std::span<double>) const override {
    const std::size_t f = in.feature_size();
    for (std::size_t s = b; s < e; ++s) {
      const double* dy = dout.sample(s);
      double* dx = din.sample(s);
      for (std::size_t i = 0; i < f; ++i) dx[i] += dy[i];
    }
  }
};

/// Two 3x3 convs with an additive shortcut (1x1 projection when the shape
/// changes). Internal activations are recomputed in backward.
class ResidualBlock final : public Layer {
 public:
  ResidualBlock(std::size_t in_c, std::size_t out_c, std::size_t stride)
      : conv1_(in_c, out_c, 3, stride, 1), conv2_(out_c, out_c, 3, 1, 1) {
    if (in_c != out_c || stride != 1) proj_ = std::make_unique<Conv2d>(in_c, out_c, 1, stride, 0);
  }
  Dims out_dims(Dims in) const override { return conv2_.out_dims(conv1_.out_dims(in)); }
  std::size_t param_count() const override {
    return conv1_.param_count() + conv2_.param_count() + (proj_ ? proj_->param_count() : 0);
  }
  void assign_storage(std::span<double> p) override {
    conv1_.assign_storage(p.subspan(0, conv1_.param_count()));
    conv2_.assign_storage(p.subspan(conv1_.param_count(), conv2_.param_count()));
    if (proj_) proj_->assign_storage(p.subspan(conv1_.param_count() + conv2_.param_count()));
  }
  void init_params(Rng& rng) override {
    conv1_.init_params(rng);
    conv2_.init_params(rng);
    if (proj_) proj_->init_params(rng);
  }
  void describe(const std::string& prefix, std::size_t base, std::vector<TensorDesc>& out) const override {
    conv1_.describe(prefix + ".conv1", base, out);
    conv2_.describe(prefix + ".conv2", base + conv1_.param_count(), out);
    if (proj_) proj_->describe(prefix + ".proj", base + conv1_.param_count() + conv2_.param_count(), out);
  }

  void forward(const Batch& in, Batch& out, std::size_t b, std::size_t e) const override {
    Dims mid = conv1_out(in);
    Batch a1(in.n, mid.c, mid.h, mid.w), a1r(in.n, mid.c, mid.h, mid.w);
    conv1_.forward(in, a1, b, e);
    relu_.forward(a1, a1r, b, e);
    conv2_.forward(a1r, out, b, e);
    add_shortcut(in, out, b, e);
    for (std::size_t s = b; s < e; ++s) {
      double* y = out.sample(s);
      for (std::size_t i = 0; i < out.feature_size(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
    }
  }

  void backward(const Batch& in, const Batch& out, const Batch& dout, Batch& din, std::size_t b,
                std::size_t e, std::span<double> g) const override {
    Dims mid = conv1_out(in);
    Batch a1(in.n, mid.c, mid.h, mid.w), a1r(in.n, mid.c, mid.h, mid.w);
    conv1_.forward(in, a1, b, e);
    relu_.forward(a1, a1r, b, e);

    // final relu: out > 0 <=> preactivation > 0
    Batch dpre(out.n, out.c, out.h, out.w);
    for (std::size_t s = b; s < e; ++s) {
      const double* y = out.sample(s);
      const double* dy = dout.sample(s);
      double* dp = dpre.sample(s);
      for (std::size_t i = 0; i < out.feature_size(); ++i) dp[i] = y[i] > 0.0 ? dy[i] : 0.0;
    }

    auto g1 = g.subspan(0, conv1_.param_count());
    auto g2 = g.subspan(conv1_.param_count(), conv2_.param_count());
    Batch da1r(in.n, mid.c, mid.h, mid.w), da1(in.n, mid.c, mid.h, mid.w);
    conv2_.backward(a1r, out, dpre, da1r, b, e, g2);
    relu_.backward(a1, a1r, da1r, da1, b, e, {});
    conv1_.backward(in, a1, da1, din, b, e, g1);

    if (proj_) {
      auto gp = g.subspan(conv1_.param_count() + conv2_.param_count());
      proj_->backward(in, out, dpre, din, b, e, gp);
    } else {
      for (std::size_t s = b; s < e; ++s) {
        const double* dp = dpre.sample(s);
        double* dx = din.sample(s);
        for (std::size_t i = 0; i < dpre.feature_size(); ++i) dx[i] += dp[i];
      }
    }
  }

 private:
  Dims conv1_out(const Batch& in) const { return conv1_.out_dims({in.c, in.h, in.w}); }
  void add_shortcut(const Batch& in, Batch& out, std::size_t b, std::size_t e) const {
    if (proj_) {
      Batch sc(in.n, out.c, out.h, out.w);
      proj_->forward(in, sc, b, e);
      for (std::size_t s = b; s < e; ++s) {
        const double* scp = sc.sample(s);
        double* y = out.sample(s);
        for (std::size_t i = 0; i < out.feature_size(); ++i) y[i] += scp[i];
      }
    } else {
      for (std::size_t s = b; s < e; ++s) {
        const double* x = in.sample(s);
        double* y = out.sample(s);
        for (std::size_t i = 0; i < out.feature_size(); ++i) y[i] += x[i];
      }
    }
  }

  Conv2d conv1_, conv2_;
  ReLU relu_;
  std::unique_ptr<Conv2d> proj_;
};

// ---------------------------------------------------------------------------
// architecture registry
// ---------------------------------------------------------------------------

struct ArchSpec {
  std::vector<std::unique_ptr<Layer>> phi, omega;
};

std::pair<std::string, std::size_t> split_arch_id(const std::string& id) {
  const auto at = id.find('@');
  if (at == std::string::npos) return {id, 1};
  const std::size_t div = std::stoul(id.substr(at + 1));
  if (div == 0) throw std::invalid_argument("bad width divisor in " + id);
  return {id.substr(0, at), div};
}

ArchSpec build_arch(const std::string& id, const data::ImageShape& in, std::size_t classes) {
  const auto [base, div] = split_arch_id(id);
  auto w = [div = div](std::size_t n) { return std::max<std::size_t>(2, n / div); };
  ArchSpec a;
  const std::size_t c = in.channels;
  const std::size_t flat = in.height * in.width * in.channels;

  if (base == "tiny-mlp") {
    a.phi.push_back(std::make_unique<Flatten>());
    a.phi.push_back(std::make_unique<Linear>(flat, w(20)));
    a.phi.push_back(std::make_unique<Tanh>());
    a.phi.push_back(std::make_unique<Linear>(w(20), w(12)));
    a.phi.push_back(std::make_unique<Tanh>());
    a.omega.push_back(std::make_unique<Linear>(w(12), classes));
  } else if (base == "tiny-conv") {
    a.phi.push_back(std::make_unique<Conv2d>(c, w(6), 3, 1, 1));
    a.phi.push_back(std::make_unique<Tanh>());
    a.phi.push_back(std::make_unique<AvgPool2>());
    a.phi.push_back(std::make_unique<Conv2d>(w(6), w(8), 3, 1, 1));
    a.phi.push_back(std::make_unique<Tanh>());
    a.phi.push_back(std::make_unique<AvgPool2>());
    a.phi.push_back(std::make_unique<Flatten>());
    a.phi.push_back(std::make_unique<Linear>(w(8) * (in.height / 4) * (in.width / 4), w(16)));
    a.phi.push_back(std::make_unique<Tanh>());
    a.omega.push_back(std::make_unique<Linear>(w(16), classes));
  } else if (base == "conv-small") {
    a.phi.push_back(std::make_unique<Conv2d>(c, w(8), 3, 1, 1));
    a.phi.push_back(std::make_unique<ReLU>());
    a.phi.push_back(std::make_unique<AvgPool2>());
    a.phi.push_back(std::make_unique<Conv2d>(w(8), w(16), 3, 1, 1));
    a.phi.push_back(std::make_unique<ReLU>());
    a.phi.push_back(std::make_unique<AvgPool2>());
    a.phi.push_back(std::make_unique<Flatten>());
    a.phi.push_back(std::make_unique<Linear>(w(16) * (in.height / 4) * (in.width / 4), w(48)));
    a.phi.push_back(std::make_unique<ReLU>());
    a.omega.push_back(std::make_unique<Linear>(w(48), classes));
  } else if (base == "vgg11-style") {
    const std::size_t cfg[] = {64, 0, 128, 0, 256, 256, 0, 512, 512, 0, 512, 512, 0};
    std::size_t cur = c;
    for (const std::size_t oc : cfg) {
      if (oc == 0) {
        a.phi.push_back(std::make_unique<MaxPool2>());
      } else {
        a.phi.push_back(std::make_unique<Conv2d>(cur, w(oc), 3, 1, 1));
        a.phi.push_back(std::make_unique<ReLU>());
        cur = w(oc);
      }
    }
    a.phi.push_back(std::make_unique<Flatten>());
    const std::size_t sp = (in.height / 32) * (in.width / 32);
    a.phi.push_back(std::make_unique<Linear>(cur * sp, w(512)));
    a.phi.push_back(std::make_unique<ReLU>());
    a.omega.push_back(std::make_unique<Linear>(w(512), classes));
  } else if (base == "resnet18-style") {
    a.phi.push_back(std::make_unique<Conv2d>(c, w(64), 3, 1, 1));
    a.phi.push_back(std::make_unique<ReLU>());
    const std::size_t stages[] = {64, 128, 256, 512};
    std::size_t cur = w(64);
    for (std::size_t si = 0; si < 4; ++si) {
      const std::size_t oc = w(stages[si]);
      const std::size_t stride = si == 0 ? 1 : 2;
      a.phi.push_back(std::make_unique<ResidualBlock>(cur, oc, stride));
      a.phi.push_back(std::make_unique<ResidualBlock>(oc, oc, 1));
      cur = oc;
    }
    a.phi.push_back(std::make_unique<GlobalAvgPool>());
    a.phi.push_back(std::make_unique<Flatten>());
    a.omega.push_back(std::make_unique<Linear>(cur, classes));
  } else {
    throw std::invalid_argument("unknown architecture: " + id);
  }
  return a;
}

}  // namespace

bool is_known_architecture(const std::string& arch_id) {
  try {
    const auto [base, div] = split_arch_id(arch_id);
    (void)div;
    for (const auto& k : architecture_registry())
      if (k == base) return true;
    return false;
  } catch (const std::exception&) {
    return false;
  }
}

std::vector<std::string> architecture_registry() {
  return {"tiny-mlp", "tiny-conv", "conv-small", "vgg11-style", "resnet18-style"};
}

// ---------------------------------------------------------------------------
// SplitClassifier
// ---------------------------------------------------------------------------

struct SplitClassifier::Impl {
  std::vector<std::unique_ptr<Layer>> phi, omega;
  std::vector<Dims> phi_dims, omega_dims;      // [0] = layer input dims
  std::vector<std::size_t> phi_offsets, omega_offsets;  // param offsets per layer
  std::vector<std::uint8_t> masked_flat;       // per-param force-zero flag
};

struct SplitClassifier::ForwardCache {
  std::vector<Batch> phi_acts;    // [0] = input .. [L] = features
  std::vector<Batch> omega_acts;  // [0] = features .. [M] = logits
  std::vector<std::uint16_t> labels;
};

namespace {
std::size_t grad_chunks(std::size_t n) {
  // fixed partition so reductions do not depend on the worker count
  return std::clamp<std::size_t>(n / 8, 1, 8);
}
}  // namespace

SplitClassifier::SplitClassifier(std::string arch_id, data::ImageShape input, std::size_t classes,
                                 std::uint64_t init_seed)
    : impl_(std::make_unique<Impl>()),
      arch_id_(std::move(arch_id)),
      input_(input),
      classes_(classes),
      init_seed_(init_seed) {
  if (classes_ < 2) throw std::invalid_argument("need at least 2 classes");
  auto arch = build_arch(arch_id_, input_, classes_);
  impl_->phi = std::move(arch.phi);
  impl_->omega = std::move(arch.omega);

  // dimension plan
  Dims cur{input_.channels, input_.height, input_.width};
  impl_->phi_dims.push_back(cur);
  for (const auto& l : impl_->phi) {
    cur = l->out_dims(cur);
    impl_->phi_dims.push_back(cur);
  }
  if (cur.h != 1 || cur.w != 1)
    throw std::logic_error("feature extractor must end in a flat feature vector");
  feature_dim_ = cur.c;
  impl_->omega_dims.push_back(cur);
  for (const auto& l : impl_->omega) {
    cur = l->out_dims(cur);
    impl_->omega_dims.push_back(cur);
  }
  if (cur.numel() != classes_) throw std::logic_error("head output size != classes");

  // flat parameter layout: phi tensors then omega tensors
  std::size_t total = 0;
  for (const auto& l : impl_->phi) total += l->param_count();
  phi_param_count_ = total;
  for (const auto& l : impl_->omega) total += l->param_count();
  params_.assign(total, 0.0);

  std::size_t off = 0;
  for (std::size_t i = 0; i < impl_->phi.size(); ++i) {
    impl_->phi_offsets.push_back(off);
    auto& l = impl_->phi[i];
    l->assign_storage(std::span<double>(params_).subspan(off, l->param_count()));
    l->describe("phi." + std::to_string(i), off, tensors_);
    for (auto& t : tensors_)
      if (t.offset >= off) t.in_phi = true;
    off += l->param_count();
  }
  for (std::size_t i = 0; i < impl_->omega.size(); ++i) {
    impl_->omega_offsets.push_back(off);
    auto& l = impl_->omega[i];
    l->assign_storage(std::span<double>(params_).subspan(off, l->param_count()));
    const std::size_t before = tensors_.size();
    l->describe("omega." + std::to_string(i), off, tensors_);
    for (std::size_t t = before; t < tensors_.size(); ++t) {
      tensors_[t].in_phi = false;
      tensors_[t].prunable = false;  // the head is never pruned
    }
    off += l->param_count();
  }

  for (const auto& t : tensors_)
    if (t.prunable)
      for (std::size_t i = 0; i < t.size; ++i) prunable_to_flat_.push_back(t.offset + i);

  impl_->masked_flat.assign(params_.size(), 0);

  Rng rng(mix_seed(init_seed_, "init", hash_tag(arch_id_)));
  for (auto& l : impl_->phi) l->init_params(rng);
  for (auto& l : impl_->omega) l->init_params(rng);
}

SplitClassifier::SplitClassifier(const SplitClassifier& other)
    : SplitClassifier(other.arch_id_, other.input_, other.classes_, other.init_seed_) {
  params_ = other.params_;
  mask_ = other.mask_;
  impl_->masked_flat = other.impl_->masked_flat;
}

SplitClassifier::~SplitClassifier() = default;

void SplitClassifier::set_params(std::span<const double> p) {
  if (p.size() != params_.size()) throw std::invalid_argument("parameter count mismatch");
  std::copy(p.begin(), p.end(), params_.begin());
}

std::vector<double> SplitClassifier::prunable_weights() const {
  std::vector<double> w(prunable_to_flat_.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = params_[prunable_to_flat_[i]];
  return w;
}

void SplitClassifier::set_prunable_weights(std::span<const double> w) {
  if (w.size() != prunable_to_flat_.size()) throw std::invalid_argument("prunable length mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) params_[prunable_to_flat_[i]] = w[i];
}

void SplitClassifier::apply_mask(const SparsityMask& mask) {
  if (mask.keep.size() != prunable_to_flat_.size())
    throw std::invalid_argument("mask length does not match prunable parameter count");
  mask_ = mask;
  std::fill(impl_->masked_flat.begin(), impl_->masked_flat.end(), 0);
  for (std::size_t i = 0; i < mask.keep.size(); ++i)
    if (!mask.keep[i]) impl_->masked_flat[prunable_to_flat_[i]] = 1;
  enforce_mask();
}

void SplitClassifier::clear_mask() {
  mask_.reset();
  std::fill(impl_->masked_flat.begin(), impl_->masked_flat.end(), 0);
}

void SplitClassifier::enforce_mask() {
  if (!mask_) return;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (impl_->masked_flat[i]) params_[i] = 0.0;
}

Batch SplitClassifier::make_input(const data::DomainDataset& ds,
                                  std::span<const std::size_t> indices) {
  Batch b(indices.size(), ds.shape.channels, ds.shape.height, ds.shape.width);
  const std::size_t H = ds.shape.height, W = ds.shape.width, C = ds.shape.channels;
  for (std::size_t s = 0; s < indices.size(); ++s) {
    const auto& img = ds.samples[indices[s]].x;
    double* dst = b.sample(s);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          dst[(c * H + y) * W + x] = img[(y * W + x) * C + c];
  }
  return b;
}

std::vector<std::uint16_t> SplitClassifier::make_labels(const data::DomainDataset& ds,
                                                        std::span<const std::size_t> indices) {
  std::vector<std::uint16_t> y(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) y[i] = ds.samples[indices[i]].y;
  return y;
}

FeatureBatch SplitClassifier::forward_features(const Batch& x, const std::vector<std::uint16_t>& y,
                                               ForwardCache* cache) const {
  if (x.c != input_.channels || x.h != input_.height || x.w != input_.width)
    throw std::invalid_argument("input batch shape mismatch");
  if (!y.empty() && y.size() != x.n) throw std::invalid_argument("label count mismatch");

  const std::size_t chunks = grad_chunks(x.n);
  Batch cur = x;
  if (cache) {
    cache->phi_acts.clear();
    cache->omega_acts.clear();
    cache->labels = y;
    cache->phi_acts.push_back(x);
  }
  for (std::size_t li = 0; li < impl_->phi.size(); ++li) {
    const Dims d = impl_->phi_dims[li + 1];
    Batch next(x.n, d.c, d.h, d.w);
    const Layer* layer = impl_->phi[li].get();
    const Batch& src = cache ? cache->phi_acts.back() : cur;
    parallel_chunks(x.n, chunks,
                    [&](std::size_t, std::size_t b, std::size_t e) { layer->forward(src, next, b, e); });
    if (cache)
      cache->phi_acts.push_back(std::move(next));
    else
      cur = std::move(next);
  }
  const Batch& feats = cache ? cache->phi_acts.back() : cur;
  FeatureBatch fb;
  fb.n = x.n;
  fb.dim = feature_dim_;
  fb.z = feats.v;
  fb.y = y;
  return fb;
}

Batch SplitClassifier::forward_logits(const FeatureBatch& z, ForwardCache* cache) const {
  if (z.dim != feature_dim_) throw std::invalid_argument("feature dim mismatch");
  Batch cur(z.n, z.dim, 1, 1);
  cur.v = z.z;
  const std::size_t chunks = grad_chunks(z.n);
  if (cache) {
    cache->omega_acts.clear();
    cache->omega_acts.push_back(cur);
  }
  for (std::size_t li = 0; li < impl_->omega.size(); ++li) {
    const Dims d = impl_->omega_dims[li + 1];
    Batch next(z.n, d.c, d.h, d.w);
    const Layer* layer = impl_->omega[li].get();
    const Batch& src = cache ? cache->omega_acts.back() : cur;
    parallel_chunks(z.n, chunks,
                    [&](std::size_t, std::size_t b, std::size_t e) { layer->forward(src, next, b, e); });
    if (cache)
      cache->omega_acts.push_back(std::move(next));
    else
      cur = std::move(next);
  }
  return cache ? cache->omega_acts.back() : cur;
}

std::vector<double> SplitClassifier::backward(const ForwardCache& cache,
                                              std::span<const double> dlogits,
                                              std::span<const double> dfeatures) const {
  const std::size_t n = cache.phi_acts.empty() ? 0 : cache.phi_acts[0].n;
  if (n == 0) throw std::invalid_argument("backward without cached forward");
  const bool has_head = !dlogits.empty();
  if (has_head && cache.omega_acts.empty())
    throw std::invalid_argument("dlogits given but no cached head pass");
  if (has_head && dlogits.size() != n * classes_)
    throw std::invalid_argument("dlogits size mismatch");
  if (!dfeatures.empty() && dfeatures.size() != n * feature_dim_)
    throw std::invalid_argument("dfeatures size mismatch");

  const std::size_t chunks = grad_chunks(n);
  std::vector<std::vector<double>> gbuf(chunks, std::vector<double>(params_.size(), 0.0));

  // head backward: dlogits -> dfeatures_from_head
  Batch dcur;
  if (has_head) {
    dcur = Batch(n, classes_, 1, 1);
    std::copy(dlogits.begin(), dlogits.end(), dcur.v.begin());
    for (std::size_t li = impl_->omega.size(); li-- > 0;) {
      const Dims d = impl_->omega_dims[li];
      Batch dprev(n, d.c, d.h, d.w);
      const Layer* layer = impl_->omega[li].get();
      const std::size_t off = impl_->omega_offsets[li];
      const std::size_t cnt = layer->param_count();
      parallel_chunks(n, chunks, [&](std::size_t ci, std::size_t b, std::size_t e) {
        layer->backward(cache.omega_acts[li], cache.omega_acts[li + 1], dcur, dprev, b, e,
                        std::span<double>(gbuf[ci]).subspan(off, cnt));
      });
      dcur = std::move(dprev);
    }
  } else {
    dcur = Batch(n, feature_dim_, 1, 1);
  }
  if (!dfeatures.empty())
    for (std::size_t i = 0; i < dcur.v.size(); ++i) dcur.v[i] += dfeatures[i];

  // extractor backward
  for (std::size_t li = impl_->phi.size(); li-- > 0;) {
    const Dims d = impl_->phi_dims[li];
    Batch dprev(n, d.c, d.h, d.w);
    const Layer* layer = impl_->phi[li].get();
    const std::size_t off = impl_->phi_offsets[li];
    const std::size_t cnt = layer->param_count();
    parallel_chunks(n, chunks, [&](std::size_t ci, std::size_t b, std::size_t e) {
      layer->backward(cache.phi_acts[li], cache.phi_acts[li + 1], dcur, dprev, b, e,
                      std::span<double>(gbuf[ci]).subspan(off, cnt));
    });
    dcur = std::move(dprev);
  }

  // fixed-order reduction keeps results identical for any worker count
  std::vector<double> grads(params_.size(), 0.0);
  for (const auto& gb : gbuf)
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += gb[i];
  return grads;
}

SplitClassifier::ForwardCache* SplitClassifier::new_cache() const { return new ForwardCache(); }
void SplitClassifier::free_cache(ForwardCache* c) const { delete c; }

void SplitClassifier::reinit_head(std::uint64_t seed) {
  Rng rng(mix_seed(seed, "head-reinit"));
  for (const auto& t : tensors_) {
    if (t.in_phi) continue;
    if (t.shape.size() == 2) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.shape[1]));
      for (std::size_t i = 0; i < t.size; ++i) params_[t.offset + i] = rng.uniform(-bound, bound);
    } else {
      for (std::size_t i = 0; i < t.size; ++i) params_[t.offset + i] = 0.0;
    }
  }
}

// ---------------------------------------------------------------------------
// optimizer and training
// ---------------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(std::size_t param_count, double beta1, double beta2, double eps)
    : m_(param_count, 0.0), v_(param_count, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::step(SplitClassifier& model, std::span<const double> grads, double lr,
                         const std::vector<std::uint8_t>* trainable, bool respect_mask) {
  if (grads.size() != m_.size() || model.param_count() != m_.size())
    throw std::invalid_argument("optimizer size mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto params = model.params();
  const auto& mask = model.mask();
  std::vector<std::uint8_t> const* masked_flat = nullptr;
  std::vector<std::uint8_t> mf;
  if (respect_mask && mask) {
    mf.assign(model.param_count(), 0);
    const auto& pos = model.prunable_positions();
    for (std::size_t i = 0; i < mask->keep.size(); ++i)
      if (!mask->keep[i]) mf[pos[i]] = 1;
    masked_flat = &mf;
  }
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (trainable && !(*trainable)[i]) continue;
    if (masked_flat && (*masked_flat)[i]) {
      params[i] = 0.0;
      continue;
    }
    const double g = grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    params[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
  }
}

void train_supervised(SplitClassifier& m, const data::DomainDataset& train,
                      const SupervisedTrainConfig& cfg) {
  if (train.size() == 0) throw std::invalid_argument("empty training set");
  AdamOptimizer opt(m.param_count());

  std::vector<std::uint8_t> trainable;
  const std::vector<std::uint8_t>* trainable_ptr = nullptr;
  if (!cfg.train_phi) {
    trainable.assign(m.param_count(), 0);
    for (std::size_t i = m.phi_param_count(); i < m.param_count(); ++i) trainable[i] = 1;
    trainable_ptr = &trainable;
  }

  const std::size_t batch = std::max<std::size_t>(1, std::min(cfg.batch_size, train.size()));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.lr;
    if (cfg.lr_decay_every > 0)
      lr *= std::pow(cfg.lr_decay_factor, static_cast<double>(epoch / cfg.lr_decay_every));
    Rng rng(mix_seed(cfg.seed, "train-epoch", epoch));
    auto order = rng.permutation(train.size());
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Batch x = SplitClassifier::make_input(train, idx);
      const auto y = SplitClassifier::make_labels(train, idx);
      auto* cache = m.new_cache();
      const FeatureBatch fb = m.forward_features(x, y, cache);
      const Batch logits = m.forward_logits(fb, cache);
      std::vector<double> dlogits;
      softmax_cross_entropy(logits.v, y, m.num_classes(), &dlogits);
      const auto grads = m.backward(*cache, dlogits, {});
      m.free_cache(cache);
      opt.step(m, grads, lr, trainable_ptr, cfg.respect_mask);
    }
  }
}

double evaluate_accuracy(const SplitClassifier& m, const data::DomainDataset& ds,
                         std::size_t batch_size) {
  if (ds.size() == 0) throw std::invalid_argument("empty evaluation set");
  std::size_t correct = 0;
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    std::span<const std::size_t> slice(idx.data() + start, end - start);
    const Batch x = SplitClassifier::make_input(ds, slice);
    const auto y = SplitClassifier::make_labels(ds, slice);
    const FeatureBatch fb = m.forward_features(x, y);
    const Batch logits = m.forward_logits(fb);
    for (std::size_t s = 0; s < slice.size(); ++s) {
      const double* row = logits.sample(s);
      std::size_t best = 0;
      for (std::size_t k = 1; k < m.num_classes(); ++k)
        if (row[k] > row[best]) best = k;
      correct += (best == y[s]);
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const SplitClassifier& m, const fs::path& dir, const CheckpointMeta& meta) {
  fs::create_directories(dir);

  json manifest;
  manifest["format"] = "ntp-checkpoint-v1";
  manifest["architecture"] = m.arch_id();
  manifest["input"] = {{"height", m.input_shape().height},
                       {"width", m.input_shape().width},
                       {"channels", m.input_shape().channels}};
  manifest["classes"] = m.num_classes();
  manifest["feature_dim"] = m.feature_dim();
  manifest["init_seed"] = m.init_seed();
  manifest["seed"] = meta.seed;
  manifest["provenance"] = meta.provenance;
  if (m.mask())
    manifest["mask_sparsity"] = m.mask()->sparsity();
  else
    manifest["mask_sparsity"] = nullptr;
  io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  io::ByteWriter w;
  w.put_u32(static_cast<std::uint32_t>(m.tensors().size()));
  const auto params = m.params();
  for (const auto& t : m.tensors()) {
    w.put_string(t.name);
    w.put_u32(static_cast<std::uint32_t>(t.shape.size()));
    for (const auto d : t.shape) w.put_u32(static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t.size; ++i)
      w.put_f32(static_cast<float>(params[t.offset + i]));
  }
  io::write_file(dir / "params.bin", w.bytes);

  if (m.mask()) {
    io::ByteWriter mw;
    const auto& keep = m.mask()->keep;
    mw.put_u64(keep.size());
    for (std::size_t i = 0; i < keep.size(); i += 8) {
      std::uint8_t byte = 0;
      for (std::size_t b = 0; b < 8 && i + b < keep.size(); ++b)
        if (keep[i + b]) byte |= static_cast<std::uint8_t>(1u << b);
      mw.bytes.push_back(byte);
    }
    io::write_file(dir / "mask.bin", mw.bytes);
  } else {
    std::error_code ec;
    fs::remove(dir / "mask.bin", ec);
  }
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  const json manifest = json::parse(io::read_text_file(dir / "manifest.json"));
  if (manifest.at("format").get<std::string>() != "ntp-checkpoint-v1")
    throw std::runtime_error("unknown checkpoint format in " + dir.string());

  data::ImageShape input;
  input.height = manifest.at("input").at("height").get<std::size_t>();
  input.width = manifest.at("input").at("width").get<std::size_t>();
  input.channels = manifest.at("input").at("channels").get<std::size_t>();

  LoadedCheckpoint out;
  out.model = std::make_unique<SplitClassifier>(manifest.at("architecture").get<std::string>(),
                                                input, manifest.at("classes").get<std::size_t>(),
                                                manifest.at("init_seed").get<std::uint64_t>());
  out.meta.seed = manifest.at("seed").get<std::uint64_t>();
  out.meta.provenance = manifest.value("provenance", std::string{});

  const auto bytes = io::read_file(dir / "params.bin");
  io::ByteReader r(bytes);
  const std::uint32_t count = r.get_u32();
  if (count != out.model->tensors().size())
    throw std::runtime_error("checkpoint tensor count mismatch");
  auto params = out.model->params();
  for (const auto& t : out.model->tensors()) {
    if (r.get_string() != t.name) throw std::runtime_error("checkpoint tensor order mismatch");
    const std::uint32_t ndim = r.get_u32();
    if (ndim != t.shape.size()) throw std::runtime_error("checkpoint tensor rank mismatch");
    for (const auto d : t.shape)
      if (r.get_u32() != d) throw std::runtime_error("checkpoint tensor shape mismatch");
    for (std::size_t i = 0; i < t.size; ++i) params[t.offset + i] = r.get_f32();
  }
  if (!r.at_end()) throw std::runtime_error("trailing bytes in params.bin");

  if (fs::exists(dir / "mask.bin")) {
    const auto mbytes = io::read_file(dir / "mask.bin");
    io::ByteReader mr(mbytes);
    const std::uint64_t n = mr.get_u64();
    SparsityMask mask;
    mask.keep.resize(n);
    for (std::size_t i = 0; i < n; i += 8) {
      mr.need(1);
      const std::uint8_t byte = mr.p[mr.pos++];
      for (std::size_t b = 0; b < 8 && i + b < n; ++b) mask.keep[i + b] = (byte >> b) & 1;
    }
    out.model->apply_mask(mask);
  }
  return out;
}

}  // namespace ntp::model

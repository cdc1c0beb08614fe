#include "metaopt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace metaopt {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void check_conv_shapes(const Tensor& in, const Tensor& w, const Tensor* bias) {
  require(in.rank() == 4, "conv2d: input must be [B,C,H,W], got " + shape_str(in.shape));
  require(w.rank() == 4, "conv2d: weights must be [Cout,Cin,K,K], got " + shape_str(w.shape));
  require(w.dim(2) == w.dim(3), "conv2d: kernel must be square, got " + shape_str(w.shape));
  require(in.dim(1) == w.dim(1), "conv2d: channel mismatch, input " + shape_str(in.shape) +
                                     " vs weights " + shape_str(w.shape));
  if (bias)
    require(bias->rank() == 1 && bias->dim(0) == w.dim(0),
            "conv2d: bias must be [Cout], got " + shape_str(bias->shape));
}

}  // namespace

ConvGeom conv_same_geom(std::int64_t h, std::int64_t w, std::int64_t k, std::int64_t stride) {
  require(h > 0 && w > 0 && k > 0 && stride > 0, "conv2d: bad geometry");
  ConvGeom g;
  g.hout = (h + stride - 1) / stride;
  g.wout = (w + stride - 1) / stride;
  const std::int64_t pad_h = std::max<std::int64_t>((g.hout - 1) * stride + k - h, 0);
  const std::int64_t pad_w = std::max<std::int64_t>((g.wout - 1) * stride + k - w, 0);
  g.pad_top = pad_h / 2;
  g.pad_left = pad_w / 2;
  return g;
}

void conv2d_forward(const Tensor& in, const Tensor& w, const Tensor& bias, int stride, Tensor& out) {
  check_conv_shapes(in, w, &bias);
  const std::int64_t B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const std::int64_t CO = w.dim(0), K = w.dim(2);
  const ConvGeom g = conv_same_geom(H, W, K, stride);

  const Shape out_shape{B, CO, g.hout, g.wout};
  if (out.shape != out_shape) out = Tensor(out_shape);

  const double* x = in.data.data();
  const double* wd = w.data.data();
  double* o = out.data.data();

  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t co = 0; co < CO; ++co) {
      const double bv = bias.data[static_cast<std::size_t>(co)];
      for (std::int64_t ho = 0; ho < g.hout; ++ho) {
        const std::int64_t hi0 = ho * stride - g.pad_top;
        const std::int64_t kh_lo = std::max<std::int64_t>(0, -hi0);
        const std::int64_t kh_hi = std::min<std::int64_t>(K, H - hi0);
        for (std::int64_t wo = 0; wo < g.wout; ++wo) {
          const std::int64_t wi0 = wo * stride - g.pad_left;
          const std::int64_t kw_lo = std::max<std::int64_t>(0, -wi0);
          const std::int64_t kw_hi = std::min<std::int64_t>(K, W - wi0);
          double acc = bv;
          for (std::int64_t ci = 0; ci < C; ++ci) {
            const double* xc = x + ((b * C + ci) * H) * W;
            const double* wc = wd + ((co * C + ci) * K) * K;
            for (std::int64_t kh = kh_lo; kh < kh_hi; ++kh) {
              const double* xrow = xc + (hi0 + kh) * W + wi0;
              const double* wrow = wc + kh * K;
              for (std::int64_t kw = kw_lo; kw < kw_hi; ++kw) acc += xrow[kw] * wrow[kw];
            }
          }
          o[((b * CO + co) * g.hout + ho) * g.wout + wo] = acc;
        }
      }
    }
  }
}

void conv2d_backward(const Tensor& in, const Tensor& w, int stride, const Tensor& grad_out,
                     Tensor& grad_in, Tensor& grad_w, Tensor& grad_bias) {
  check_conv_shapes(in, w, nullptr);
  const std::int64_t B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const std::int64_t CO = w.dim(0), K = w.dim(2);
  const ConvGeom g = conv_same_geom(H, W, K, stride);
  require(grad_out.shape == Shape{B, CO, g.hout, g.wout},
          "conv2d backward: grad_out shape " + shape_str(grad_out.shape) + " does not match output");

  if (grad_in.shape != in.shape) grad_in = Tensor(in.shape);
  grad_in.zero();
  if (grad_w.shape != w.shape) grad_w = Tensor(w.shape);
  grad_w.zero();
  if (grad_bias.shape != Shape{CO}) grad_bias = Tensor({CO});
  grad_bias.zero();

  const double* x = in.data.data();
  const double* wd = w.data.data();
  const double* go = grad_out.data.data();
  double* gx = grad_in.data.data();
  double* gw = grad_w.data.data();
  double* gb = grad_bias.data.data();

  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t co = 0; co < CO; ++co) {
      double gb_acc = 0.0;
      for (std::int64_t ho = 0; ho < g.hout; ++ho) {
        const std::int64_t hi0 = ho * stride - g.pad_top;
        const std::int64_t kh_lo = std::max<std::int64_t>(0, -hi0);
        const std::int64_t kh_hi = std::min<std::int64_t>(K, H - hi0);
        for (std::int64_t wo = 0; wo < g.wout; ++wo) {
          const double up = go[((b * CO + co) * g.hout + ho) * g.wout + wo];
          if (up == 0.0) continue;
          gb_acc += up;
          const std::int64_t wi0 = wo * stride - g.pad_left;
          const std::int64_t kw_lo = std::max<std::int64_t>(0, -wi0);
          const std::int64_t kw_hi = std::min<std::int64_t>(K, W - wi0);
          for (std::int64_t ci = 0; ci < C; ++ci) {
            const double* xc = x + ((b * C + ci) * H) * W;
            double* gxc = gx + ((b * C + ci) * H) * W;
            const double* wc = wd + ((co * C + ci) * K) * K;
            double* gwc = gw + ((co * C + ci) * K) * K;
            for (std::int64_t kh = kh_lo; kh < kh_hi; ++kh) {
              const double* xrow = xc + (hi0 + kh) * W + wi0;
              double* gxrow = gxc + (hi0 + kh) * W + wi0;
              const double* wrow = wc + kh * K;
              double* gwrow = gwc + kh * K;
              for (std::int64_t kw = kw_lo; kw < kw_hi; ++kw) {
                gwrow[kw] += up * xrow[kw];
                gxrow[kw] += up * wrow[kw];
              }
            }
          }
        }
      }
      gb[co] += gb_acc;
    }
  }
}

void relu_forward(const Tensor& in, Tensor& out) {
  if (out.shape != in.shape) out = Tensor(in.shape);
  for (std::size_t i = 0; i < in.data.size(); ++i) out.data[i] = in.data[i] > 0.0 ? in.data[i] : 0.0;
}

void relu_backward(const Tensor& in, const Tensor& grad_out, Tensor& grad_in) {
  require(same_shape(in, grad_out), "relu backward: shape mismatch");
  if (grad_in.shape != in.shape) grad_in = Tensor(in.shape);
  for (std::size_t i = 0; i < in.data.size(); ++i)
    grad_in.data[i] = in.data[i] > 0.0 ? grad_out.data[i] : 0.0;
}

void spatial_mean_forward(const Tensor& in, Tensor& out) {
  require(in.rank() == 4, "spatial_mean: input must be [B,C,H,W], got " + shape_str(in.shape));
  const std::int64_t B = in.dim(0), C = in.dim(1), HW = in.dim(2) * in.dim(3);
  if (out.shape != Shape{B, C}) out = Tensor({B, C});
  const double inv = 1.0 / static_cast<double>(HW);
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* p = in.data.data() + bc * HW;
    double s = 0.0;
    for (std::int64_t i = 0; i < HW; ++i) s += p[i];
    out.data[static_cast<std::size_t>(bc)] = s * inv;
  }
}

void spatial_mean_backward(const Shape& in_shape, const Tensor& grad_out, Tensor& grad_in) {
  require(in_shape.size() == 4, "spatial_mean backward: bad input shape");
  const std::int64_t B = in_shape[0], C = in_shape[1], HW = in_shape[2] * in_shape[3];
  require(grad_out.shape == Shape{B, C}, "spatial_mean backward: grad_out shape mismatch");
  if (grad_in.shape != in_shape) grad_in = Tensor(in_shape);
  const double inv = 1.0 / static_cast<double>(HW);
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double g = grad_out.data[static_cast<std::size_t>(bc)] * inv;
    double* p = grad_in.data.data() + bc * HW;
    for (std::int64_t i = 0; i < HW; ++i) p[i] = g;
  }
}

void linear_forward(const Tensor& in, const Tensor& w, const Tensor& bias, Tensor& out) {
  require(in.rank() == 2 && w.rank() == 2 && bias.rank() == 1, "linear: bad ranks");
  const std::int64_t B = in.dim(0), D = in.dim(1), K = w.dim(1);
  require(w.dim(0) == D && bias.dim(0) == K,
          "linear: shape mismatch, in " + shape_str(in.shape) + " w " + shape_str(w.shape));
  if (out.shape != Shape{B, K}) out = Tensor({B, K});
  for (std::int64_t b = 0; b < B; ++b) {
    double* orow = out.data.data() + b * K;
    for (std::int64_t k = 0; k < K; ++k) orow[k] = bias.data[static_cast<std::size_t>(k)];
    const double* xrow = in.data.data() + b * D;
    for (std::int64_t d = 0; d < D; ++d) {
      const double xv = xrow[d];
      const double* wrow = w.data.data() + d * K;
      for (std::int64_t k = 0; k < K; ++k) orow[k] += xv * wrow[k];
    }
  }
}

void linear_backward(const Tensor& in, const Tensor& w, const Tensor& grad_out, Tensor& grad_in,
                     Tensor& grad_w, Tensor& grad_bias) {
  const std::int64_t B = in.dim(0), D = in.dim(1), K = w.dim(1);
  require(grad_out.shape == Shape{B, K}, "linear backward: grad_out shape mismatch");
  if (grad_in.shape != in.shape) grad_in = Tensor(in.shape);
  grad_in.zero();
  if (grad_w.shape != w.shape) grad_w = Tensor(w.shape);
  grad_w.zero();
  if (grad_bias.shape != Shape{K}) grad_bias = Tensor({K});
  grad_bias.zero();

  for (std::int64_t b = 0; b < B; ++b) {
    const double* grow = grad_out.data.data() + b * K;
    const double* xrow = in.data.data() + b * D;
    double* gxrow = grad_in.data.data() + b * D;
    for (std::int64_t k = 0; k < K; ++k) grad_bias.data[static_cast<std::size_t>(k)] += grow[k];
    for (std::int64_t d = 0; d < D; ++d) {
      const double* wrow = w.data.data() + d * K;
      double* gwrow = grad_w.data.data() + d * K;
      double acc = 0.0;
      const double xv = xrow[d];
      for (std::int64_t k = 0; k < K; ++k) {
        acc += grow[k] * wrow[k];
        gwrow[k] += grow[k] * xv;
      }
      gxrow[d] = acc;
    }
  }
}

void softmax_probs(const Tensor& logits, Tensor& probs) {
  require(logits.rank() == 2, "softmax: logits must be [B,K]");
  const std::int64_t B = logits.dim(0), K = logits.dim(1);
  if (probs.shape != logits.shape) probs = Tensor(logits.shape);
  for (std::int64_t b = 0; b < B; ++b) {
    const double* z = logits.data.data() + b * K;
    double* p = probs.data.data() + b * K;
    double m = z[0];
    for (std::int64_t k = 1; k < K; ++k) m = std::max(m, z[k]);
    double sum = 0.0;
    for (std::int64_t k = 0; k < K; ++k) {
      p[k] = std::exp(z[k] - m);
      sum += p[k];
    }
    const double inv = 1.0 / sum;
    for (std::int64_t k = 0; k < K; ++k) p[k] *= inv;
  }
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* grad_logits) {
  require(logits.rank() == 2, "cross_entropy: logits must be [B,K]");
  const std::int64_t B = logits.dim(0), K = logits.dim(1);
  require(static_cast<std::int64_t>(labels.size()) == B,
          "cross_entropy: got " + std::to_string(labels.size()) + " labels for batch " +
              std::to_string(B));
  for (std::size_t i = 0; i < labels.size(); ++i)
    require(labels[i] >= 0 && labels[i] < K, "cross_entropy: label " + std::to_string(labels[i]) +
                                                 " at index " + std::to_string(i) +
                                                 " outside [0," + std::to_string(K) + ")");

  if (grad_logits && grad_logits->shape != logits.shape) *grad_logits = Tensor(logits.shape);
  const double invB = 1.0 / static_cast<double>(B);
  double loss = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    const double* z = logits.data.data() + b * K;
    double m = z[0];
    for (std::int64_t k = 1; k < K; ++k) m = std::max(m, z[k]);
    double sum = 0.0;
    for (std::int64_t k = 0; k < K; ++k) sum += std::exp(z[k] - m);
    const double log_sum = std::log(sum);
    const int y = labels[static_cast<std::size_t>(b)];
    loss += (log_sum - (z[y] - m)) * invB;
    if (grad_logits) {
      double* g = grad_logits->data.data() + b * K;
      const double inv_sum = 1.0 / sum;
      for (std::int64_t k = 0; k < K; ++k) g[k] = std::exp(z[k] - m) * inv_sum * invB;
      g[y] -= invB;
    }
  }
  return loss;
}

int argmax_row(const Tensor& mat, std::int64_t row) {
  require(mat.rank() == 2 && row >= 0 && row < mat.dim(0), "argmax_row: bad row");
  const std::int64_t K = mat.dim(1);
  const double* p = mat.data.data() + row * K;
  int best = 0;
  for (std::int64_t k = 1; k < K; ++k)
    if (p[k] > p[best]) best = static_cast<int>(k);
  return best;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> params, double eps) {
  require(eps > 0.0, "finite_diff_grad: eps must be positive");
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> grad(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + eps;
    const double fp = f(p);
    p[i] = saved - eps;
    const double fm = f(p);
    p[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff_grad: objective returned non-finite value at coordinate " +
                               std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

double rel_err_norm(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("rel_err_norm: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    diff += d * d;
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
  return std::sqrt(diff) / denom;
}

}  // namespace metaopt

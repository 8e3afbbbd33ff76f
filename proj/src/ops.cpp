#include "layerprune/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "layerprune/error.hpp"

namespace layerprune::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::shape_mismatch, what);
}

// cols: [C*K*K, Ho*Wo]
void im2col(const double* x, int c, int h, int w, int k, ConvGeometry geo, int ho, int wo, double* cols) {
  const int plane = ho * wo;
  for (int ch = 0; ch < c; ++ch) {
    const double* xc = x + static_cast<std::size_t>(ch) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + (static_cast<std::size_t>(ch) * k * k + ky * k + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * geo.stride - geo.padding + ky;
          double* out = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + wo, 0.0);
            continue;
          }
          const double* xrow = xc + iy * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * geo.stride - geo.padding + kx;
            out[ox] = (ix >= 0 && ix < w) ? xrow[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int c, int h, int w, int k, ConvGeometry geo, int ho, int wo, double* x) {
  const int plane = ho * wo;
  std::fill(x, x + static_cast<std::size_t>(c) * h * w, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    double* xc = x + static_cast<std::size_t>(ch) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + (static_cast<std::size_t>(ch) * k * k + ky * k + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * geo.stride - geo.padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * geo.stride - geo.padding + kx;
            if (ix >= 0 && ix < w) xc[iy * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(int k, ConvGeometry geo) { return k == 1 && geo.stride == 1 && geo.padding == 0; }

}  // namespace

int conv_output_size(int input, int kernel, int stride, int padding) {
  return (input + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, ConvGeometry geo) {
  require(x.rank() == 4 && weight.rank() == 4, "conv2d expects 4-d input and weight");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int f = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == c, "conv2d: input has " + std::to_string(c) + " channels, weight expects " +
                                  std::to_string(weight.dim(1)));
  const int ho = conv_output_size(h, k, geo.stride, geo.padding);
  const int wo = conv_output_size(w, k, geo.stride, geo.padding);
  require(ho >= 1 && wo >= 1, "conv2d: spatial size collapses to zero");
  Tensor y({b, f, ho, wo});
  const int ckk = c * k * k;
  const int plane = ho * wo;
  ConstMapMat wmat(weight.data(), f, ckk);
  std::vector<double> cols;
  if (!is_pointwise(k, geo)) cols.resize(static_cast<std::size_t>(ckk) * plane);
  for (int n = 0; n < b; ++n) {
    const double* xn = x.data() + static_cast<std::size_t>(n) * c * h * w;
    const double* colptr = xn;
    if (!is_pointwise(k, geo)) {
      im2col(xn, c, h, w, k, geo, ho, wo, cols.data());
      colptr = cols.data();
    }
    MapMat out(y.data() + static_cast<std::size_t>(n) * f * plane, f, plane);
    out.noalias() = wmat * ConstMapMat(colptr, ckk, plane);
    if (!bias.empty()) {
      for (int fi = 0; fi < f; ++fi) out.row(fi).array() += bias[fi];
    }
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, ConvGeometry geo,
                     Tensor* grad_input, Tensor& grad_weight, Tensor* grad_bias) {
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int f = weight.dim(0), k = weight.dim(2);
  const int ho = grad_out.dim(2), wo = grad_out.dim(3);
  const int ckk = c * k * k;
  const int plane = ho * wo;
  ConstMapMat wmat(weight.data(), f, ckk);
  MapMat gw(grad_weight.data(), f, ckk);
  const bool pointwise = is_pointwise(k, geo);
  std::vector<double> cols(pointwise ? 0 : static_cast<std::size_t>(ckk) * plane);
  std::vector<double> dcols(pointwise ? 0 : static_cast<std::size_t>(ckk) * plane);
  if (grad_input) *grad_input = Tensor(x.shape());
  for (int n = 0; n < b; ++n) {
    const double* xn = x.data() + static_cast<std::size_t>(n) * c * h * w;
    const double* colptr = xn;
    if (!pointwise) {
      im2col(xn, c, h, w, k, geo, ho, wo, cols.data());
      colptr = cols.data();
    }
    ConstMapMat dy(grad_out.data() + static_cast<std::size_t>(n) * f * plane, f, plane);
    gw.noalias() += dy * ConstMapMat(colptr, ckk, plane).transpose();
    if (grad_bias) {
      for (int fi = 0; fi < f; ++fi) (*grad_bias)[fi] += dy.row(fi).sum();
    }
    if (grad_input) {
      double* dxn = grad_input->data() + static_cast<std::size_t>(n) * c * h * w;
      if (pointwise) {
        MapMat(dxn, ckk, plane).noalias() = wmat.transpose() * dy;
      } else {
        MapMat(dcols.data(), ckk, plane).noalias() = wmat.transpose() * dy;
        col2im(dcols.data(), c, h, w, k, geo, ho, wo, dxn);
      }
    }
  }
}

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                        Tensor& running_var, BatchNormCache& cache) {
  const int b = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double count = static_cast<double>(b) * plane;
  Tensor y(x.shape());
  cache.normalized = Tensor(x.shape());
  cache.inv_std.assign(c, 0.0);
  cache.training = true;
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (int n = 0; n < b; ++n) {
      const double* p = x.data() + (static_cast<std::size_t>(n) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (int n = 0; n < b; ++n) {
      const double* p = x.data() + (static_cast<std::size_t>(n) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
    }
    const double var = sq / count;
    const double inv_std = 1.0 / std::sqrt(var + kBatchNormEps);
    cache.inv_std[ch] = inv_std;
    for (int n = 0; n < b; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (x[off + i] - mean) * inv_std;
        cache.normalized[off + i] = xh;
        y[off + i] = gamma[ch] * xh + beta[ch];
      }
    }
    const double unbiased = count > 1 ? sq / (count - 1) : var;
    running_mean[ch] = (1 - kBatchNormMomentum) * running_mean[ch] + kBatchNormMomentum * mean;
    running_var[ch] = (1 - kBatchNormMomentum) * running_var[ch] + kBatchNormMomentum * unbiased;
  }
  return y;
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                       const Tensor& running_var, BatchNormCache* cache) {
  const int b = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor y(x.shape());
  if (cache) {
    cache->normalized = Tensor(x.shape());
    cache->inv_std.assign(c, 0.0);
    cache->training = false;
  }
  for (int ch = 0; ch < c; ++ch) {
    const double inv_std = 1.0 / std::sqrt(running_var[ch] + kBatchNormEps);
    if (cache) cache->inv_std[ch] = inv_std;
    for (int n = 0; n < b; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (x[off + i] - running_mean[ch]) * inv_std;
        if (cache) cache->normalized[off + i] = xh;
        y[off + i] = gamma[ch] * xh + beta[ch];
      }
    }
  }
  return y;
}

void batch_norm_backward(const Tensor& grad_out, const BatchNormCache& cache, const Tensor& gamma,
                         Tensor& grad_input, Tensor& grad_gamma, Tensor& grad_beta) {
  const int b = grad_out.dim(0), c = grad_out.dim(1);
  const std::size_t plane = static_cast<std::size_t>(grad_out.dim(2)) * grad_out.dim(3);
  const double count = static_cast<double>(b) * plane;
  grad_input = Tensor(grad_out.shape());
  for (int ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (int n = 0; n < b; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += grad_out[off + i];
        sum_dy_xh += grad_out[off + i] * cache.normalized[off + i];
      }
    }
    grad_gamma[ch] += sum_dy_xh;
    grad_beta[ch] += sum_dy;
    const double scale = gamma[ch] * cache.inv_std[ch];
    for (int n = 0; n < b; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (cache.training) {
          grad_input[off + i] =
              scale * (grad_out[off + i] - sum_dy / count - cache.normalized[off + i] * sum_dy_xh / count);
        } else {
          grad_input[off + i] = scale * grad_out[off + i];
        }
      }
    }
  }
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& output, const Tensor& grad_out) {
  Tensor g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = output[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

Tensor max_pool2x2(const Tensor& x, std::vector<std::size_t>& argmax) {
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h / 2, wo = w / 2;
  require(ho >= 1 && wo >= 1, "max pool on a map smaller than 2x2");
  Tensor y({b, c, ho, wo});
  argmax.assign(y.size(), 0);
  std::size_t o = 0;
  for (int n = 0; n < b; ++n) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(n) * c + ch) * h * w;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox, ++o) {
          std::size_t best = base + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx = base + static_cast<std::size_t>(2 * oy + dy) * w + 2 * ox + dx;
              if (x[idx] > x[best]) best = idx;
            }
          }
          y[o] = x[best];
          argmax[o] = best;
        }
      }
    }
  }
  return y;
}

Tensor max_pool2x2_backward(const std::vector<int>& input_shape, const std::vector<std::size_t>& argmax,
                            const Tensor& grad_out) {
  Tensor g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

namespace {

int window_start(int i, int in, int out) { return (i * in) / out; }
int window_end(int i, int in, int out) { return ((i + 1) * in + out - 1) / out; }

}  // namespace

Tensor adaptive_avg_pool(const Tensor& x, int out) {
  require(out >= 1, "adaptive pool output must be >= 1");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({b, c, out, out});
  for (int n = 0; n < b; ++n) {
    for (int ch = 0; ch < c; ++ch) {
      const double* p = x.data() + (static_cast<std::size_t>(n) * c + ch) * h * w;
      for (int oy = 0; oy < out; ++oy) {
        const int y0 = window_start(oy, h, out), y1 = window_end(oy, h, out);
        for (int ox = 0; ox < out; ++ox) {
          const int x0 = window_start(ox, w, out), x1 = window_end(ox, w, out);
          double s = 0.0;
          for (int iy = y0; iy < y1; ++iy)
            for (int ix = x0; ix < x1; ++ix) s += p[iy * w + ix];
          y.at(n, ch, oy, ox) = s / static_cast<double>((y1 - y0) * (x1 - x0));
        }
      }
    }
  }
  return y;
}

Tensor adaptive_avg_pool_backward(const std::vector<int>& input_shape, const Tensor& grad_out) {
  Tensor g(input_shape);
  const int b = input_shape[0], c = input_shape[1], h = input_shape[2], w = input_shape[3];
  const int out = grad_out.dim(2);
  for (int n = 0; n < b; ++n) {
    for (int ch = 0; ch < c; ++ch) {
      double* p = g.data() + (static_cast<std::size_t>(n) * c + ch) * h * w;
      for (int oy = 0; oy < out; ++oy) {
        const int y0 = window_start(oy, h, out), y1 = window_end(oy, h, out);
        for (int ox = 0; ox < out; ++ox) {
          const int x0 = window_start(ox, w, out), x1 = window_end(ox, w, out);
          const double share = grad_out.at(n, ch, oy, ox) / static_cast<double>((y1 - y0) * (x1 - x0));
          for (int iy = y0; iy < y1; ++iy)
            for (int ix = x0; ix < x1; ++ix) p[iy * w + ix] += share;
        }
      }
    }
  }
  return g;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const int b = x.dim(0), in = static_cast<int>(x.stride0()), out = weight.dim(0);
  require(weight.dim(1) == in, "linear: input has " + std::to_string(in) + " features, weight expects " +
                                   std::to_string(weight.dim(1)));
  Tensor y({b, out});
  MapMat ym(y.data(), b, out);
  ym.noalias() = ConstMapMat(x.data(), b, in) * ConstMapMat(weight.data(), out, in).transpose();
  for (int n = 0; n < b; ++n)
    for (int o = 0; o < out; ++o) y[static_cast<std::size_t>(n) * out + o] += bias[o];
  return y;
}

void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, Tensor* grad_input,
                     Tensor& grad_weight, Tensor& grad_bias) {
  const int b = x.dim(0), in = static_cast<int>(x.stride0()), out = weight.dim(0);
  ConstMapMat dy(grad_out.data(), b, out);
  MapMat(grad_weight.data(), out, in).noalias() += dy.transpose() * ConstMapMat(x.data(), b, in);
  for (int o = 0; o < out; ++o) grad_bias[o] += dy.col(o).sum();
  if (grad_input) {
    *grad_input = Tensor(x.shape());
    MapMat(grad_input->data(), b, in).noalias() = dy * ConstMapMat(weight.data(), out, in);
  }
}

void add_inplace(Tensor& dst, const Tensor& src) {
  require(dst.shape() == src.shape(),
          "elementwise add of " + shape_string(dst.shape()) + " and " + shape_string(src.shape()));
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const int b = logits.dim(0), classes = logits.dim(1);
  require(static_cast<int>(labels.size()) == b, "label count does not match batch");
  LossResult r;
  r.grad = Tensor(logits.shape());
  for (int n = 0; n < b; ++n) {
    const double* z = logits.data() + static_cast<std::size_t>(n) * classes;
    double* g = r.grad.data() + static_cast<std::size_t>(n) * classes;
    const double zmax = *std::max_element(z, z + classes);
    double denom = 0.0;
    for (int k = 0; k < classes; ++k) denom += std::exp(z[k] - zmax);
    const double log_denom = std::log(denom) + zmax;
    r.loss += log_denom - z[labels[n]];
    int best = 0;
    for (int k = 0; k < classes; ++k) {
      g[k] = std::exp(z[k] - log_denom) / b;
      if (z[k] > z[best]) best = k;
    }
    g[labels[n]] -= 1.0 / b;
    if (best == labels[n]) ++r.correct;
  }
  r.loss /= b;
  return r;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const int b = logits.dim(0), classes = logits.dim(1);
  std::vector<int> out(b, 0);
  for (int n = 0; n < b; ++n) {
    const double* z = logits.data() + static_cast<std::size_t>(n) * classes;
    for (int k = 1; k < classes; ++k)
      if (z[k] > z[out[n]]) out[n] = k;
  }
  return out;
}

}  // namespace layerprune::ops

#include "binrep/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "binrep/error.hpp"

namespace binrep::kernels {

std::size_t conv_output_extent(std::size_t extent, std::size_t kernel, const ConvGeometry& g) {
  if (g.stride == 0) throw ConfigError("convolution stride must be positive");
  if (kernel == 0 || kernel > extent + 2 * g.pad) {
    throw ConfigError("kernel extent " + std::to_string(kernel) + " does not fit input extent " +
                      std::to_string(extent) + " with padding " + std::to_string(g.pad));
  }
  return (extent + 2 * g.pad - kernel) / g.stride + 1;
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

namespace {

std::vector<double> transpose(const double* src, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

struct ConvDims {
  std::size_t batch, c_in, h, w, c_out, kh, kw, oh, ow;
  std::size_t patch() const { return c_in * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, const ConvGeometry& g) {
  if (input.rank() != 4) {
    throw DimensionError("conv2d input must be [batch, c, h, w], got " +
                         shape_string(input.shape()));
  }
  if (weight.rank() != 4) {
    throw DimensionError("conv2d weight must be [c_out, c_in, kh, kw], got " +
                         shape_string(weight.shape()));
  }
  if (weight.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d channel mismatch: input " + shape_string(input.shape()) +
                         ", weight " + shape_string(weight.shape()));
  }
  ConvDims d{};
  d.batch = input.dim(0);
  d.c_in = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.c_out = weight.dim(0);
  d.kh = weight.dim(2);
  d.kw = weight.dim(3);
  d.oh = conv_output_extent(d.h, d.kh, g);
  d.ow = conv_output_extent(d.w, d.kw, g);
  return d;
}

// col[(c*kh + i)*kw + j][oy*ow + ox] = x[c][oy*s + i - pad][ox*s + j - pad] (0 outside).
void im2col(const double* x, const ConvDims& d, const ConvGeometry& g, double* col) {
  const std::size_t positions = d.positions();
  for (std::size_t c = 0; c < d.c_in; ++c) {
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        double* row = col + ((c * d.kh + i) * d.kw + j) * positions;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(d.h) &&
                                ix < static_cast<std::ptrdiff_t>(d.w);
            row[oy * d.ow + ox] =
                inside ? x[(c * d.h + static_cast<std::size_t>(iy)) * d.w +
                           static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvDims& d, const ConvGeometry& g, double* x) {
  const std::size_t positions = d.positions();
  for (std::size_t c = 0; c < d.c_in; ++c) {
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        const double* row = col + ((c * d.kh + i) * d.kw + j) * positions;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
            x[(c * d.h + static_cast<std::size_t>(iy)) * d.w + static_cast<std::size_t>(ix)] +=
                row[oy * d.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor fc_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1) {
    throw DimensionError("fc expects input [batch, in], weight [out, in], bias [out]; got " +
                         shape_string(input.shape()) + ", " + shape_string(weight.shape()) +
                         ", " + shape_string(bias.shape()));
  }
  const std::size_t batch = input.dim(0), in = input.dim(1), out = weight.dim(0);
  if (weight.dim(1) != in || bias.dim(0) != out) {
    throw DimensionError("fc dimension mismatch: input " + shape_string(input.shape()) +
                         ", weight " + shape_string(weight.shape()) + ", bias " +
                         shape_string(bias.shape()));
  }
  const std::vector<double> wt = transpose(weight.data(), out, in);
  Tensor result(Shape{batch, out});
  gemm_nn(batch, out, in, input.data(), wt.data(), result.data());
  // Bias is added after accumulation so integer-valued products sum exactly.
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < out; ++o) result[b * out + o] += bias[o];
  return result;
}

void fc_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                 Tensor* grad_input, Tensor* grad_weight, Tensor* grad_bias) {
  const std::size_t batch = input.dim(0), in = input.dim(1), out = weight.dim(0);
  if (grad_out.rank() != 2 || grad_out.dim(0) != batch || grad_out.dim(1) != out) {
    throw DimensionError("fc upstream gradient has shape " + shape_string(grad_out.shape()));
  }
  if (grad_input) gemm_nn(batch, in, out, grad_out.data(), weight.data(), grad_input->data());
  if (grad_weight) gemm_tn(out, in, batch, grad_out.data(), input.data(), grad_weight->data());
  if (grad_bias) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < out; ++o) (*grad_bias)[o] += grad_out[b * out + o];
  }
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                      const ConvGeometry& g) {
  const ConvDims d = conv_dims(input, weight, g);
  if (bias.rank() != 1 || bias.dim(0) != d.c_out) {
    throw DimensionError("conv2d bias must have " + std::to_string(d.c_out) + " entries, got " +
                         shape_string(bias.shape()));
  }
  const std::size_t patch = d.patch(), positions = d.positions();
  Tensor out(Shape{d.batch, d.c_out, d.oh, d.ow});
  std::vector<double> col(patch * positions);
  for (std::size_t n = 0; n < d.batch; ++n) {
    im2col(input.data() + n * d.c_in * d.h * d.w, d, g, col.data());
    double* dst = out.data() + n * d.c_out * positions;
    gemm_nn(d.c_out, positions, patch, weight.data(), col.data(), dst);
    for (std::size_t co = 0; co < d.c_out; ++co)
      for (std::size_t p = 0; p < positions; ++p) dst[co * positions + p] += bias[co];
  }
  return out;
}

void conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                     const ConvGeometry& g, Tensor* grad_input, Tensor* grad_weight,
                     Tensor* grad_bias) {
  const ConvDims d = conv_dims(input, weight, g);
  const std::size_t patch = d.patch(), positions = d.positions();
  if (grad_out.shape() != Shape{d.batch, d.c_out, d.oh, d.ow}) {
    throw DimensionError("conv2d upstream gradient has shape " + shape_string(grad_out.shape()));
  }
  std::vector<double> col(patch * positions);
  std::vector<double> dcol;
  if (grad_input) dcol.resize(patch * positions);
  for (std::size_t n = 0; n < d.batch; ++n) {
    const double* gout = grad_out.data() + n * d.c_out * positions;
    if (grad_weight) {
      im2col(input.data() + n * d.c_in * d.h * d.w, d, g, col.data());
      const std::vector<double> col_t = transpose(col.data(), patch, positions);
      gemm_nn(d.c_out, patch, positions, gout, col_t.data(), grad_weight->data());
    }
    if (grad_bias) {
      for (std::size_t co = 0; co < d.c_out; ++co) {
        double s = 0.0;
        for (std::size_t p = 0; p < positions; ++p) s += gout[co * positions + p];
        (*grad_bias)[co] += s;
      }
    }
    if (grad_input) {
      std::fill(dcol.begin(), dcol.end(), 0.0);
      gemm_tn(patch, positions, d.c_out, weight.data(), gout, dcol.data());
      col2im(dcol.data(), d, g, grad_input->data() + n * d.c_in * d.h * d.w);
    }
  }
}

PoolResult maxpool_forward(const Tensor& input, std::size_t window, std::size_t stride) {
  if (input.rank() != 4) {
    throw DimensionError("maxpool input must be [batch, c, h, w], got " +
                         shape_string(input.shape()));
  }
  if (window == 0 || stride == 0) throw ConfigError("maxpool window and stride must be positive");
  const std::size_t batch = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window > h || window > w) {
    throw DimensionError("maxpool window " + std::to_string(window) + " exceeds input " +
                         shape_string(input.shape()));
  }
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  PoolResult r{Tensor(Shape{batch, c, oh, ow}), {}};
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < batch * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + oy * stride * w + ox * stride;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = base + (oy * stride + i) * w + ox * stride + j;
            if (input[idx] > input[best]) best = idx;
          }
        }
        r.output[o] = input[best];
        r.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return r;
}

Tensor maxpool_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                        const Tensor& grad_out) {
  if (argmax.size() != grad_out.size()) {
    throw DimensionError("maxpool backward: argmax/gradient size mismatch");
  }
  Tensor grad(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) grad[argmax[o]] += grad_out[o];
  return grad;
}

LossResult softmax_ce_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw DimensionError("softmax_ce expects logits [batch, classes], got " +
                         shape_string(logits.shape()));
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("softmax_ce: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
  }
  LossResult r{0.0, Tensor(logits.shape())};
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw InputError("label " + std::to_string(label) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
    const double* row = logits.data() + b * classes;
    double* grow = r.grad.data() + b * classes;
    const double peak = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      grow[j] = std::exp(row[j] - peak);
      denom += grow[j];
    }
    const double log_denom = std::log(denom);
    r.loss += (log_denom - (row[label] - peak)) * inv_batch;
    for (std::size_t j = 0; j < classes; ++j) grow[j] = grow[j] / denom * inv_batch;
    grow[label] -= inv_batch;
  }
  return r;
}

}  // namespace binrep::kernels

#pragma once

// Dense forward/backward kernels shared by the autograd tape, the
// no-gradient inference path and the real-valued first layer of the packed
// engine. All of them are deterministic: the same inputs produce bit-identical
// outputs regardless of batch composition.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "binrep/tensor.hpp"

namespace binrep::kernels {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// Output spatial extent of a convolution; throws ConfigError when the
/// window does not fit.
std::size_t conv_output_extent(std::size_t extent, std::size_t kernel, const ConvGeometry& g);

/// C[m x n] += A[m x k] * B[k x n], all row-major and contiguous.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);
/// C[m x n] += A^T * B where A is stored [k x m].
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);

Tensor fc_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);
/// Accumulates into whichever gradient pointers are non-null.
void fc_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                 Tensor* grad_input, Tensor* grad_weight, Tensor* grad_bias);

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                      const ConvGeometry& g);
void conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                     const ConvGeometry& g, Tensor* grad_input, Tensor* grad_weight,
                     Tensor* grad_bias);

struct PoolResult {
  Tensor output;
  // Flat input index chosen for every output element (first maximum in scan order).
  std::vector<std::uint32_t> argmax;
};

PoolResult maxpool_forward(const Tensor& input, std::size_t window, std::size_t stride);
Tensor maxpool_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                        const Tensor& grad_out);

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d(loss)/d(logits)
};

/// Mean softmax cross-entropy over the batch, max-subtracted for stability.
LossResult softmax_ce_loss(const Tensor& logits, std::span<const int> labels);

}  // namespace binrep::kernels

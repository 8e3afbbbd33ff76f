#pragma once

#include <span>
#include <vector>

#include "layerprune/tensor.hpp"

namespace layerprune::ops {

struct ConvGeometry {
  int stride = 1;
  int padding = 0;
};

int conv_output_size(int input, int kernel, int stride, int padding);

// x: [B,C,H,W], weight: [F,C,K,K], bias: [F] or empty.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, ConvGeometry geo);

// Accumulates into grad_weight / grad_bias. grad_input is overwritten when
// non-null.
void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, ConvGeometry geo,
                     Tensor* grad_input, Tensor& grad_weight, Tensor* grad_bias);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct BatchNormCache {
  Tensor normalized;             // x_hat
  std::vector<double> inv_std;   // per channel
  bool training = false;
};

// Training mode: normalizes with batch statistics and folds them into the
// running buffers (unbiased variance, momentum 0.1).
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                        Tensor& running_var, BatchNormCache& cache);
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                       const Tensor& running_var, BatchNormCache* cache);
void batch_norm_backward(const Tensor& grad_out, const BatchNormCache& cache, const Tensor& gamma,
                         Tensor& grad_input, Tensor& grad_gamma, Tensor& grad_beta);

Tensor relu(const Tensor& x);
// Uses the forward output as the mask.
Tensor relu_backward(const Tensor& output, const Tensor& grad_out);

// 2x2 / stride 2, floor mode. argmax receives flat input offsets.
Tensor max_pool2x2(const Tensor& x, std::vector<std::size_t>& argmax);
Tensor max_pool2x2_backward(const std::vector<int>& input_shape, const std::vector<std::size_t>& argmax,
                            const Tensor& grad_out);

// Adaptive average pooling to out x out, with the usual floor/ceil window
// boundaries (windows may overlap or repeat when out > H).
Tensor adaptive_avg_pool(const Tensor& x, int out);
Tensor adaptive_avg_pool_backward(const std::vector<int>& input_shape, const Tensor& grad_out);

// x: [B,in], weight: [out,in], bias: [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, Tensor* grad_input,
                     Tensor& grad_weight, Tensor& grad_bias);

void add_inplace(Tensor& dst, const Tensor& src);

struct LossResult {
  double loss = 0.0;  // mean over the batch
  Tensor grad;        // d(mean loss)/d(logits)
  int correct = 0;
};

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// argmax over axis 1 with lowest-index tie-break.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace layerprune::ops

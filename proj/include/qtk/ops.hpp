#pragma once

#include <cstddef>
#include <optional>

#include "qtk/tensor.hpp"

namespace qtk {

// a[m,k] x b[k,n]. Summation over k runs left to right.
Tensor matmul(const Tensor& a, const Tensor& b);

// Fully connected layer: x[N,in] against w[out,in], plus optional bias[out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

// Direct cross-correlation of x[N,C,H,W] with w[F,C,kh,kw]; optional bias[F].
// Throws ShapeError when (H + 2*pad - kh) is not a multiple of stride.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad,
              const Tensor* bias = nullptr);

Tensor relu(const Tensor& x);

// Non-overlapping average pooling over x[N,C,H,W] with window = stride = k.
Tensor avgpool2d(const Tensor& x, std::size_t k);

// [N, ...] -> [N, rest]
Tensor flatten(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);

double mean(const Tensor& x);
double stddev(const Tensor& x);  // population
double min(const Tensor& x);
double max(const Tensor& x);
double max_abs(const Tensor& x);

}  // namespace qtk

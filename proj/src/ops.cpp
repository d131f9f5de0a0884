#include "qtk/ops.hpp"

#include <algorithm>
#include <cmath>

#include "qtk/errors.hpp"

namespace qtk {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul inner dimensions differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor out({m, n});
  auto A = a.data();
  auto B = b.data();
  auto C = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[p * n + j];
      C[i * n + j] = acc;
    }
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  const std::size_t batch = x.dim(0), in = x.dim(1), outf = w.dim(0);
  if (w.dim(1) != in)
    throw ShapeError("linear: input " + shape_string(x.shape()) + " vs weight " + shape_string(w.shape()));
  if (bias && (bias->rank() != 1 || bias->dim(0) != outf))
    throw ShapeError("linear: bias " + shape_string(bias->shape()) + " vs " + std::to_string(outf) + " outputs");
  Tensor out({batch, outf});
  auto X = x.data();
  auto W = w.data();
  auto Y = out.data();
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xr = X.data() + n * in;
    for (std::size_t o = 0; o < outf; ++o) {
      const double* wr = W.data() + o * in;
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      if (bias) acc += (*bias)[o];
      Y[n * outf + o] = acc;
    }
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad, const Tensor* bias) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  if (stride == 0) throw ShapeError("conv2d stride must be >= 1");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C)
    throw ShapeError("conv2d channel mismatch: input " + shape_string(x.shape()) + ", weight " +
                     shape_string(w.shape()));
  if (H + 2 * pad < kh || W + 2 * pad < kw)
    throw ShapeError("conv2d kernel does not fit padded input");
  if ((H + 2 * pad - kh) % stride != 0 || (W + 2 * pad - kw) % stride != 0)
    throw ShapeError("conv2d output size is not integral for input " + shape_string(x.shape()) + ", kernel " +
                     shape_string(w.shape()) + ", stride " + std::to_string(stride) + ", pad " +
                     std::to_string(pad));
  if (bias && (bias->rank() != 1 || bias->dim(0) != F))
    throw ShapeError("conv2d bias " + shape_string(bias->shape()) + " vs " + std::to_string(F) + " filters");
  const std::size_t OH = (H + 2 * pad - kh) / stride + 1;
  const std::size_t OW = (W + 2 * pad - kw) / stride + 1;

  Tensor out({N, F, OH, OW});
  auto X = x.data();
  auto Wt = w.data();
  auto Y = out.data();
  const auto ipad = static_cast<std::ptrdiff_t>(pad);

  // Each output element accumulates over (c, ki, kj) in that order; the loop
  // nest below only changes which element is visited next, not the order of
  // additions into any single element.
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t f = 0; f < F; ++f) {
      double* plane = Y.data() + ((n * F + f) * OH) * OW;
      for (std::size_t c = 0; c < C; ++c) {
        const double* xin = X.data() + ((n * C + c) * H) * W;
        for (std::size_t ki = 0; ki < kh; ++ki) {
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const double wv = Wt[((f * C + c) * kh + ki) * kw + kj];
            for (std::size_t oh = 0; oh < OH; ++oh) {
              const auto ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - ipad;
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
              const double* xrow = xin + static_cast<std::size_t>(ih) * W;
              double* yrow = plane + oh * OW;
              for (std::size_t ow = 0; ow < OW; ++ow) {
                const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kj) - ipad;
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                yrow[ow] += xrow[iw] * wv;
              }
            }
          }
        }
      }
      if (bias) {
        const double b = (*bias)[f];
        for (std::size_t i = 0; i < OH * OW; ++i) plane[i] += b;
      }
    }
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor avgpool2d(const Tensor& x, std::size_t k) {
  require_rank(x, 4, "avgpool2d");
  if (k == 0) throw ShapeError("avgpool2d window must be >= 1");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % k != 0 || W % k != 0)
    throw ShapeError("avgpool2d window " + std::to_string(k) + " does not tile " + shape_string(x.shape()));
  const std::size_t OH = H / k, OW = W / k;
  Tensor out({N, C, OH, OW});
  auto X = x.data();
  auto Y = out.data();
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* plane = X.data() + nc * H * W;
    for (std::size_t oh = 0; oh < OH; ++oh) {
      for (std::size_t ow = 0; ow < OW; ++ow) {
        double acc = 0.0;
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) acc += plane[(oh * k + i) * W + ow * k + j];
        Y[(nc * OH + oh) * OW + ow] = acc * inv;
      }
    }
  }
  return out;
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("flatten of a scalar");
  const std::size_t n = x.dim(0);
  return x.reshaped({n, x.size() / n});
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor out = a;
  auto B = b.data();
  auto O = out.data();
  for (std::size_t i = 0; i < O.size(); ++i) O[i] += B[i];
  return out;
}

double mean(const Tensor& x) {
  if (x.empty()) throw ShapeError("mean of empty tensor");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return acc / static_cast<double>(x.size());
}

double stddev(const Tensor& x) {
  const double m = mean(x);
  double acc = 0.0;
  for (double v : x.data()) acc += (v - m) * (v - m);
  return std::sqrt(acc / static_cast<double>(x.size()));
}

double min(const Tensor& x) {
  if (x.empty()) throw ShapeError("min of empty tensor");
  return *std::min_element(x.data().begin(), x.data().end());
}

double max(const Tensor& x) {
  if (x.empty()) throw ShapeError("max of empty tensor");
  return *std::max_element(x.data().begin(), x.data().end());
}

double max_abs(const Tensor& x) {
  double m = 0.0;
  for (double v : x.data()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace qtk

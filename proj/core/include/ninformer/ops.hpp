#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ninformer/autograd.hpp"

namespace ninformer {

// Differentiable primitives. Every op computes its forward value eagerly and,
// when a GradTape is active and an operand requires gradients, records the
// matching backward rule.

// [..., m, k] x [..., k, n] -> [..., m, n]; batch axes broadcast numpy-style.
template <typename T>
Variable<T> matmul(const Variable<T>& a, const Variable<T>& b);

// Affine map over the last axis: x[..., k] * weight[k, n] + bias[n].
// `bias` may be a default-constructed Variable for no bias.
template <typename T>
Variable<T> linear(const Variable<T>& x, const Variable<T>& weight, const Variable<T>& bias);

template <typename T>
Variable<T> add(const Variable<T>& a, const Variable<T>& b);

template <typename T>
Variable<T> mul(const Variable<T>& a, const Variable<T>& b);

template <typename T>
Variable<T> scale(const Variable<T>& x, T factor);

// x + p where p's shape equals the trailing axes of x (a bias vector, a
// positional table, ...).
template <typename T>
Variable<T> add_broadcast(const Variable<T>& x, const Variable<T>& p);

// Exact Gaussian-CDF form: 0.5 * x * (1 + erf(x / sqrt(2))).
template <typename T>
Variable<T> gelu(const Variable<T>& x);

template <typename T>
Variable<T> sigmoid(const Variable<T>& x);

template <typename T>
Variable<T> softmax(const Variable<T>& x, std::ptrdiff_t axis);

// Normalizes each vector along the last axis with its population variance.
template <typename T>
Variable<T> layer_norm(const Variable<T>& x, const Variable<T>& gamma, const Variable<T>& beta,
                       T eps = T(1e-5));

template <typename T>
Variable<T> transpose_last2(const Variable<T>& x);

template <typename T>
Variable<T> permute(const Variable<T>& x, const std::vector<std::size_t>& axes);

template <typename T>
Variable<T> reshape(const Variable<T>& x, Shape shape);

// Mean over one axis; the axis is removed from the result.
template <typename T>
Variable<T> mean_axis(const Variable<T>& x, std::ptrdiff_t axis);

// Sum of all elements as a scalar.
template <typename T>
Variable<T> sum(const Variable<T>& x);

// Per-channel 2-D convolution over x[b, h, w, c] with kernel[kh, kw, c]
// (odd sizes), stride 1 and zero padding that preserves h and w.
template <typename T>
Variable<T> depthwise_conv2d(const Variable<T>& x, const Variable<T>& kernel, const Variable<T>& bias);

// images[b, h, w, c] -> [b, (h/ps)*(w/ps), ps*ps*c]. Patches are ordered
// row-major over the patch grid; each patch flattens as (row, col, channel).
template <typename T>
Variable<T> extract_patches(const Variable<T>& images, std::size_t patch_size);

// Counts multiply-accumulates performed by ops on this thread while alive:
// contractions (matmul, linear, depthwise conv) contribute one per product
// term and elementwise `mul` contributes one per element. Normalization,
// activations, softmax and additions are not counted.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t count() const noexcept { return count_; }

  static void add(std::uint64_t macs) noexcept;

 private:
  MacCounter* previous_;
  std::uint64_t count_ = 0;
};

// Test hook: makes the backward rule of the named op (e.g. "gelu") scale its
// gradient by 1.5 on this thread. Used as a negative control for the
// gradient checker. An empty name disables the fault.
void set_backward_fault(const std::string& op_name);
const std::string& backward_fault();

}  // namespace ninformer

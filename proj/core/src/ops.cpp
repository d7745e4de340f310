#include "ninformer/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace ninformer {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

thread_local MacCounter* active_counter = nullptr;
thread_local std::string fault_op;

// Gradient multiplier for an op's backward rule; 1 unless a fault is injected.
template <typename T>
T fault_factor(const char* op) {
  return (!fault_op.empty() && fault_op == op) ? T(1.5) : T(1);
}

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank, const Shape& shape) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape));
  }
  return static_cast<std::size_t>(axis);
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

// Row-major strides.
std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// Batch-axis broadcasting plan for matmul: for each output batch index the
// flat batch offsets into a and b.
struct BatchPlan {
  Shape out_batch;
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
};

BatchPlan plan_batches(const Shape& a, const Shape& b) {
  const Shape a_batch(a.begin(), a.end() - 2);
  const Shape b_batch(b.begin(), b.end() - 2);
  const std::size_t rank = std::max(a_batch.size(), b_batch.size());
  Shape out(rank, 1);
  Shape ab(rank, 1), bb(rank, 1);
  std::copy(a_batch.begin(), a_batch.end(), ab.begin() + (rank - a_batch.size()));
  std::copy(b_batch.begin(), b_batch.end(), bb.begin() + (rank - b_batch.size()));
  for (std::size_t i = 0; i < rank; ++i) {
    if (ab[i] != bb[i] && ab[i] != 1 && bb[i] != 1) {
      throw DimensionError("matmul: batch axes of " + to_string(a) + " and " + to_string(b) +
                           " are not broadcastable");
    }
    out[i] = std::max(ab[i], bb[i]);
  }
  const auto as = strides_of(ab);
  const auto bs = strides_of(bb);
  BatchPlan plan;
  const std::size_t total = numel(out);
  plan.a_index.resize(total);
  plan.b_index.resize(total);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t t = 0; t < total; ++t) {
    std::size_t ai = 0, bi = 0;
    for (std::size_t i = 0; i < rank; ++i) {
      if (ab[i] != 1) ai += idx[i] * as[i];
      if (bb[i] != 1) bi += idx[i] * bs[i];
    }
    plan.a_index[t] = ai;
    plan.b_index[t] = bi;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out[i]) break;
      idx[i] = 0;
    }
  }
  plan.out_batch = std::move(out);
  return plan;
}

}  // namespace

MacCounter::MacCounter() : previous_(active_counter) { active_counter = this; }
MacCounter::~MacCounter() { active_counter = previous_; }

void MacCounter::add(std::uint64_t macs) noexcept {
  if (active_counter) active_counter->count_ += macs;
}

void set_backward_fault(const std::string& op_name) { fault_op = op_name; }
const std::string& backward_fault() { return fault_op; }

template <typename T>
Variable<T> matmul(const Variable<T>& a, const Variable<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2 || as[as.size() - 1] != bs[bs.size() - 2]) {
    throw DimensionError("matmul: incompatible shapes " + to_string(as) + " and " + to_string(bs));
  }
  const std::size_t m = as[as.size() - 2], k = as.back(), n = bs.back();
  auto plan = plan_batches(as, bs);
  Shape out_shape = plan.out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);
  const std::size_t batches = plan.a_index.size();
  const T* ap = a.value().raw();
  const T* bp = b.value().raw();
  T* op = out.raw();
  for (std::size_t t = 0; t < batches; ++t) {
    ConstMatMap<T> A(ap + plan.a_index[t] * m * k, m, k);
    ConstMatMap<T> B(bp + plan.b_index[t] * k * n, k, n);
    MatMap<T> C(op + t * m * n, m, n);
    C.noalias() = A * B;
  }
  MacCounter::add(static_cast<std::uint64_t>(batches) * m * k * n);

  Variable<T> result(std::move(out));
  if (should_record<T>(a, b)) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [a, b, plan, m, k, n](const Tensor<T>& g) {
      const T f = fault_factor<T>("matmul");
      const std::size_t batches = plan.a_index.size();
      if (a.requires_grad()) {
        T* ga = a.node().grad_buffer().raw();
        const T* bp = b.value().raw();
        for (std::size_t t = 0; t < batches; ++t) {
          ConstMatMap<T> G(g.raw() + t * m * n, m, n);
          ConstMatMap<T> B(bp + plan.b_index[t] * k * n, k, n);
          MatMap<T> GA(ga + plan.a_index[t] * m * k, m, k);
          GA.noalias() += f * (G * B.transpose());
        }
      }
      if (b.requires_grad()) {
        T* gb = b.node().grad_buffer().raw();
        const T* ap = a.value().raw();
        for (std::size_t t = 0; t < batches; ++t) {
          ConstMatMap<T> G(g.raw() + t * m * n, m, n);
          ConstMatMap<T> A(ap + plan.a_index[t] * m * k, m, k);
          MatMap<T> GB(gb + plan.b_index[t] * k * n, k, n);
          GB.noalias() += f * (A.transpose() * G);
        }
      }
    });
  }
  return result;
}

template <typename T>
Variable<T> linear(const Variable<T>& x, const Variable<T>& weight, const Variable<T>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[0]) {
    throw DimensionError("linear: input " + to_string(xs) + " incompatible with weight " + to_string(ws));
  }
  const std::size_t k = ws[0], n = ws[1];
  if (bias.defined() && bias.shape() != Shape{n}) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " does not match weight " + to_string(ws));
  }
  const std::size_t rows = x.value().size() / k;
  Shape out_shape = xs;
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  {
    ConstMatMap<T> X(x.value().raw(), rows, k);
    ConstMatMap<T> W(weight.value().raw(), k, n);
    MatMap<T> Y(out.raw(), rows, n);
    Y.noalias() = X * W;
    if (bias.defined()) {
      Eigen::Map<const RowVec<T>> bv(bias.value().raw(), n);
      Y.rowwise() += bv;
    }
  }
  MacCounter::add(static_cast<std::uint64_t>(rows) * k * n);

  Variable<T> result(std::move(out));
  const bool any = bias.defined() ? should_record<T>(x, weight, bias) : should_record<T>(x, weight);
  if (any) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [x, weight, bias, rows, k, n](const Tensor<T>& g) {
      const T f = fault_factor<T>("linear");
      ConstMatMap<T> G(g.raw(), rows, n);
      if (x.requires_grad()) {
        MatMap<T> GX(x.node().grad_buffer().raw(), rows, k);
        ConstMatMap<T> W(weight.value().raw(), k, n);
        GX.noalias() += f * (G * W.transpose());
      }
      if (weight.requires_grad()) {
        MatMap<T> GW(weight.node().grad_buffer().raw(), k, n);
        ConstMatMap<T> X(x.value().raw(), rows, k);
        GW.noalias() += f * (X.transpose() * G);
      }
      if (bias.defined() && bias.requires_grad()) {
        Eigen::Map<RowVec<T>> gb(bias.node().grad_buffer().raw(), n);
        gb += f * G.colwise().sum();
      }
    });
  }
  return result;
}

template <typename T>
Variable<T> add(const Variable<T>& a, const Variable<T>& b) {
  require_same_shape("add", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  const auto av = a.value().data();
  const auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  Variable<T> result(std::move(out));
  if (should_record<T>(a, b)) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [a, b](const Tensor<T>& g) {
      const T f = fault_factor<T>("add");
      for (const auto* v : {&a, &b}) {
        if (!v->requires_grad()) continue;
        auto dst = v->node().grad_buffer().data();
        const auto src = g.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += f * src[i];
      }
    });
  }
  return result;
}

template <typename T>
Variable<T> mul(const Variable<T>& a, const Variable<T>& b) {
  require_same_shape("mul", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  const auto av = a.value().data();
  const auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  MacCounter::add(ov.size());
  Variable<T> result(std::move(out));
  if (should_record<T>(a, b)) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [a, b](const Tensor<T>& g) {
      const T f = fault_factor<T>("mul");
      const auto gv = g.data();
      if (a.requires_grad()) {
        auto ga = a.node().grad_buffer().data();
        const auto bv = b.value().data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += f * gv[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.node().grad_buffer().data();
        const auto av = a.value().data();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += f * gv[i] * av[i];
      }
    });
  }
  return result;
}

template <typename T>
Variable<T> scale(const Variable<T>& x, T factor) {
  Tensor<T> out(x.shape());
  const auto xv = x.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * factor;
  Variable<T> result(std::move(out));
  if (should_record<T>(x)) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [x, factor](const Tensor<T>& g) {
      const T f = fault_factor<T>("scale") * factor;
      auto gx = x.node().grad_buffer().data();
      const auto gv = g.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += f * gv[i];
    });
  }
  return result;
}

template <typename T>
Variable<T> add_broadcast(const Variable<T>& x, const Variable<T>& p) {
  const Shape& xs = x.shape();
  const Shape& ps = p.shape();
  if (ps.size() > xs.size() || !std::equal(ps.begin(), ps.end(), xs.end() - static_cast<std::ptrdiff_t>(ps.size()))) {
    throw DimensionError("add_broadcast: " + to_string(ps) + " is not a trailing shape of " + to_string(xs));
  }
  const std::size_t inner = p.value().size();
  const std::size_t outer = x.value().size() / inner;
  Tensor<T> out(xs);
  const T* xv = x.value().raw();
  const T* pv = p.value().raw();
  T* ov = out.raw();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) ov[o * inner + i] = xv[o * inner + i] + pv[i];
  }
  Variable<T> result(std::move(out));
  if (should_record<T>(x, p)) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [x, p, inner, outer](const Tensor<T>& g) {
      const T f = fault_factor<T>("add_broadcast");
      const T* gv = g.raw();
      if (x.requires_grad()) {
        T* gx = x.node().grad_buffer().raw();
        for (std::size_t i = 0; i < outer * inner; ++i) gx[i] += f * gv[i];
      }
      if (p.requires_grad()) {
        T* gp = p.node().grad_buffer().raw();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) gp[i] += f * gv[o * inner + i];
        }
      }
    });
  }
  return result;
}

template <typename T>
Variable<T> gelu(const Variable<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  Tensor<T> out(x.shape());
  const auto xv = x.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
  Variable<T> result(std::move(out));
  if (should_record<T>(x)) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [x](const Tensor<T>& g) {
      constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
      constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
      const T f = fault_factor<T>("gelu");
      const auto xv = x.value().data();
      const auto gv = g.data();
      auto gx = x.node().grad_buffer().data();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * xv[i] * xv[i]);
        gx[i] += f * gv[i] * (cdf + xv[i] * pdf);
      }
    });
  }
  return result;
}

template <typename T>
Variable<T> sigmoid(const Variable<T>& x) {
  Tensor<T> out(x.shape());
  const auto xv = x.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = T(1) / (T(1) + std::exp(-xv[i]));
  Variable<T> result(out);
  if (should_record<T>(x)) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [x, y = std::move(out)](const Tensor<T>& g) {
      const T f = fault_factor<T>("sigmoid");
      const auto yv = y.data();
      const auto gv = g.data();
      auto gx = x.node().grad_buffer().data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += f * gv[i] * yv[i] * (T(1) - yv[i]);
    });
  }
  return result;
}

template <typename T>
Variable<T> softmax(const Variable<T>& x, std::ptrdiff_t axis_in) {
  const Shape& xs = x.shape();
  const std::size_t axis = normalize_axis(axis_in, xs.size(), xs);
  if (!x.value().all_finite()) throw NumericError("softmax: non-finite input of shape " + to_string(xs));
  const std::size_t len = xs[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t outer = x.value().size() / (len * inner);

  Tensor<T> out(xs);
  const T* xv = x.value().raw();
  T* ov = out.raw();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = xv[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(xv[base + j * inner] - mx);
        ov[base + j * inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::size_t j = 0; j < len; ++j) ov[base + j * inner] *= inv;
    }
  }
  Variable<T> result(out);
  if (should_record<T>(x)) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [x, y = std::move(out), len, inner, outer](const Tensor<T>& g) {
      const T f = fault_factor<T>("softmax");
      const T* yv = y.raw();
      const T* gv = g.raw();
      T* gx = x.node().grad_buffer().raw();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T dot = 0;
          for (std::size_t j = 0; j < len; ++j) dot += gv[base + j * inner] * yv[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t at = base + j * inner;
            gx[at] += f * yv[at] * (gv[at] - dot);
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Variable<T> layer_norm(const Variable<T>& x, const Variable<T>& gamma, const Variable<T>& beta, T eps) {
  const Shape& xs = x.shape();
  if (xs.empty()) throw DimensionError("layer_norm: input must have rank >= 1");
  const std::size_t d = xs.back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gamma " + to_string(gamma.shape()) + " / beta " +
                         to_string(beta.shape()) + " do not match last axis of " + to_string(xs));
  }
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.value().size() / d;
  Tensor<T> out(xs);
  Tensor<T> xhat(xs);
  std::vector<T> rstd(rows);
  const T* xv = x.value().raw();
  const T* gv = gamma.value().raw();
  const T* bv = beta.value().raw();
  T* ov = out.raw();
  T* hv = xhat.raw();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mean) * rs;
      hv[r * d + j] = h;
      ov[r * d + j] = h * gv[j] + bv[j];
    }
  }
  Variable<T> result(std::move(out));
  if (should_record<T>(x, gamma, beta)) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(
        result, [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), rows, d](const Tensor<T>& g) {
          const T f = fault_factor<T>("layer_norm");
          const T* gy = g.raw();
          const T* hv = xhat.raw();
          if (gamma.requires_grad() || beta.requires_grad()) {
            T* gg = gamma.requires_grad() ? gamma.node().grad_buffer().raw() : nullptr;
            T* gb = beta.requires_grad() ? beta.node().grad_buffer().raw() : nullptr;
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t j = 0; j < d; ++j) {
                if (gg) gg[j] += f * gy[r * d + j] * hv[r * d + j];
                if (gb) gb[j] += f * gy[r * d + j];
              }
            }
          }
          if (x.requires_grad()) {
            T* gx = x.node().grad_buffer().raw();
            const T* gam = gamma.value().raw();
            std::vector<T> dh(d);
            for (std::size_t r = 0; r < rows; ++r) {
              T mean_dh = 0, mean_dh_h = 0;
              for (std::size_t j = 0; j < d; ++j) {
                dh[j] = gy[r * d + j] * gam[j];
                mean_dh += dh[j];
                mean_dh_h += dh[j] * hv[r * d + j];
              }
              mean_dh /= T(d);
              mean_dh_h /= T(d);
              for (std::size_t j = 0; j < d; ++j) {
                gx[r * d + j] += f * rstd[r] * (dh[j] - mean_dh - hv[r * d + j] * mean_dh_h);
              }
            }
          }
        });
  }
  return result;
}

template <typename T>
Variable<T> transpose_last2(const Variable<T>& x) {
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw DimensionError("transpose_last2: rank must be >= 2, got " + to_string(xs));
  const std::size_t a = xs[xs.size() - 2], b = xs.back();
  const std::size_t batches = x.value().size() / (a * b);
  Shape out_shape = xs;
  std::swap(out_shape[xs.size() - 2], out_shape[xs.size() - 1]);
  Tensor<T> out(out_shape);
  const T* xv = x.value().raw();
  T* ov = out.raw();
  for (std::size_t t = 0; t < batches; ++t) {
    ConstMatMap<T> X(xv + t * a * b, a, b);
    MatMap<T> Y(ov + t * a * b, b, a);
    Y = X.transpose();
  }
  Variable<T> result(std::move(out));
  if (should_record<T>(x)) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [x, a, b, batches](const Tensor<T>& g) {
      const T f = fault_factor<T>("transpose_last2");
      T* gx = x.node().grad_buffer().raw();
      for (std::size_t t = 0; t < batches; ++t) {
        ConstMatMap<T> G(g.raw() + t * a * b, b, a);
        MatMap<T> GX(gx + t * a * b, a, b);
        GX += f * G.transpose();
      }
    });
  }
  return result;
}

template <typename T>
Variable<T> permute(const Variable<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& xs = x.shape();
  const std::size_t r = xs.size();
  if (axes.size() != r) throw DimensionError("permute: axis list does not match rank of " + to_string(xs));
  std::vector<bool> seen(r, false);
  for (auto ax : axes) {
    if (ax >= r || seen[ax]) throw DimensionError("permute: invalid axis order for " + to_string(xs));
    seen[ax] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = xs[axes[i]];
  const auto in_strides = strides_of(xs);
  // Source stride for each output axis.
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) src_stride[i] = in_strides[axes[i]];

  // Flat source index of every output element; reused by the backward rule.
  const std::size_t total = x.value().size();
  std::vector<std::size_t> gather(total);
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t t = 0; t < total; ++t) {
      gather[t] = src;
      for (std::size_t i = r; i-- > 0;) {
        if (++idx[i] < out_shape[i]) {
          src += src_stride[i];
          break;
        }
        src -= (out_shape[i] - 1) * src_stride[i];
        idx[i] = 0;
      }
    }
  }
  Tensor<T> out(out_shape);
  const T* xv = x.value().raw();
  T* ov = out.raw();
  for (std::size_t t = 0; t < total; ++t) ov[t] = xv[gather[t]];
  Variable<T> result(std::move(out));
  if (should_record<T>(x)) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [x, gather = std::move(gather)](const Tensor<T>& g) {
      const T f = fault_factor<T>("permute");
      T* gx = x.node().grad_buffer().raw();
      const T* gv = g.raw();
      for (std::size_t t = 0; t < gather.size(); ++t) gx[gather[t]] += f * gv[t];
    });
  }
  return result;
}

template <typename T>
Variable<T> reshape(const Variable<T>& x, Shape shape) {
  Variable<T> result(x.value().reshaped(std::move(shape)));
  if (should_record<T>(x)) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [x](const Tensor<T>& g) {
      const T f = fault_factor<T>("reshape");
      auto gx = x.node().grad_buffer().data();
      const auto gv = g.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += f * gv[i];
    });
  }
  return result;
}

template <typename T>
Variable<T> mean_axis(const Variable<T>& x, std::ptrdiff_t axis_in) {
  const Shape& xs = x.shape();
  const std::size_t axis = normalize_axis(axis_in, xs.size(), xs);
  const std::size_t len = xs[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t outer = x.value().size() / (len * inner);
  Shape out_shape = xs;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> out(out_shape);
  const T* xv = x.value().raw();
  T* ov = out.raw();
  const T inv = T(1) / T(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < len; ++j) {
      for (std::size_t in = 0; in < inner; ++in) ov[o * inner + in] += xv[(o * len + j) * inner + in];
    }
    for (std::size_t in = 0; in < inner; ++in) ov[o * inner + in] *= inv;
  }
  Variable<T> result(std::move(out));
  if (should_record<T>(x)) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [x, len, inner, outer, inv](const Tensor<T>& g) {
      const T f = fault_factor<T>("mean_axis") * inv;
      T* gx = x.node().grad_buffer().raw();
      const T* gv = g.raw();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < len; ++j) {
          for (std::size_t in = 0; in < inner; ++in) gx[(o * len + j) * inner + in] += f * gv[o * inner + in];
        }
      }
    });
  }
  return result;
}

template <typename T>
Variable<T> sum(const Variable<T>& x) {
  T total = 0;
  for (T v : x.value().data()) total += v;
  Variable<T> result(Tensor<T>::scalar(total));
  if (should_record<T>(x)) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [x](const Tensor<T>& g) {
      const T gv = g[0] * fault_factor<T>("sum");
      for (auto& v : x.node().grad_buffer().data()) v += gv;
    });
  }
  return result;
}

template <typename T>
Variable<T> depthwise_conv2d(const Variable<T>& x, const Variable<T>& kernel, const Variable<T>& bias) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 4 || ks.size() != 3 || ks[2] != xs[3] || ks[0] % 2 == 0 || ks[1] % 2 == 0) {
    throw DimensionError("depthwise_conv2d: input " + to_string(xs) + " incompatible with kernel " + to_string(ks));
  }
  const std::size_t c = xs[3];
  if (bias.defined() && bias.shape() != Shape{c}) {
    throw DimensionError("depthwise_conv2d: bias " + to_string(bias.shape()) + " does not match " + to_string(xs));
  }
  const std::size_t batch = xs[0], h = xs[1], w = xs[2], kh = ks[0], kw = ks[1];
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);

  // Visits every (output pixel, tap) pair whose input pixel lies inside the
  // image; out-of-range taps read zero padding.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::ptrdiff_t i = 0; i < H; ++i) {
        for (std::ptrdiff_t j = 0; j < W; ++j) {
          const std::size_t out_base = ((b * h + static_cast<std::size_t>(i)) * w + static_cast<std::size_t>(j)) * c;
          for (std::size_t u = 0; u < kh; ++u) {
            const std::ptrdiff_t si = i + static_cast<std::ptrdiff_t>(u) - ph;
            if (si < 0 || si >= H) continue;
            for (std::size_t v = 0; v < kw; ++v) {
              const std::ptrdiff_t sj = j + static_cast<std::ptrdiff_t>(v) - pw;
              if (sj < 0 || sj >= W) continue;
              const std::size_t in_base =
                  ((b * h + static_cast<std::size_t>(si)) * w + static_cast<std::size_t>(sj)) * c;
              fn(out_base, in_base, (u * kw + v) * c);
            }
          }
        }
      }
    }
  };

  Tensor<T> out(xs);
  T* ov = out.raw();
  const T* xv = x.value().raw();
  const T* kv = kernel.value().raw();
  for_each_tap([&](std::size_t o, std::size_t in, std::size_t k) {
    for (std::size_t ch = 0; ch < c; ++ch) ov[o + ch] += xv[in + ch] * kv[k + ch];
  });
  if (bias.defined()) {
    const T* bv = bias.value().raw();
    for (std::size_t p = 0; p < batch * h * w; ++p) {
      for (std::size_t ch = 0; ch < c; ++ch) ov[p * c + ch] += bv[ch];
    }
  }
  MacCounter::add(static_cast<std::uint64_t>(batch) * h * w * c * kh * kw);

  Variable<T> result(std::move(out));
  const bool any = bias.defined() ? should_record<T>(x, kernel, bias) : should_record<T>(x, kernel);
  if (any) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [x, kernel, bias, for_each_tap, batch, h, w, c](const Tensor<T>& g) {
      const T f = fault_factor<T>("depthwise_conv2d");
      const T* gv = g.raw();
      T* gx = x.requires_grad() ? x.node().grad_buffer().raw() : nullptr;
      T* gk = kernel.requires_grad() ? kernel.node().grad_buffer().raw() : nullptr;
      const T* xv = x.value().raw();
      const T* kv = kernel.value().raw();
      for_each_tap([&](std::size_t o, std::size_t in, std::size_t k) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          if (gx) gx[in + ch] += f * gv[o + ch] * kv[k + ch];
          if (gk) gk[k + ch] += f * gv[o + ch] * xv[in + ch];
        }
      });
      if (bias.defined() && bias.requires_grad()) {
        T* gb = bias.node().grad_buffer().raw();
        for (std::size_t p = 0; p < batch * h * w; ++p) {
          for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += f * gv[p * c + ch];
        }
      }
    });
  }
  return result;
}

template <typename T>
Variable<T> extract_patches(const Variable<T>& images, std::size_t ps) {
  const Shape& s = images.shape();
  if (s.size() != 4) throw DimensionError("extract_patches: expected [b, h, w, c], got " + to_string(s));
  if (ps == 0 || s[1] % ps != 0 || s[2] % ps != 0) {
    throw ConfigError("image " + std::to_string(s[1]) + "x" + std::to_string(s[2]) +
                      " is not divisible by patch size " + std::to_string(ps));
  }
  const std::size_t b = s[0], h = s[1], w = s[2], c = s[3];
  const std::size_t gh = h / ps, gw = w / ps;
  const std::size_t patch_len = ps * ps * c;
  // Source offset of each output element within one image.
  std::vector<std::size_t> gather(gh * gw * patch_len);
  std::size_t t = 0;
  for (std::size_t pi = 0; pi < gh; ++pi) {
    for (std::size_t pj = 0; pj < gw; ++pj) {
      for (std::size_t u = 0; u < ps; ++u) {
        for (std::size_t v = 0; v < ps; ++v) {
          for (std::size_t ch = 0; ch < c; ++ch) gather[t++] = ((pi * ps + u) * w + pj * ps + v) * c + ch;
        }
      }
    }
  }
  const std::size_t per_image = h * w * c;
  Tensor<T> out(Shape{b, gh * gw, patch_len});
  const T* iv = images.value().raw();
  T* ov = out.raw();
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t i = 0; i < per_image; ++i) ov[n * per_image + i] = iv[n * per_image + gather[i]];
  }
  Variable<T> result(std::move(out));
  if (should_record<T>(images)) {
    result.set_requires_grad(true);
    GradTape<T>::active()->record(result, [images, gather = std::move(gather), b, per_image](const Tensor<T>& g) {
      const T f = fault_factor<T>("extract_patches");
      T* gi = images.node().grad_buffer().raw();
      const T* gv = g.raw();
      for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t i = 0; i < per_image; ++i) gi[n * per_image + gather[i]] += f * gv[n * per_image + i];
      }
    });
  }
  return result;
}

#define NINFORMER_INSTANTIATE_OPS(T)                                                                   \
  template Variable<T> matmul(const Variable<T>&, const Variable<T>&);                                 \
  template Variable<T> linear(const Variable<T>&, const Variable<T>&, const Variable<T>&);             \
  template Variable<T> add(const Variable<T>&, const Variable<T>&);                                    \
  template Variable<T> mul(const Variable<T>&, const Variable<T>&);                                    \
  template Variable<T> scale(const Variable<T>&, T);                                                   \
  template Variable<T> add_broadcast(const Variable<T>&, const Variable<T>&);                          \
  template Variable<T> gelu(const Variable<T>&);                                                       \
  template Variable<T> sigmoid(const Variable<T>&);                                                    \
  template Variable<T> softmax(const Variable<T>&, std::ptrdiff_t);                                    \
  template Variable<T> layer_norm(const Variable<T>&, const Variable<T>&, const Variable<T>&, T);       \
  template Variable<T> transpose_last2(const Variable<T>&);                                            \
  template Variable<T> permute(const Variable<T>&, const std::vector<std::size_t>&);                   \
  template Variable<T> reshape(const Variable<T>&, Shape);                                             \
  template Variable<T> mean_axis(const Variable<T>&, std::ptrdiff_t);                                  \
  template Variable<T> sum(const Variable<T>&);                                                        \
  template Variable<T> depthwise_conv2d(const Variable<T>&, const Variable<T>&, const Variable<T>&);   \
  template Variable<T> extract_patches(const Variable<T>&, std::size_t);

NINFORMER_INSTANTIATE_OPS(float)
NINFORMER_INSTANTIATE_OPS(double)

#undef NINFORMER_INSTANTIATE_OPS

}  // namespace ninformer

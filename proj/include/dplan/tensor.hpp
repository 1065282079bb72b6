#pragma once

#include <Eigen/Core>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_map>
#include <vector>

#include "dplan/common.hpp"
#include "dplan/rng.hpp"

namespace dplan {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

namespace detail {
inline uint64_t next_tensor_id() {
  static std::atomic<uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  bool requires_grad = false;
  uint64_t id = detail::next_tensor_id();
};

// Value handle over immutable storage. Copies share the buffer; nothing
// mutates a tensor after construction except the optimizer, which owns the
// parameter tensors it updates between forward passes.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl>();
    size_t n = checked_numel(shape);
    impl->shape = std::move(shape);
    impl->data.assign(n, 0.0);
    impl->requires_grad = requires_grad;
    return Tensor(impl);
  }

  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false) {
    require(checked_numel(shape) == data.size(), "tensor: data length != product of shape extents");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(impl);
  }

  static Tensor scalar(double v) { return from_data({}, {v}); }

  static Tensor randn(Rng& rng, std::vector<int> shape, double stddev,
                      bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.impl_->data) v = rng.normal() * stddev;
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  size_t numel() const { return impl_->data.size(); }
  bool requires_grad() const { return impl_->requires_grad; }
  uint64_t id() const { return impl_->id; }

  int rows() const { return impl_->shape.size() == 2 ? impl_->shape[0] : 1; }
  int cols() const {
    return impl_->shape.empty() ? 1 : impl_->shape.back();
  }

  std::span<const double> data() const { return impl_->data; }
  // Reserved for initialization and the optimizer.
  std::span<double> mutable_data() { return impl_->data; }

  double item() const {
    require(numel() == 1, "tensor: item() on non-scalar");
    return impl_->data[0];
  }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  static size_t checked_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int e : shape) {
      require(e > 0, "tensor: shape extents must be positive");
      n *= static_cast<size_t>(e);
    }
    return n;
  }

  std::shared_ptr<TensorImpl> impl_;
};

// Accumulated gradients keyed by tensor id. Absent entries read as zero.
class GradMap {
 public:
  std::vector<double>& accumulate(const TensorImpl& t) {
    auto it = bufs_.find(t.id);
    if (it == bufs_.end()) it = bufs_.emplace(t.id, std::vector<double>(t.data.size(), 0.0)).first;
    return it->second;
  }

  const std::vector<double>* find(uint64_t id) const {
    auto it = bufs_.find(id);
    return it == bufs_.end() ? nullptr : &it->second;
  }

  bool contains(uint64_t id) const { return bufs_.count(id) != 0; }

  // Gradient for `t`; exact zeros when the loss did not depend on it.
  Tensor grad_for(const Tensor& t) const {
    const auto* g = find(t.id());
    if (!g) return Tensor::zeros(t.shape());
    return Tensor::from_data(t.shape(), *g);
  }

  size_t size() const { return bufs_.size(); }

 private:
  std::unordered_map<uint64_t, std::vector<double>> bufs_;
};

// Reverse-mode tape. Ops append one record each in program order, which is
// already topological; backward replays the records once, in reverse.
class Tape {
 public:
  void record(const char* op, uint64_t out_id, std::function<void(GradMap&)> fn) {
    require(recs_.empty() || out_id > recs_.back().out_id, "tape: records out of topological order");
    recs_.push_back({op, out_id, std::move(fn)});
  }

  void note_leaf(const std::shared_ptr<TensorImpl>& t) {
    if (t->requires_grad) leaves_.push_back(t);
  }

  size_t size() const { return recs_.size(); }

  GradMap backward(const Tensor& loss) const {
    require(loss.numel() == 1, "backward: loss must be scalar");
    GradMap gm;
    gm.accumulate(*loss.impl())[0] = 1.0;
    for (auto it = recs_.rbegin(); it != recs_.rend(); ++it) it->fn(gm);
    for (const auto& leaf : leaves_) gm.accumulate(*leaf);
    return gm;
  }

 private:
  struct Rec {
    const char* op;
    uint64_t out_id;
    std::function<void(GradMap&)> fn;
  };
  std::vector<Rec> recs_;
  std::vector<std::shared_ptr<TensorImpl>> leaves_;
};

inline GradMap backward(const Tape& tape, const Tensor& loss) { return tape.backward(loss); }

namespace detail {

inline void debug_check_finite(const Tensor& t, const char* op) {
#ifndef NDEBUG
  for (double v : t.data())
    if (!std::isfinite(v)) fail(std::string(op) + ": non-finite value produced");
#else
  (void)t;
  (void)op;
#endif
}

inline void check_finite_input(const Tensor& t, const char* op) {
  for (double v : t.data())
    if (!std::isfinite(v)) fail(std::string(op) + ": non-finite input");
}

inline bool track(Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  bool any = false;
  for (const Tensor* t : ins) {
    tape->note_leaf(t->impl());
    any = any || t->requires_grad();
  }
  return any;
}

inline Tensor make_out(std::vector<int> shape, bool req) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.impl()->requires_grad = req;
  return t;
}

inline void axpy(std::vector<double>& y, std::span<const double> x, double a = 1.0) {
  for (size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

}  // namespace detail

// ---- elementwise ops -------------------------------------------------------

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shape mismatch");
  bool req = detail::track(tape, {&a, &b});
  Tensor out = detail::make_out(a.shape(), req);
  auto od = out.mutable_data();
  auto ad = a.data(), bd = b.data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  detail::debug_check_finite(out, "add");
  if (req) {
    tape->record("add", out.id(), [ai = a.impl(), bi = b.impl(), oi = out.impl()](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      if (ai->requires_grad) detail::axpy(gm.accumulate(*ai), *og);
      if (bi->requires_grad) detail::axpy(gm.accumulate(*bi), *og);
    });
  }
  return out;
}

inline Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch");
  bool req = detail::track(tape, {&a, &b});
  Tensor out = detail::make_out(a.shape(), req);
  auto od = out.mutable_data();
  auto ad = a.data(), bd = b.data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] - bd[i];
  detail::debug_check_finite(out, "sub");
  if (req) {
    tape->record("sub", out.id(), [ai = a.impl(), bi = b.impl(), oi = out.impl()](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      if (ai->requires_grad) detail::axpy(gm.accumulate(*ai), *og);
      if (bi->requires_grad) detail::axpy(gm.accumulate(*bi), *og, -1.0);
    });
  }
  return out;
}

inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch");
  bool req = detail::track(tape, {&a, &b});
  Tensor out = detail::make_out(a.shape(), req);
  auto od = out.mutable_data();
  auto ad = a.data(), bd = b.data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  detail::debug_check_finite(out, "mul");
  if (req) {
    tape->record("mul", out.id(), [ai = a.impl(), bi = b.impl(), oi = out.impl()](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      if (ai->requires_grad) {
        auto& ga = gm.accumulate(*ai);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*og)[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        auto& gb = gm.accumulate(*bi);
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += (*og)[i] * ai->data[i];
      }
    });
  }
  return out;
}

inline Tensor scale(Tape* tape, const Tensor& a, double c) {
  bool req = detail::track(tape, {&a});
  Tensor out = detail::make_out(a.shape(), req);
  auto od = out.mutable_data();
  auto ad = a.data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * c;
  detail::debug_check_finite(out, "scale");
  if (req) {
    tape->record("scale", out.id(), [ai = a.impl(), oi = out.impl(), c](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      detail::axpy(gm.accumulate(*ai), *og, c);
    });
  }
  return out;
}

inline Tensor gelu(Tape* tape, const Tensor& a) {
  bool req = detail::track(tape, {&a});
  Tensor out = detail::make_out(a.shape(), req);
  auto od = out.mutable_data();
  auto ad = a.data();
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (size_t i = 0; i < od.size(); ++i) od[i] = 0.5 * ad[i] * (1.0 + std::erf(ad[i] * inv_sqrt2));
  detail::debug_check_finite(out, "gelu");
  if (req) {
    tape->record("gelu", out.id(), [ai = a.impl(), oi = out.impl()](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      auto& ga = gm.accumulate(*ai);
      constexpr double inv_sqrt2 = 0.70710678118654752440;
      constexpr double inv_sqrt2pi = 0.39894228040143267794;
      for (size_t i = 0; i < ga.size(); ++i) {
        double x = ai->data[i];
        double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        ga[i] += (*og)[i] * (phi + x * pdf);
      }
    });
  }
  return out;
}

// ---- matrix ops ------------------------------------------------------------

inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2, "matmul: operands must be 2-D");
  require(a.shape()[1] == b.shape()[0], "matmul: inner extents differ");
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  bool req = detail::track(tape, {&a, &b});
  Tensor out = detail::make_out({m, n}, req);
  {
    ECMap A(a.data().data(), m, k), B(b.data().data(), k, n);
    EMap O(out.mutable_data().data(), m, n);
    O.noalias() = A * B;
  }
  detail::debug_check_finite(out, "matmul");
  if (req) {
    tape->record("matmul", out.id(),
                 [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      ECMap G(og->data(), m, n);
      if (ai->requires_grad) {
        ECMap B(bi->data.data(), k, n);
        EMap GA(gm.accumulate(*ai).data(), m, k);
        GA.noalias() += G * B.transpose();
      }
      if (bi->requires_grad) {
        ECMap A(ai->data.data(), m, k);
        EMap GB(gm.accumulate(*bi).data(), k, n);
        GB.noalias() += A.transpose() * G;
      }
    });
  }
  return out;
}

inline Tensor transpose(Tape* tape, const Tensor& a) {
  require(a.shape().size() == 2, "transpose: operand must be 2-D");
  const int m = a.shape()[0], n = a.shape()[1];
  bool req = detail::track(tape, {&a});
  Tensor out = detail::make_out({n, m}, req);
  {
    ECMap A(a.data().data(), m, n);
    EMap O(out.mutable_data().data(), n, m);
    O.noalias() = A.transpose();
  }
  if (req) {
    tape->record("transpose", out.id(), [ai = a.impl(), oi = out.impl(), m, n](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      ECMap G(og->data(), n, m);
      EMap GA(gm.accumulate(*ai).data(), m, n);
      GA.noalias() += G.transpose();
    });
  }
  return out;
}

// a: [m, n], bias: [n]; adds bias to every row.
inline Tensor add_bias(Tape* tape, const Tensor& a, const Tensor& bias) {
  require(a.shape().size() == 2 && bias.shape().size() == 1, "add_bias: want matrix + vector");
  require(a.shape()[1] == bias.shape()[0], "add_bias: width mismatch");
  const int m = a.shape()[0], n = a.shape()[1];
  bool req = detail::track(tape, {&a, &bias});
  Tensor out = detail::make_out({m, n}, req);
  auto od = out.mutable_data();
  auto ad = a.data(), bd = bias.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) od[i * n + j] = ad[i * n + j] + bd[j];
  detail::debug_check_finite(out, "add_bias");
  if (req) {
    tape->record("add_bias", out.id(),
                 [ai = a.impl(), bi = bias.impl(), oi = out.impl(), m, n](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      if (ai->requires_grad) detail::axpy(gm.accumulate(*ai), *og);
      if (bi->requires_grad) {
        auto& gb = gm.accumulate(*bi);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gb[j] += (*og)[i * n + j];
      }
    });
  }
  return out;
}

inline Tensor slice_rows(Tape* tape, const Tensor& a, int off, int count) {
  require(a.shape().size() == 2, "slice_rows: operand must be 2-D");
  const int m = a.shape()[0], n = a.shape()[1];
  require(off >= 0 && count > 0 && off + count <= m, "slice_rows: range out of bounds");
  bool req = detail::track(tape, {&a});
  Tensor out = detail::make_out({count, n}, req);
  std::copy_n(a.data().data() + size_t(off) * n, size_t(count) * n, out.mutable_data().data());
  if (req) {
    tape->record("slice_rows", out.id(),
                 [ai = a.impl(), oi = out.impl(), off, count, n](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      auto& ga = gm.accumulate(*ai);
      for (size_t i = 0; i < size_t(count) * n; ++i) ga[size_t(off) * n + i] += (*og)[i];
    });
  }
  return out;
}

inline Tensor slice_cols(Tape* tape, const Tensor& a, int off, int count) {
  require(a.shape().size() == 2, "slice_cols: operand must be 2-D");
  const int m = a.shape()[0], n = a.shape()[1];
  require(off >= 0 && count > 0 && off + count <= n, "slice_cols: range out of bounds");
  bool req = detail::track(tape, {&a});
  Tensor out = detail::make_out({m, count}, req);
  auto od = out.mutable_data();
  auto ad = a.data();
  for (int i = 0; i < m; ++i)
    std::copy_n(ad.data() + size_t(i) * n + off, count, od.data() + size_t(i) * count);
  if (req) {
    tape->record("slice_cols", out.id(),
                 [ai = a.impl(), oi = out.impl(), off, count, m, n](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      auto& ga = gm.accumulate(*ai);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < count; ++j) ga[size_t(i) * n + off + j] += (*og)[size_t(i) * count + j];
    });
  }
  return out;
}

inline Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no operands");
  const int m = parts[0].shape()[0];
  int n = 0;
  bool req = false;
  for (const Tensor& p : parts) {
    require(p.shape().size() == 2 && p.shape()[0] == m, "concat_cols: row count mismatch");
    n += p.shape()[1];
    if (tape) {
      tape->note_leaf(p.impl());
      req = req || p.requires_grad();
    }
  }
  Tensor out = detail::make_out({m, n}, req);
  auto od = out.mutable_data();
  int col = 0;
  for (const Tensor& p : parts) {
    const int w = p.shape()[1];
    for (int i = 0; i < m; ++i)
      std::copy_n(p.data().data() + size_t(i) * w, w, od.data() + size_t(i) * n + col);
    col += w;
  }
  if (req) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const Tensor& p : parts) impls.push_back(p.impl());
    tape->record("concat_cols", out.id(), [impls, oi = out.impl(), m, n](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      int col = 0;
      for (const auto& pi : impls) {
        const int w = pi->shape[1];
        if (pi->requires_grad) {
          auto& gp = gm.accumulate(*pi);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) gp[size_t(i) * w + j] += (*og)[size_t(i) * n + col + j];
        }
        col += w;
      }
    });
  }
  return out;
}

// table: [V, d]; gathers one row per id.
inline Tensor embedding_gather(Tape* tape, const Tensor& table, const std::vector<int>& ids) {
  require(table.shape().size() == 2, "embedding_gather: table must be 2-D");
  const int v = table.shape()[0], d = table.shape()[1];
  for (int id : ids) require(id >= 0 && id < v, "embedding_gather: id out of range");
  bool req = detail::track(tape, {&table});
  Tensor out = detail::make_out({static_cast<int>(ids.size()), d}, req);
  auto od = out.mutable_data();
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data().data() + size_t(ids[i]) * d, d, od.data() + i * d);
  if (req) {
    tape->record("embedding_gather", out.id(),
                 [ti = table.impl(), oi = out.impl(), ids, d](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      auto& gt = gm.accumulate(*ti);
      for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j) gt[size_t(ids[i]) * d + j] += (*og)[i * d + j];
    });
  }
  return out;
}

// ---- normalization and softmax ---------------------------------------------

// Row-wise layer norm with learned gain/offset. eps = 1e-5.
inline Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& offset) {
  require(x.shape().size() == 2, "layer_norm: input must be 2-D");
  const int m = x.shape()[0], n = x.shape()[1];
  require(gain.shape() == std::vector<int>{n} && offset.shape() == std::vector<int>{n},
          "layer_norm: gain/offset width mismatch");
  constexpr double eps = 1e-5;
  bool req = detail::track(tape, {&x, &gain, &offset});
  Tensor out = detail::make_out({m, n}, req);
  auto saved_inv = std::make_shared<std::vector<double>>(m);
  auto saved_mean = std::make_shared<std::vector<double>>(m);
  auto od = out.mutable_data();
  auto xd = x.data();
  auto gd = gain.data(), bd = offset.data();
  for (int i = 0; i < m; ++i) {
    const double* row = xd.data() + size_t(i) * n;
    double mean = 0;
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= n;
    double var = 0;
    for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= n;
    double inv = 1.0 / std::sqrt(var + eps);
    (*saved_mean)[i] = mean;
    (*saved_inv)[i] = inv;
    for (int j = 0; j < n; ++j) od[size_t(i) * n + j] = (row[j] - mean) * inv * gd[j] + bd[j];
  }
  detail::debug_check_finite(out, "layer_norm");
  if (req) {
    tape->record("layer_norm", out.id(),
                 [xi = x.impl(), gi = gain.impl(), bi = offset.impl(), oi = out.impl(), saved_inv,
                  saved_mean, m, n](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      std::vector<double>* gx = xi->requires_grad ? &gm.accumulate(*xi) : nullptr;
      std::vector<double>* gg = gi->requires_grad ? &gm.accumulate(*gi) : nullptr;
      std::vector<double>* gb = bi->requires_grad ? &gm.accumulate(*bi) : nullptr;
      for (int i = 0; i < m; ++i) {
        const double* row = xi->data.data() + size_t(i) * n;
        const double* go = og->data() + size_t(i) * n;
        double mean = (*saved_mean)[i], inv = (*saved_inv)[i];
        double sum_dh = 0, sum_dh_xhat = 0;
        for (int j = 0; j < n; ++j) {
          double xhat = (row[j] - mean) * inv;
          double dh = go[j] * gi->data[j];
          sum_dh += dh;
          sum_dh_xhat += dh * xhat;
          if (gg) (*gg)[j] += go[j] * xhat;
          if (gb) (*gb)[j] += go[j];
        }
        if (gx) {
          for (int j = 0; j < n; ++j) {
            double xhat = (row[j] - mean) * inv;
            double dh = go[j] * gi->data[j];
            (*gx)[size_t(i) * n + j] += inv * (dh - sum_dh / n - xhat * sum_dh_xhat / n);
          }
        }
      }
    });
  }
  return out;
}

namespace detail {
// Writes log-softmax of `row` into `out`; returns log-sum-exp offset pieces.
inline void log_softmax_row(const double* row, double* out, int n) {
  double mx = row[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  double sum = 0;
  for (int j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
  double lse = mx + std::log(sum);
  for (int j = 0; j < n; ++j) out[j] = row[j] - lse;
}
}  // namespace detail

// Row-wise log-softmax over the last axis, max-subtracted for stability.
inline Tensor log_softmax(Tape* tape, const Tensor& x) {
  require(x.shape().size() == 2, "log_softmax: input must be 2-D");
  detail::check_finite_input(x, "log_softmax");
  const int m = x.shape()[0], n = x.shape()[1];
  bool req = detail::track(tape, {&x});
  Tensor out = detail::make_out({m, n}, req);
  auto od = out.mutable_data();
  auto xd = x.data();
  for (int i = 0; i < m; ++i)
    detail::log_softmax_row(xd.data() + size_t(i) * n, od.data() + size_t(i) * n, n);
  if (req) {
    tape->record("log_softmax", out.id(), [xi = x.impl(), oi = out.impl(), m, n](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      auto& gx = gm.accumulate(*xi);
      for (int i = 0; i < m; ++i) {
        const double* go = og->data() + size_t(i) * n;
        const double* y = oi->data.data() + size_t(i) * n;
        double s = 0;
        for (int j = 0; j < n; ++j) s += go[j];
        for (int j = 0; j < n; ++j) gx[size_t(i) * n + j] += go[j] - std::exp(y[j]) * s;
      }
    });
  }
  return out;
}

inline Tensor softmax(Tape* tape, const Tensor& x) {
  require(x.shape().size() == 2, "softmax: input must be 2-D");
  const int m = x.shape()[0], n = x.shape()[1];
  bool req = detail::track(tape, {&x});
  Tensor out = detail::make_out({m, n}, req);
  auto od = out.mutable_data();
  auto xd = x.data();
  for (int i = 0; i < m; ++i) {
    const double* row = xd.data() + size_t(i) * n;
    double* orow = od.data() + size_t(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= sum;
  }
  detail::debug_check_finite(out, "softmax");
  if (req) {
    tape->record("softmax", out.id(), [xi = x.impl(), oi = out.impl(), m, n](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      auto& gx = gm.accumulate(*xi);
      for (int i = 0; i < m; ++i) {
        const double* go = og->data() + size_t(i) * n;
        const double* p = oi->data.data() + size_t(i) * n;
        double dot = 0;
        for (int j = 0; j < n; ++j) dot += go[j] * p[j];
        for (int j = 0; j < n; ++j) gx[size_t(i) * n + j] += p[j] * (go[j] - dot);
      }
    });
  }
  return out;
}

// ---- reductions and fused losses -------------------------------------------

inline Tensor sum(Tape* tape, const Tensor& a) {
  bool req = detail::track(tape, {&a});
  double s = 0;
  for (double v : a.data()) s += v;
  Tensor out = detail::make_out({}, req);
  out.mutable_data()[0] = s;
  if (req) {
    tape->record("sum", out.id(), [ai = a.impl(), oi = out.impl()](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      auto& ga = gm.accumulate(*ai);
      for (double& g : ga) g += (*og)[0];
    });
  }
  return out;
}

inline Tensor mean(Tape* tape, const Tensor& a) {
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.numel()));
}

// Mean cross-entropy over rows: -(1/m) sum_i log softmax(row_i)[target_i].
inline Tensor cross_entropy(Tape* tape, const Tensor& logits, const std::vector<int>& targets) {
  require(logits.shape().size() == 2, "cross_entropy: logits must be 2-D");
  const int m = logits.shape()[0], n = logits.shape()[1];
  require(static_cast<int>(targets.size()) == m, "cross_entropy: target count mismatch");
  require(m > 0, "cross_entropy: empty batch");
  for (int t : targets) require(t >= 0 && t < n, "cross_entropy: target id out of range");
  detail::check_finite_input(logits, "cross_entropy");
  bool req = detail::track(tape, {&logits});
  std::vector<double> lsm(size_t(m) * n);
  auto xd = logits.data();
  double loss = 0;
  for (int i = 0; i < m; ++i) {
    detail::log_softmax_row(xd.data() + size_t(i) * n, lsm.data() + size_t(i) * n, n);
    loss -= lsm[size_t(i) * n + targets[i]];
  }
  loss /= m;
  Tensor out = detail::make_out({}, req);
  out.mutable_data()[0] = loss;
  if (req) {
    auto saved = std::make_shared<std::vector<double>>(std::move(lsm));
    tape->record("cross_entropy", out.id(),
                 [xi = logits.impl(), oi = out.impl(), saved, targets, m, n](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      double g = (*og)[0] / m;
      auto& gx = gm.accumulate(*xi);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double p = std::exp((*saved)[size_t(i) * n + j]);
          gx[size_t(i) * n + j] += g * (p - (j == targets[i] ? 1.0 : 0.0));
        }
    });
  }
  return out;
}

// REINFORCE-style weighted negative log-likelihood:
//   -(1/m) sum_i w_i * log softmax(row_i)[target_i]
// with the weights held constant during differentiation.
inline Tensor weighted_nll(Tape* tape, const Tensor& logits, const std::vector<int>& targets,
                           const std::vector<double>& weights) {
  require(logits.shape().size() == 2, "weighted_nll: logits must be 2-D");
  const int m = logits.shape()[0], n = logits.shape()[1];
  require(static_cast<int>(targets.size()) == m, "weighted_nll: target count mismatch");
  require(static_cast<int>(weights.size()) == m, "weighted_nll: weight count mismatch");
  require(m > 0, "weighted_nll: empty batch");
  for (int t : targets) require(t >= 0 && t < n, "weighted_nll: target id out of range");
  detail::check_finite_input(logits, "weighted_nll");
  bool req = detail::track(tape, {&logits});
  std::vector<double> lsm(size_t(m) * n);
  auto xd = logits.data();
  double loss = 0;
  for (int i = 0; i < m; ++i) {
    detail::log_softmax_row(xd.data() + size_t(i) * n, lsm.data() + size_t(i) * n, n);
    loss -= weights[i] * lsm[size_t(i) * n + targets[i]];
  }
  loss /= m;
  Tensor out = detail::make_out({}, req);
  out.mutable_data()[0] = loss;
  if (req) {
    auto saved = std::make_shared<std::vector<double>>(std::move(lsm));
    tape->record("weighted_nll", out.id(),
                 [xi = logits.impl(), oi = out.impl(), saved, targets, weights, m, n](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      auto& gx = gm.accumulate(*xi);
      for (int i = 0; i < m; ++i) {
        double g = (*og)[0] * weights[i] / m;
        for (int j = 0; j < n; ++j) {
          double p = std::exp((*saved)[size_t(i) * n + j]);
          gx[size_t(i) * n + j] += g * (p - (j == targets[i] ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

// ---- generalized Jensen-Shannon divergence ----------------------------------

namespace detail {

inline double logsumexp2(double a, double b) {
  double hi = std::max(a, b), lo = std::min(a, b);
  if (hi == -std::numeric_limits<double>::infinity()) return hi;
  return hi + std::log1p(std::exp(lo - hi));
}

// Per-row generalized JSD in nats from two logits rows.
// Writes log m_k into lmix (size n) when lmix != nullptr.
inline double jsd_row_value(const double* lt, const double* ls, int n, double beta,
                            double* lmix) {
  if (beta <= 0.0 || beta >= 1.0) {
    if (lmix)
      for (int j = 0; j < n; ++j) lmix[j] = beta <= 0.0 ? ls[j] : lt[j];
    return 0.0;
  }
  const double lb = std::log(beta), l1mb = std::log1p(-beta);
  double kl_t = 0, kl_s = 0;
  for (int j = 0; j < n; ++j) {
    double lm = logsumexp2(lb + lt[j], l1mb + ls[j]);
    if (lmix) lmix[j] = lm;
    double pt = std::exp(lt[j]), ps = std::exp(ls[j]);
    if (pt > 0) kl_t += pt * (lt[j] - lm);
    if (ps > 0) kl_s += ps * (ls[j] - lm);
  }
  double v = beta * kl_t + (1.0 - beta) * kl_s;
  return v < 0.0 ? 0.0 : v;  // clamp the last-ulp negatives at equality
}

}  // namespace detail

// Scalar generalized JSD between one teacher and one student logits row.
//   D = beta * KL(p_T || m) + (1-beta) * KL(p_S || m),  m = beta p_T + (1-beta) p_S
inline double token_jsd(std::span<const double> teacher_logits,
                        std::span<const double> student_logits, double beta) {
  require(teacher_logits.size() == student_logits.size(), "token_jsd: vocab size mismatch");
  require(!teacher_logits.empty(), "token_jsd: empty rows");
  require(beta >= 0.0 && beta <= 1.0, "token_jsd: beta outside [0,1]");
  for (double v : teacher_logits) require(std::isfinite(v), "token_jsd: non-finite logits");
  for (double v : student_logits) require(std::isfinite(v), "token_jsd: non-finite logits");
  const int n = static_cast<int>(teacher_logits.size());
  std::vector<double> lt(n), ls(n);
  detail::log_softmax_row(teacher_logits.data(), lt.data(), n);
  detail::log_softmax_row(student_logits.data(), ls.data(), n);
  return detail::jsd_row_value(lt.data(), ls.data(), n, beta, nullptr);
}

// Mean-over-rows generalized JSD between teacher and student logits matrices.
// The teacher matrix is a constant; only the student side is differentiated:
//   dD/dz_s = (1-beta)/m * p_S .* (log(p_S/mix) - KL(p_S || mix))
inline Tensor jsd_rows(Tape* tape, const Tensor& student_logits, const Tensor& teacher_logits,
                       double beta) {
  require(student_logits.shape() == teacher_logits.shape(), "jsd_rows: shape mismatch");
  require(student_logits.shape().size() == 2, "jsd_rows: logits must be 2-D");
  require(beta >= 0.0 && beta <= 1.0, "jsd_rows: beta outside [0,1]");
  detail::check_finite_input(student_logits, "jsd_rows");
  detail::check_finite_input(teacher_logits, "jsd_rows");
  const int m = student_logits.shape()[0], n = student_logits.shape()[1];
  bool req = detail::track(tape, {&student_logits});
  auto ls = std::make_shared<std::vector<double>>(size_t(m) * n);
  auto lmix = std::make_shared<std::vector<double>>(size_t(m) * n);
  std::vector<double> lt(n);
  double total = 0;
  for (int i = 0; i < m; ++i) {
    detail::log_softmax_row(teacher_logits.data().data() + size_t(i) * n, lt.data(), n);
    detail::log_softmax_row(student_logits.data().data() + size_t(i) * n,
                            ls->data() + size_t(i) * n, n);
    total += detail::jsd_row_value(lt.data(), ls->data() + size_t(i) * n, n, beta,
                                   lmix->data() + size_t(i) * n);
  }
  Tensor out = detail::make_out({}, req);
  out.mutable_data()[0] = total / m;
  if (req && beta > 0.0 && beta < 1.0) {
    tape->record("jsd_rows", out.id(),
                 [xi = student_logits.impl(), oi = out.impl(), ls, lmix, beta, m, n](GradMap& gm) {
      const auto* og = gm.find(oi->id);
      if (!og) return;
      auto& gx = gm.accumulate(*xi);
      double g = (*og)[0] * (1.0 - beta) / m;
      for (int i = 0; i < m; ++i) {
        const double* lsr = ls->data() + size_t(i) * n;
        const double* lmr = lmix->data() + size_t(i) * n;
        double kl = 0;
        for (int j = 0; j < n; ++j) {
          double ps = std::exp(lsr[j]);
          if (ps > 0) kl += ps * (lsr[j] - lmr[j]);
        }
        for (int j = 0; j < n; ++j) {
          double ps = std::exp(lsr[j]);
          gx[size_t(i) * n + j] += g * ps * ((lsr[j] - lmr[j]) - kl);
        }
      }
    });
  } else if (req) {
    // beta endpoint: divergence is identically zero, gradient too.
    tape->record("jsd_rows", out.id(), [](GradMap&) {});
  }
  return out;
}

// ---- finite-difference gradient checking ------------------------------------

// Max relative error between tape gradients and central differences:
//   |analytic - numeric| / max(1, |analytic|, |numeric|)
// `f` must be deterministic; it is re-evaluated with perturbed parameters.
inline double grad_check(const std::function<Tensor(Tape*)>& f, std::span<const Tensor> params,
                         double eps) {
  require(eps >= 1e-7 && eps <= 1e-3, "grad_check: eps outside [1e-7, 1e-3]");
  double base0 = f(nullptr).item();
  double base1 = f(nullptr).item();
  require(base0 == base1, "grad_check: f is not deterministic under fixed inputs");

  Tape tape;
  Tensor loss = f(&tape);
  GradMap gm = tape.backward(loss);

  double max_rel = 0.0;
  for (const Tensor& p : params) {
    Tensor analytic = gm.grad_for(p);
    auto pd = const_cast<Tensor&>(p).mutable_data();
    for (size_t i = 0; i < pd.size(); ++i) {
      const double saved = pd[i];
      pd[i] = saved + eps;
      double up = f(nullptr).item();
      pd[i] = saved - eps;
      double down = f(nullptr).item();
      pd[i] = saved;
      double numeric = (up - down) / (2.0 * eps);
      double a = analytic.data()[i];
      double rel = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace dplan

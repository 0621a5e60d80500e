#include "attrec/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <memory>
#include <utility>

namespace attrec {

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::add_scaled(const Tensor& o, double s) {
  assert(same_shape(o));
  for (size_t i = 0; i < data.size(); ++i) data[i] += s * o.data[i];
}

Tensor matmul_values(const Tensor& a, const Tensor& b) {
  assert(a.cols == b.rows);
  Tensor c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    double* crow = c.row_ptr(i);
    for (int k = 0; k < a.cols; ++k) {
      const double av = arow[k];
      const double* brow = b.row_ptr(k);
      for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

double dot(std::span<const double> u, std::span<const double> v) {
  assert(u.size() == v.size());
  double s = 0.0;
  for (size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

double norm2(std::span<const double> u) { return std::sqrt(dot(u, u)); }

double cosine_similarity(std::span<const double> u, std::span<const double> v, double eps) {
  if (u.size() != v.size()) throw NumericError("cosine: dimension mismatch");
  const double nu = std::max(norm2(u), eps);
  const double nv = std::max(norm2(v), eps);
  const double c = dot(u, v) / (nu * nv);
  return std::clamp(c, -1.0, 1.0);
}

namespace {

// dst += a * b^T
void add_matmul_nt(Tensor& dst, const Tensor& a, const Tensor& b) {
  assert(a.cols == b.cols && dst.rows == a.rows && dst.cols == b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    double* drow = dst.row_ptr(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = b.row_ptr(j);
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      drow[j] += s;
    }
  }
}

// dst += a^T * b
void add_matmul_tn(Tensor& dst, const Tensor& a, const Tensor& b) {
  assert(a.rows == b.rows && dst.rows == a.cols && dst.cols == b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    const double* brow = b.row_ptr(i);
    for (int k = 0; k < a.cols; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      double* drow = dst.row_ptr(k);
      for (int j = 0; j < b.cols; ++j) drow[j] += av * brow[j];
    }
  }
}

// dst += a * b
void add_matmul_nn(Tensor& dst, const Tensor& a, const Tensor& b) {
  assert(a.cols == b.rows && dst.rows == a.rows && dst.cols == b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    double* drow = dst.row_ptr(i);
    for (int k = 0; k < a.cols; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = b.row_ptr(k);
      for (int j = 0; j < b.cols; ++j) drow[j] += av * brow[j];
    }
  }
}

}  // namespace

Var Tape::push(Tensor value, bool requires_grad, std::function<void()> back) {
  Node n;
  n.owned = std::move(value);
  n.value = nullptr;
  n.requires_grad = requires_grad;
  if (requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_ref(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad_sink) return *n.grad_sink;
  const Tensor& v = n.value ? *n.value : n.owned;
  if (n.grad.rows != v.rows || n.grad.cols != v.cols) n.grad = Tensor(v.rows, v.cols);
  return n.grad;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(v.id)];
  return n.grad_sink ? *n.grad_sink : n.grad;
}

Var Tape::leaf(const Tensor* value, Tensor* grad_sink) {
  Node n;
  n.value = value;
  n.grad_sink = grad_sink;
  n.requires_grad = grad_sink != nullptr;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::constant_ref(const Tensor* value) {
  Node n;
  n.value = value;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

void Tape::backward(Var loss) {
  const Tensor& lv = value(loss);
  if (lv.numel() != 1) throw NumericError("backward: loss must be scalar");
  grad_ref(loss.id).data[0] += 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.back) n.back();
  }
}

Var Tape::embedding(Var table, std::vector<int> ids) {
  const Tensor& tv = value(table);
  Tensor out(static_cast<int>(ids.size()), tv.cols);
  for (size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= tv.rows) throw DataError("embedding: id out of range");
    std::copy_n(tv.row_ptr(id), tv.cols, out.row_ptr(static_cast<int>(i)));
  }
  bool rg = needs_grad(table);
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, table, v, ids = std::move(ids)]() {
      const Tensor& g = grad_ref(v.id);
      Tensor& tg = grad_ref(table.id);
      for (size_t i = 0; i < ids.size(); ++i) {
        double* drow = tg.row_ptr(ids[i]);
        const double* grow = g.row_ptr(static_cast<int>(i));
        for (int c = 0; c < g.cols; ++c) drow[c] += grow[c];
      }
    };
  }
  return v;
}

Var Tape::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  assert(av.same_shape(bv));
  Tensor out = av;
  for (int i = 0; i < out.numel(); ++i) out.data[static_cast<size_t>(i)] += bv.data[static_cast<size_t>(i)];
  bool rg = needs_grad(a) || needs_grad(b);
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, a, b, v]() {
      const Tensor& g = grad_ref(v.id);
      if (needs_grad(a)) grad_ref(a.id).add_scaled(g, 1.0);
      if (needs_grad(b)) grad_ref(b.id).add_scaled(g, 1.0);
    };
  }
  return v;
}

Var Tape::add_row(Var a, Var bias) {
  const Tensor& av = value(a);
  const Tensor& bv = value(bias);
  assert(bv.rows == 1 && bv.cols == av.cols);
  Tensor out = av;
  for (int r = 0; r < out.rows; ++r) {
    double* row = out.row_ptr(r);
    for (int c = 0; c < out.cols; ++c) row[c] += bv.data[static_cast<size_t>(c)];
  }
  bool rg = needs_grad(a) || needs_grad(bias);
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, a, bias, v]() {
      const Tensor& g = grad_ref(v.id);
      if (needs_grad(a)) grad_ref(a.id).add_scaled(g, 1.0);
      if (needs_grad(bias)) {
        Tensor& bg = grad_ref(bias.id);
        for (int r = 0; r < g.rows; ++r) {
          const double* row = g.row_ptr(r);
          for (int c = 0; c < g.cols; ++c) bg.data[static_cast<size_t>(c)] += row[c];
        }
      }
    };
  }
  return v;
}

Var Tape::scale(Var a, double s) {
  Tensor out = value(a);
  for (double& x : out.data) x *= s;
  bool rg = needs_grad(a);
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, a, v, s]() {
      grad_ref(a.id).add_scaled(grad_ref(v.id), s);
    };
  }
  return v;
}

Var Tape::matmul(Var a, Var b) {
  Tensor out = matmul_values(value(a), value(b));
  bool rg = needs_grad(a) || needs_grad(b);
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, a, b, v]() {
      const Tensor& g = grad_ref(v.id);
      if (needs_grad(a)) add_matmul_nt(grad_ref(a.id), g, value(b));
      if (needs_grad(b)) add_matmul_tn(grad_ref(b.id), value(a), g);
    };
  }
  return v;
}

Var Tape::matmul_nt(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  assert(av.cols == bv.cols);
  Tensor out(av.rows, bv.rows);
  add_matmul_nt(out, av, bv);
  bool rg = needs_grad(a) || needs_grad(b);
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, a, b, v]() {
      const Tensor& g = grad_ref(v.id);
      if (needs_grad(a)) add_matmul_nn(grad_ref(a.id), g, value(b));
      if (needs_grad(b)) add_matmul_tn(grad_ref(b.id), g, value(a));
    };
  }
  return v;
}

Var Tape::slice_cols(Var a, int c0, int c1) {
  const Tensor& av = value(a);
  assert(0 <= c0 && c0 < c1 && c1 <= av.cols);
  Tensor out(av.rows, c1 - c0);
  for (int r = 0; r < av.rows; ++r)
    std::copy(av.row_ptr(r) + c0, av.row_ptr(r) + c1, out.row_ptr(r));
  bool rg = needs_grad(a);
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, a, v, c0]() {
      const Tensor& g = grad_ref(v.id);
      Tensor& ag = grad_ref(a.id);
      for (int r = 0; r < g.rows; ++r) {
        const double* grow = g.row_ptr(r);
        double* arow = ag.row_ptr(r) + c0;
        for (int c = 0; c < g.cols; ++c) arow[c] += grow[c];
      }
    };
  }
  return v;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  assert(!parts.empty());
  int rows = value(parts[0]).rows;
  int cols = 0;
  bool rg = false;
  for (Var p : parts) {
    assert(value(p).rows == rows);
    cols += value(p).cols;
    rg = rg || needs_grad(p);
  }
  Tensor out(rows, cols);
  int off = 0;
  for (Var p : parts) {
    const Tensor& pv = value(p);
    for (int r = 0; r < rows; ++r)
      std::copy_n(pv.row_ptr(r), pv.cols, out.row_ptr(r) + off);
    off += pv.cols;
  }
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, parts, v]() {
      const Tensor& g = grad_ref(v.id);
      int off2 = 0;
      for (Var p : parts) {
        const int pc = value(p).cols;
        if (needs_grad(p)) {
          Tensor& pg = grad_ref(p.id);
          for (int r = 0; r < g.rows; ++r) {
            const double* grow = g.row_ptr(r) + off2;
            double* prow = pg.row_ptr(r);
            for (int c = 0; c < pc; ++c) prow[c] += grow[c];
          }
        }
        off2 += pc;
      }
    };
  }
  return v;
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = value(x);
  const Tensor& gv = value(gain);
  const Tensor& bv = value(bias);
  assert(gv.rows == 1 && gv.cols == xv.cols && bv.rows == 1 && bv.cols == xv.cols);
  const int d = xv.cols;
  Tensor out(xv.rows, d);
  // Saved for backward.
  auto xhat = std::make_shared<Tensor>(xv.rows, d);
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(xv.rows));
  for (int r = 0; r < xv.rows; ++r) {
    const double* row = xv.row_ptr(r);
    double mean = 0.0;
    for (int c = 0; c < d; ++c) mean += row[c];
    mean /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) {
      const double t = row[c] - mean;
      var += t * t;
    }
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = is;
    double* hrow = xhat->row_ptr(r);
    double* orow = out.row_ptr(r);
    for (int c = 0; c < d; ++c) {
      hrow[c] = (row[c] - mean) * is;
      orow[c] = hrow[c] * gv.data[static_cast<size_t>(c)] + bv.data[static_cast<size_t>(c)];
    }
  }
  bool rg = needs_grad(x) || needs_grad(gain) || needs_grad(bias);
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, x, gain, bias, v, xhat, inv_std]() {
      const Tensor& g = grad_ref(v.id);
      const Tensor& gv2 = value(gain);
      const int d2 = g.cols;
      if (needs_grad(gain) || needs_grad(bias)) {
        Tensor& gg = grad_ref(gain.id);
        Tensor& bg = grad_ref(bias.id);
        for (int r = 0; r < g.rows; ++r) {
          const double* grow = g.row_ptr(r);
          const double* hrow = xhat->row_ptr(r);
          for (int c = 0; c < d2; ++c) {
            gg.data[static_cast<size_t>(c)] += grow[c] * hrow[c];
            bg.data[static_cast<size_t>(c)] += grow[c];
          }
        }
      }
      if (needs_grad(x)) {
        Tensor& xg = grad_ref(x.id);
        for (int r = 0; r < g.rows; ++r) {
          const double* grow = g.row_ptr(r);
          const double* hrow = xhat->row_ptr(r);
          const double is = (*inv_std)[static_cast<size_t>(r)];
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (int c = 0; c < d2; ++c) {
            const double dxh = grow[c] * gv2.data[static_cast<size_t>(c)];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * hrow[c];
          }
          mean_dxhat /= d2;
          mean_dxhat_xhat /= d2;
          double* xrow = xg.row_ptr(r);
          for (int c = 0; c < d2; ++c) {
            const double dxh = grow[c] * gv2.data[static_cast<size_t>(c)];
            xrow[c] += (dxh - mean_dxhat - hrow[c] * mean_dxhat_xhat) * is;
          }
        }
      }
    };
  }
  return v;
}

Var Tape::softmax_rows(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.rows, xv.cols);
  for (int r = 0; r < xv.rows; ++r) {
    const double* row = xv.row_ptr(r);
    double m = row[0];
    for (int c = 1; c < xv.cols; ++c) m = std::max(m, row[c]);
    double z = 0.0;
    double* orow = out.row_ptr(r);
    for (int c = 0; c < xv.cols; ++c) {
      orow[c] = std::exp(row[c] - m);
      z += orow[c];
    }
    for (int c = 0; c < xv.cols; ++c) orow[c] /= z;
  }
  bool rg = needs_grad(x);
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, x, v]() {
      const Tensor& g = grad_ref(v.id);
      const Tensor& y = value(v);
      Tensor& xg = grad_ref(x.id);
      for (int r = 0; r < y.rows; ++r) {
        const double* grow = g.row_ptr(r);
        const double* yrow = y.row_ptr(r);
        double dots = 0.0;
        for (int c = 0; c < y.cols; ++c) dots += grow[c] * yrow[c];
        double* xrow = xg.row_ptr(r);
        for (int c = 0; c < y.cols; ++c) xrow[c] += yrow[c] * (grow[c] - dots);
      }
    };
  }
  return v;
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Var Tape::gelu(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.rows, xv.cols);
  for (int i = 0; i < xv.numel(); ++i) {
    const double t = xv.data[static_cast<size_t>(i)];
    out.data[static_cast<size_t>(i)] = 0.5 * t * (1.0 + std::erf(t * kInvSqrt2));
  }
  bool rg = needs_grad(x);
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, x, v]() {
      const Tensor& g = grad_ref(v.id);
      const Tensor& xv2 = value(x);
      Tensor& xg = grad_ref(x.id);
      for (int i = 0; i < xv2.numel(); ++i) {
        const double t = xv2.data[static_cast<size_t>(i)];
        const double phi = 0.5 * (1.0 + std::erf(t * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * t * t);
        xg.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)] * (phi + t * pdf);
      }
    };
  }
  return v;
}

Var Tape::dropout(Var x, double rate, Rng& rng) {
  const Tensor& xv = value(x);
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(xv.numel()));
  Tensor out(xv.rows, xv.cols);
  for (int i = 0; i < xv.numel(); ++i) {
    const double m = rng.next_double() < keep ? 1.0 / keep : 0.0;
    (*mask)[static_cast<size_t>(i)] = m;
    out.data[static_cast<size_t>(i)] = xv.data[static_cast<size_t>(i)] * m;
  }
  bool rg = needs_grad(x);
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, x, v, mask]() {
      const Tensor& g = grad_ref(v.id);
      Tensor& xg = grad_ref(x.id);
      for (int i = 0; i < g.numel(); ++i)
        xg.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)] * (*mask)[static_cast<size_t>(i)];
    };
  }
  return v;
}

Var Tape::mean_rows(Var x, int r0, int r1) {
  const Tensor& xv = value(x);
  assert(0 <= r0 && r0 < r1 && r1 <= xv.rows);
  Tensor out(1, xv.cols);
  const double inv = 1.0 / (r1 - r0);
  for (int r = r0; r < r1; ++r) {
    const double* row = xv.row_ptr(r);
    for (int c = 0; c < xv.cols; ++c) out.data[static_cast<size_t>(c)] += row[c];
  }
  for (double& d : out.data) d *= inv;
  bool rg = needs_grad(x);
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, x, v, r0, r1, inv]() {
      const Tensor& g = grad_ref(v.id);
      Tensor& xg = grad_ref(x.id);
      for (int r = r0; r < r1; ++r) {
        double* row = xg.row_ptr(r);
        for (int c = 0; c < g.cols; ++c) row[c] += g.data[static_cast<size_t>(c)] * inv;
      }
    };
  }
  return v;
}

Var Tape::cosine(Var u, Var v, double eps) {
  const Tensor& uv = value(u);
  const Tensor& vv = value(v);
  if (uv.numel() != vv.numel()) throw NumericError("cosine: dimension mismatch");
  const double nu_raw = norm2({uv.data.data(), uv.data.size()});
  const double nv_raw = norm2({vv.data.data(), vv.data.size()});
  const double nu = std::max(nu_raw, eps);
  const double nv = std::max(nv_raw, eps);
  const double d = dot({uv.data.data(), uv.data.size()}, {vv.data.data(), vv.data.size()});
  const double raw = d / (nu * nv);
  Tensor out(1, 1);
  // Clamp only corrects float dust past +-1; backward treats it as identity.
  out.data[0] = std::clamp(raw, -1.0, 1.0);
  bool rg = needs_grad(u) || needs_grad(v);
  Var res = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(res.id)].back = [this, u, v, res, nu, nv, nu_raw, nv_raw, raw, eps]() {
      const double g = grad_ref(res.id).data[0];
      const Tensor& uv2 = value(u);
      const Tensor& vv2 = value(v);
      if (needs_grad(u)) {
        Tensor& ug = grad_ref(u.id);
        const double norm_term = nu_raw > eps ? raw / (nu * nu) : 0.0;
        for (int i = 0; i < uv2.numel(); ++i)
          ug.data[static_cast<size_t>(i)] +=
              g * (vv2.data[static_cast<size_t>(i)] / (nu * nv) - norm_term * uv2.data[static_cast<size_t>(i)]);
      }
      if (needs_grad(v)) {
        Tensor& vg = grad_ref(v.id);
        const double norm_term = nv_raw > eps ? raw / (nv * nv) : 0.0;
        for (int i = 0; i < vv2.numel(); ++i)
          vg.data[static_cast<size_t>(i)] +=
              g * (uv2.data[static_cast<size_t>(i)] / (nu * nv) - norm_term * vv2.data[static_cast<size_t>(i)]);
      }
    };
  }
  return res;
}

Var Tape::cosine_const(Var u, std::span<const double> v, double eps) {
  const Tensor& uv = value(u);
  if (static_cast<size_t>(uv.numel()) != v.size()) throw NumericError("cosine: dimension mismatch");
  const double nu_raw = norm2({uv.data.data(), uv.data.size()});
  const double nv = std::max(norm2(v), eps);
  const double nu = std::max(nu_raw, eps);
  const double d = dot({uv.data.data(), uv.data.size()}, v);
  const double raw = d / (nu * nv);
  Tensor out(1, 1);
  out.data[0] = std::clamp(raw, -1.0, 1.0);
  bool rg = needs_grad(u);
  Var res = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(res.id)].back = [this, u, v, res, nu, nv, nu_raw, raw, eps]() {
      const double g = grad_ref(res.id).data[0];
      const Tensor& uv2 = value(u);
      Tensor& ug = grad_ref(u.id);
      const double norm_term = nu_raw > eps ? raw / (nu * nu) : 0.0;
      for (size_t i = 0; i < v.size(); ++i)
        ug.data[i] += g * (v[i] / (nu * nv) - norm_term * uv2.data[i]);
    };
  }
  return res;
}

Var Tape::scalar_constant(double v) {
  Tensor out(1, 1);
  out.data[0] = v;
  return push(std::move(out), false, nullptr);
}

Var Tape::max_of(const std::vector<Var>& xs, int* argmax) {
  assert(!xs.empty());
  int best = 0;
  double bv = scalar(xs[0]);
  for (size_t i = 1; i < xs.size(); ++i) {
    const double s = scalar(xs[i]);
    if (s > bv) {
      bv = s;
      best = static_cast<int>(i);
    }
  }
  if (argmax) *argmax = best;
  bool rg = false;
  for (Var x : xs) rg = rg || needs_grad(x);
  Tensor out(1, 1);
  out.data[0] = bv;
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    Var chosen = xs[static_cast<size_t>(best)];
    nodes_[static_cast<size_t>(v.id)].back = [this, chosen, v]() {
      if (needs_grad(chosen)) grad_ref(chosen.id).data[0] += grad_ref(v.id).data[0];
    };
  }
  return v;
}

Var Tape::mean_of(const std::vector<Var>& xs) {
  assert(!xs.empty());
  double s = 0.0;
  bool rg = false;
  for (Var x : xs) {
    s += scalar(x);
    rg = rg || needs_grad(x);
  }
  const double inv = 1.0 / static_cast<double>(xs.size());
  Tensor out(1, 1);
  out.data[0] = s * inv;
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, xs, v, inv]() {
      const double g = grad_ref(v.id).data[0] * inv;
      for (Var x : xs)
        if (needs_grad(x)) grad_ref(x.id).data[0] += g;
    };
  }
  return v;
}

Var Tape::sum_of(const std::vector<Var>& xs) {
  assert(!xs.empty());
  double s = 0.0;
  bool rg = false;
  for (Var x : xs) {
    s += scalar(x);
    rg = rg || needs_grad(x);
  }
  Tensor out(1, 1);
  out.data[0] = s;
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, xs, v]() {
      const double g = grad_ref(v.id).data[0];
      for (Var x : xs)
        if (needs_grad(x)) grad_ref(x.id).data[0] += g;
    };
  }
  return v;
}

Var Tape::cross_entropy(const std::vector<Var>& scores, int target, double tau) {
  if (tau <= 0.0) throw ConfigError("cross_entropy: tau must be positive");
  if (target < 0 || target >= static_cast<int>(scores.size()))
    throw ConfigError("cross_entropy: target index out of range");
  const size_t n = scores.size();
  std::vector<double> z(n);
  for (size_t i = 0; i < n; ++i) {
    const double s = scalar(scores[i]);
    if (!std::isfinite(s)) throw NumericError("cross_entropy: non-finite score");
    z[i] = s / tau;
  }
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  auto probs = std::make_shared<std::vector<double>>(n);
  for (size_t i = 0; i < n; ++i) {
    (*probs)[i] = std::exp(z[i] - m);
    sum += (*probs)[i];
  }
  for (size_t i = 0; i < n; ++i) (*probs)[i] /= sum;
  const double loss = std::log(sum) + m - z[static_cast<size_t>(target)];
  bool rg = false;
  for (Var s : scores) rg = rg || needs_grad(s);
  Tensor out(1, 1);
  out.data[0] = loss;
  Var v = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[static_cast<size_t>(v.id)].back = [this, scores, v, target, tau, probs]() {
      const double g = grad_ref(v.id).data[0] / tau;
      for (size_t i = 0; i < scores.size(); ++i) {
        if (!needs_grad(scores[i])) continue;
        const double p = (*probs)[i];
        const double delta = static_cast<int>(i) == target ? 1.0 : 0.0;
        grad_ref(scores[i].id).data[0] += g * (p - delta);
      }
    };
  }
  return v;
}

}  // namespace attrec

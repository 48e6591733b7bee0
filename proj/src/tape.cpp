#include "capslab/tape.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <utility>

namespace caps {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MMap = Eigen::Map<Mat>;
using CMMap = Eigen::Map<const Mat>;

const Tensor& Var::val() const { return tape->value(id); }

namespace {

void check_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) throw std::runtime_error(std::string(op) + ": operands from different tapes");
}

void check_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!same_shape(a, b)) {
    throw std::runtime_error(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
  }
}

void axpy(Tensor& dst, const Tensor& src, double s) {
  const double* sp = src.ptr();
  double* dp = dst.ptr();
  long n = dst.numel();
  for (long i = 0; i < n; ++i) dp[i] += s * sp[i];
}

}  // namespace

Var Tape::leaf(Tensor value) {
  ensure_finite(value, "leaf");
  nodes_.push_back(Node{});
  Node& n = nodes_.back();
  n.value = std::move(value);
  n.op = "leaf";
  return Var{this, (int)nodes_.size() - 1};
}

Var Tape::param(const Tensor* value, Tensor* grad_sink, const char* name) {
  if (value == nullptr) throw std::runtime_error("param: null value");
  if (grad_sink != nullptr && grad_sink->shape != value->shape) {
    throw std::runtime_error(std::string("param '") + name + "': gradient sink shape " +
                             shape_str(grad_sink->shape) + " does not match value shape " +
                             shape_str(value->shape));
  }
  nodes_.push_back(Node{});
  Node& n = nodes_.back();
  n.ext_value = value;
  n.op = name;
  if (recording && grad_sink != nullptr) {
    n.grad_sink = grad_sink;
    n.needs_grad = true;
  }
  return Var{this, (int)nodes_.size() - 1};
}

Var Tape::input(Tensor value) {
  ensure_finite(value, "input");
  nodes_.push_back(Node{});
  Node& n = nodes_.back();
  n.value = std::move(value);
  n.op = "input";
  n.needs_grad = recording;
  return Var{this, (int)nodes_.size() - 1};
}

const Tensor& Tape::value(int id) const {
  const Node& n = nodes_[(size_t)id];
  return n.ext_value != nullptr ? *n.ext_value : n.value;
}

const Tensor* Tape::grad(int id) const {
  const Node& n = nodes_[(size_t)id];
  if (!n.grad_touched) return nullptr;
  return n.grad_sink != nullptr ? n.grad_sink : &n.grad;
}

bool Tape::requires_grad(int id) const { return nodes_[(size_t)id].needs_grad; }

const char* Tape::op_name(int id) const { return nodes_[(size_t)id].op; }

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[(size_t)id];
  n.grad_touched = true;
  if (n.grad_sink != nullptr) return *n.grad_sink;
  if (n.grad.empty()) n.grad = Tensor(value(id).shape);
  return n.grad;
}

int Tape::push(Tensor value, const std::vector<int>& parents, const char* op, Pull pull) {
  ensure_finite(value, op);
  nodes_.push_back(Node{});
  Node& n = nodes_.back();
  n.value = std::move(value);
  n.op = op;
  if (recording) {
    for (int p : parents) {
      if (nodes_[(size_t)p].needs_grad) {
        n.needs_grad = true;
        break;
      }
    }
    if (n.needs_grad) n.pull = std::move(pull);
  }
  return (int)nodes_.size() - 1;
}

void Tape::backward(Var root) {
  if (root.tape != this || root.id < 0 || root.id >= (int)nodes_.size()) {
    throw std::runtime_error("backward: root is not a node of this tape");
  }
  if (value(root.id).numel() != 1) {
    throw std::runtime_error("backward: root must be scalar, got shape " +
                             shape_str(value(root.id).shape));
  }
  if (ran_backward_) throw std::runtime_error("backward: tape already differentiated; reset() first");
  ran_backward_ = true;
  grad_buf(root.id)[0] += 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[(size_t)id];
    if (!n.needs_grad || !n.pull || !n.grad_touched) continue;
    n.pull(*this, id);
  }
}

void Tape::reset() {
  nodes_.clear();
  ran_backward_ = false;
}

// ---------------------------------------------------------------------------
// generic ops

Var add(Var a, Var b) {
  check_same_tape(a, b, "add");
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  check_shape(av, bv, "add");
  Tensor out(av.shape);
  for (long i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  int pa = a.id, pb = b.id;
  int id = a.tape->push(std::move(out), {pa, pb}, "add", [pa, pb](Tape& t, int self) {
    const Tensor& g = *t.grad(self);
    if (t.requires_grad(pa)) axpy(t.grad_buf(pa), g, 1.0);
    if (t.requires_grad(pb)) axpy(t.grad_buf(pb), g, 1.0);
  });
  return Var{a.tape, id};
}

Var sub(Var a, Var b) {
  check_same_tape(a, b, "sub");
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  check_shape(av, bv, "sub");
  Tensor out(av.shape);
  for (long i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  int pa = a.id, pb = b.id;
  int id = a.tape->push(std::move(out), {pa, pb}, "sub", [pa, pb](Tape& t, int self) {
    const Tensor& g = *t.grad(self);
    if (t.requires_grad(pa)) axpy(t.grad_buf(pa), g, 1.0);
    if (t.requires_grad(pb)) axpy(t.grad_buf(pb), g, -1.0);
  });
  return Var{a.tape, id};
}

Var mul(Var a, Var b) {
  check_same_tape(a, b, "mul");
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  check_shape(av, bv, "mul");
  Tensor out(av.shape);
  for (long i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  int pa = a.id, pb = b.id;
  int id = a.tape->push(std::move(out), {pa, pb}, "mul", [pa, pb](Tape& t, int self) {
    const Tensor& g = *t.grad(self);
    const Tensor& av = t.value(pa);
    const Tensor& bv = t.value(pb);
    if (t.requires_grad(pa)) {
      Tensor& ga = t.grad_buf(pa);
      for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(pb)) {
      Tensor& gb = t.grad_buf(pb);
      for (long i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
    }
  });
  return Var{a.tape, id};
}

Var scale(Var a, double s) {
  const Tensor& av = a.val();
  Tensor out(av.shape);
  for (long i = 0; i < out.numel(); ++i) out[i] = s * av[i];
  int pa = a.id;
  int id = a.tape->push(std::move(out), {pa}, "scale", [pa, s](Tape& t, int self) {
    if (t.requires_grad(pa)) axpy(t.grad_buf(pa), *t.grad(self), s);
  });
  return Var{a.tape, id};
}

Var add_scaled(Var a, Var b, double s) {
  check_same_tape(a, b, "add_scaled");
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  check_shape(av, bv, "add_scaled");
  Tensor out(av.shape);
  for (long i = 0; i < out.numel(); ++i) out[i] = av[i] + s * bv[i];
  int pa = a.id, pb = b.id;
  int id = a.tape->push(std::move(out), {pa, pb}, "add_scaled", [pa, pb, s](Tape& t, int self) {
    const Tensor& g = *t.grad(self);
    if (t.requires_grad(pa)) axpy(t.grad_buf(pa), g, 1.0);
    if (t.requires_grad(pb)) axpy(t.grad_buf(pb), g, s);
  });
  return Var{a.tape, id};
}

Var affine_const(Var x, double a, Tensor c) {
  const Tensor& xv = x.val();
  check_shape(xv, c, "affine_const");
  Tensor out(xv.shape);
  for (long i = 0; i < out.numel(); ++i) out[i] = a * xv[i] + c[i];
  int px = x.id;
  int id = x.tape->push(std::move(out), {px}, "affine_const", [px, a](Tape& t, int self) {
    if (t.requires_grad(px)) axpy(t.grad_buf(px), *t.grad(self), a);
  });
  return Var{x.tape, id};
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b, "matmul");
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw std::runtime_error("matmul: incompatible shapes " + shape_str(av.shape) + " and " +
                             shape_str(bv.shape));
  }
  long m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  MMap(out.ptr(), m, n).noalias() = CMMap(av.ptr(), m, k) * CMMap(bv.ptr(), k, n);
  int pa = a.id, pb = b.id;
  int id = a.tape->push(std::move(out), {pa, pb}, "matmul", [pa, pb, m, k, n](Tape& t, int self) {
    CMMap G(t.grad(self)->ptr(), m, n);
    if (t.requires_grad(pa)) {
      CMMap B(t.value(pb).ptr(), k, n);
      MMap(t.grad_buf(pa).ptr(), m, k).noalias() += G * B.transpose();
    }
    if (t.requires_grad(pb)) {
      CMMap A(t.value(pa).ptr(), m, k);
      MMap(t.grad_buf(pb).ptr(), k, n).noalias() += A.transpose() * G;
    }
  });
  return Var{a.tape, id};
}

Var linear(Var x, Var w, Var b) {
  check_same_tape(x, w, "linear");
  check_same_tape(x, b, "linear");
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  const Tensor& bv = b.val();
  if (xv.rank() != 1 || wv.rank() != 2 || bv.rank() != 1 || xv.dim(0) != wv.dim(0) ||
      bv.dim(0) != wv.dim(1)) {
    throw std::runtime_error("linear: incompatible shapes " + shape_str(xv.shape) + ", " +
                             shape_str(wv.shape) + ", " + shape_str(bv.shape));
  }
  long k = wv.dim(0), n = wv.dim(1);
  Tensor out({n});
  Eigen::Map<Eigen::VectorXd>(out.ptr(), n).noalias() =
      CMMap(wv.ptr(), k, n).transpose() * Eigen::Map<const Eigen::VectorXd>(xv.ptr(), k);
  for (long j = 0; j < n; ++j) out[j] += bv[j];
  int px = x.id, pw = w.id, pb = b.id;
  int id = x.tape->push(std::move(out), {px, pw, pb}, "linear", [px, pw, pb, k, n](Tape& t, int self) {
    Eigen::Map<const Eigen::VectorXd> G(t.grad(self)->ptr(), n);
    if (t.requires_grad(px)) {
      Eigen::Map<Eigen::VectorXd>(t.grad_buf(px).ptr(), k).noalias() +=
          CMMap(t.value(pw).ptr(), k, n) * G;
    }
    if (t.requires_grad(pw)) {
      MMap(t.grad_buf(pw).ptr(), k, n).noalias() +=
          Eigen::Map<const Eigen::VectorXd>(t.value(px).ptr(), k) * G.transpose();
    }
    if (t.requires_grad(pb)) axpy(t.grad_buf(pb), *t.grad(self), 1.0);
  });
  return Var{x.tape, id};
}

Var conv2d(Var x, Var kernels, Var bias, int stride, int groups) {
  check_same_tape(x, kernels, "conv2d");
  check_same_tape(x, bias, "conv2d");
  const Tensor& xv = x.val();
  const Tensor& kv = kernels.val();
  const Tensor& bv = bias.val();
  if (xv.rank() != 3 || kv.rank() != 4) {
    throw std::runtime_error("conv2d: expected input [C,H,W] and kernels [Cout,Cin/g,kh,kw], got " +
                             shape_str(xv.shape) + " and " + shape_str(kv.shape));
  }
  long cin = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  long cout = kv.dim(0), cing = kv.dim(1), kh = kv.dim(2), kw = kv.dim(3);
  if (stride < 1 || groups < 1) throw std::runtime_error("conv2d: stride and groups must be >= 1");
  if (cin % groups != 0 || cout % groups != 0 || cing != cin / groups) {
    throw std::runtime_error("conv2d: group mismatch, cin=" + std::to_string(cin) + " cout=" +
                             std::to_string(cout) + " groups=" + std::to_string(groups) +
                             " kernel cin/g=" + std::to_string(cing));
  }
  if (bv.rank() != 1 || bv.dim(0) != cout) {
    throw std::runtime_error("conv2d: bias shape " + shape_str(bv.shape) + " for cout " +
                             std::to_string(cout));
  }
  if (kh > h || kw > w) {
    throw std::runtime_error("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                             " larger than input " + std::to_string(h) + "x" + std::to_string(w));
  }
  long hp = (h - kh) / stride + 1;
  long wp = (w - kw) / stride + 1;
  long coutg = cout / groups;
  long rows = cing * kh * kw;
  long cols = hp * wp;

  // im2col patch matrices, one per group; saved for the backward GEMMs
  auto patches = std::make_shared<Tensor>(shape_t{(long)groups, rows, cols});
  for (long gi = 0; gi < groups; ++gi) {
    double* p = patches->ptr() + gi * rows * cols;
    for (long c = 0; c < cing; ++c) {
      const double* xc = xv.ptr() + (gi * cing + c) * h * w;
      for (long dy = 0; dy < kh; ++dy) {
        for (long dx = 0; dx < kw; ++dx) {
          double* prow = p + ((c * kh + dy) * kw + dx) * cols;
          for (long oy = 0; oy < hp; ++oy) {
            const double* src = xc + (oy * stride + dy) * w + dx;
            for (long ox = 0; ox < wp; ++ox) prow[oy * wp + ox] = src[ox * stride];
          }
        }
      }
    }
  }

  Tensor out({cout, hp, wp});
  for (long gi = 0; gi < groups; ++gi) {
    CMMap K(kv.ptr() + gi * coutg * rows, coutg, rows);
    CMMap P(patches->ptr() + gi * rows * cols, rows, cols);
    MMap O(out.ptr() + gi * coutg * cols, coutg, cols);
    O.noalias() = K * P;
  }
  for (long c = 0; c < cout; ++c) {
    double b0 = bv[c];
    double* oc = out.ptr() + c * cols;
    for (long i = 0; i < cols; ++i) oc[i] += b0;
  }

  int px = x.id, pk = kernels.id, pbias = bias.id;
  int id = x.tape->push(
      std::move(out), {px, pk, pbias}, "conv2d",
      [px, pk, pbias, patches, stride, groups, cin, h, w, cout, cing, kh, kw, hp, wp, coutg, rows,
       cols](Tape& t, int self) {
        const Tensor& g = *t.grad(self);
        if (t.requires_grad(pbias)) {
          Tensor& gb = t.grad_buf(pbias);
          for (long c = 0; c < cout; ++c) {
            const double* gc = g.ptr() + c * cols;
            double s = 0;
            for (long i = 0; i < cols; ++i) s += gc[i];
            gb[c] += s;
          }
        }
        if (t.requires_grad(pk)) {
          Tensor& gk = t.grad_buf(pk);
          for (long gi = 0; gi < groups; ++gi) {
            CMMap G(g.ptr() + gi * coutg * cols, coutg, cols);
            CMMap P(patches->ptr() + gi * rows * cols, rows, cols);
            MMap(gk.ptr() + gi * coutg * rows, coutg, rows).noalias() += G * P.transpose();
          }
        }
        if (t.requires_grad(px)) {
          Tensor& gx = t.grad_buf(px);
          const Tensor& kv = t.value(pk);
          Mat dp(rows, cols);
          for (long gi = 0; gi < groups; ++gi) {
            CMMap K(kv.ptr() + gi * coutg * rows, coutg, rows);
            CMMap G(g.ptr() + gi * coutg * cols, coutg, cols);
            dp.noalias() = K.transpose() * G;
            for (long c = 0; c < cing; ++c) {
              double* xc = gx.ptr() + (gi * cing + c) * h * w;
              for (long dy = 0; dy < kh; ++dy) {
                for (long dx = 0; dx < kw; ++dx) {
                  const double* prow = dp.data() + ((c * kh + dy) * kw + dx) * cols;
                  for (long oy = 0; oy < hp; ++oy) {
                    double* dst = xc + (oy * stride + dy) * w + dx;
                    for (long ox = 0; ox < wp; ++ox) dst[ox * stride] += prow[oy * wp + ox];
                  }
                }
              }
            }
          }
        }
      });
  return Var{x.tape, id};
}

Var relu(Var x) {
  const Tensor& xv = x.val();
  Tensor out(xv.shape);
  for (long i = 0; i < out.numel(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  int px = x.id;
  int id = x.tape->push(std::move(out), {px}, "relu", [px](Tape& t, int self) {
    if (!t.requires_grad(px)) return;
    const Tensor& g = *t.grad(self);
    const Tensor& xv = t.value(px);
    Tensor& gx = t.grad_buf(px);
    for (long i = 0; i < g.numel(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  });
  return Var{x.tape, id};
}

Var softmax_rows(Var x) {
  const Tensor& xv = x.val();
  if (xv.rank() != 2) throw std::runtime_error("softmax_rows: expected rank-2, got " + shape_str(xv.shape));
  Tensor out = softmax_rows_plain(xv);
  int px = x.id;
  long m = xv.dim(0), n = xv.dim(1);
  int id = x.tape->push(std::move(out), {px}, "softmax_rows", [px, m, n](Tape& t, int self) {
    if (!t.requires_grad(px)) return;
    const Tensor& g = *t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_buf(px);
    for (long r = 0; r < m; ++r) {
      const double* gr = g.ptr() + r * n;
      const double* yr = y.ptr() + r * n;
      double dot = 0;
      for (long j = 0; j < n; ++j) dot += gr[j] * yr[j];
      double* gxr = gx.ptr() + r * n;
      for (long j = 0; j < n; ++j) gxr[j] += yr[j] * (gr[j] - dot);
    }
  });
  return Var{x.tape, id};
}

Var reshape(Var x, shape_t s) {
  const Tensor& xv = x.val();
  if (shape_numel(s) != xv.numel()) {
    throw std::runtime_error("reshape: cannot view " + shape_str(xv.shape) + " as " + shape_str(s));
  }
  Tensor out(std::move(s), xv.data);
  int px = x.id;
  int id = x.tape->push(std::move(out), {px}, "reshape", [px](Tape& t, int self) {
    if (t.requires_grad(px)) axpy(t.grad_buf(px), *t.grad(self), 1.0);
  });
  return Var{x.tape, id};
}

Var sum(Var x) {
  const Tensor& xv = x.val();
  Tensor out({1});
  out[0] = xv.sum();
  int px = x.id;
  int id = x.tape->push(std::move(out), {px}, "sum", [px](Tape& t, int self) {
    if (!t.requires_grad(px)) return;
    double g = (*t.grad(self))[0];
    Tensor& gx = t.grad_buf(px);
    for (long i = 0; i < gx.numel(); ++i) gx[i] += g;
  });
  return Var{x.tape, id};
}

Var weighted_sum(Var x, Tensor w) {
  const Tensor& xv = x.val();
  check_shape(xv, w, "weighted_sum");
  Tensor out({1});
  double s = 0;
  for (long i = 0; i < xv.numel(); ++i) s += xv[i] * w[i];
  out[0] = s;
  int px = x.id;
  auto wp = std::make_shared<Tensor>(std::move(w));
  int id = x.tape->push(std::move(out), {px}, "weighted_sum", [px, wp](Tape& t, int self) {
    if (!t.requires_grad(px)) return;
    double g = (*t.grad(self))[0];
    Tensor& gx = t.grad_buf(px);
    for (long i = 0; i < gx.numel(); ++i) gx[i] += g * (*wp)[i];
  });
  return Var{x.tape, id};
}

Var row_norms(Var x) {
  const Tensor& xv = x.val();
  if (xv.rank() != 2) throw std::runtime_error("row_norms: expected rank-2, got " + shape_str(xv.shape));
  long m = xv.dim(0), n = xv.dim(1);
  Tensor out({m});
  for (long r = 0; r < m; ++r) {
    const double* xr = xv.ptr() + r * n;
    double s = 0;
    for (long j = 0; j < n; ++j) s += xr[j] * xr[j];
    out[r] = std::sqrt(s);
  }
  int px = x.id;
  int id = x.tape->push(std::move(out), {px}, "row_norms", [px, m, n](Tape& t, int self) {
    if (!t.requires_grad(px)) return;
    const Tensor& g = *t.grad(self);
    const Tensor& v = t.value(self);
    const Tensor& xv = t.value(px);
    Tensor& gx = t.grad_buf(px);
    for (long r = 0; r < m; ++r) {
      if (v[r] <= 1e-12) continue;  // subgradient 0 at the removable singularity
      double s = g[r] / v[r];
      const double* xr = xv.ptr() + r * n;
      double* gxr = gx.ptr() + r * n;
      for (long j = 0; j < n; ++j) gxr[j] += s * xr[j];
    }
  });
  return Var{x.tape, id};
}

Var mask_rows(Var x, long keep_row) {
  const Tensor& xv = x.val();
  if (xv.rank() != 2) throw std::runtime_error("mask_rows: expected rank-2, got " + shape_str(xv.shape));
  long m = xv.dim(0), n = xv.dim(1);
  if (keep_row < 0 || keep_row >= m) {
    throw std::runtime_error("mask_rows: row " + std::to_string(keep_row) + " out of range [0," +
                             std::to_string(m) + ")");
  }
  Tensor out({m, n});
  for (long j = 0; j < n; ++j) out.at(keep_row, j) = xv.at(keep_row, j);
  int px = x.id;
  int id = x.tape->push(std::move(out), {px}, "mask_rows", [px, keep_row, n](Tape& t, int self) {
    if (!t.requires_grad(px)) return;
    const Tensor& g = *t.grad(self);
    Tensor& gx = t.grad_buf(px);
    const double* gr = g.ptr() + keep_row * n;
    double* gxr = gx.ptr() + keep_row * n;
    for (long j = 0; j < n; ++j) gxr[j] += gr[j];
  });
  return Var{x.tape, id};
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h) {
  Tensor grad(x.shape);
  Tensor probe = x;
  for (long i = 0; i < x.numel(); ++i) {
    double x0 = probe[i];
    probe[i] = x0 + h;
    double fp = f(probe);
    probe[i] = x0 - h;
    double fm = f(probe);
    probe[i] = x0;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

Tensor softmax_rows_plain(const Tensor& x) {
  long m = x.dim(0), n = x.dim(1);
  Tensor out({m, n});
  for (long r = 0; r < m; ++r) {
    const double* xr = x.ptr() + r * n;
    double* yr = out.ptr() + r * n;
    double mx = xr[0];
    for (long j = 1; j < n; ++j) mx = xr[j] > mx ? xr[j] : mx;
    double s = 0;
    for (long j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    for (long j = 0; j < n; ++j) yr[j] /= s;
  }
  ensure_finite(out, "softmax_rows");
  return out;
}

Tensor softmax_cols_plain(const Tensor& x) {
  long m = x.dim(0), n = x.dim(1);
  Tensor out({m, n});
  for (long c = 0; c < n; ++c) {
    double mx = x.at(0, c);
    for (long r = 1; r < m; ++r) mx = x.at(r, c) > mx ? x.at(r, c) : mx;
    double s = 0;
    for (long r = 0; r < m; ++r) {
      double e = std::exp(x.at(r, c) - mx);
      out.at(r, c) = e;
      s += e;
    }
    for (long r = 0; r < m; ++r) out.at(r, c) /= s;
  }
  ensure_finite(out, "softmax_cols");
  return out;
}

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  long m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw std::runtime_error("matmul_plain: incompatible shapes " + shape_str(a.shape) + " and " +
                             shape_str(b.shape));
  }
  Tensor out({m, n});
  MMap(out.ptr(), m, n).noalias() = CMMap(a.ptr(), m, k) * CMMap(b.ptr(), k, n);
  return out;
}

}  // namespace caps

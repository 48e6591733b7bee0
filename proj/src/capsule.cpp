#include "capslab/capsule.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

namespace caps {

namespace {

// (1 - exp(-rho)) / rho, stable for all rho >= 0
double squash_factor(double rho) {
  if (rho <= 1e-12) return 1.0;
  return -std::expm1(-rho) / rho;
}

// d/drho of squash_factor; series below 1e-3 where the direct expression
// loses digits to cancellation
double squash_factor_deriv(double rho) {
  if (rho < 1e-3) return -0.5 + rho / 3.0 - rho * rho / 8.0;
  return (std::exp(-rho) * (1.0 + rho) - 1.0) / (rho * rho);
}

}  // namespace

Var squash_rows(Var x) {
  const Tensor& xv = x.val();
  if (xv.rank() != 2) throw std::runtime_error("squash_rows: expected rank-2, got " + shape_str(xv.shape));
  long m = xv.dim(0), n = xv.dim(1);
  Tensor out({m, n});
  auto rhos = std::make_shared<std::vector<double>>((size_t)m);
  for (long r = 0; r < m; ++r) {
    const double* xr = xv.ptr() + r * n;
    double s = 0;
    for (long j = 0; j < n; ++j) s += xr[j] * xr[j];
    double rho = std::sqrt(s);
    (*rhos)[(size_t)r] = rho;
    double f = squash_factor(rho);
    double* yr = out.ptr() + r * n;
    for (long j = 0; j < n; ++j) yr[j] = f * xr[j];
  }
  int px = x.id;
  int id = x.tape->push(std::move(out), {px}, "squash_rows", [px, rhos, m, n](Tape& t, int self) {
    if (!t.requires_grad(px)) return;
    const Tensor& g = *t.grad(self);
    const Tensor& xv = t.value(px);
    Tensor& gx = t.grad_buf(px);
    for (long r = 0; r < m; ++r) {
      double rho = (*rhos)[(size_t)r];
      const double* gr = g.ptr() + r * n;
      const double* xr = xv.ptr() + r * n;
      double* gxr = gx.ptr() + r * n;
      double f = squash_factor(rho);
      if (rho <= 1e-12) {
        for (long j = 0; j < n; ++j) gxr[j] += gr[j];
        continue;
      }
      // J = f*I + (f'(rho)/rho) * u u^T
      double dot = 0;
      for (long j = 0; j < n; ++j) dot += gr[j] * xr[j];
      double c = squash_factor_deriv(rho) / rho * dot;
      for (long j = 0; j < n; ++j) gxr[j] += f * gr[j] + c * xr[j];
    }
  });
  return Var{x.tape, id};
}

Var compute_votes(Var U, Var W) {
  if (U.tape != W.tape) throw std::runtime_error("compute_votes: operands from different tapes");
  const Tensor& uv = U.val();
  const Tensor& wv = W.val();
  if (uv.rank() != 2 || wv.rank() != 4 || wv.dim(1) != uv.dim(0) || wv.dim(3) != uv.dim(1)) {
    throw std::runtime_error("compute_votes: incompatible shapes U " + shape_str(uv.shape) + " W " +
                             shape_str(wv.shape));
  }
  long nl = uv.dim(0), dl = uv.dim(1);
  long nu = wv.dim(0), du = wv.dim(2);
  Tensor out({nl, nu, du});
  for (long j = 0; j < nu; ++j) {
    const double* wj = wv.ptr() + j * nl * du * dl;
    for (long i = 0; i < nl; ++i) {
      const double* mat = wj + i * du * dl;
      const double* u = uv.ptr() + i * dl;
      double* v = out.ptr() + (i * nu + j) * du;
      for (long p = 0; p < du; ++p) {
        const double* row = mat + p * dl;
        double acc = 0;
        for (long q = 0; q < dl; ++q) acc += row[q] * u[q];
        v[p] = acc;
      }
    }
  }
  int pu = U.id, pw = W.id;
  int id = U.tape->push(std::move(out), {pu, pw}, "compute_votes",
                        [pu, pw, nl, nu, dl, du](Tape& t, int self) {
    const Tensor& g = *t.grad(self);
    const Tensor& uv = t.value(pu);
    const Tensor& wv = t.value(pw);
    bool needs_u = t.requires_grad(pu);
    bool needs_w = t.requires_grad(pw);
    Tensor* gu = needs_u ? &t.grad_buf(pu) : nullptr;
    Tensor* gw = needs_w ? &t.grad_buf(pw) : nullptr;
    for (long j = 0; j < nu; ++j) {
      for (long i = 0; i < nl; ++i) {
        const double* gv = g.ptr() + (i * nu + j) * du;
        const double* mat = wv.ptr() + (j * nl + i) * du * dl;
        const double* u = uv.ptr() + i * dl;
        if (needs_u) {
          double* gui = gu->ptr() + i * dl;
          for (long p = 0; p < du; ++p) {
            const double* row = mat + p * dl;
            double gp = gv[p];
            for (long q = 0; q < dl; ++q) gui[q] += gp * row[q];
          }
        }
        if (needs_w) {
          double* gmat = gw->ptr() + (j * nl + i) * du * dl;
          for (long p = 0; p < du; ++p) {
            double gp = gv[p];
            double* grow = gmat + p * dl;
            for (long q = 0; q < dl; ++q) grow[q] += gp * u[q];
          }
        }
      }
    }
  });
  return Var{U.tape, id};
}

namespace {

// s[j,:] = sum_i C[i,j] * votes[i,j,:]
Var vote_mix(Var votes, Var C, bool detach_couplings) {
  const Tensor& vv = votes.val();
  const Tensor& cv = C.val();
  long nl = vv.dim(0), nu = vv.dim(1), du = vv.dim(2);
  if (cv.rank() != 2 || cv.dim(0) != nl || cv.dim(1) != nu) {
    throw std::runtime_error("vote_mix: coupling shape " + shape_str(cv.shape) + " for votes " +
                             shape_str(vv.shape));
  }
  Tensor out({nu, du});
  for (long i = 0; i < nl; ++i) {
    const double* ci = cv.ptr() + i * nu;
    const double* vi = vv.ptr() + i * nu * du;
    for (long j = 0; j < nu; ++j) {
      double c = ci[j];
      const double* vij = vi + j * du;
      double* sj = out.ptr() + j * du;
      for (long p = 0; p < du; ++p) sj[p] += c * vij[p];
    }
  }
  int pv = votes.id, pc = C.id;
  int id = votes.tape->push(std::move(out), {pv, pc}, "vote_mix",
                            [pv, pc, nl, nu, du, detach_couplings](Tape& t, int self) {
    const Tensor& g = *t.grad(self);
    const Tensor& vv = t.value(pv);
    const Tensor& cv = t.value(pc);
    if (t.requires_grad(pv)) {
      Tensor& gv = t.grad_buf(pv);
      for (long i = 0; i < nl; ++i) {
        const double* ci = cv.ptr() + i * nu;
        double* gvi = gv.ptr() + i * nu * du;
        for (long j = 0; j < nu; ++j) {
          double c = ci[j];
          const double* gj = g.ptr() + j * du;
          double* gvij = gvi + j * du;
          for (long p = 0; p < du; ++p) gvij[p] += c * gj[p];
        }
      }
    }
    if (!detach_couplings && t.requires_grad(pc)) {
      Tensor& gc = t.grad_buf(pc);
      for (long i = 0; i < nl; ++i) {
        const double* vi = vv.ptr() + i * nu * du;
        double* gci = gc.ptr() + i * nu;
        for (long j = 0; j < nu; ++j) {
          const double* vij = vi + j * du;
          const double* gj = g.ptr() + j * du;
          double acc = 0;
          for (long p = 0; p < du; ++p) acc += vij[p] * gj[p];
          gci[j] += acc;
        }
      }
    }
  });
  return Var{votes.tape, id};
}

// a[i,j] = <votes[i,j,:], v[j,:]>
Var agreement(Var votes, Var v) {
  const Tensor& vv = votes.val();
  const Tensor& ov = v.val();
  long nl = vv.dim(0), nu = vv.dim(1), du = vv.dim(2);
  Tensor out({nl, nu});
  for (long i = 0; i < nl; ++i) {
    const double* vi = vv.ptr() + i * nu * du;
    double* ai = out.ptr() + i * nu;
    for (long j = 0; j < nu; ++j) {
      const double* vij = vi + j * du;
      const double* oj = ov.ptr() + j * du;
      double acc = 0;
      for (long p = 0; p < du; ++p) acc += vij[p] * oj[p];
      ai[j] = acc;
    }
  }
  int pv = votes.id, po = v.id;
  int id = votes.tape->push(std::move(out), {pv, po}, "agreement",
                            [pv, po, nl, nu, du](Tape& t, int self) {
    const Tensor& g = *t.grad(self);
    const Tensor& vv = t.value(pv);
    const Tensor& ov = t.value(po);
    if (t.requires_grad(pv)) {
      Tensor& gv = t.grad_buf(pv);
      for (long i = 0; i < nl; ++i) {
        const double* gi = g.ptr() + i * nu;
        double* gvi = gv.ptr() + i * nu * du;
        for (long j = 0; j < nu; ++j) {
          double ga = gi[j];
          const double* oj = ov.ptr() + j * du;
          double* gvij = gvi + j * du;
          for (long p = 0; p < du; ++p) gvij[p] += ga * oj[p];
        }
      }
    }
    if (t.requires_grad(po)) {
      Tensor& go = t.grad_buf(po);
      for (long i = 0; i < nl; ++i) {
        const double* gi = g.ptr() + i * nu;
        const double* vi = vv.ptr() + i * nu * du;
        for (long j = 0; j < nu; ++j) {
          double ga = gi[j];
          const double* vij = vi + j * du;
          double* goj = go.ptr() + j * du;
          for (long p = 0; p < du; ++p) goj[p] += ga * vij[p];
        }
      }
    }
  });
  return Var{votes.tape, id};
}

}  // namespace

RoutingResult rba_route(Var votes, Var priors, int r, bool detach_couplings) {
  if (r < 1) throw std::runtime_error("rba_route: iteration count must be >= 1, got " + std::to_string(r));
  const Tensor& vv = votes.val();
  const Tensor& bv = priors.val();
  if (vv.rank() != 3) throw std::runtime_error("rba_route: votes must be rank-3, got " + shape_str(vv.shape));
  if (bv.rank() != 2 || bv.dim(0) != vv.dim(0) || bv.dim(1) != vv.dim(1)) {
    throw std::runtime_error("rba_route: prior shape " + shape_str(bv.shape) + " for votes " +
                             shape_str(vv.shape));
  }
  Var b = priors;
  Var C{}, v{};
  for (int it = 0; it < r; ++it) {
    C = softmax_rows(b);
    Var s = vote_mix(votes, C, detach_couplings);
    v = squash_rows(s);
    if (it + 1 < r) b = add(b, agreement(votes, v));
  }
  return RoutingResult{C, v};
}

RoutingResult uniform_route(Var votes) {
  const Tensor& vv = votes.val();
  if (vv.rank() != 3) throw std::runtime_error("uniform_route: votes must be rank-3, got " + shape_str(vv.shape));
  long nl = vv.dim(0), nu = vv.dim(1);
  Var C = votes.tape->leaf(Tensor::full({nl, nu}, 1.0 / (double)nu));
  Var s = vote_mix(votes, C, false);
  Var v = squash_rows(s);
  return RoutingResult{C, v};
}

CapsuleLayerOut capsule_layer_forward(Var U, Var W, Var priors, int r, RoutingMode mode,
                                      bool detach_couplings) {
  Var votes = compute_votes(U, W);
  RoutingResult rr = mode == RoutingMode::rba ? rba_route(votes, priors, r, detach_couplings)
                                              : uniform_route(votes);
  return CapsuleLayerOut{rr.output, rr.couplings, votes};
}

}  // namespace caps

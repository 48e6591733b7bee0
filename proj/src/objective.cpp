#include "capslab/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace caps {

void LossConfig::validate() const {
  if (!(0.0 < m_minus && m_minus < m_plus && m_plus < 1.0)) {
    throw std::runtime_error("LossConfig: need 0 < m_minus < m_plus < 1, got m+=" +
                             std::to_string(m_plus) + " m-=" + std::to_string(m_minus));
  }
  if (!(lambda > 0.0)) throw std::runtime_error("LossConfig: lambda must be > 0");
  if (!(alpha > 0.0)) {
    throw std::runtime_error("LossConfig: alpha must be > 0 (the combined loss always carries a "
                             "reconstruction term)");
  }
}

Var margin_loss_graph(Var out_caps, int target, const LossConfig& cfg) {
  const Tensor& uv = out_caps.val();
  if (uv.rank() != 2) {
    throw std::runtime_error("margin_loss_graph: output capsules must be rank-2, got " +
                             shape_str(uv.shape));
  }
  long n = uv.dim(0);
  if (target < 0 || target >= n) {
    throw std::runtime_error("margin_loss_graph: target " + std::to_string(target) +
                             " out of range [0," + std::to_string(n) + ")");
  }
  Var norms = row_norms(out_caps);
  // max(0, m+ - |u|) and max(0, |u| - m-)
  Var present = relu(affine_const(norms, -1.0, Tensor::full({n}, cfg.m_plus)));
  Var absent = relu(affine_const(norms, 1.0, Tensor::full({n}, -cfg.m_minus)));
  Tensor t_mask({n}), not_t({n});
  for (long j = 0; j < n; ++j) {
    t_mask[j] = j == target ? 1.0 : 0.0;
    not_t[j] = j == target ? 0.0 : 1.0;
  }
  Var pos = weighted_sum(mul(present, present), std::move(t_mask));
  Var neg = weighted_sum(mul(absent, absent), std::move(not_t));
  return add_scaled(pos, neg, cfg.lambda);
}

Var reconstruction_loss_graph(Var reconstruction, const Tensor& image) {
  const Tensor& rv = reconstruction.val();
  if (rv.numel() != image.numel()) {
    throw std::runtime_error("reconstruction_loss_graph: shape mismatch " + shape_str(rv.shape) +
                             " vs " + shape_str(image.shape));
  }
  Tensor neg = image;
  for (long i = 0; i < neg.numel(); ++i) neg[i] = -neg[i];
  if (neg.shape != rv.shape) neg = Tensor(rv.shape, std::move(neg.data));
  Var diff = affine_const(reconstruction, 1.0, std::move(neg));
  return sum(mul(diff, diff));
}

Var total_loss_graph(Var margin, Var reconstruction, const LossConfig& cfg) {
  cfg.validate();
  return add_scaled(margin, reconstruction, cfg.alpha);
}

Tensor margin_loss_grad_closed_form(const Tensor& u, int t, const LossConfig& cfg, bool* singular) {
  double rho = u.l2_norm();
  if (singular != nullptr) *singular = false;
  if (rho == 0.0) {
    if (singular != nullptr) *singular = true;
    return Tensor(u.shape);
  }
  double factor;
  if (t != 0) {
    factor = -std::max(0.0, cfg.m_plus - rho);
  } else {
    factor = cfg.lambda * std::max(0.0, rho - cfg.m_minus);
  }
  Tensor g(u.shape);
  double s = factor * 2.0 / rho;
  for (long i = 0; i < u.numel(); ++i) g[i] = s * u[i];
  return g;
}

double margin_loss_value(const Tensor& out_caps, int target, const LossConfig& cfg) {
  long n = out_caps.dim(0), d = out_caps.dim(1);
  double loss = 0;
  for (long j = 0; j < n; ++j) {
    double s = 0;
    for (long k = 0; k < d; ++k) s += out_caps.at(j, k) * out_caps.at(j, k);
    double rho = std::sqrt(s);
    if (j == target) {
      double h = std::max(0.0, cfg.m_plus - rho);
      loss += h * h;
    } else {
      double h = std::max(0.0, rho - cfg.m_minus);
      loss += cfg.lambda * h * h;
    }
  }
  return loss;
}

}  // namespace caps

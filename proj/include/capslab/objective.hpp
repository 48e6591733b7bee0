#pragma once

#include "capslab/tape.hpp"

namespace caps {

struct LossConfig {
  double m_plus = 0.9;    // present-class margin
  double m_minus = 0.1;   // absent-class margin
  double lambda = 0.5;    // absent-class down-weight
  double alpha = 0.392;   // reconstruction weight (0.0005 for the original 28x28 model)

  // 0 < m_minus < m_plus < 1, lambda > 0, alpha > 0
  void validate() const;
};

// Per-sample margin loss on output-capsule norms, built from generic tape ops:
//   sum_j t_j max(0, m+ - |u_j|)^2 + lambda (1 - t_j) max(0, |u_j| - m-)^2
// Batch averaging is done by the caller (gradients are summed per sample and
// scaled once).
Var margin_loss_graph(Var out_caps, int target, const LossConfig& cfg);

// Sum of squared per-pixel differences against a fixed image.
Var reconstruction_loss_graph(Var reconstruction, const Tensor& image);

// margin + alpha * reconstruction; validates the config
Var total_loss_graph(Var margin, Var reconstruction, const LossConfig& cfg);

// Closed-form gradient of the margin loss w.r.t. one output capsule:
//   (-t max(0, m+ - |u|) + lambda (1-t) max(0, |u| - m-)) * 2u/|u|
// Singular at |u| = 0; `singular` is set instead of fabricating a value.
Tensor margin_loss_grad_closed_form(const Tensor& u, int t, const LossConfig& cfg, bool* singular);

// plain evaluation helpers (no tape), used by eval paths and tests
double margin_loss_value(const Tensor& out_caps, int target, const LossConfig& cfg);

}  // namespace caps

#pragma once

#include "capslab/tape.hpp"

namespace caps {

enum class RoutingMode { rba, uniform };

// Norm-compressing nonlinearity applied per row: a row u maps to
// (1 - exp(-|u|)) * u/|u|, so row norms land in [0,1). The zero row maps to
// itself (the analytic limit).
Var squash_rows(Var x);

// votes[i,j,:] = W[j,i,:,:] * U[i,:]
//   U: [n_l x d_l], W: [n_u x n_l x d_u x d_l] -> votes [n_l x n_u x d_u]
Var compute_votes(Var U, Var W);

struct RoutingResult {
  Var couplings;  // [n_l x n_u], rows sum to 1
  Var output;     // [n_u x d_u], squashed
};

/**
 * Routing-by-agreement over the votes of one layer pair. Per iteration:
 * couplings = row-softmax of the agreement accumulator, output capsules =
 * squash of the coupling-weighted vote sums, accumulator += <vote, output>.
 * The accumulator starts from the learned priors and is a per-pass working
 * value; the priors themselves are only changed by the optimizer. Returned
 * couplings/output are the ones of the final iteration.
 *
 * Gradients flow through all r unrolled iterations. With detach_couplings the
 * couplings are treated as constants in the weighted sums (ablation, and the
 * assumption under which the chain-rule identities of the gradient analysis
 * are stated), which cuts every gradient path into the accumulator.
 */
RoutingResult rba_route(Var votes, Var priors, int r, bool detach_couplings = false);

// Fixed couplings 1/n_u; identical to rba_route with zero priors and r=1.
RoutingResult uniform_route(Var votes);

struct CapsuleLayerOut {
  Var caps;       // [n_u x d_u]
  Var couplings;  // [n_l x n_u]
  Var votes;      // [n_l x n_u x d_u]
};

CapsuleLayerOut capsule_layer_forward(Var U, Var W, Var priors, int r, RoutingMode mode,
                                      bool detach_couplings = false);

}  // namespace caps

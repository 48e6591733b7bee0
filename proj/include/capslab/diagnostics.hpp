#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capslab/datasets.hpp"
#include "capslab/network.hpp"

namespace caps {

/**
 * Per-sample activations and couplings of a model over a dataset, the raw
 * material for every dataset-level statistic below. norms[l] is [S x n_l]
 * (row = sample, PrimeCaps first); couplings[r][s] is the [n_l x n_u]
 * coupling matrix of routing layer r for sample s.
 */
struct DatasetTrace {
  std::vector<Tensor> norms;
  std::vector<std::vector<Tensor>> couplings;

  long samples() const { return norms.empty() ? 0 : norms[0].dim(0); }
};

DatasetTrace collect_trace(const ArchitectureSpec& arch, const ModelParams& params,
                           const std::vector<Tensor>& images);

/**
 * Activation/death statistics of one capsule layer over a dataset:
 *   cnm  mean capsule norm over samples x capsules
 *   cns  sum over capsules of per-capsule mean norm ( = n * cnm )
 *   cas  mean over samples of the count of capsules with norm >= tau_act
 *   car  cas / n
 *   cds  number of dead capsules (max norm over the dataset < tau_dead)
 *   cdr  cds / n
 */
struct LayerStats {
  long layer = 0;
  long n = 0;
  double cnm = 0, cns = 0, car = 0, cas = 0, cdr = 0;
  long cds = 0;
  std::vector<char> dead;  // per-capsule death mask
};

std::vector<LayerStats> layer_statistics(const DatasetTrace& trace, double tau_act,
                                         double tau_dead);
void write_layer_stats_csv(const std::vector<LayerStats>& stats, const std::string& path);

/**
 * How input-dependent the couplings of one routing layer are. For each alive
 * lower capsule i, dynamics_i is the mean over samples of the L1 distance
 * between its coupling row and that row's dataset mean; dys sums dynamics_i
 * over alive lower capsules and dyr = dys / alive_to_higher. Zero dyr means a
 * static routing tree. Capsules count as alive by the tau_dead max-norm rule.
 */
struct DynamicsStats {
  long routing_layer = 0;
  double dys = 0, dyr = 0;
  long alive_from_lower = 0, alive_to_higher = 0;
  std::vector<double> dynamics;  // per lower capsule, 0 for dead ones
};

std::vector<DynamicsStats> routing_dynamics(const DatasetTrace& trace, double tau_dead);
void write_dynamics_csv(const std::vector<DynamicsStats>& stats, const std::string& path);

// Single-input parse tree: capsule norms as nodes, couplings as fuzzy edges.
struct ParseTree {
  std::vector<Tensor> norms;      // per layer [n_l]
  std::vector<Tensor> couplings;  // per routing layer [n_l x n_u]
};

ParseTree extract_parse_tree(const ForwardTrace& trace);
void write_parse_tree_json(const ParseTree& tree, const std::string& path);

// Dataset-level parse-tree statistics: mean/std of norms and couplings plus
// the dead-capsule masks.
struct DatasetParseStats {
  std::vector<Tensor> norm_mean, norm_std;          // per layer [n_l]
  std::vector<Tensor> coupling_mean, coupling_std;  // per routing layer [n_l x n_u]
  std::vector<std::vector<char>> dead;              // per layer
};

DatasetParseStats dataset_parse_stats(const DatasetTrace& trace, double tau_dead);
void write_parse_stats_json(const DatasetParseStats& stats, const std::string& path);

// ---------------------------------------------------------------------------
// viewpoint sweeps

enum class SweepKind { rotation, shear, scale, translate_x, translate_y };
const char* sweep_kind_name(SweepKind k);
SweepKind sweep_kind_from_name(const std::string& name);  // throws on unknown

struct SweepPoint {
  double magnitude = 0;
  double mean_correlation = 0, std_correlation = 0;
  long valid = 0;      // samples with a defined correlation
  long undefined = 0;  // zero-variance samples, excluded from the mean
};

/**
 * Applies one transform family at each magnitude to every image and reports
 * the per-magnitude mean/std of the Pearson correlation between the original
 * and transformed capsule-norm vectors. Magnitudes are degrees (rotation and
 * shear), offset from scale factor 1 (scale), or pixels (translations), so 0
 * is always the identity and yields correlation exactly 1. primecaps_only
 * selects layer 0 only; otherwise every layer but the last is concatenated.
 */
std::vector<SweepPoint> viewpoint_sweep(const ArchitectureSpec& arch, const ModelParams& params,
                                        const std::vector<Tensor>& images, SweepKind kind,
                                        const std::vector<double>& magnitudes,
                                        bool primecaps_only = true);
void write_sweep_csv(SweepKind kind, const std::vector<SweepPoint>& points,
                     const std::string& path);

// Pearson correlation; *defined is false when either input has zero variance
// (the value is then 0 and must not be used). Bitwise-equal inputs give 1.0.
double pearson(const std::vector<double>& x, const std::vector<double>& y, bool* defined);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// ---------------------------------------------------------------------------
// gradient-identity harnesses

// Tape gradients of the margin loss w.r.t. output capsules vs the closed form
// (-t max(0,m+-|u|) + lambda (1-t) max(0,|u|-m-)) * 2u/|u|, per sample.
struct Theorem1Report {
  long checked = 0, skipped_singular = 0;
  double max_rel_err = 0;
  bool pass = false;  // max_rel_err < 1e-8 over all checked capsules
};

Theorem1Report verify_theorem1(const ArchitectureSpec& arch, const ModelParams& params,
                               const std::vector<Tensor>& images,
                               const std::vector<int>& targets);

/**
 * One random routing layer (couplings treated as constants) checked against
 * straight-line reconstructions of the chain rule:
 *   dL/du_i = sum_j (dL/dvote_ij) . W_ji        (input identity)
 *   dL/dW_ji = (dL/dvote_ij) outer u_i          (weight identity)
 * plus the exact zero cases (zero input row => zero weight gradient; zero
 * weight block => zero input gradient) and the activation-scaling law
 * (doubling u_i doubles dL/dW_ji exactly under a fixed upstream gradient).
 */
struct Theorem2Report {
  double input_identity_err = 0, weight_identity_err = 0;
  double zero_activation_resid = 0, zero_weight_resid = 0;  // must be exactly 0
  double scaling_resid = 0;                                 // must be exactly 0
  bool pass = false;
};

Theorem2Report verify_theorem2(long n_l, long n_u, long d_l, long d_u, int r,
                               std::uint64_t seed);

// ---------------------------------------------------------------------------
// starvation tracking

struct CapsuleDeath {
  long layer = 0, capsule = 0;
  long step = 0;        // first step the per-batch max norm fell below tau_dead
  bool persistent = true;  // never rose to tau_dead or above afterwards
};

struct StarvationTimeline {
  std::vector<CapsuleDeath> deaths;
  long steps_observed = 0;
  bool all_persistent() const;
  long deaths_in_layer(long layer) const;
};

// Consumes the per-step per-capsule batch-max norms emitted by the training
// hook and reports each capsule's first death and whether it ever revived.
class StarvationTracker {
 public:
  explicit StarvationTracker(double tau_dead);
  // matches TrainOptions::step_hook
  void observe(long step, const std::vector<Tensor>& max_norms);
  StarvationTimeline timeline() const;

 private:
  double tau_dead_;
  long steps_ = 0;
  std::vector<std::vector<long>> death_step_;  // per layer/capsule, -1 = alive
  std::vector<std::vector<char>> revived_;
};

void write_starvation_csv(const StarvationTimeline& timeline, const std::string& path);

}  // namespace caps

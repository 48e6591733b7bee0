#pragma once

#include <string>
#include <vector>

#include "capslab/rng.hpp"
#include "capslab/tensor.hpp"

namespace caps {

// One routing transition: n_l capsules of width d_l feeding n_u of width d_u.
struct LayerShape {
  long n_l, n_u, d_l, d_u;
  void validate() const;  // all >= 1
};

/**
 * Exact storage counts of one routing layer.
 *   params         transformation matrices plus coupling logits:
 *                  n_l*n_u*d_l*d_u + n_l*n_u
 *   intermediates  everything a forward pass materializes: votes, routed
 *                  output before and after the squash, couplings, inputs:
 *                  n_l*n_u*d_u + 2*n_u*d_u + n_l*n_u + n_l*d_l
 */
struct RoutingCounts {
  long params = 0;
  long intermediates = 0;
};

RoutingCounts routing_param_count(const LayerShape& shape);

// ---------------------------------------------------------------------------
// routing-layer parameter table for the two-conv original backbone

/**
 * One table row: a dataset-sized input pushed through Conv(256,9x9,s1) then
 * Conv(256,9x9,s2), with the 256-channel feature map split into PrimeCaps of
 * width primecaps_dim. The output layer has `classes` capsules.
 */
struct TableRow {
  std::string name;
  long classes;
  long in_h, in_w, in_ch;
  long primecaps_dim;
};

// PrimeCaps count of the original backbone: grid_h * grid_w * 256 / dim with
// grid side (s - 17) / 2 + 1. Throws if the convolutions no longer fit or the
// capsule width does not divide 256.
long original_primecaps_count(long in_h, long in_w, long primecaps_dim);

// The five canonical rows (MNIST through ImageNet-sized inputs) and the four
// standard output-capsule widths of the reference table.
std::vector<TableRow> canonical_table_rows();
std::vector<long> canonical_output_dims();  // {16, 32, 64, 128}

// Routing parameters of one table cell, exact and in printed form (millions
// rounded to one decimal).
long table_cell_params(const TableRow& row, long out_dim);
double table_cell_millions(const TableRow& row, long out_dim);

std::string render_param_table(const std::vector<TableRow>& rows,
                               const std::vector<long>& dims);
void write_param_table_csv(const std::vector<TableRow>& rows, const std::vector<long>& dims,
                           const std::string& path);

// ---------------------------------------------------------------------------
// reference multi-head self-attention forward pass

struct MhsaParams {
  Tensor W_qkv;  // [d x 3d], column blocks Q | K | V
  Tensor W_msa;  // [d x d]
};

MhsaParams init_mhsa(long d, Rng& rng);
long mhsa_param_count(long d);  // 4 * d^2

/**
 * Plain encoder attention on a token matrix U [n x d]: project to queries,
 * keys and values, per head soften the scaled dot-product logits row-wise,
 * average the values, concatenate the heads and mix them with W_msa.
 * Forward-only; d must be divisible by `heads`.
 */
Tensor mhsa_forward(const Tensor& U, int heads, const MhsaParams& p);

// ---------------------------------------------------------------------------
// wall-time scaling benchmarks

enum class BenchOp { rba, mhsa };
enum class BenchAxis { n, d };
const char* bench_op_name(BenchOp op);
const char* bench_axis_name(BenchAxis axis);

struct BenchResult {
  long n = 0, d = 0;
  double seconds = 0;    // median wall time of one forward pass
  long reps = 0;         // measurements the median is taken over (>= 5)
  long inner = 0;        // consecutive passes per measurement (timer floor)
  long param_bytes = 0;  // parameter memory of the op at this size
  long peak_bytes = 0;   // live-tensor high-water mark during one pass
};

// Times one configuration. For rba, n capsules of width d route into n
// capsules of width d; for mhsa, n tokens of width d pass through one
// attention block. Repetitions grow automatically until a single measurement
// is comfortably above the clock resolution.
BenchResult benchmark_one(BenchOp op, long n, long d, int routing_iters = 3, int heads = 1,
                          long min_reps = 5);

// Least-squares slope of log(time) against log(size).
double fit_loglog_slope(const std::vector<double>& sizes, const std::vector<double>& times);

struct ScalingSweep {
  BenchOp op = BenchOp::rba;
  BenchAxis axis = BenchAxis::n;
  long fixed = 0;  // the size held constant on the other axis
  std::vector<BenchResult> results;
  double time_exponent = 0;          // fitted log-log slope along the axis
  bool param_bytes_constant = true;  // parameter memory identical across sizes
};

// Sweeps `sizes` along one axis with the other held at `fixed` and fits the
// time exponent. Requires at least 3 distinct sizes.
ScalingSweep benchmark_scaling(BenchOp op, BenchAxis axis, const std::vector<long>& sizes,
                               long fixed, int routing_iters = 3, int heads = 1);

void write_bench_csv(const std::vector<ScalingSweep>& sweeps, const std::string& path);
std::string render_scaling_summary(const std::vector<ScalingSweep>& sweeps);

}  // namespace caps

#include "capslab/complexity.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include <Eigen/Core>

#include "capslab/capsule.hpp"
#include "capslab/tape.hpp"

namespace caps {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MMap = Eigen::Map<Mat>;
using CMMap = Eigen::Map<const Mat>;

std::ofstream open_out(const std::string& path, const char* who) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(std::string(who) + ": cannot open " + path);
  return out;
}

}  // namespace

void LayerShape::validate() const {
  if (n_l < 1 || n_u < 1 || d_l < 1 || d_u < 1) {
    throw std::runtime_error("LayerShape: all sizes must be >= 1");
  }
}

RoutingCounts routing_param_count(const LayerShape& s) {
  s.validate();
  RoutingCounts c;
  c.params = s.n_l * s.n_u * s.d_l * s.d_u + s.n_l * s.n_u;
  c.intermediates = s.n_l * s.n_u * s.d_u + 2 * s.n_u * s.d_u + s.n_l * s.n_u + s.n_l * s.d_l;
  return c;
}

// ---------------------------------------------------------------------------
// parameter table

namespace {

long conv_side(long s, long k, long stride) {
  if (s < k) throw std::runtime_error("original_primecaps_count: input too small for two 9x9 convs");
  return (s - k) / stride + 1;
}

}  // namespace

long original_primecaps_count(long in_h, long in_w, long primecaps_dim) {
  if (primecaps_dim < 1 || 256 % primecaps_dim != 0) {
    throw std::runtime_error("original_primecaps_count: capsule width must divide 256");
  }
  long h = conv_side(conv_side(in_h, 9, 1), 9, 2);
  long w = conv_side(conv_side(in_w, 9, 1), 9, 2);
  return h * w * (256 / primecaps_dim);
}

std::vector<TableRow> canonical_table_rows() {
  return {
      {"MNIST", 10, 28, 28, 1, 8},
      {"AFFNIST", 10, 40, 40, 1, 8},
      {"CIFAR10", 10, 32, 32, 3, 8},
      {"TinyImageNet", 200, 64, 64, 3, 64},
      {"ImageNet", 1000, 224, 224, 3, 128},
  };
}

std::vector<long> canonical_output_dims() { return {16, 32, 64, 128}; }

long table_cell_params(const TableRow& row, long out_dim) {
  long n1 = original_primecaps_count(row.in_h, row.in_w, row.primecaps_dim);
  LayerShape shape{n1, row.classes, row.primecaps_dim, out_dim};
  return routing_param_count(shape).params;
}

double table_cell_millions(const TableRow& row, long out_dim) {
  return std::round((double)table_cell_params(row, out_dim) / 1e6 * 10.0) / 10.0;
}

std::string render_param_table(const std::vector<TableRow>& rows,
                               const std::vector<long>& dims) {
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-14s %8s |", "dataset", "classes");
  out << buf;
  for (long d : dims) {
    std::snprintf(buf, sizeof buf, " %10ld", d);
    out << buf;
  }
  out << "\n";
  for (const TableRow& row : rows) {
    std::snprintf(buf, sizeof buf, "%-14s %8ld |", row.name.c_str(), row.classes);
    out << buf;
    for (long d : dims) {
      std::snprintf(buf, sizeof buf, " %10.1f", table_cell_millions(row, d));
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

void write_param_table_csv(const std::vector<TableRow>& rows, const std::vector<long>& dims,
                           const std::string& path) {
  std::ofstream out = open_out(path, "write_param_table_csv");
  out << "dataset,classes,in_h,in_w,primecaps,primecaps_dim";
  for (long d : dims) out << ",millions_dim" << d;
  out << "\n";
  for (const TableRow& row : rows) {
    out << row.name << ',' << row.classes << ',' << row.in_h << ',' << row.in_w << ','
        << original_primecaps_count(row.in_h, row.in_w, row.primecaps_dim) << ','
        << row.primecaps_dim;
    char buf[32];
    for (long d : dims) {
      std::snprintf(buf, sizeof buf, ",%.1f", table_cell_millions(row, d));
      out << buf;
    }
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// reference attention

MhsaParams init_mhsa(long d, Rng& rng) {
  if (d < 1) throw std::runtime_error("init_mhsa: width must be >= 1");
  MhsaParams p;
  p.W_qkv = Tensor({d, 3 * d});
  p.W_msa = Tensor({d, d});
  double sd = 1.0 / std::sqrt((double)d);
  for (long i = 0; i < p.W_qkv.numel(); ++i) p.W_qkv[i] = rng.normal(0.0, sd);
  for (long i = 0; i < p.W_msa.numel(); ++i) p.W_msa[i] = rng.normal(0.0, sd);
  return p;
}

long mhsa_param_count(long d) { return 4 * d * d; }

Tensor mhsa_forward(const Tensor& U, int heads, const MhsaParams& p) {
  if (U.rank() != 2) throw std::runtime_error("mhsa_forward: tokens must be [n x d]");
  long n = U.dim(0), d = U.dim(1);
  if (heads < 1 || d % heads != 0) {
    throw std::runtime_error("mhsa_forward: width must be divisible by the head count");
  }
  if (p.W_qkv.shape != shape_t{d, 3 * d} || p.W_msa.shape != shape_t{d, d}) {
    throw std::runtime_error("mhsa_forward: parameter shapes do not match the tokens");
  }
  long dh = d / heads;

  Tensor qkv({n, 3 * d});
  MMap(qkv.ptr(), n, 3 * d).noalias() =
      CMMap(U.ptr(), n, d) * CMMap(p.W_qkv.ptr(), d, 3 * d);
  CMMap Qkv(qkv.ptr(), n, 3 * d);

  Tensor sa({n, d});
  for (long h = 0; h < heads; ++h) {
    auto Q = Qkv.block(0, h * dh, n, dh);
    auto K = Qkv.block(0, d + h * dh, n, dh);
    auto V = Qkv.block(0, 2 * d + h * dh, n, dh);
    Mat logits = Q * K.transpose() / std::sqrt((double)dh);
    Eigen::VectorXd rowmax = logits.rowwise().maxCoeff();
    Mat weights = (logits.colwise() - rowmax).array().exp().matrix();
    for (long i = 0; i < n; ++i) weights.row(i) /= weights.row(i).sum();
    MMap(sa.ptr(), n, d).block(0, h * dh, n, dh).noalias() = weights * V;
  }

  Tensor out({n, d});
  MMap(out.ptr(), n, d).noalias() = CMMap(sa.ptr(), n, d) * CMMap(p.W_msa.ptr(), d, d);
  ensure_finite(out, "mhsa_forward");
  return out;
}

// ---------------------------------------------------------------------------
// benchmarks

const char* bench_op_name(BenchOp op) { return op == BenchOp::rba ? "rba" : "mhsa"; }
const char* bench_axis_name(BenchAxis axis) { return axis == BenchAxis::n ? "n" : "d"; }

namespace {

double now_call(const std::function<void()>& fn, long inner) {
  auto t0 = std::chrono::steady_clock::now();
  for (long i = 0; i < inner; ++i) fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

BenchResult time_op(const std::function<void()>& fn, long min_reps) {
  BenchResult res;
  res.reps = std::max(min_reps, 5L);

  // auxiliary-allocation high-water mark of one un-timed pass
  long before = alloc_stats::current_bytes();
  alloc_stats::reset_peak();
  fn();
  res.peak_bytes = alloc_stats::peak_bytes() - before;

  // grow the batch until one measurement is well above the clock resolution
  res.inner = 1;
  while (now_call(fn, res.inner) < 50e-6) res.inner *= 2;

  std::vector<double> times;
  for (long k = 0; k < res.reps; ++k) times.push_back(now_call(fn, res.inner) / (double)res.inner);
  std::sort(times.begin(), times.end());
  res.seconds = times[times.size() / 2];
  return res;
}

}  // namespace

BenchResult benchmark_one(BenchOp op, long n, long d, int routing_iters, int heads,
                          long min_reps) {
  if (n < 1 || d < 1) throw std::runtime_error("benchmark_one: sizes must be >= 1");
  Rng rng(0x9e3779b9u ^ (std::uint64_t)(n * 131 + d));
  BenchResult res;

  if (op == BenchOp::rba) {
    Tensor U({n, d}), W({n, n, d, d}), priors({n, n});
    for (long i = 0; i < U.numel(); ++i) U[i] = rng.uniform(-1, 1);
    double sd = 1.0 / std::sqrt((double)d);
    for (long i = 0; i < W.numel(); ++i) W[i] = rng.normal(0.0, sd);
    // inputs registered by pointer, as the model forward pass does; copying W
    // into the tape would bill an O(n^2 d^2) memcpy to the routing op
    auto fn = [&]() {
      Tape tape;
      tape.recording = false;
      capsule_layer_forward(tape.param(&U, nullptr, "U"), tape.param(&W, nullptr, "W"),
                            tape.param(&priors, nullptr, "priors"), routing_iters,
                            RoutingMode::rba);
    };
    res = time_op(fn, min_reps);
    res.param_bytes = (long)sizeof(double) * (n * n * d * d + n * n);
  } else {
    Tensor U({n, d});
    for (long i = 0; i < U.numel(); ++i) U[i] = rng.uniform(-1, 1);
    MhsaParams p = init_mhsa(d, rng);
    auto fn = [&]() { mhsa_forward(U, heads, p); };
    res = time_op(fn, min_reps);
    res.param_bytes = (long)sizeof(double) * mhsa_param_count(d);
  }
  res.n = n;
  res.d = d;
  return res;
}

double fit_loglog_slope(const std::vector<double>& sizes, const std::vector<double>& times) {
  if (sizes.size() != times.size() || sizes.size() < 2) {
    throw std::runtime_error("fit_loglog_slope: need two equal-length series of size >= 2");
  }
  double mx = 0, my = 0;
  std::vector<double> xs, ys;
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] <= 0 || times[i] <= 0) {
      throw std::runtime_error("fit_loglog_slope: sizes and times must be positive");
    }
    xs.push_back(std::log(sizes[i]));
    ys.push_back(std::log(times[i]));
    mx += xs.back();
    my += ys.back();
  }
  mx /= (double)xs.size();
  my /= (double)ys.size();
  double sxx = 0, sxy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx == 0.0) throw std::runtime_error("fit_loglog_slope: sizes must not be constant");
  return sxy / sxx;
}

ScalingSweep benchmark_scaling(BenchOp op, BenchAxis axis, const std::vector<long>& sizes,
                               long fixed, int routing_iters, int heads) {
  std::vector<long> distinct = sizes;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3) {
    throw std::runtime_error("benchmark_scaling: need at least 3 distinct sizes");
  }

  ScalingSweep sweep;
  sweep.op = op;
  sweep.axis = axis;
  sweep.fixed = fixed;
  std::vector<double> xs, ts;
  for (long s : sizes) {
    long n = axis == BenchAxis::n ? s : fixed;
    long d = axis == BenchAxis::d ? s : fixed;
    BenchResult r = benchmark_one(op, n, d, routing_iters, heads);
    xs.push_back((double)s);
    ts.push_back(r.seconds);
    if (!sweep.results.empty() && r.param_bytes != sweep.results.back().param_bytes) {
      sweep.param_bytes_constant = false;
    }
    sweep.results.push_back(r);
  }
  sweep.time_exponent = fit_loglog_slope(xs, ts);
  return sweep;
}

void write_bench_csv(const std::vector<ScalingSweep>& sweeps, const std::string& path) {
  std::ofstream out = open_out(path, "write_bench_csv");
  out << "op,axis,fixed,n,d,seconds,reps,inner,param_bytes,peak_bytes,exponent\n";
  char buf[64];
  for (const ScalingSweep& sw : sweeps) {
    for (const BenchResult& r : sw.results) {
      std::snprintf(buf, sizeof buf, "%.9g", r.seconds);
      out << bench_op_name(sw.op) << ',' << bench_axis_name(sw.axis) << ',' << sw.fixed << ','
          << r.n << ',' << r.d << ',' << buf << ',' << r.reps << ',' << r.inner << ','
          << r.param_bytes << ',' << r.peak_bytes << ',';
      std::snprintf(buf, sizeof buf, "%.4f", sw.time_exponent);
      out << buf << "\n";
    }
  }
}

std::string render_scaling_summary(const std::vector<ScalingSweep>& sweeps) {
  std::ostringstream out;
  out << "op    axis  fixed  exponent  param-memory\n";
  char buf[80];
  for (const ScalingSweep& sw : sweeps) {
    std::snprintf(buf, sizeof buf, "%-5s %-5s %-6ld %8.3f  %s\n", bench_op_name(sw.op),
                  bench_axis_name(sw.axis), sw.fixed, sw.time_exponent,
                  sw.param_bytes_constant ? "constant" : "grows");
    out << buf;
  }
  return out.str();
}

}  // namespace caps

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace caps {

using shape_t = std::vector<long>;

long shape_numel(const shape_t& s);
std::string shape_str(const shape_t& s);

// Live-tensor byte accounting, used by the benchmark module to report the
// auxiliary-allocation high-water mark of a timed region.
struct alloc_stats {
  static long current_bytes();
  static long peak_bytes();
  static void reset_peak();
};

// Dense row-major tensor of doubles. Values are immutable by convention once
// an op has produced them; ops validate their outputs with ensure_finite so a
// NaN/Inf surfaces at the op that created it instead of three modules later.
class Tensor {
 public:
  shape_t shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(shape_t s);
  Tensor(shape_t s, std::vector<double> d);
  Tensor(const Tensor& o);
  Tensor(Tensor&& o) noexcept;
  Tensor& operator=(const Tensor& o);
  Tensor& operator=(Tensor&& o) noexcept;
  ~Tensor();

  static Tensor full(shape_t s, double v);
  static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape); }

  long numel() const { return (long)data.size(); }
  int rank() const { return (int)shape.size(); }
  long dim(int i) const { return shape[(size_t)i]; }
  bool empty() const { return data.empty(); }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  double operator[](long i) const { return data[(size_t)i]; }
  double& operator[](long i) { return data[(size_t)i]; }

  // multi-index accessors (no bounds checks in release builds)
  double& at(long i, long j) { return data[(size_t)(i * shape[1] + j)]; }
  double at(long i, long j) const { return data[(size_t)(i * shape[1] + j)]; }
  double& at(long i, long j, long k) {
    return data[(size_t)((i * shape[1] + j) * shape[2] + k)];
  }
  double at(long i, long j, long k) const {
    return data[(size_t)((i * shape[1] + j) * shape[2] + k)];
  }
  double& at(long i, long j, long k, long l) {
    return data[(size_t)(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }
  double at(long i, long j, long k, long l) const {
    return data[(size_t)(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }

  void fill(double v);
  double sum() const;
  double l2_norm() const;
  double max_abs() const;

 private:
  long tracked_ = 0;
  void track_alloc();
  void track_free();
};

bool same_shape(const Tensor& a, const Tensor& b);

// throws std::runtime_error naming `op` if any element is NaN/Inf
void ensure_finite(const Tensor& t, const char* op);
bool all_finite(const Tensor& t);

}  // namespace caps

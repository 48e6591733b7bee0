#include "capslab/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace caps {

namespace {
long g_current_bytes = 0;
long g_peak_bytes = 0;
}  // namespace

long alloc_stats::current_bytes() { return g_current_bytes; }
long alloc_stats::peak_bytes() { return g_peak_bytes; }
void alloc_stats::reset_peak() { g_peak_bytes = g_current_bytes; }

long shape_numel(const shape_t& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

std::string shape_str(const shape_t& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

void Tensor::track_alloc() {
  tracked_ = (long)data.size() * (long)sizeof(double);
  g_current_bytes += tracked_;
  if (g_current_bytes > g_peak_bytes) g_peak_bytes = g_current_bytes;
}

void Tensor::track_free() {
  g_current_bytes -= tracked_;
  tracked_ = 0;
}

Tensor::Tensor(shape_t s) : shape(std::move(s)) {
  for (long d : shape) {
    if (d <= 0) throw std::runtime_error("Tensor: non-positive dimension in " + shape_str(shape));
  }
  data.assign((size_t)shape_numel(shape), 0.0);
  track_alloc();
}

Tensor::Tensor(shape_t s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != (long)data.size()) {
    throw std::runtime_error("Tensor: shape " + shape_str(shape) + " does not match data length " +
                             std::to_string(data.size()));
  }
  track_alloc();
}

Tensor::Tensor(const Tensor& o) : shape(o.shape), data(o.data) { track_alloc(); }

Tensor::Tensor(Tensor&& o) noexcept : shape(std::move(o.shape)), data(std::move(o.data)) {
  tracked_ = o.tracked_;
  o.tracked_ = 0;
}

Tensor& Tensor::operator=(const Tensor& o) {
  if (this != &o) {
    track_free();
    shape = o.shape;
    data = o.data;
    track_alloc();
  }
  return *this;
}

Tensor& Tensor::operator=(Tensor&& o) noexcept {
  if (this != &o) {
    track_free();
    shape = std::move(o.shape);
    data = std::move(o.data);
    tracked_ = o.tracked_;
    o.tracked_ = 0;
  }
  return *this;
}

Tensor::~Tensor() { track_free(); }

Tensor Tensor::full(shape_t s, double v) {
  Tensor t(std::move(s));
  t.fill(v);
  return t;
}

void Tensor::fill(double v) {
  for (double& x : data) x = v;
}

double Tensor::sum() const {
  double s = 0;
  for (double x : data) s += x;
  return s;
}

double Tensor::l2_norm() const {
  double s = 0;
  for (double x : data) s += x * x;
  return std::sqrt(s);
}

double Tensor::max_abs() const {
  double m = 0;
  for (double x : data) {
    double a = std::fabs(x);
    if (a > m) m = a;
  }
  return m;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

bool all_finite(const Tensor& t) {
  for (double x : t.data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void ensure_finite(const Tensor& t, const char* op) {
  if (!all_finite(t)) {
    throw std::runtime_error(std::string("non-finite value produced by op '") + op + "' with shape " +
                             shape_str(t.shape));
  }
}

}  // namespace caps

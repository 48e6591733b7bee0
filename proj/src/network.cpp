#include "capslab/network.hpp"

#include <cmath>
#include <stdexcept>

namespace caps {

const char* backbone_name(BackboneKind k) {
  switch (k) {
    case BackboneKind::affnist: return "affnist";
    case BackboneKind::cifar10: return "cifar10";
    case BackboneKind::original_mnist: return "original-mnist";
    case BackboneKind::tiny: return "tiny";
  }
  return "?";
}

BackboneKind backbone_from_name(const std::string& name) {
  if (name == "affnist") return BackboneKind::affnist;
  if (name == "cifar10") return BackboneKind::cifar10;
  if (name == "original-mnist") return BackboneKind::original_mnist;
  if (name == "tiny") return BackboneKind::tiny;
  throw std::runtime_error("unknown backbone variant '" + name + "'");
}

ArchitectureSpec ArchitectureSpec::preset(BackboneKind kind) {
  ArchitectureSpec s;
  s.backbone = kind;
  switch (kind) {
    case BackboneKind::affnist:
      break;  // defaults
    case BackboneKind::cifar10:
      s.in_ch = 3;
      s.in_h = s.in_w = 32;
      break;
    case BackboneKind::original_mnist:
      s.in_ch = 1;
      s.in_h = s.in_w = 28;
      s.dim = 8;
      s.class_dim = 16;
      s.routing_iters = 3;
      break;
    case BackboneKind::tiny:
      s.in_ch = 1;
      s.in_h = s.in_w = 8;
      s.caps = 4;
      s.dim = 4;
      s.class_dim = 4;
      s.num_classes = 2;
      s.routing_layers = 2;
      s.routing_iters = 2;
      s.dec_h1 = 16;
      s.dec_h2 = 32;
      break;
  }
  return s;
}

void ArchitectureSpec::validate() const {
  if (in_ch < 1 || in_h < 1 || in_w < 1) throw std::runtime_error("ArchitectureSpec: bad input shape");
  if (routing_layers < 1) throw std::runtime_error("ArchitectureSpec: need at least one routing layer");
  if (caps < 1 || dim < 1 || class_dim < 1) throw std::runtime_error("ArchitectureSpec: capsule sizes must be positive");
  if (num_classes < 2) throw std::runtime_error("ArchitectureSpec: need at least two classes");
  if (routing_iters < 1) throw std::runtime_error("ArchitectureSpec: routing iterations must be >= 1");
  if (backbone == BackboneKind::original_mnist && 256 % dim != 0) {
    throw std::runtime_error("ArchitectureSpec: original-mnist capsule dim must divide 256");
  }
  if (dec_h1 < 1 || dec_h2 < 1) throw std::runtime_error("ArchitectureSpec: decoder widths must be positive");
  primecaps_shape(*this);  // throws on spatial underflow
}

std::vector<long> ArchitectureSpec::layer_caps_counts() const {
  PrimeCapsShape pc = primecaps_shape(*this);
  std::vector<long> out;
  out.push_back(pc.n1);
  for (int l = 1; l < routing_layers; ++l) out.push_back(caps);
  out.push_back(num_classes);
  return out;
}

std::vector<long> ArchitectureSpec::layer_caps_dims() const {
  PrimeCapsShape pc = primecaps_shape(*this);
  std::vector<long> out;
  out.push_back(pc.d1);
  for (int l = 1; l < routing_layers; ++l) out.push_back(dim);
  out.push_back(class_dim);
  return out;
}

std::vector<ConvSpec> backbone_layers(const ArchitectureSpec& spec) {
  int nd = spec.caps * spec.dim;
  switch (spec.backbone) {
    case BackboneKind::affnist:
      return {{32, 7, 1, 1, true},
              {64, 3, 1, 1, true},
              {64, 3, 2, 1, true},
              {nd, 3, 2, 1, true},
              {nd, 7, 1, nd, false}};
    case BackboneKind::cifar10:
      return {{32, 7, 1, 1, true},
              {64, 3, 1, 1, true},
              {128, 3, 2, 1, true},
              {nd, 3, 2, 1, true},
              {nd, 5, 1, nd, false}};
    case BackboneKind::original_mnist:
      return {{256, 9, 1, 1, true}, {256, 9, 2, 1, true}};
    case BackboneKind::tiny:
      return {{8, 3, 1, 1, true}, {nd, 3, 2, 1, true}, {nd, 2, 1, nd, false}};
  }
  throw std::runtime_error("backbone_layers: unreachable");
}

PrimeCapsShape primecaps_shape(const ArchitectureSpec& spec) {
  long h = spec.in_h, w = spec.in_w;
  for (const ConvSpec& c : backbone_layers(spec)) {
    if (c.k > h || c.k > w) {
      throw std::runtime_error("backbone: " + std::to_string(c.k) + "x" + std::to_string(c.k) +
                               " kernel does not fit feature map " + std::to_string(h) + "x" +
                               std::to_string(w) + " (input too small for the " +
                               std::string(backbone_name(spec.backbone)) + " variant)");
    }
    h = (h - c.k) / c.stride + 1;
    w = (w - c.k) / c.stride + 1;
  }
  long channels = backbone_layers(spec).back().out_ch;
  long d1 = spec.dim;
  long groups = channels / d1;
  return PrimeCapsShape{groups * h * w, d1, h, w};
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::entries() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (size_t i = 0; i < conv_kernels.size(); ++i) {
    out.emplace_back("backbone.conv" + std::to_string(i + 1) + ".kernel", &conv_kernels[i]);
    out.emplace_back("backbone.conv" + std::to_string(i + 1) + ".bias", &conv_biases[i]);
  }
  for (size_t i = 0; i < routing_W.size(); ++i) {
    out.emplace_back("routing." + std::to_string(i + 1) + ".W", &routing_W[i]);
    out.emplace_back("routing." + std::to_string(i + 1) + ".priors", &routing_priors[i]);
  }
  for (size_t i = 0; i < dec_W.size(); ++i) {
    out.emplace_back("decoder.fc" + std::to_string(i + 1) + ".W", &dec_W[i]);
    out.emplace_back("decoder.fc" + std::to_string(i + 1) + ".bias", &dec_b[i]);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::entries() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<ModelParams*>(this)->entries()) out.emplace_back(name, t);
  return out;
}

long ModelParams::total_params() const {
  long n = 0;
  for (auto& [name, t] : entries()) n += t->numel();
  return n;
}

ModelParams init_params(const ArchitectureSpec& spec, Rng& rng) {
  spec.validate();
  ModelParams p;
  long in_ch = spec.in_ch;
  for (const ConvSpec& c : backbone_layers(spec)) {
    long cing = in_ch / c.groups;
    Tensor k({(long)c.out_ch, cing, (long)c.k, (long)c.k});
    double bound = std::sqrt(6.0 / (double)(cing * c.k * c.k));
    for (long i = 0; i < k.numel(); ++i) k[i] = rng.uniform(-bound, bound);
    p.conv_kernels.push_back(std::move(k));
    p.conv_biases.emplace_back(shape_t{(long)c.out_ch});
    in_ch = c.out_ch;
  }
  std::vector<long> ns = spec.layer_caps_counts();
  std::vector<long> ds = spec.layer_caps_dims();
  for (size_t l = 0; l + 1 < ns.size(); ++l) {
    Tensor W({ns[l + 1], ns[l], ds[l + 1], ds[l]});
    // coupling-averaged vote sums shrink pre-squash norms by sqrt(n_l)/n_{l+1}
    // per routing layer; without the count factor a 4-layer stack starts with
    // its deep capsules below the starvation threshold at step 0. Full norm
    // preservation overshoots the other way — once routing polarizes, unit
    // pre-squash norms saturate the squash and kill the margin gradient — so
    // aim a little below unity per layer.
    double count_gain = 0.7 * (double)ns[l + 1] / std::sqrt((double)ns[l]);
    double stddev = count_gain / std::sqrt((double)ds[l]);
    for (long i = 0; i < W.numel(); ++i) W[i] = rng.normal(0.0, stddev);
    p.routing_W.push_back(std::move(W));
    p.routing_priors.emplace_back(shape_t{ns[l], ns[l + 1]});
  }
  long dec_in = (long)spec.num_classes * spec.class_dim;
  long dec_out = (long)spec.in_ch * spec.in_h * spec.in_w;
  long sizes[4] = {dec_in, spec.dec_h1, spec.dec_h2, dec_out};
  for (int i = 0; i < 3; ++i) {
    Tensor W({sizes[i], sizes[i + 1]});
    double bound = std::sqrt(6.0 / (double)(sizes[i] + sizes[i + 1]));
    for (long j = 0; j < W.numel(); ++j) W[j] = rng.uniform(-bound, bound);
    p.dec_W.push_back(std::move(W));
    p.dec_b.emplace_back(shape_t{sizes[i + 1]});
  }
  return p;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z;
  for (auto& t : p.conv_kernels) z.conv_kernels.emplace_back(t.shape);
  for (auto& t : p.conv_biases) z.conv_biases.emplace_back(t.shape);
  for (auto& t : p.routing_W) z.routing_W.emplace_back(t.shape);
  for (auto& t : p.routing_priors) z.routing_priors.emplace_back(t.shape);
  for (auto& t : p.dec_W) z.dec_W.emplace_back(t.shape);
  for (auto& t : p.dec_b) z.dec_b.emplace_back(t.shape);
  return z;
}

namespace {

// channel-major capsule gather: feature channel k at grid (y,x) becomes entry
// (k mod d1) of capsule floor(k/d1)*grid + y*w + x
Var caps_from_features(Var x, long d1) {
  const Tensor& xv = x.val();
  long c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  long groups = c / d1;
  long n1 = groups * h * w;
  Tensor out({n1, d1});
  for (long g = 0; g < groups; ++g) {
    for (long y = 0; y < h; ++y) {
      for (long xx = 0; xx < w; ++xx) {
        double* cap = out.ptr() + (g * h * w + y * w + xx) * d1;
        for (long e = 0; e < d1; ++e) cap[e] = xv.at(g * d1 + e, y, xx);
      }
    }
  }
  int px = x.id;
  int id = x.tape->push(std::move(out), {px}, "caps_from_features",
                        [px, d1, groups, h, w](Tape& t, int self) {
    if (!t.requires_grad(px)) return;
    const Tensor& g = *t.grad(self);
    Tensor& gx = t.grad_buf(px);
    for (long gi = 0; gi < groups; ++gi) {
      for (long y = 0; y < h; ++y) {
        for (long xx = 0; xx < w; ++xx) {
          const double* cap = g.ptr() + (gi * h * w + y * w + xx) * d1;
          for (long e = 0; e < d1; ++e) gx.at(gi * d1 + e, y, xx) += cap[e];
        }
      }
    }
  });
  return Var{x.tape, id};
}

}  // namespace

ForwardTrace forward(Tape& tape, const ArchitectureSpec& spec, const ModelParams& params,
                     ModelParams* grads, const Tensor& image, int target, bool with_decoder) {
  if (image.rank() != 3 || image.dim(0) != spec.in_ch || image.dim(1) != spec.in_h ||
      image.dim(2) != spec.in_w) {
    throw std::runtime_error("forward: image shape " + shape_str(image.shape) +
                             " does not match spec input " + std::to_string(spec.in_ch) + "x" +
                             std::to_string(spec.in_h) + "x" + std::to_string(spec.in_w));
  }
  ForwardTrace trace;
  Var x = tape.leaf(image);
  std::vector<ConvSpec> convs = backbone_layers(spec);
  for (size_t i = 0; i < convs.size(); ++i) {
    Var k = tape.param(&params.conv_kernels[i], grads ? &grads->conv_kernels[i] : nullptr);
    Var b = tape.param(&params.conv_biases[i], grads ? &grads->conv_biases[i] : nullptr);
    x = conv2d(x, k, b, convs[i].stride, convs[i].groups);
    if (convs[i].relu) x = relu(x);
  }
  PrimeCapsShape pc = primecaps_shape(spec);
  Var prime = caps_from_features(x, pc.d1);
  Var u = squash_rows(prime);
  trace.caps_vars.push_back(u);
  for (size_t l = 0; l < params.routing_W.size(); ++l) {
    Var W = tape.param(&params.routing_W[l], grads ? &grads->routing_W[l] : nullptr);
    Var priors = tape.param(&params.routing_priors[l], grads ? &grads->routing_priors[l] : nullptr);
    CapsuleLayerOut out =
        capsule_layer_forward(u, W, priors, spec.routing_iters, spec.routing, spec.detach_couplings);
    trace.coupling_vars.push_back(out.couplings);
    trace.vote_vars.push_back(out.votes);
    u = out.caps;
    trace.caps_vars.push_back(u);
  }
  trace.out_caps = u;
  for (Var v : trace.caps_vars) trace.layer_caps.push_back(v.val());
  for (Var v : trace.coupling_vars) trace.couplings.push_back(v.val());
  for (Var v : trace.vote_vars) trace.votes.push_back(v.val());

  if (with_decoder) {
    long row = target >= 0 ? target : predict_from_caps(trace.layer_caps.back());
    trace.masked_row = row;
    Var masked = mask_rows(u, row);
    Var flat = reshape(masked, {(long)spec.num_classes * spec.class_dim});
    for (size_t i = 0; i < params.dec_W.size(); ++i) {
      Var W = tape.param(&params.dec_W[i], grads ? &grads->dec_W[i] : nullptr);
      Var b = tape.param(&params.dec_b[i], grads ? &grads->dec_b[i] : nullptr);
      flat = relu(linear(flat, W, b));
    }
    trace.recon = flat;
    trace.reconstruction = flat.val();
  }
  return trace;
}

Tensor mask_output_capsules(const Tensor& caps_matrix, long target) {
  long n = caps_matrix.dim(0), d = caps_matrix.dim(1);
  long row = target >= 0 ? target : predict_from_caps(caps_matrix);
  if (row < 0 || row >= n) {
    throw std::runtime_error("mask_output_capsules: row " + std::to_string(row) +
                             " out of range [0," + std::to_string(n) + ")");
  }
  Tensor out({n, d});
  for (long j = 0; j < d; ++j) out.at(row, j) = caps_matrix.at(row, j);
  return out;
}

long predict_from_caps(const Tensor& caps_matrix) {
  long n = caps_matrix.dim(0), d = caps_matrix.dim(1);
  long best = 0;
  double best_norm = -1.0;
  for (long i = 0; i < n; ++i) {
    double s = 0;
    for (long j = 0; j < d; ++j) s += caps_matrix.at(i, j) * caps_matrix.at(i, j);
    if (s > best_norm) {
      best_norm = s;
      best = i;
    }
  }
  return best;
}

long predict(const ForwardTrace& trace) { return predict_from_caps(trace.layer_caps.back()); }

}  // namespace caps

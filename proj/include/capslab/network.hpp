#pragma once

#include <string>
#include <utility>
#include <vector>

#include "capslab/capsule.hpp"
#include "capslab/rng.hpp"
#include "capslab/tape.hpp"

namespace caps {

enum class BackboneKind { affnist, cifar10, original_mnist, tiny };

const char* backbone_name(BackboneKind k);
BackboneKind backbone_from_name(const std::string& name);  // throws on unknown

/**
 * Everything needed to derive every parameter shape. `caps`/`dim` set the
 * PrimeCaps layout and the width of the intermediate capsule layers;
 * `routing_layers` is the number of routed transitions, so the network has
 * routing_layers+1 capsule layers ending in `num_classes` capsules of
 * dimension `class_dim`. For the original_mnist backbone the PrimeCaps count
 * comes from the 256-channel feature grid (dim must divide 256) and `caps` is
 * ignored.
 */
struct ArchitectureSpec {
  int in_ch = 1, in_h = 40, in_w = 40;
  BackboneKind backbone = BackboneKind::affnist;
  int routing_layers = 1;
  int caps = 16;
  int dim = 8;
  int num_classes = 10;
  int class_dim = 8;
  int routing_iters = 10;
  RoutingMode routing = RoutingMode::rba;
  bool detach_couplings = false;
  int dec_h1 = 512, dec_h2 = 1024;

  void validate() const;  // throws on inconsistent settings

  // capsule count per layer, PrimeCaps first (length routing_layers+1)
  std::vector<long> layer_caps_counts() const;
  std::vector<long> layer_caps_dims() const;

  static ArchitectureSpec preset(BackboneKind kind);
};

struct ConvSpec {
  int out_ch, k, stride, groups;
  bool relu;
};

// The convolution chain of the selected backbone; the final feature tensor
// has caps*dim channels (affnist/cifar10/tiny) or 256 (original_mnist).
std::vector<ConvSpec> backbone_layers(const ArchitectureSpec& spec);

struct PrimeCapsShape {
  long n1, d1;      // capsule count and dimension
  long grid_h, grid_w;  // spatial extent of the final feature map
};

// Traces the spatial dimensions through the conv chain; throws a
// configuration error if any kernel no longer fits.
PrimeCapsShape primecaps_shape(const ArchitectureSpec& spec);

struct ModelParams {
  std::vector<Tensor> conv_kernels, conv_biases;
  std::vector<Tensor> routing_W, routing_priors;
  std::vector<Tensor> dec_W, dec_b;

  // stable (name, tensor) enumeration; order defines checkpoint layout
  std::vector<std::pair<std::string, Tensor*>> entries();
  std::vector<std::pair<std::string, const Tensor*>> entries() const;
  long total_params() const;
};

ModelParams init_params(const ArchitectureSpec& spec, Rng& rng);
ModelParams zeros_like(const ModelParams& p);

struct ForwardTrace {
  // value copies, usable after the tape is reset
  std::vector<Tensor> layer_caps;  // PrimeCaps first, output capsules last
  std::vector<Tensor> couplings;   // one per routing layer
  std::vector<Tensor> votes;       // one per routing layer
  Tensor reconstruction;           // empty when the decoder is skipped
  long masked_row = -1;

  // tape handles (valid until tape.reset())
  Var out_caps, recon;
  std::vector<Var> caps_vars, coupling_vars, vote_vars;

  const Tensor& output_caps() const { return layer_caps.back(); }
};

/**
 * Full forward pass for one image. If `grads` is non-null the pass registers
 * every parameter with its gradient sink, so a later backward() accumulates
 * into `grads`. target >= 0 selects the masked decoder row (training); -1
 * keeps the max-norm row (inference). with_decoder=false skips masking and
 * reconstruction entirely (classification only).
 */
ForwardTrace forward(Tape& tape, const ArchitectureSpec& spec, const ModelParams& params,
                     ModelParams* grads, const Tensor& image, int target = -1,
                     bool with_decoder = true);

// Row masking on a plain capsule matrix; target -1 keeps the max-norm row
// (ties toward the lowest index).
Tensor mask_output_capsules(const Tensor& caps_matrix, long target);

long predict_from_caps(const Tensor& caps_matrix);  // argmax of row norms
long predict(const ForwardTrace& trace);

}  // namespace caps

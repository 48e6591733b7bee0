#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capslab/rng.hpp"
#include "capslab/tensor.hpp"

namespace caps {

struct ImageSet {
  std::vector<Tensor> images;  // each [C,H,W], values in [0,1]
  std::vector<int> labels;
  std::string source;  // where the data came from (paths or generator tag)

  long size() const { return (long)images.size(); }
  void validate(int num_classes) const;  // count match, label range, pixel range
};

// Big-endian IDX ingestion (magic 2051 for image files, 2049 for label files);
// pixel bytes are scaled by 1/255. Both files must agree on the record count.
ImageSet load_idx(const std::string& images_path, const std::string& labels_path);

// Writes a single-channel set back out in the same format (pixels rounded to
// the nearest byte), so generated sets are consumed exactly like downloads.
void save_idx(const ImageSet& set, const std::string& images_path,
              const std::string& labels_path);

// Copies a smaller image onto a zero canvas at the given top-left offset.
// Offsets must keep the image fully inside the canvas.
Tensor place_on_canvas(const Tensor& image, long canvas_h, long canvas_w, long off_y, long off_x);

// Uniform offsets over the valid range; draws row offset first, then column.
Tensor place_on_canvas_random(const Tensor& image, long canvas_h, long canvas_w, Rng& rng);

struct AffineParams {
  double rotation_deg = 0.0;  // |.| <= 20
  double shear_deg = 0.0;     // |.| <= 40, horizontal shear
  double scale = 1.0;         // in [0.8, 1.2]
  double dx = 0.0, dy = 0.0;  // |.| <= 8 pixels

  void validate() const;
};

// Uniform draw over the declared ranges, in field order.
AffineParams sample_affine_params(Rng& rng);

/**
 * Affine warp about the canvas center: rotation, then horizontal shear, then
 * uniform scale, then translation. Output pixels are bilinearly interpolated
 * from the inverse-mapped source location with zero fill outside the canvas.
 * Identity parameters reproduce the input exactly, as does pure translation
 * by whole pixels.
 */
Tensor random_affine(const Tensor& image, const AffineParams& p);

// Pads every 28x28 image to a centered 40x40 canvas and applies a freshly
// sampled affine warp. Deterministic per (seed, image index).
ImageSet generate_affnist(const ImageSet& mnist, std::uint64_t seed);

// Standard binary batches: per record one label byte plus 3*1024 channel-major
// pixel bytes; file length must be a multiple of 3073.
ImageSet load_cifar10(const std::vector<std::string>& batch_files);

}  // namespace caps

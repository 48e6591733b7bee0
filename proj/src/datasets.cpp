#include "capslab/datasets.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace caps {

void ImageSet::validate(int num_classes) const {
  if (images.size() != labels.size()) {
    throw std::runtime_error("ImageSet: " + std::to_string(images.size()) + " images vs " +
                             std::to_string(labels.size()) + " labels (" + source + ")");
  }
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw std::runtime_error("ImageSet: label " + std::to_string(labels[i]) + " at index " +
                               std::to_string(i) + " outside [0," + std::to_string(num_classes) +
                               ") (" + source + ")");
    }
  }
  for (const Tensor& img : images) {
    for (long j = 0; j < img.numel(); ++j) {
      if (img[j] < 0.0 || img[j] > 1.0) {
        throw std::runtime_error("ImageSet: pixel value " + std::to_string(img[j]) +
                                 " outside [0,1] (" + source + ")");
      }
    }
  }
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::string& s, size_t off, const std::string& path) {
  if (off + 4 > s.size()) {
    throw std::runtime_error(path + ": truncated while reading header at offset " +
                             std::to_string(off));
  }
  return ((std::uint32_t)(unsigned char)s[off] << 24) |
         ((std::uint32_t)(unsigned char)s[off + 1] << 16) |
         ((std::uint32_t)(unsigned char)s[off + 2] << 8) |
         (std::uint32_t)(unsigned char)s[off + 3];
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  char b[4] = {(char)((v >> 24) & 0xff), (char)((v >> 16) & 0xff), (char)((v >> 8) & 0xff),
               (char)(v & 0xff)};
  out.write(b, 4);
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

ImageSet load_idx(const std::string& images_path, const std::string& labels_path) {
  std::string img = read_file(images_path);
  std::uint32_t magic = read_be32(img, 0, images_path);
  if (magic != kIdxImagesMagic) {
    throw std::runtime_error(images_path + ": image magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", magic);
      return std::string(buf);
    }() + ", expected 0x00000803");
  }
  std::uint32_t count = read_be32(img, 4, images_path);
  std::uint32_t rows = read_be32(img, 8, images_path);
  std::uint32_t cols = read_be32(img, 12, images_path);
  size_t need = 16 + (size_t)count * rows * cols;
  if (img.size() < need) {
    throw std::runtime_error(images_path + ": payload truncated, need " + std::to_string(need) +
                             " bytes, have " + std::to_string(img.size()));
  }

  std::string lab = read_file(labels_path);
  std::uint32_t lmagic = read_be32(lab, 0, labels_path);
  if (lmagic != kIdxLabelsMagic) {
    throw std::runtime_error(labels_path + ": label magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", lmagic);
      return std::string(buf);
    }() + ", expected 0x00000801");
  }
  std::uint32_t lcount = read_be32(lab, 4, labels_path);
  if (lcount != count) {
    throw std::runtime_error(labels_path + ": " + std::to_string(lcount) + " labels vs " +
                             std::to_string(count) + " images in " + images_path);
  }
  if (lab.size() < 8 + (size_t)lcount) {
    throw std::runtime_error(labels_path + ": payload truncated");
  }

  ImageSet set;
  set.source = images_path + " + " + labels_path;
  set.images.reserve(count);
  set.labels.reserve(count);
  size_t off = 16;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t({1, (long)rows, (long)cols});
    for (long j = 0; j < (long)(rows * cols); ++j) {
      t[j] = (double)(unsigned char)img[off + (size_t)j] / 255.0;
    }
    off += (size_t)rows * cols;
    set.images.push_back(std::move(t));
    set.labels.push_back((int)(unsigned char)lab[8 + (size_t)i]);
  }
  return set;
}

void save_idx(const ImageSet& set, const std::string& images_path,
              const std::string& labels_path) {
  if (set.images.empty()) throw std::runtime_error("save_idx: empty set");
  if (set.images.size() != set.labels.size()) {
    throw std::runtime_error("save_idx: image/label count mismatch");
  }
  const shape_t& s0 = set.images[0].shape;
  if (s0.size() != 3 || s0[0] != 1) {
    throw std::runtime_error("save_idx: needs single-channel [1,H,W] images, got " +
                             shape_str(s0));
  }
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  if (!img) throw std::runtime_error("save_idx: cannot open " + images_path);
  write_be32(img, kIdxImagesMagic);
  write_be32(img, (std::uint32_t)set.images.size());
  write_be32(img, (std::uint32_t)s0[1]);
  write_be32(img, (std::uint32_t)s0[2]);
  for (const Tensor& t : set.images) {
    if (t.shape != s0) {
      throw std::runtime_error("save_idx: inconsistent image shape " + shape_str(t.shape));
    }
    for (long j = 0; j < t.numel(); ++j) {
      double v = std::min(1.0, std::max(0.0, t[j]));
      img.put((char)(unsigned char)std::lround(v * 255.0));
    }
  }
  if (!img) throw std::runtime_error("save_idx: write failed for " + images_path);

  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  if (!lab) throw std::runtime_error("save_idx: cannot open " + labels_path);
  write_be32(lab, kIdxLabelsMagic);
  write_be32(lab, (std::uint32_t)set.labels.size());
  for (int l : set.labels) lab.put((char)(unsigned char)l);
  if (!lab) throw std::runtime_error("save_idx: write failed for " + labels_path);
}

Tensor place_on_canvas(const Tensor& image, long canvas_h, long canvas_w, long off_y, long off_x) {
  if (image.rank() != 3) {
    throw std::runtime_error("place_on_canvas: image must be [C,H,W], got " +
                             shape_str(image.shape));
  }
  long c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (off_y < 0 || off_x < 0 || off_y + h > canvas_h || off_x + w > canvas_w) {
    throw std::runtime_error("place_on_canvas: offset (" + std::to_string(off_y) + "," +
                             std::to_string(off_x) + ") puts a " + std::to_string(h) + "x" +
                             std::to_string(w) + " image outside a " + std::to_string(canvas_h) +
                             "x" + std::to_string(canvas_w) + " canvas");
  }
  Tensor out({c, canvas_h, canvas_w});
  for (long ch = 0; ch < c; ++ch)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) out.at(ch, off_y + y, off_x + x) = image.at(ch, y, x);
  return out;
}

Tensor place_on_canvas_random(const Tensor& image, long canvas_h, long canvas_w, Rng& rng) {
  long max_y = canvas_h - image.dim(1);
  long max_x = canvas_w - image.dim(2);
  if (max_y < 0 || max_x < 0) {
    throw std::runtime_error("place_on_canvas_random: image larger than canvas");
  }
  long off_y = (long)rng.index((uint64_t)max_y + 1);
  long off_x = (long)rng.index((uint64_t)max_x + 1);
  return place_on_canvas(image, canvas_h, canvas_w, off_y, off_x);
}

void AffineParams::validate() const {
  if (std::fabs(rotation_deg) > 20.0) {
    throw std::runtime_error("AffineParams: |rotation| must be <= 20 degrees, got " +
                             std::to_string(rotation_deg));
  }
  if (std::fabs(shear_deg) > 40.0) {
    throw std::runtime_error("AffineParams: |shear| must be <= 40 degrees, got " +
                             std::to_string(shear_deg));
  }
  if (scale < 0.8 || scale > 1.2) {
    throw std::runtime_error("AffineParams: scale must be in [0.8,1.2], got " +
                             std::to_string(scale));
  }
  if (std::fabs(dx) > 8.0 || std::fabs(dy) > 8.0) {
    throw std::runtime_error("AffineParams: |dx|,|dy| must be <= 8 pixels");
  }
}

AffineParams sample_affine_params(Rng& rng) {
  AffineParams p;
  p.rotation_deg = rng.uniform(-20.0, 20.0);
  p.shear_deg = rng.uniform(-40.0, 40.0);
  p.scale = rng.uniform(0.8, 1.2);
  p.dx = rng.uniform(-8.0, 8.0);
  p.dy = rng.uniform(-8.0, 8.0);
  return p;
}

Tensor random_affine(const Tensor& image, const AffineParams& p) {
  p.validate();
  if (image.rank() != 3) {
    throw std::runtime_error("random_affine: image must be [C,H,W], got " +
                             shape_str(image.shape));
  }
  long c = image.dim(0), h = image.dim(1), w = image.dim(2);
  double cy = (double)(h - 1) / 2.0, cx = (double)(w - 1) / 2.0;
  constexpr double deg = 0.017453292519943295;  // pi / 180
  double th = p.rotation_deg * deg;
  double sh = std::tan(p.shear_deg * deg);
  double cth = std::cos(th), sth = std::sin(th);

  Tensor out({c, h, w});
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      // invert translate -> scale -> shear -> rotation
      double vx = ((double)x - cx - p.dx) / p.scale;
      double vy = ((double)y - cy - p.dy) / p.scale;
      double ux = vx - sh * vy;  // inverse of x' = x + tan(shear) * y
      double uy = vy;
      double sx = cth * ux + sth * uy + cx;  // R^T
      double sy = -sth * ux + cth * uy + cy;

      double fy = std::floor(sy), fx = std::floor(sx);
      long iy = (long)fy, ix = (long)fx;
      double wy = sy - fy, wx = sx - fx;
      for (long ch = 0; ch < c; ++ch) {
        auto at = [&](long yy, long xx) {
          return (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : image.at(ch, yy, xx);
        };
        out.at(ch, y, x) = (1 - wy) * ((1 - wx) * at(iy, ix) + wx * at(iy, ix + 1)) +
                           wy * ((1 - wx) * at(iy + 1, ix) + wx * at(iy + 1, ix + 1));
      }
    }
  }
  return out;
}

ImageSet generate_affnist(const ImageSet& mnist, std::uint64_t seed) {
  ImageSet out;
  out.source = mnist.source + " -> affine(seed=" + std::to_string(seed) + ")";
  out.images.reserve(mnist.images.size());
  out.labels = mnist.labels;
  Rng root(seed);
  for (size_t i = 0; i < mnist.images.size(); ++i) {
    const Tensor& img = mnist.images[i];
    if (img.dim(1) != 28 || img.dim(2) != 28) {
      throw std::runtime_error("generate_affnist: expected 28x28 source images, got " +
                               shape_str(img.shape));
    }
    Tensor canvas = place_on_canvas(img, 40, 40, 6, 6);
    Rng item = root.fork((std::uint64_t)i);
    out.images.push_back(random_affine(canvas, sample_affine_params(item)));
  }
  return out;
}

ImageSet load_cifar10(const std::vector<std::string>& batch_files) {
  if (batch_files.empty()) throw std::runtime_error("load_cifar10: no batch files");
  ImageSet set;
  for (const std::string& path : batch_files) {
    if (!set.source.empty()) set.source += " + ";
    set.source += path;
    std::string blob = read_file(path);
    if (blob.size() % 3073 != 0) {
      throw std::runtime_error(path + ": size " + std::to_string(blob.size()) +
                               " is not a multiple of the 3073-byte record");
    }
    size_t records = blob.size() / 3073;
    for (size_t r = 0; r < records; ++r) {
      size_t off = r * 3073;
      set.labels.push_back((int)(unsigned char)blob[off]);
      Tensor t({3, 32, 32});
      for (long j = 0; j < 3072; ++j) {
        t[j] = (double)(unsigned char)blob[off + 1 + (size_t)j] / 255.0;
      }
      set.images.push_back(std::move(t));
    }
  }
  return set;
}

}  // namespace caps

#pragma once

#include <vector>

#include "cst/boxops.hpp"
#include "cst/rng.hpp"
#include "cst/tensor.hpp"

namespace cst {

// Record of one sampled augmentation. Horizontal flip is the only geometric
// part; everything else is photometric and leaves boxes untouched.
struct TransformRecord {
  bool hflip = false;
  bool photometric = false;  // true for strong views
  double brightness = 1.0;
  double contrast = 1.0;
  bool grayscale = false;
  bool blur = false;
  std::vector<Box> cutouts;
};

struct AugmentedView {
  Tensor3<float> image;
  std::vector<TargetBox> boxes;
  TransformRecord transform;
};

struct AugmentConfig {
  double flip_prob = 0.5;
  double jitter_lo = 0.6, jitter_hi = 1.4;  // brightness/contrast factors
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;
  int cutout_min = 1, cutout_max = 3;
  double cutout_lo = 0.05, cutout_hi = 0.20;  // fraction of image side
};

// Draw order is fixed (flip; brightness; contrast; grayscale; blur; cutout
// count; cutout rects) so rng streams replay identically.
TransformRecord sample_weak_transform(Rng& rng, const AugmentConfig& cfg);
TransformRecord sample_strong_transform(Rng& rng, const AugmentConfig& cfg,
                                        int img_w, int img_h);

AugmentedView apply_transform(const Tensor3<float>& image,
                              const std::vector<TargetBox>& boxes,
                              const TransformRecord& t);

AugmentedView weak_augment(const Tensor3<float>& image,
                           const std::vector<TargetBox>& boxes, Rng& rng,
                           const AugmentConfig& cfg = {});
AugmentedView strong_augment(const Tensor3<float>& image,
                             const std::vector<TargetBox>& boxes, Rng& rng,
                             const AugmentConfig& cfg = {});

// Maps a box expressed in `from` view coordinates into `to` view coordinates
// (both views of the same underlying image of width img_w).
Box map_box_between_views(const Box& b, const TransformRecord& from,
                          const TransformRecord& to, int img_w);

}  // namespace cst

#include "cst/augment.hpp"

#include <algorithm>
#include <cmath>

namespace cst {

namespace {

void hflip_image(Tensor3<float>& img) {
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w / 2; ++x)
        std::swap(img.at(c, y, x), img.at(c, y, img.w - 1 - x));
}

Box hflip_box(const Box& b, int img_w) {
  return {img_w - b.x_max, b.y_min, img_w - b.x_min, b.y_max};
}

void box_blur_3x3(Tensor3<float>& img) {
  // Separable [1,2,1]/4 with clamped borders.
  Tensor3<float> tmp(img.c, img.h, img.w);
  for (int c = 0; c < img.c; ++c) {
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x) {
        const int xm = std::max(x - 1, 0), xp = std::min(x + 1, img.w - 1);
        tmp.at(c, y, x) = 0.25f * img.at(c, y, xm) + 0.5f * img.at(c, y, x) +
                          0.25f * img.at(c, y, xp);
      }
    }
    for (int x = 0; x < img.w; ++x) {
      for (int y = 0; y < img.h; ++y) {
        const int ym = std::max(y - 1, 0), yp = std::min(y + 1, img.h - 1);
        img.at(c, y, x) = 0.25f * tmp.at(c, ym, x) + 0.5f * tmp.at(c, y, x) +
                          0.25f * tmp.at(c, yp, x);
      }
    }
  }
}

}  // namespace

TransformRecord sample_weak_transform(Rng& rng, const AugmentConfig& cfg) {
  TransformRecord t;
  t.hflip = rng.bernoulli(cfg.flip_prob);
  return t;
}

TransformRecord sample_strong_transform(Rng& rng, const AugmentConfig& cfg,
                                        int img_w, int img_h) {
  TransformRecord t;
  t.hflip = rng.bernoulli(cfg.flip_prob);
  t.photometric = true;
  t.brightness = rng.uniform(cfg.jitter_lo, cfg.jitter_hi);
  t.contrast = rng.uniform(cfg.jitter_lo, cfg.jitter_hi);
  t.grayscale = rng.bernoulli(cfg.grayscale_prob);
  t.blur = rng.bernoulli(cfg.blur_prob);
  const int n_cut = rng.uniform_int(cfg.cutout_min, cfg.cutout_max);
  for (int i = 0; i < n_cut; ++i) {
    const double w = rng.uniform(cfg.cutout_lo, cfg.cutout_hi) * img_w;
    const double h = rng.uniform(cfg.cutout_lo, cfg.cutout_hi) * img_h;
    const double x0 = rng.uniform(0.0, img_w - w);
    const double y0 = rng.uniform(0.0, img_h - h);
    t.cutouts.push_back({x0, y0, x0 + w, y0 + h});
  }
  return t;
}

AugmentedView apply_transform(const Tensor3<float>& image,
                              const std::vector<TargetBox>& boxes,
                              const TransformRecord& t) {
  AugmentedView view;
  view.transform = t;
  view.image = image;

  if (t.hflip) hflip_image(view.image);

  if (t.photometric) {
    for (auto& v : view.image.data)
      v = static_cast<float>((v * t.brightness - 0.5) * t.contrast + 0.5);
    if (t.grayscale) {
      for (int y = 0; y < view.image.h; ++y) {
        for (int x = 0; x < view.image.w; ++x) {
          const float m = (view.image.at(0, y, x) + view.image.at(1, y, x) +
                           view.image.at(2, y, x)) /
                          3.0f;
          for (int c = 0; c < 3; ++c) view.image.at(c, y, x) = m;
        }
      }
    }
    if (t.blur) box_blur_3x3(view.image);
    for (const Box& cut : t.cutouts) {
      const int x0 = std::max(0, static_cast<int>(std::floor(cut.x_min)));
      const int y0 = std::max(0, static_cast<int>(std::floor(cut.y_min)));
      const int x1 =
          std::min(view.image.w, static_cast<int>(std::ceil(cut.x_max)));
      const int y1 =
          std::min(view.image.h, static_cast<int>(std::ceil(cut.y_max)));
      for (int c = 0; c < 3; ++c)
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) view.image.at(c, y, x) = 0.5f;
    }
    for (auto& v : view.image.data) v = std::clamp(v, 0.0f, 1.0f);
  }

  for (const auto& tb : boxes) {
    Box b = t.hflip ? hflip_box(tb.box, image.w) : tb.box;
    b.x_min = std::clamp(b.x_min, 0.0, static_cast<double>(image.w));
    b.x_max = std::clamp(b.x_max, 0.0, static_cast<double>(image.w));
    b.y_min = std::clamp(b.y_min, 0.0, static_cast<double>(image.h));
    b.y_max = std::clamp(b.y_max, 0.0, static_cast<double>(image.h));
    if (b.x_max - b.x_min <= 0 || b.y_max - b.y_min <= 0) continue;
    view.boxes.push_back({b, tb.label, tb.weight});
  }
  return view;
}

AugmentedView weak_augment(const Tensor3<float>& image,
                           const std::vector<TargetBox>& boxes, Rng& rng,
                           const AugmentConfig& cfg) {
  return apply_transform(image, boxes, sample_weak_transform(rng, cfg));
}

AugmentedView strong_augment(const Tensor3<float>& image,
                             const std::vector<TargetBox>& boxes, Rng& rng,
                             const AugmentConfig& cfg) {
  return apply_transform(image, boxes,
                         sample_strong_transform(rng, cfg, image.w, image.h));
}

Box map_box_between_views(const Box& b, const TransformRecord& from,
                          const TransformRecord& to, int img_w) {
  if (from.hflip == to.hflip) return b;
  return hflip_box(b, img_w);
}

}  // namespace cst

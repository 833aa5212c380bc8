#pragma once

// Minimal anchor-based detector: 4-conv backbone (overall stride 8), one
// shared feature level, per-anchor (C+1)-way classification and 4-offset
// regression heads, plus a region-pooling classification head used to score
// externally supplied boxes. Provides the three contracts the training loop
// needs: detect, score_boxes, flat parameter access.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cst/boxops.hpp"
#include "cst/rng.hpp"
#include "cst/tensor.hpp"

namespace cst {

struct ArchSpec {
  int in_channels = 3;
  std::vector<int> channels{8, 16, 32, 32};  // backbone, strides {2,2,2,1}
  int num_classes = 3;
  std::vector<double> anchor_sizes{16, 24, 32};
  int roi_grid = 4;
  int roi_hidden = 32;

  int stride() const { return 8; }
  int num_anchors() const { return static_cast<int>(anchor_sizes.size()); }
  int cls_out() const { return num_anchors() * (num_classes + 1); }
  int reg_out() const { return num_anchors() * 4; }

  long long param_count() const {
    long long n = 0;
    int prev = in_channels;
    for (int c : channels) {
      n += static_cast<long long>(c) * prev * 9 + c;
      prev = c;
    }
    n += static_cast<long long>(cls_out()) * prev * 9 + cls_out();
    n += static_cast<long long>(reg_out()) * prev * 9 + reg_out();
    const int pooled = prev * roi_grid * roi_grid;
    n += static_cast<long long>(roi_hidden) * pooled + roi_hidden;
    n += static_cast<long long>(num_classes + 1) * roi_hidden +
         (num_classes + 1);
    return n;
  }

  bool operator==(const ArchSpec& o) const {
    return in_channels == o.in_channels && channels == o.channels &&
           num_classes == o.num_classes && anchor_sizes == o.anchor_sizes &&
           roi_grid == o.roi_grid && roi_hidden == o.roi_hidden;
  }
};

struct AnchorGrid {
  int gh = 0, gw = 0, num_anchors = 0;
  double stride = 8;
  std::vector<Box> boxes;  // index (gy*gw + gx)*num_anchors + a

  struct Center {
    double cx, cy, w, h;
  };
  Center center(int idx) const {
    const Box& b = boxes[idx];
    return {0.5 * (b.x_min + b.x_max), 0.5 * (b.y_min + b.y_max), b.width(),
            b.height()};
  }
};

inline AnchorGrid make_anchors(const ArchSpec& arch, int feat_h, int feat_w) {
  AnchorGrid g;
  g.gh = feat_h;
  g.gw = feat_w;
  g.num_anchors = arch.num_anchors();
  g.stride = arch.stride();
  g.boxes.reserve(static_cast<size_t>(feat_h) * feat_w * g.num_anchors);
  for (int gy = 0; gy < feat_h; ++gy) {
    for (int gx = 0; gx < feat_w; ++gx) {
      const double cx = (gx + 0.5) * g.stride;
      const double cy = (gy + 0.5) * g.stride;
      for (double s : arch.anchor_sizes) {
        g.boxes.push_back({cx - s / 2, cy - s / 2, cx + s / 2, cy + s / 2});
      }
    }
  }
  return g;
}

struct DetLossOptions {
  double fg_iou = 0.5;           // unsupervised assignment (pseudo boxes)
  double bg_iou = 0.5;
  double sup_fg_iou = 0.5;       // supervised anchor assignment
  double sup_bg_iou = 0.5;
  double force_match_floor = 0.3;  // best anchor per GT adopted above this
  int bg_sample_floor = 8;
  double bg_ratio = 3.0;
  double huber_beta = 1.0;
  bool focal = false;
  double focal_gamma = 2.0;
  double region_loss_weight = 1.0;
  int region_bg_min = 2;
};

template <typename S>
struct SupLossResult {
  S cls = 0, reg = 0, region = 0;
  int n_fg = 0, n_bg = 0;
  S total() const { return cls + reg + region; }
};

template <typename S>
struct UnsupLossResult {
  S cls = 0, region = 0;
  S reg = 0;  // stays 0: no regression on unlabeled views
  int n_fg = 0, n_bg = 0;
  S total() const { return cls + region + reg; }
};

template <typename S>
Tensor3<S> to_scalar(const Tensor3<float>& t) {
  Tensor3<S> out(t.c, t.h, t.w);
  for (size_t i = 0; i < t.data.size(); ++i)
    out.data[i] = static_cast<S>(t.data[i]);
  return out;
}

template <>
inline Tensor3<float> to_scalar<float>(const Tensor3<float>& t) {
  return t;
}

template <typename S>
class DetectorModelT {
 public:
  ArchSpec arch;
  std::array<ConvLayer<S>, 4> bb;
  ConvLayer<S> cls_head, reg_head;
  FcLayer<S> roi_fc1, roi_fc2;

  static DetectorModelT init(const ArchSpec& arch, std::uint64_t seed) {
    DetectorModelT m;
    m.arch = arch;
    if (arch.channels.size() != 4)
      throw std::invalid_argument("backbone expects 4 channel counts");
    const int strides[4] = {2, 2, 2, 1};
    int prev = arch.in_channels;
    for (int i = 0; i < 4; ++i) {
      m.bb[i].configure(prev, arch.channels[i], 3, strides[i], 1);
      prev = arch.channels[i];
    }
    m.cls_head.configure(prev, arch.cls_out(), 3, 1, 1);
    m.reg_head.configure(prev, arch.reg_out(), 3, 1, 1);
    const int pooled = prev * arch.roi_grid * arch.roi_grid;
    m.roi_fc1.configure(pooled, arch.roi_hidden);
    m.roi_fc2.configure(arch.roi_hidden, arch.num_classes + 1);

    Rng rng = derive_rng(seed, "detector-init");
    for (int i = 0; i < 4; ++i) m.bb[i].init_he(rng);
    m.cls_head.init_he(rng);
    m.reg_head.init_he(rng);
    m.roi_fc1.init_he(rng);
    m.roi_fc2.init_he(rng);
    return m;
  }

  struct ParamRef {
    std::string name;
    std::vector<int> shape;
    std::vector<S>* values;
    std::vector<S>* grads;
  };

  std::vector<ParamRef> named_params() {
    std::vector<ParamRef> out;
    for (int i = 0; i < 4; ++i) {
      const std::string base = "backbone.conv" + std::to_string(i);
      out.push_back({base + ".w",
                     {bb[i].out_c, bb[i].in_c, 3, 3},
                     &bb[i].w,
                     &bb[i].gw});
      out.push_back({base + ".b", {bb[i].out_c}, &bb[i].b, &bb[i].gb});
    }
    out.push_back({"cls_head.w",
                   {cls_head.out_c, cls_head.in_c, 3, 3},
                   &cls_head.w,
                   &cls_head.gw});
    out.push_back({"cls_head.b", {cls_head.out_c}, &cls_head.b, &cls_head.gb});
    out.push_back({"reg_head.w",
                   {reg_head.out_c, reg_head.in_c, 3, 3},
                   &reg_head.w,
                   &reg_head.gw});
    out.push_back({"reg_head.b", {reg_head.out_c}, &reg_head.b, &reg_head.gb});
    out.push_back({"roi.fc1.w",
                   {roi_fc1.out_n, roi_fc1.in_n},
                   &roi_fc1.w,
                   &roi_fc1.gw});
    out.push_back({"roi.fc1.b", {roi_fc1.out_n}, &roi_fc1.b, &roi_fc1.gb});
    out.push_back({"roi.fc2.w",
                   {roi_fc2.out_n, roi_fc2.in_n},
                   &roi_fc2.w,
                   &roi_fc2.gw});
    out.push_back({"roi.fc2.b", {roi_fc2.out_n}, &roi_fc2.b, &roi_fc2.gb});
    return out;
  }

  size_t param_count() const {
    return static_cast<size_t>(arch.param_count());
  }

  std::vector<S> flat_parameters() const {
    std::vector<S> out;
    out.reserve(param_count());
    auto self = const_cast<DetectorModelT*>(this);
    for (const auto& p : self->named_params())
      out.insert(out.end(), p.values->begin(), p.values->end());
    return out;
  }

  void load_flat_parameters(const std::vector<S>& flat) {
    if (flat.size() != param_count())
      throw std::invalid_argument("flat parameter length mismatch");
    size_t off = 0;
    for (auto& p : named_params()) {
      std::copy(flat.begin() + off, flat.begin() + off + p.values->size(),
                p.values->begin());
      off += p.values->size();
    }
  }

  void zero_grads() {
    for (auto& p : named_params())
      std::fill(p.grads->begin(), p.grads->end(), S(0));
  }

  struct ForwardCache {
    Tensor3<S> input;
    std::array<Tensor3<S>, 4> act;  // post-ReLU
  };

  const Tensor3<S>& forward_backbone(const Tensor3<float>& image,
                                     ForwardCache& cache) const {
    cache.input = to_scalar<S>(image);
    const Tensor3<S>* cur = &cache.input;
    for (int i = 0; i < 4; ++i) {
      cache.act[i] = bb[i].forward(*cur);
      relu_inplace(cache.act[i]);
      cur = &cache.act[i];
    }
    return cache.act[3];
  }

  // Propagates feature-level gradient through the backbone, accumulating
  // layer gradients.
  void backward_backbone(ForwardCache& cache, Tensor3<S> gfeat) {
    for (int i = 3; i >= 0; --i) {
      relu_backward_inplace(cache.act[i], gfeat);
      const Tensor3<S>& in = i == 0 ? cache.input : cache.act[i - 1];
      gfeat = bb[i].backward(in, gfeat);
    }
  }

  // Full-image inference: every anchor becomes one Detection. Boxes decoded
  // from regression offsets, clipped to image bounds; degenerate boxes after
  // clipping are dropped.
  std::vector<Detection> detect(const Tensor3<float>& image) const {
    ForwardCache cache;
    const Tensor3<S>& feat = forward_backbone(image, cache);
    Tensor3<S> cls = cls_head.forward(feat);
    Tensor3<S> reg = reg_head.forward(feat);
    for (S v : cls.data)
      if (!std::isfinite(static_cast<double>(v)))
        throw std::runtime_error("non-finite classification logits");
    for (S v : reg.data)
      if (!std::isfinite(static_cast<double>(v)))
        throw std::runtime_error("non-finite regression output");

    const AnchorGrid grid = make_anchors(arch, cls.h, cls.w);
    const int A = grid.num_anchors;
    const int C = arch.num_classes;
    std::vector<Detection> out;
    out.reserve(grid.boxes.size());
    std::vector<S> logits(C + 1), probs(C + 1);
    for (int gy = 0; gy < grid.gh; ++gy) {
      for (int gx = 0; gx < grid.gw; ++gx) {
        for (int a = 0; a < A; ++a) {
          for (int k = 0; k <= C; ++k)
            logits[k] = cls.at(a * (C + 1) + k, gy, gx);
          softmax(logits.data(), C + 1, probs.data());
          const int idx = (gy * grid.gw + gx) * A + a;
          const auto ac = grid.center(idx);
          const double tx = reg.at(a * 4 + 0, gy, gx);
          const double ty = reg.at(a * 4 + 1, gy, gx);
          const double tw = std::min(static_cast<double>(reg.at(a * 4 + 2, gy, gx)), 4.0);
          const double th = std::min(static_cast<double>(reg.at(a * 4 + 3, gy, gx)), 4.0);
          const double cx = ac.cx + tx * ac.w;
          const double cy = ac.cy + ty * ac.h;
          const double w = ac.w * std::exp(tw);
          const double h = ac.h * std::exp(th);
          Box b{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
          b.x_min = std::clamp(b.x_min, 0.0, static_cast<double>(image.w));
          b.x_max = std::clamp(b.x_max, 0.0, static_cast<double>(image.w));
          b.y_min = std::clamp(b.y_min, 0.0, static_cast<double>(image.h));
          b.y_max = std::clamp(b.y_max, 0.0, static_cast<double>(image.h));
          if (b.x_max - b.x_min < 1e-6 || b.y_max - b.y_min < 1e-6) continue;
          std::vector<double> cp(C + 1);
          for (int k = 0; k <= C; ++k) cp[k] = static_cast<double>(probs[k]);
          out.push_back(make_detection(b, std::move(cp)));
        }
      }
    }
    return out;
  }

  // Region-pooled feature vector for one box (roi_grid x roi_grid bilinear
  // samples over the shared feature map), the input of the box-scoring head.
  std::vector<S> pool_region(const Tensor3<S>& feat, const Box& box) const {
    const int g = arch.roi_grid;
    std::vector<S> out(static_cast<size_t>(feat.c) * g * g, S(0));
    const double bw = box.width() / g;
    const double bh = box.height() / g;
    for (int by = 0; by < g; ++by) {
      for (int bx = 0; bx < g; ++bx) {
        const double px = box.x_min + (bx + 0.5) * bw;
        const double py = box.y_min + (by + 0.5) * bh;
        const BilinearTaps t = bilinear_taps(px / arch.stride() - 0.5,
                                             py / arch.stride() - 0.5, feat.w,
                                             feat.h);
        for (int c = 0; c < feat.c; ++c) {
          const S v = static_cast<S>(
              t.w00 * feat.at(c, t.y0, t.x0) + t.w01 * feat.at(c, t.y0, t.x1) +
              t.w10 * feat.at(c, t.y1, t.x0) + t.w11 * feat.at(c, t.y1, t.x1));
          out[(static_cast<size_t>(c) * g + by) * g + bx] = v;
        }
      }
    }
    return out;
  }

  void pool_region_backward(const Box& box, const std::vector<S>& gpooled,
                            Tensor3<S>& gfeat) const {
    const int g = arch.roi_grid;
    const double bw = box.width() / g;
    const double bh = box.height() / g;
    for (int by = 0; by < g; ++by) {
      for (int bx = 0; bx < g; ++bx) {
        const double px = box.x_min + (bx + 0.5) * bw;
        const double py = box.y_min + (by + 0.5) * bh;
        const BilinearTaps t = bilinear_taps(px / arch.stride() - 0.5,
                                             py / arch.stride() - 0.5,
                                             gfeat.w, gfeat.h);
        for (int c = 0; c < gfeat.c; ++c) {
          const S gv = gpooled[(static_cast<size_t>(c) * g + by) * g + bx];
          gfeat.at(c, t.y0, t.x0) += static_cast<S>(t.w00) * gv;
          gfeat.at(c, t.y0, t.x1) += static_cast<S>(t.w01) * gv;
          gfeat.at(c, t.y1, t.x0) += static_cast<S>(t.w10) * gv;
          gfeat.at(c, t.y1, t.x1) += static_cast<S>(t.w11) * gv;
        }
      }
    }
  }

  std::vector<S> region_logits(const Tensor3<S>& feat, const Box& box) const {
    std::vector<S> pooled = pool_region(feat, box);
    std::vector<S> hidden(roi_fc1.out_n);
    roi_fc1.forward(pooled.data(), hidden.data());
    relu_vec_inplace(hidden);
    std::vector<S> logits(roi_fc2.out_n);
    roi_fc2.forward(hidden.data(), logits.data());
    return logits;
  }

  // Class distributions (C+1, softmax) for externally supplied boxes.
  std::vector<std::vector<double>> score_boxes(
      const Tensor3<float>& image, const std::vector<Box>& boxes) const {
    std::vector<std::vector<double>> out;
    if (boxes.empty()) return out;
    ForwardCache cache;
    const Tensor3<S>& feat = forward_backbone(image, cache);
    const int n = arch.num_classes + 1;
    std::vector<S> probs(n);
    for (const Box& b : boxes) {
      std::vector<S> logits = region_logits(feat, b);
      softmax(logits.data(), n, probs.data());
      std::vector<double> p(n);
      for (int k = 0; k < n; ++k) p[k] = static_cast<double>(probs[k]);
      out.push_back(std::move(p));
    }
    return out;
  }

  // Pooled region feature as doubles, for coupling diagnostics.
  std::vector<double> region_feature(const Tensor3<float>& image,
                                     const Box& box) const {
    ForwardCache cache;
    const Tensor3<S>& feat = forward_backbone(image, cache);
    std::vector<S> pooled = pool_region(feat, box);
    return std::vector<double>(pooled.begin(), pooled.end());
  }

  SupLossResult<S> supervised_loss(const Tensor3<float>& image,
                                   const std::vector<TargetBox>& gts,
                                   const DetLossOptions& opt, Rng& rng,
                                   S grad_scale) {
    ForwardCache cache;
    const Tensor3<S>& feat = forward_backbone(image, cache);
    Tensor3<S> cls = cls_head.forward(feat);
    Tensor3<S> reg = reg_head.forward(feat);
    const AnchorGrid grid = make_anchors(arch, cls.h, cls.w);

    // Per-anchor assignment: threshold rule plus one forced match per target
    // so small objects whose best anchor is below fg_iou still train.
    std::vector<Assignment> assign =
        assign_proposals(grid.boxes, gts, opt.sup_fg_iou, opt.sup_bg_iou);
    for (size_t j = 0; j < gts.size(); ++j) {
      int best = -1;
      double best_iou = opt.force_match_floor;
      for (size_t i = 0; i < grid.boxes.size(); ++i) {
        const double v = iou(grid.boxes[i], gts[j].box);
        if (v > best_iou) {
          best_iou = v;
          best = static_cast<int>(i);
        }
      }
      if (best >= 0 && assign[best].role != AssignRole::kForeground) {
        assign[best].role = AssignRole::kForeground;
        assign[best].matched_pseudo_index = static_cast<int>(j);
        assign[best].label = gts[j].label;
        assign[best].weight = 1.0;
      }
    }

    SupLossResult<S> res;
    Tensor3<S> gcls(cls.c, cls.h, cls.w);
    Tensor3<S> greg(reg.c, reg.h, reg.w);
    const int C = arch.num_classes;
    const int A = grid.num_anchors;

    std::vector<int> fg, bg_pool;
    for (size_t i = 0; i < assign.size(); ++i) {
      if (assign[i].role == AssignRole::kForeground)
        fg.push_back(static_cast<int>(i));
      else if (assign[i].role == AssignRole::kBackground)
        bg_pool.push_back(static_cast<int>(i));
    }
    std::vector<int> bg = sample_without_replacement(
        bg_pool,
        std::min<size_t>(bg_pool.size(),
                         std::max<size_t>(static_cast<size_t>(
                                              opt.bg_ratio * fg.size()),
                                          opt.bg_sample_floor)),
        rng);
    res.n_fg = static_cast<int>(fg.size());
    res.n_bg = static_cast<int>(bg.size());

    const double n_cls = std::max<size_t>(fg.size() + bg.size(), 1);
    std::vector<S> logits(C + 1);
    for (int idx : fg) {
      const int a = idx % A;
      const int gx = (idx / A) % grid.gw;
      const int gy = (idx / A) / grid.gw;
      for (int k = 0; k <= C; ++k) logits[k] = cls.at(a * (C + 1) + k, gy, gx);
      std::vector<S> dl(C + 1, S(0));
      res.cls += softmax_ce(logits.data(), C + 1, assign[idx].label,
                            static_cast<S>(1.0 / n_cls), dl.data(), opt.focal,
                            static_cast<S>(opt.focal_gamma));
      for (int k = 0; k <= C; ++k) gcls.at(a * (C + 1) + k, gy, gx) += dl[k];

      // Regression on foreground anchors: standard center/size encoding.
      const auto ac = grid.center(idx);
      const Box& gb = gts[assign[idx].matched_pseudo_index].box;
      const double gcx = 0.5 * (gb.x_min + gb.x_max);
      const double gcy = 0.5 * (gb.y_min + gb.y_max);
      const S tgt[4] = {static_cast<S>((gcx - ac.cx) / ac.w),
                        static_cast<S>((gcy - ac.cy) / ac.h),
                        static_cast<S>(std::log(gb.width() / ac.w)),
                        static_cast<S>(std::log(gb.height() / ac.h))};
      const double n_reg = std::max<size_t>(fg.size(), 1);
      for (int d = 0; d < 4; ++d) {
        S gp = 0;
        res.reg += smooth_l1(reg.at(a * 4 + d, gy, gx), tgt[d],
                             static_cast<S>(opt.huber_beta), &gp) /
                   static_cast<S>(n_reg);
        greg.at(a * 4 + d, gy, gx) += gp / static_cast<S>(n_reg);
      }
    }
    for (int idx : bg) {
      const int a = idx % A;
      const int gx = (idx / A) % grid.gw;
      const int gy = (idx / A) / grid.gw;
      for (int k = 0; k <= C; ++k) logits[k] = cls.at(a * (C + 1) + k, gy, gx);
      std::vector<S> dl(C + 1, S(0));
      res.cls += softmax_ce(logits.data(), C + 1, C,
                            static_cast<S>(1.0 / n_cls), dl.data(), opt.focal,
                            static_cast<S>(opt.focal_gamma));
      for (int k = 0; k <= C; ++k) gcls.at(a * (C + 1) + k, gy, gx) += dl[k];
    }

    // Region-scoring head trains on the same image: ground-truth boxes as
    // positives, random off-object boxes as background.
    Tensor3<S> gfeat_roi(feat.c, feat.h, feat.w);
    res.region = region_cls_loss(feat, image.w, image.h, gts,
                                 /*use_weights=*/false, opt, rng, grad_scale,
                                 gfeat_roi);

    for (auto& v : gcls.data) v *= grad_scale;
    for (auto& v : greg.data) v *= grad_scale;
    Tensor3<S> gfeat = cls_head.backward(feat, gcls);
    Tensor3<S> gfeat2 = reg_head.backward(feat, greg);
    for (size_t i = 0; i < gfeat.data.size(); ++i)
      gfeat.data[i] += gfeat2.data[i] + gfeat_roi.data[i];
    backward_backbone(cache, std::move(gfeat));
    return res;
  }

  // Classification-only loss against pseudo boxes: foreground anchor terms
  // scaled by per-box weights and normalized by N_f, background terms
  // normalized by N_b. No regression on unlabeled views.
  UnsupLossResult<S> unsupervised_cls_loss(const Tensor3<float>& image,
                                           const std::vector<TargetBox>& pseudo,
                                           const DetLossOptions& opt, Rng& rng,
                                           S grad_scale) {
    ForwardCache cache;
    const Tensor3<S>& feat = forward_backbone(image, cache);
    Tensor3<S> cls = cls_head.forward(feat);
    const AnchorGrid grid = make_anchors(arch, cls.h, cls.w);
    std::vector<Assignment> assign =
        assign_proposals(grid.boxes, pseudo, opt.fg_iou, opt.bg_iou);

    UnsupLossResult<S> res;
    Tensor3<S> gcls(cls.c, cls.h, cls.w);
    const int C = arch.num_classes;
    const int A = grid.num_anchors;

    std::vector<int> fg, bg_pool;
    for (size_t i = 0; i < assign.size(); ++i) {
      if (assign[i].role == AssignRole::kForeground)
        fg.push_back(static_cast<int>(i));
      else if (assign[i].role == AssignRole::kBackground)
        bg_pool.push_back(static_cast<int>(i));
    }
    std::vector<int> bg = sample_without_replacement(
        bg_pool,
        std::min<size_t>(bg_pool.size(),
                         std::max<size_t>(static_cast<size_t>(
                                              opt.bg_ratio * fg.size()),
                                          opt.bg_sample_floor)),
        rng);
    res.n_fg = static_cast<int>(fg.size());
    res.n_bg = static_cast<int>(bg.size());

    std::vector<S> logits(C + 1);
    const double n_f = std::max<size_t>(fg.size(), 1);
    const double n_b = std::max<size_t>(bg.size(), 1);
    for (int idx : fg) {
      const int a = idx % A;
      const int gx = (idx / A) % grid.gw;
      const int gy = (idx / A) / grid.gw;
      for (int k = 0; k <= C; ++k) logits[k] = cls.at(a * (C + 1) + k, gy, gx);
      std::vector<S> dl(C + 1, S(0));
      res.cls += softmax_ce(logits.data(), C + 1, assign[idx].label,
                            static_cast<S>(assign[idx].weight / n_f), dl.data(),
                            opt.focal, static_cast<S>(opt.focal_gamma));
      for (int k = 0; k <= C; ++k) gcls.at(a * (C + 1) + k, gy, gx) += dl[k];
    }
    for (int idx : bg) {
      const int a = idx % A;
      const int gx = (idx / A) % grid.gw;
      const int gy = (idx / A) / grid.gw;
      for (int k = 0; k <= C; ++k) logits[k] = cls.at(a * (C + 1) + k, gy, gx);
      std::vector<S> dl(C + 1, S(0));
      res.cls += softmax_ce(logits.data(), C + 1, C, static_cast<S>(1.0 / n_b),
                            dl.data(), opt.focal,
                            static_cast<S>(opt.focal_gamma));
      for (int k = 0; k <= C; ++k) gcls.at(a * (C + 1) + k, gy, gx) += dl[k];
    }

    Tensor3<S> gfeat_roi(feat.c, feat.h, feat.w);
    res.region = region_cls_loss(feat, image.w, image.h, pseudo,
                                 /*use_weights=*/true, opt, rng, grad_scale,
                                 gfeat_roi);

    for (auto& v : gcls.data) v *= grad_scale;
    Tensor3<S> gfeat = cls_head.backward(feat, gcls);
    for (size_t i = 0; i < gfeat.data.size(); ++i)
      gfeat.data[i] += gfeat_roi.data[i];
    backward_backbone(cache, std::move(gfeat));
    return res;
  }

 private:
  static std::vector<int> sample_without_replacement(std::vector<int> pool,
                                                     size_t n, Rng& rng) {
    n = std::min(n, pool.size());
    for (size_t i = 0; i < n; ++i) {
      const size_t j =
          i + static_cast<size_t>(
                  rng.uniform_int(0, static_cast<int>(pool.size() - i) - 1));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(n);
    std::sort(pool.begin(), pool.end());
    return pool;
  }

  // Cross-entropy on region-pooled boxes: targets as positives (optionally
  // weighted), plus random background boxes. Accumulates FC grads directly
  // (scaled) and the pooled-feature gradient into gfeat.
  S region_cls_loss(const Tensor3<S>& feat, int img_w, int img_h,
                    const std::vector<TargetBox>& targets, bool use_weights,
                    const DetLossOptions& opt, Rng& rng, S grad_scale,
                    Tensor3<S>& gfeat) {
    const int C = arch.num_classes;
    struct Sample {
      Box box;
      int label;
      double weight;
    };
    std::vector<Sample> fg_s, bg_s;
    for (const auto& t : targets)
      fg_s.push_back({t.box, t.label, use_weights ? t.weight : 1.0});
    const size_t want_bg =
        std::max<size_t>(targets.size(), opt.region_bg_min);
    for (size_t i = 0; i < want_bg; ++i) {
      for (int attempt = 0; attempt < 10; ++attempt) {
        const double w = rng.uniform(0.1, 0.5) * img_w;
        const double h = rng.uniform(0.1, 0.5) * img_h;
        const double x0 = rng.uniform(0.0, img_w - w);
        const double y0 = rng.uniform(0.0, img_h - h);
        Box b{x0, y0, x0 + w, y0 + h};
        bool clash = false;
        for (const auto& t : targets)
          if (iou(b, t.box) >= opt.bg_iou) {
            clash = true;
            break;
          }
        if (!clash) {
          bg_s.push_back({b, C, 1.0});
          break;
        }
      }
    }

    const double n_f = std::max<size_t>(fg_s.size(), 1);
    const double n_b = std::max<size_t>(bg_s.size(), 1);
    S loss = 0;
    auto run = [&](const Sample& s, double norm) {
      std::vector<S> pooled = pool_region(feat, s.box);
      std::vector<S> hidden(roi_fc1.out_n);
      roi_fc1.forward(pooled.data(), hidden.data());
      relu_vec_inplace(hidden);
      std::vector<S> logits(roi_fc2.out_n);
      roi_fc2.forward(hidden.data(), logits.data());
      std::vector<S> dlogits(roi_fc2.out_n, S(0));
      const S w =
          static_cast<S>(opt.region_loss_weight * s.weight / norm);
      loss += softmax_ce(logits.data(), roi_fc2.out_n, s.label, w,
                         dlogits.data(), opt.focal,
                         static_cast<S>(opt.focal_gamma));
      for (auto& v : dlogits) v *= grad_scale;
      std::vector<S> ghidden(roi_fc1.out_n, S(0));
      roi_fc2.backward(hidden.data(), dlogits.data(), ghidden.data());
      relu_vec_backward_inplace(hidden, ghidden);
      std::vector<S> gpooled(pooled.size(), S(0));
      roi_fc1.backward(pooled.data(), ghidden.data(), gpooled.data());
      pool_region_backward(s.box, gpooled, gfeat);
    };
    for (const auto& s : fg_s) run(s, n_f);
    for (const auto& s : bg_s) run(s, n_b);
    return loss;
  }
};

using DetectorModel = DetectorModelT<float>;

}  // namespace cst

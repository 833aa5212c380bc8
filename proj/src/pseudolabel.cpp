#include "cst/pseudolabel.hpp"

#include <algorithm>

namespace cst {

PseudoLabelSet generate_pseudo_labels(const DetectorModel& teacher,
                                      const AugmentedView& weak_view,
                                      double tau, double nms_iou,
                                      int source_teacher) {
  if (tau < 0 || tau >= 1)
    throw std::invalid_argument("tau must be in [0,1)");
  PseudoLabelSet out;
  out.source_view = weak_view.transform;
  out.source_teacher = source_teacher;

  std::vector<Detection> dets = teacher.detect(weak_view.image);
  std::vector<Detection> kept = confidence_filter(nms(dets, nms_iou), tau);
  if (kept.empty()) return out;

  std::vector<Box> boxes;
  boxes.reserve(kept.size());
  for (const auto& d : kept) boxes.push_back(d.box);
  const auto p1 = teacher.score_boxes(weak_view.image, boxes);

  out.entries.reserve(kept.size());
  for (size_t i = 0; i < kept.size(); ++i)
    out.entries.push_back({kept[i].box, kept[i].label, p1[i], kept[i].score});
  return out;
}

PseudoLabelSet transfer_to_strong_view(const PseudoLabelSet& pl,
                                       const TransformRecord& strong_transform,
                                       int img_w, int img_h) {
  PseudoLabelSet out;
  out.source_view = strong_transform;
  out.source_teacher = pl.source_teacher;
  const bool has_c = !pl.consistency.empty();
  for (size_t i = 0; i < pl.entries.size(); ++i) {
    PseudoLabelSet::Entry e = pl.entries[i];
    Box b = map_box_between_views(e.box, pl.source_view, strong_transform,
                                  img_w);
    b.x_min = std::clamp(b.x_min, 0.0, static_cast<double>(img_w));
    b.x_max = std::clamp(b.x_max, 0.0, static_cast<double>(img_w));
    b.y_min = std::clamp(b.y_min, 0.0, static_cast<double>(img_h));
    b.y_max = std::clamp(b.y_max, 0.0, static_cast<double>(img_h));
    if (b.x_max - b.x_min <= 0 || b.y_max - b.y_min <= 0) continue;
    e.box = b;
    out.entries.push_back(std::move(e));
    if (has_c) out.consistency.push_back(pl.consistency[i]);
  }
  return out;
}

std::vector<TargetBox> pseudo_targets(const PseudoLabelSet& pl,
                                      bool use_consistency) {
  std::vector<TargetBox> out;
  out.reserve(pl.entries.size());
  for (size_t i = 0; i < pl.entries.size(); ++i) {
    double w = 1.0;
    if (use_consistency) {
      if (pl.consistency.size() != pl.entries.size())
        throw std::logic_error("pseudo labels not annotated with consistency");
      w = pl.consistency[i];
    }
    out.push_back({pl.entries[i].box, pl.entries[i].label, w});
  }
  return out;
}

std::vector<DetRecord> pseudo_to_records(const PseudoLabelSet& pl,
                                         const std::string& image_id) {
  std::vector<DetRecord> out;
  const bool has_c = pl.consistency.size() == pl.entries.size();
  for (size_t i = 0; i < pl.entries.size(); ++i) {
    DetRecord r;
    r.image_id = image_id;
    r.det.box = pl.entries[i].box;
    r.det.label = pl.entries[i].label;
    r.det.score = pl.entries[i].score;
    r.det.class_probs = pl.entries[i].p1;
    r.has_probs = true;
    if (has_c) r.consistency = pl.consistency[i];
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace cst

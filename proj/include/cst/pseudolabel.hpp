#pragma once

#include <string>
#include <vector>

#include "cst/augment.hpp"
#include "cst/boxops.hpp"
#include "cst/detector.hpp"

namespace cst {

// Teacher output after NMS + confidence threshold. p1 is the producing
// teacher's region-head distribution for the kept box (the same operation the
// opposite teacher runs for p2), score/label come from the detection itself.
struct PseudoLabelSet {
  struct Entry {
    Box box;
    int label = 0;
    std::vector<double> p1;  // C+1, sums to 1
    double score = 0;
  };
  std::vector<Entry> entries;
  TransformRecord source_view;
  std::vector<double> consistency;  // filled by dcr; empty = not annotated
  int source_teacher = 0;           // provenance tag: 1 or 2; 0 = unset
};

PseudoLabelSet generate_pseudo_labels(const DetectorModel& teacher,
                                      const AugmentedView& weak_view,
                                      double tau, double nms_iou,
                                      int source_teacher = 0);

// Maps boxes from the weak view into the strong view's coordinates. Boxes
// that land fully outside the image are dropped together with their
// consistency values.
PseudoLabelSet transfer_to_strong_view(const PseudoLabelSet& pl,
                                       const TransformRecord& strong_transform,
                                       int img_w, int img_h);

// Assignment-ready targets; weight = consistency when present and requested,
// else 1.
std::vector<TargetBox> pseudo_targets(const PseudoLabelSet& pl,
                                      bool use_consistency);

std::vector<DetRecord> pseudo_to_records(const PseudoLabelSet& pl,
                                         const std::string& image_id);

}  // namespace cst

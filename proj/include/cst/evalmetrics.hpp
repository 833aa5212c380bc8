#pragma once

#include <string>
#include <vector>

#include "cst/boxops.hpp"
#include "cst/pseudolabel.hpp"

namespace cst {

struct ImageDetections {
  std::string image_id;
  std::vector<Detection> dets;
};

struct ImageGroundTruth {
  std::string image_id;
  std::vector<TargetBox> boxes;
};

// Per-class AP at one IoU threshold, 101-point interpolated precision-recall
// area. Classes without ground truth get NaN (excluded from means). Matching
// is greedy by descending score; ties among ground-truth candidates break
// toward the lower index.
std::vector<double> average_precision(const std::vector<ImageDetections>& dets,
                                      const std::vector<ImageGroundTruth>& gts,
                                      int num_classes, double iou_thresh);

struct EvalReport {
  int num_classes = 0;
  std::vector<double> iou_thresholds;        // 0.50 .. 0.95 step 0.05
  std::vector<std::vector<double>> ap;       // [threshold][class], NaN allowed
  double ap50 = 0;                           // class mean at IoU 0.5
  double map = 0;                            // mean over classes then thresholds
  long long gt_count = 0;
  long long det_count = 0;

  std::string to_json() const;
  std::string summary_line() const;  // "AP50=<val> mAP=<val>"
};

EvalReport evaluate_detections(const std::vector<ImageDetections>& dets,
                               const std::vector<ImageGroundTruth>& gts,
                               int num_classes);

// Correctness flag per pseudo entry: matches an unmatched same-class GT at
// IoU >= iou_thresh, greedy by score.
std::vector<bool> pseudo_label_accuracy(const PseudoLabelSet& pl,
                                        const std::vector<TargetBox>& hidden_gt,
                                        double iou_thresh = 0.5);

}  // namespace cst

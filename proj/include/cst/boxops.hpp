#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cst {

// Axis-aligned box, half-open continuous coordinates: a pixel row/column i
// spans [i, i+1), so area = (x_max - x_min) * (y_max - y_min).
struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const;
};

// One prediction: box + full class distribution over C foreground classes
// plus background (index C). score/label are derived from the foreground
// entries only.
struct Detection {
  Box box;
  std::vector<double> class_probs;  // size C+1, sums to 1
  double score = 0;                 // max foreground probability
  int label = 0;                    // argmax foreground class, in [0, C)
};

// Fills score/label from class_probs (foreground entries only).
Detection make_detection(Box box, std::vector<double> class_probs);

enum class AssignRole : std::uint8_t { kForeground, kBackground, kIgnored };

struct Assignment {
  int proposal_index = -1;
  AssignRole role = AssignRole::kBackground;
  int matched_pseudo_index = -1;  // set iff role == kForeground
  int label = -1;                 // matched pseudo box's class, foreground only
  double weight = 1.0;            // consistency weight (fg) or 1 (bg)
};

double iou(const Box& a, const Box& b);

// Greedy per-class suppression in descending score order; equal scores break
// toward the lower original index. A candidate is suppressed when its IoU
// with an already kept same-class box exceeds iou_thresh.
std::vector<Detection> nms(const std::vector<Detection>& dets,
                           double iou_thresh);

// Keeps detections with score >= tau, input order preserved.
std::vector<Detection> confidence_filter(const std::vector<Detection>& dets,
                                         double tau);

// Weighted Boxes Fusion across several models' detection sets. Same-class
// boxes are clustered against the running fused box at IoU >= iou_thresh;
// fused coordinates are score-weighted means, the fused score is the cluster
// mean rescaled by min(cluster_size, num_models) / num_models.
std::vector<Detection> wbf(const std::vector<std::vector<Detection>>& det_sets,
                           double iou_thresh);

// Minimal pseudo-box view consumed by assignment: box + label + weight.
struct TargetBox {
  Box box;
  int label = 0;
  double weight = 1.0;
};

// Matches every proposal to its max-IoU target (ties: lower target index).
// IoU >= fg_iou -> foreground carrying the target's label and weight;
// IoU < bg_iou -> background with weight 1; in between -> ignored.
std::vector<Assignment> assign_proposals(const std::vector<Box>& proposals,
                                         const std::vector<TargetBox>& targets,
                                         double fg_iou, double bg_iou);

// One line of the detection text exchange format:
//   image_id class score x_min y_min x_max y_max [p0,p1,...,pC] [consistency]
// probs and consistency are optional; consistency only appears in pseudo
// label dumps.
struct DetRecord {
  std::string image_id;
  Detection det;
  bool has_probs = false;
  std::optional<double> consistency;
};

std::string format_det_record(const DetRecord& r);
DetRecord parse_det_record(const std::string& line);

void save_det_records(const std::string& path,
                      const std::vector<DetRecord>& records);
std::vector<DetRecord> load_det_records(const std::string& path);

}  // namespace cst

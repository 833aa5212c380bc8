#pragma once

#include <vector>

#include "cst/boxops.hpp"
#include "cst/dataset.hpp"
#include "cst/detector.hpp"
#include "cst/evalmetrics.hpp"

namespace cst {

struct InferenceOptions {
  double score_floor = 0.05;
  double nms_iou = 0.5;
  int max_dets = 100;   // per image, by score
  double wbf_iou = 0.55;
};

// Single-model test pipeline: raw detections, score floor, NMS, top-k.
std::vector<Detection> run_inference(const DetectorModel& model,
                                     const Tensor3<float>& image,
                                     const InferenceOptions& opt = {});

// Ensemble pipeline: each model runs the single-model pipeline, then the
// per-model outputs are fused with WBF and truncated to top-k.
std::vector<Detection> run_ensemble_inference(
    const std::vector<const DetectorModel*>& models,
    const Tensor3<float>& image, const InferenceOptions& opt = {});

EvalReport evaluate_model(const DetectorModel& model,
                          const std::vector<LabeledExample>& data,
                          const InferenceOptions& opt = {});

EvalReport evaluate_ensemble(const std::vector<const DetectorModel*>& models,
                             const std::vector<LabeledExample>& data,
                             const InferenceOptions& opt = {});

}  // namespace cst

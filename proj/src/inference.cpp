#include "cst/inference.hpp"

#include <algorithm>

namespace cst {

namespace {

std::vector<Detection> top_k(std::vector<Detection> dets, int k) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.score > b.score;
                   });
  if (static_cast<int>(dets.size()) > k) dets.resize(k);
  return dets;
}

std::vector<ImageGroundTruth> ground_truth_of(
    const std::vector<LabeledExample>& data) {
  std::vector<ImageGroundTruth> gts;
  gts.reserve(data.size());
  for (const auto& ex : data) gts.push_back({ex.id, ex.annotations});
  return gts;
}

}  // namespace

std::vector<Detection> run_inference(const DetectorModel& model,
                                     const Tensor3<float>& image,
                                     const InferenceOptions& opt) {
  std::vector<Detection> dets = model.detect(image);
  dets = confidence_filter(dets, opt.score_floor);
  dets = nms(dets, opt.nms_iou);
  return top_k(std::move(dets), opt.max_dets);
}

std::vector<Detection> run_ensemble_inference(
    const std::vector<const DetectorModel*>& models,
    const Tensor3<float>& image, const InferenceOptions& opt) {
  if (models.empty()) return {};
  std::vector<std::vector<Detection>> per_model;
  per_model.reserve(models.size());
  for (const DetectorModel* m : models)
    per_model.push_back(run_inference(*m, image, opt));
  std::vector<Detection> fused = wbf(per_model, opt.wbf_iou);
  fused = confidence_filter(fused, opt.score_floor);
  return top_k(std::move(fused), opt.max_dets);
}

EvalReport evaluate_model(const DetectorModel& model,
                          const std::vector<LabeledExample>& data,
                          const InferenceOptions& opt) {
  std::vector<ImageDetections> dets;
  dets.reserve(data.size());
  for (const auto& ex : data)
    dets.push_back({ex.id, run_inference(model, ex.image, opt)});
  return evaluate_detections(dets, ground_truth_of(data),
                             model.arch.num_classes);
}

EvalReport evaluate_ensemble(const std::vector<const DetectorModel*>& models,
                             const std::vector<LabeledExample>& data,
                             const InferenceOptions& opt) {
  if (models.empty()) throw std::invalid_argument("no models to ensemble");
  std::vector<ImageDetections> dets;
  dets.reserve(data.size());
  for (const auto& ex : data)
    dets.push_back({ex.id, run_ensemble_inference(models, ex.image, opt)});
  return evaluate_detections(dets, ground_truth_of(data),
                             models[0]->arch.num_classes);
}

}  // namespace cst

#include "cst/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <limits>
#include <map>
#include <numeric>

using nlohmann::json;

namespace cst {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double mean_defined(const std::vector<double>& v) {
  double s = 0;
  int n = 0;
  for (double x : v)
    if (!std::isnan(x)) {
      s += x;
      ++n;
    }
  return n ? s / n : kNan;
}

}  // namespace

std::vector<double> average_precision(const std::vector<ImageDetections>& dets,
                                      const std::vector<ImageGroundTruth>& gts,
                                      int num_classes, double iou_thresh) {
  std::map<std::string, size_t> gt_index;
  for (size_t im = 0; im < gts.size(); ++im) gt_index[gts[im].image_id] = im;
  // Detection image index -> ground truth image index (-1: no GT image, all FP).
  std::vector<long long> det_to_gt(dets.size(), -1);
  for (size_t im = 0; im < dets.size(); ++im) {
    auto it = gt_index.find(dets[im].image_id);
    if (it != gt_index.end()) det_to_gt[im] = static_cast<long long>(it->second);
  }

  std::vector<double> out(num_classes, kNan);
  for (int cls = 0; cls < num_classes; ++cls) {
    struct Cand {
      double score;
      size_t image;
      size_t det;
    };
    std::vector<Cand> cands;
    long long n_gt = 0;
    for (size_t im = 0; im < gts.size(); ++im)
      for (const auto& g : gts[im].boxes)
        if (g.label == cls) ++n_gt;
    for (size_t im = 0; im < dets.size(); ++im)
      for (size_t d = 0; d < dets[im].dets.size(); ++d)
        if (dets[im].dets[d].label == cls)
          cands.push_back({dets[im].dets[d].score, im, d});
    if (n_gt == 0) continue;
    out[cls] = 0.0;
    if (cands.empty()) continue;

    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.score > b.score; });

    std::vector<std::vector<bool>> used(gts.size());
    for (size_t im = 0; im < gts.size(); ++im)
      used[im].assign(gts[im].boxes.size(), false);

    std::vector<int> tp(cands.size(), 0);
    for (size_t i = 0; i < cands.size(); ++i) {
      const auto& c = cands[i];
      const long long gi = det_to_gt[c.image];
      if (gi < 0) continue;
      const auto& gt_boxes = gts[gi].boxes;
      double best = 0;
      int best_j = -1;
      for (size_t j = 0; j < gt_boxes.size(); ++j) {
        if (gt_boxes[j].label != cls || used[gi][j]) continue;
        const double v = iou(dets[c.image].dets[c.det].box, gt_boxes[j].box);
        if (v > best) {
          best = v;
          best_j = static_cast<int>(j);
        }
      }
      if (best_j >= 0 && best >= iou_thresh) {
        tp[i] = 1;
        used[gi][best_j] = true;
      }
    }

    std::vector<double> recall(cands.size()), prec(cands.size());
    long long tp_cum = 0;
    for (size_t i = 0; i < cands.size(); ++i) {
      tp_cum += tp[i];
      recall[i] = static_cast<double>(tp_cum) / n_gt;
      prec[i] = static_cast<double>(tp_cum) / (i + 1);
    }
    // Precision envelope from the right, then 101-point sum.
    std::vector<double> env = prec;
    for (int i = static_cast<int>(env.size()) - 2; i >= 0; --i)
      env[i] = std::max(env[i], env[i + 1]);
    double ap = 0;
    size_t ptr = 0;
    for (int r = 0; r <= 100; ++r) {
      const double want = r / 100.0;
      while (ptr < recall.size() && recall[ptr] < want - 1e-12) ++ptr;
      if (ptr < recall.size()) ap += env[ptr];
    }
    out[cls] = ap / 101.0;
  }
  return out;
}

EvalReport evaluate_detections(const std::vector<ImageDetections>& dets,
                               const std::vector<ImageGroundTruth>& gts,
                               int num_classes) {
  EvalReport rep;
  rep.num_classes = num_classes;
  for (int t = 0; t < 10; ++t) rep.iou_thresholds.push_back(0.5 + 0.05 * t);
  for (const auto& g : gts) rep.gt_count += static_cast<long long>(g.boxes.size());
  for (const auto& d : dets) rep.det_count += static_cast<long long>(d.dets.size());

  std::vector<double> per_thresh_mean;
  for (double t : rep.iou_thresholds) {
    rep.ap.push_back(average_precision(dets, gts, num_classes, t));
    per_thresh_mean.push_back(mean_defined(rep.ap.back()));
  }
  rep.ap50 = per_thresh_mean.empty() ? kNan : per_thresh_mean[0];
  rep.map = mean_defined(per_thresh_mean);
  return rep;
}

std::string EvalReport::to_json() const {
  auto clean = [](double v) -> json {
    if (std::isnan(v)) return nullptr;
    return v;
  };
  json j;
  j["num_classes"] = num_classes;
  j["iou_thresholds"] = iou_thresholds;
  json ap_j = json::array();
  for (const auto& row : ap) {
    json r = json::array();
    for (double v : row) r.push_back(clean(v));
    ap_j.push_back(r);
  }
  j["ap"] = ap_j;
  j["ap50"] = clean(ap50);
  j["map"] = clean(map);
  j["gt_count"] = gt_count;
  j["det_count"] = det_count;
  return j.dump(1);
}

std::string EvalReport::summary_line() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "AP50=%.4f mAP=%.4f",
                std::isnan(ap50) ? 0.0 : ap50, std::isnan(map) ? 0.0 : map);
  return buf;
}

std::vector<bool> pseudo_label_accuracy(const PseudoLabelSet& pl,
                                        const std::vector<TargetBox>& hidden_gt,
                                        double iou_thresh) {
  std::vector<bool> correct(pl.entries.size(), false);
  std::vector<size_t> order(pl.entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return pl.entries[a].score > pl.entries[b].score;
  });
  std::vector<bool> used(hidden_gt.size(), false);
  for (size_t i : order) {
    const auto& e = pl.entries[i];
    double best = 0;
    int best_j = -1;
    for (size_t j = 0; j < hidden_gt.size(); ++j) {
      if (used[j] || hidden_gt[j].label != e.label) continue;
      const double v = iou(e.box, hidden_gt[j].box);
      if (v > best) {
        best = v;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0 && best >= iou_thresh) {
      correct[i] = true;
      used[best_j] = true;
    }
  }
  return correct;
}

}  // namespace cst

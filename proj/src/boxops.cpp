#include "cst/boxops.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cst {

bool Box::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_max > x_min && y_max > y_min;
}

Detection make_detection(Box box, std::vector<double> class_probs) {
  if (class_probs.size() < 2)
    throw std::invalid_argument("class_probs needs >= 1 foreground class + bg");
  Detection d;
  d.box = box;
  d.class_probs = std::move(class_probs);
  const int fg = static_cast<int>(d.class_probs.size()) - 1;
  d.label = 0;
  d.score = d.class_probs[0];
  for (int k = 1; k < fg; ++k) {
    if (d.class_probs[k] > d.score) {
      d.score = d.class_probs[k];
      d.label = k;
    }
  }
  return d;
}

double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<Detection> nms(const std::vector<Detection>& dets,
                           double iou_thresh) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dets[a].score > dets[b].score;
  });

  std::vector<Detection> kept;
  std::vector<int> kept_idx;
  kept.reserve(dets.size());
  for (int i : order) {
    bool suppressed = false;
    for (int j : kept_idx) {
      if (dets[j].label != dets[i].label) continue;
      if (iou(dets[j].box, dets[i].box) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      kept_idx.push_back(i);
      kept.push_back(dets[i]);
    }
  }
  return kept;
}

std::vector<Detection> confidence_filter(const std::vector<Detection>& dets,
                                         double tau) {
  std::vector<Detection> out;
  out.reserve(dets.size());
  for (const auto& d : dets)
    if (d.score >= tau) out.push_back(d);
  return out;
}

namespace {

struct FusionCluster {
  Detection fused;          // running fused box, class_probs weighted too
  double score_sum = 0;     // sum of member scores
  double prob_weight = 0;   // same as score_sum, kept for clarity
  int count = 0;

  void add(const Detection& d) {
    if (count == 0) {
      fused = d;
      score_sum = d.score;
      prob_weight = d.score;
      count = 1;
      return;
    }
    const double w_old = score_sum;
    const double w_new = d.score;
    const double w_tot = w_old + w_new;
    auto mix = [&](double a, double b) {
      return w_tot > 0 ? (a * w_old + b * w_new) / w_tot : 0.5 * (a + b);
    };
    fused.box.x_min = mix(fused.box.x_min, d.box.x_min);
    fused.box.y_min = mix(fused.box.y_min, d.box.y_min);
    fused.box.x_max = mix(fused.box.x_max, d.box.x_max);
    fused.box.y_max = mix(fused.box.y_max, d.box.y_max);
    for (size_t k = 0; k < fused.class_probs.size(); ++k)
      fused.class_probs[k] = mix(fused.class_probs[k], d.class_probs[k]);
    score_sum = w_tot;
    count += 1;
  }
};

}  // namespace

std::vector<Detection> wbf(const std::vector<std::vector<Detection>>& det_sets,
                           double iou_thresh) {
  const int num_models = static_cast<int>(det_sets.size());
  if (num_models == 0) return {};

  // Pool everything, then process by descending score (stable on the
  // model-major pooled order).
  std::vector<Detection> pool;
  for (const auto& set : det_sets)
    pool.insert(pool.end(), set.begin(), set.end());
  std::vector<int> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return pool[a].score > pool[b].score;
  });

  std::vector<FusionCluster> clusters;
  for (int i : order) {
    const Detection& d = pool[i];
    int best = -1;
    double best_iou = iou_thresh;
    for (size_t c = 0; c < clusters.size(); ++c) {
      if (clusters[c].fused.label != d.label) continue;
      const double v = iou(clusters[c].fused.box, d.box);
      if (v >= best_iou) {
        // ">" keeps the earliest cluster on exact ties.
        if (best < 0 || v > best_iou) {
          best = static_cast<int>(c);
          best_iou = v;
        }
      }
    }
    if (best < 0) {
      clusters.emplace_back();
      clusters.back().add(d);
    } else {
      clusters[best].add(d);
    }
  }

  std::vector<Detection> out;
  out.reserve(clusters.size());
  for (auto& c : clusters) {
    Detection d = c.fused;
    const double mean = c.score_sum / c.count;
    const double scale =
        static_cast<double>(std::min(c.count, num_models)) / num_models;
    d.score = mean * scale;
    out.push_back(std::move(d));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.score > b.score;
                   });
  return out;
}

std::vector<Assignment> assign_proposals(const std::vector<Box>& proposals,
                                         const std::vector<TargetBox>& targets,
                                         double fg_iou, double bg_iou) {
  std::vector<Assignment> out(proposals.size());
  for (size_t i = 0; i < proposals.size(); ++i) {
    Assignment& a = out[i];
    a.proposal_index = static_cast<int>(i);
    if (targets.empty()) {
      a.role = AssignRole::kBackground;
      a.weight = 1.0;
      continue;
    }
    double best = 0;
    int best_j = -1;
    for (size_t j = 0; j < targets.size(); ++j) {
      const double v = iou(proposals[i], targets[j].box);
      if (v > best) {
        best = v;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0 && best >= fg_iou) {
      a.role = AssignRole::kForeground;
      a.matched_pseudo_index = best_j;
      a.label = targets[best_j].label;
      a.weight = targets[best_j].weight;
    } else if (best < bg_iou) {
      a.role = AssignRole::kBackground;
      a.weight = 1.0;
    } else {
      a.role = AssignRole::kIgnored;
      a.weight = 0.0;
    }
  }
  return out;
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string format_det_record(const DetRecord& r) {
  std::ostringstream os;
  os << r.image_id << ' ' << r.det.label << ' ' << fmt_double(r.det.score)
     << ' ' << fmt_double(r.det.box.x_min) << ' ' << fmt_double(r.det.box.y_min)
     << ' ' << fmt_double(r.det.box.x_max) << ' '
     << fmt_double(r.det.box.y_max);
  if (r.has_probs && !r.det.class_probs.empty()) {
    os << ' ';
    for (size_t k = 0; k < r.det.class_probs.size(); ++k) {
      if (k) os << ',';
      os << fmt_double(r.det.class_probs[k]);
    }
  }
  if (r.consistency) os << ' ' << fmt_double(*r.consistency);
  return os.str();
}

DetRecord parse_det_record(const std::string& line) {
  std::istringstream is(line);
  DetRecord r;
  std::string tok;
  if (!(is >> r.image_id >> r.det.label >> r.det.score >> r.det.box.x_min >>
        r.det.box.y_min >> r.det.box.x_max >> r.det.box.y_max))
    throw std::runtime_error("bad detection record: " + line);
  while (is >> tok) {
    if (tok.find(',') != std::string::npos) {
      r.has_probs = true;
      std::istringstream ps(tok);
      std::string p;
      r.det.class_probs.clear();
      while (std::getline(ps, p, ',')) r.det.class_probs.push_back(std::stod(p));
    } else {
      r.consistency = std::stod(tok);
    }
  }
  return r;
}

void save_det_records(const std::string& path,
                      const std::vector<DetRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  for (const auto& r : records) out << format_det_record(r) << '\n';
}

std::vector<DetRecord> load_det_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::vector<DetRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_det_record(line));
  }
  return out;
}

}  // namespace cst

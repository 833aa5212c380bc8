#include "cst/dcr.hpp"

#include <cmath>
#include <stdexcept>

namespace cst {

ConsistencyStyle consistency_style_from_string(const std::string& s) {
  if (s == "l1") return ConsistencyStyle::kL1Sigmoid;
  if (s == "js") return ConsistencyStyle::kJsFocus;
  if (s == "js-literal") return ConsistencyStyle::kJsLiteral;
  throw std::invalid_argument("unknown consistency style: " + s);
}

std::string consistency_style_name(ConsistencyStyle s) {
  switch (s) {
    case ConsistencyStyle::kL1Sigmoid: return "l1";
    case ConsistencyStyle::kJsFocus: return "js";
    default: return "js-literal";
  }
}

double consistency_l1(const std::vector<double>& p1,
                      const std::vector<double>& p2) {
  if (p1.size() != p2.size())
    throw std::invalid_argument("distribution length mismatch");
  double l1 = 0;
  for (size_t i = 0; i < p1.size(); ++i) l1 += std::abs(p1[i] - p2[i]);
  const double sig = 1.0 / (1.0 + std::exp(-l1));
  return 2.0 * (1.0 - sig);
}

namespace {

double js_divergence_base2(const std::vector<double>& p,
                           const std::vector<double>& q) {
  const double inv_ln2 = 1.0 / std::log(2.0);
  double js = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0) js += 0.5 * p[i] * std::log(p[i] / m) * inv_ln2;
    if (q[i] > 0) js += 0.5 * q[i] * std::log(q[i] / m) * inv_ln2;
  }
  return js;
}

double pow_00_is_1(double base, double e) {
  if (e == 0) return 1.0;
  if (base <= 0) return 0.0;
  return std::pow(base, e);
}

}  // namespace

double consistency_js(const std::vector<double>& p1,
                      const std::vector<double>& p2, double beta,
                      bool literal) {
  if (p1.size() != p2.size())
    throw std::invalid_argument("distribution length mismatch");
  double js = js_divergence_base2(p1, p2);
  js = std::min(std::max(js, 0.0), 1.0);
  return literal ? pow_00_is_1(js, beta) : pow_00_is_1(1.0 - js, beta);
}

double consistency_value(const std::vector<double>& p1,
                         const std::vector<double>& p2,
                         const ConsistencyConfig& cfg) {
  switch (cfg.style) {
    case ConsistencyStyle::kL1Sigmoid:
      return consistency_l1(p1, p2);
    case ConsistencyStyle::kJsFocus:
      return consistency_js(p1, p2, cfg.beta, false);
    default:
      return consistency_js(p1, p2, cfg.beta, true);
  }
}

double reweighted_cls_loss(const std::vector<double>& fg_losses,
                           const std::vector<double>& fg_weights,
                           const std::vector<double>& bg_losses) {
  if (fg_losses.size() != fg_weights.size())
    throw std::invalid_argument("foreground losses/weights length mismatch");
  double loss = 0;
  if (!fg_losses.empty()) {
    double s = 0;
    for (size_t i = 0; i < fg_losses.size(); ++i)
      s += fg_weights[i] * fg_losses[i];
    loss += s / static_cast<double>(fg_losses.size());
  }
  if (!bg_losses.empty()) {
    double s = 0;
    for (double l : bg_losses) s += l;
    loss += s / static_cast<double>(bg_losses.size());
  }
  return loss;
}

void annotate_consistency(PseudoLabelSet& pl,
                          const DetectorModel& other_teacher,
                          const Tensor3<float>& weak_image,
                          const ConsistencyConfig& cfg) {
  pl.consistency.clear();
  if (pl.entries.empty()) return;
  std::vector<Box> boxes;
  boxes.reserve(pl.entries.size());
  for (const auto& e : pl.entries) boxes.push_back(e.box);
  const auto p2 = other_teacher.score_boxes(weak_image, boxes);
  pl.consistency.reserve(pl.entries.size());
  for (size_t i = 0; i < pl.entries.size(); ++i)
    pl.consistency.push_back(consistency_value(pl.entries[i].p1, p2[i], cfg));
}

}  // namespace cst

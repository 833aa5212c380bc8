#pragma once

#include <string>
#include <vector>

#include "cst/detector.hpp"
#include "cst/pseudolabel.hpp"

namespace cst {

enum class ConsistencyStyle {
  kL1Sigmoid,  // 2*(1 - sigmoid(||p1-p2||_1))
  kJsFocus,    // (1 - JS)^beta: consistent boxes keep weight
  kJsLiteral,  // JS^beta: kept for auditing, inverts the weighting
};

struct ConsistencyConfig {
  ConsistencyStyle style = ConsistencyStyle::kL1Sigmoid;
  double beta = 2.0;
};

ConsistencyStyle consistency_style_from_string(const std::string& s);
std::string consistency_style_name(ConsistencyStyle s);

// c = 2*(1 - sigmoid(||p1 - p2||_1)). Equal distributions give 1; the
// attainable minimum is 2*(1 - sigmoid(2)) since the L1 distance of two
// distributions is at most 2.
double consistency_l1(const std::vector<double>& p1,
                      const std::vector<double>& p2);

// Jensen-Shannon divergence with base-2 logs (range [0,1]). Default maps
// through (1-JS)^beta so inconsistent boxes are down-weighted; literal=true
// evaluates JS^beta instead. 0^0 is defined as 1.
double consistency_js(const std::vector<double>& p1,
                      const std::vector<double>& p2, double beta,
                      bool literal);

double consistency_value(const std::vector<double>& p1,
                         const std::vector<double>& p2,
                         const ConsistencyConfig& cfg);

// Reweighted classification loss: (1/N_f) * sum_i w_i*l_i + (1/N_b) * sum_j l_j.
// Empty foreground or background contributes 0.
double reweighted_cls_loss(const std::vector<double>& fg_losses,
                           const std::vector<double>& fg_weights,
                           const std::vector<double>& bg_losses);

// Fills pl.consistency: p2 for each entry comes from the opposite teacher
// scoring the entry's box on the same weak image.
void annotate_consistency(PseudoLabelSet& pl,
                          const DetectorModel& other_teacher,
                          const Tensor3<float>& weak_image,
                          const ConsistencyConfig& cfg);

}  // namespace cst

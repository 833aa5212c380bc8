#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cst/augment.hpp"
#include "cst/dataset.hpp"
#include "cst/dcr.hpp"
#include "cst/detector.hpp"
#include "cst/pseudolabel.hpp"

namespace cst {

enum class DcrPairing {
  kTeacherTeacher,   // p2 from the opposite teacher (default)
  kOwnTeacherStudent,    // p2 from the producing teacher's own student
  kCrossTeacherStudent,  // p2 from the student being supervised
};

DcrPairing dcr_pairing_from_string(const std::string& s);
std::string dcr_pairing_name(DcrPairing p);

struct TrainConfig {
  std::uint64_t seed = 1;
  double alpha = 4.0;
  double tau = 0.7;
  float ema_momentum = 0.9996f;
  int burn_in_iters = 500;
  int total_iters = 5000;
  double lr = 0.01;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_labeled = 8;  // n_u equals n_l
  double labeled_fraction = 0.1;
  std::uint64_t split_seed = 1;
  double nms_iou = 0.5;
  ConsistencyConfig consistency;
  bool cycle_on = true;
  bool dcr_on = true;
  DcrPairing dcr_pairing = DcrPairing::kTeacherTeacher;
  bool shared_strong_view = true;
  bool supervised_only = false;
  ArchSpec arch;
  AugmentConfig augment;
  DetLossOptions loss;
  int checkpoint_every = 1000;
};

struct SgdState {
  std::vector<float> velocity;  // aligned with the model's flat parameters
};

struct CycleState {
  DetectorModel s1, s2;  // trainable students
  DetectorModel t1, t2;  // EMA teachers, never optimized
  SgdState opt1, opt2;
  int iteration = 0;  // completed iterations (burn-in included)
};

// theta_t <- m * theta_t + (1 - m) * theta_s, elementwise. The model-level
// overload applies the identical expression parameter array by parameter
// array, so a flat shadow recomputation reproduces it bit for bit.
void ema_update(std::vector<float>& teacher, const std::vector<float>& student,
                float m);
void ema_update(DetectorModel& teacher, const DetectorModel& student, float m);

// v <- mu*v + (g + wd*theta); theta <- theta - lr*v, over named params in order.
void sgd_step(DetectorModel& model, SgdState& opt, double lr, double mu,
              double wd);

// Deterministic stream plumbing shared by the trainer and by reference
// loops in tests. Keyed derivation makes every stream independent of
// evaluation order and worker count.
namespace streams {
std::vector<int> batch_indices(std::uint64_t seed, const char* purpose,
                               int iter, int pool_size, int n);
// Labeled image -> (weak view, strong view), Alg. "D <- w(Xl)+s(Xl)".
std::pair<AugmentedView, AugmentedView> labeled_views(
    const LabeledExample& ex, std::uint64_t seed, int iter, int slot,
    const AugmentConfig& cfg);
struct UnlabeledViews {
  AugmentedView weak;     // one shared weak view feeds both teachers
  AugmentedView strong1;  // strong view for student 1
  AugmentedView strong2;  // equals strong1 when shared_strong_view
};
UnlabeledViews unlabeled_views(const UnlabeledExample& ex, std::uint64_t seed,
                               int iter, int slot, const AugmentConfig& cfg,
                               bool shared_strong);
Rng sup_loss_rng(std::uint64_t seed, int iter, int slot, int view,
                 int model_id);
Rng unsup_loss_rng(std::uint64_t seed, int iter, int slot, int model_id);
Rng burnin_sup_loss_rng(std::uint64_t model_seed, int iter, int slot,
                        int view);
}  // namespace streams

struct StepMetrics {
  int iter = 0;
  double l_s1 = 0, l_u1 = 0, l_s2 = 0, l_u2 = 0;
  double l1_total = 0, l2_total = 0;
  double u_reg_s1 = 0, u_reg_s2 = 0;  // regression on unlabeled: must stay 0
  double n_pseudo_mean = 0;
  std::optional<double> c_mean;
  double w_dist_t1s2 = 0;  // teacher 1 vs the student it supervises
  double w_dist_t2s1 = 0;
  double lr = 0;
  std::string to_json_line() const;
};

StepMetrics parse_metrics_line(const std::string& line);

struct StepObserver {
  std::function<void(int iter, int slot, const PseudoLabelSet& from_t1,
                     const PseudoLabelSet& from_t2)>
      on_pseudo;
  std::function<void(const CycleState&)> before_optimizer;
  std::function<void(const CycleState&)> after_optimizer;
  std::function<void(const CycleState&)> after_ema;
  std::function<void(int iter, const CycleState&, const std::string& path)>
      on_checkpoint;
};

using MetricsFn = std::function<void(const StepMetrics&)>;

// Independent supervised training of S1/S2 from two seeds, then T <- S copy.
CycleState burn_in(std::uint64_t seed1, std::uint64_t seed2,
                   const std::vector<LabeledExample>& labeled,
                   const TrainConfig& cfg, const MetricsFn& metrics = nullptr,
                   const StepObserver* obs = nullptr);

// One mutual-learning iteration: pseudo labels, consistency annotation,
// supervised + unsupervised losses, SGD on students, EMA on teachers.
StepMetrics train_step(CycleState& state,
                       const std::vector<LabeledExample>& labeled,
                       const std::vector<UnlabeledExample>& unlabeled,
                       const TrainConfig& cfg, int iter,
                       const StepObserver* obs = nullptr);

struct RunResult {
  CycleState state;
  std::string checkpoint_path;
  SplitResult split;
};

// Full pipeline on a dataset directory: split, burn-in (or resume), training
// loop, metrics.jsonl, periodic checkpoints, manifest, lock file.
RunResult run_training(const TrainConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir, bool force = false,
                       bool stop_after_burn_in = false,
                       const StepObserver* obs = nullptr);

// (iteration, path) pairs for every ckpt_NNNNNN.bin under dir, ascending.
std::vector<std::pair<int, std::string>> list_checkpoints(
    const std::string& dir);

void save_checkpoint(const std::string& path, const CycleState& state,
                     const TrainConfig& cfg);
struct LoadedCheckpoint {
  CycleState state;
  ArchSpec arch;
  std::uint64_t seed = 0;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace cst

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cst/dataset.hpp"
#include "cst/detector.hpp"

namespace cst {

// l2 norm of (a - b).
double weight_distance(const std::vector<float>& a,
                       const std::vector<float>& b);
double weight_distance(const DetectorModel& a, const DetectorModel& b);

// Per-box comparison of two models on the same image regions: pooled feature
// distance and KL(teacher || student) in nats over the class distributions.
// Stats are absent, not zero, when the box list is empty.
struct RegionStats {
  std::optional<double> mean_feature_dist;
  std::optional<double> mean_kl;
  int num_boxes = 0;
};
RegionStats region_feature_stats(const DetectorModel& teacher,
                                 const DetectorModel& student,
                                 const Tensor3<float>& image,
                                 const std::vector<Box>& boxes);

double kl_divergence_nats(const std::vector<double>& p,
                          const std::vector<double>& q);

// Point-biserial correlation between a continuous value and a binary outcome.
// NaN when either group is empty or the values are constant.
double point_biserial(const std::vector<double>& x, const std::vector<bool>& y);

struct ConsistencyBins {
  struct Bin {
    double lo = 0, hi = 0;
    int accurate = 0, inaccurate = 0;
    int count() const { return accurate + inaccurate; }
    double accuracy() const {
      return count() ? static_cast<double>(accurate) / count() : 0.0;
    }
  };
  std::vector<Bin> bins;
  double correlation = 0;  // point-biserial; NaN when undefined
  int total = 0;
};

// Buckets (consistency, correct) samples into num_bins equal-width bins over
// [lo, hi]; out-of-range values clamp into the edge bins.
ConsistencyBins bin_consistency(
    const std::vector<std::pair<double, bool>>& samples, int num_bins,
    double lo, double hi);

// One row per inspected checkpoint. Baseline columns stay absent unless a
// matched single-pair run is supplied for comparison.
struct CouplingRecord {
  int iter = 0;
  double w_t1s2 = 0, w_t2s1 = 0;
  std::optional<double> w_ts;
  std::optional<double> d_t1s2, d_t2s1, d_ts;
  std::optional<double> kl_t1s2, kl_t2s1, kl_ts;
};

struct CouplingTrace {
  std::vector<CouplingRecord> records;
};

std::string coupling_trace_csv(const CouplingTrace& trace);
std::string consistency_bins_csv(const ConsistencyBins& bins);

struct DiagnoseOptions {
  std::string run_dir;
  std::string baseline_dir;  // optional matched single-pair run
  std::string data_dir;      // defaults to the dir recorded in the manifest
  std::string out_dir;       // defaults to <run_dir>/diagnostics
  int feature_images = 8;    // unlabeled images sampled for region stats
  int bin_count = 5;
  std::uint64_t seed = 7;
};

struct DiagnoseResult {
  CouplingTrace trace;
  ConsistencyBins bins;
  std::vector<std::string> written;  // file paths
};

// Replays saved checkpoints read-only: coupling_trace.csv,
// consistency_bins.csv, loss_curves.csv and one PNG per figure analogue.
DiagnoseResult run_diagnose(const DiagnoseOptions& opt);

}  // namespace cst

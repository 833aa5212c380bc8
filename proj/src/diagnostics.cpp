#include "cst/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cst/dcr.hpp"
#include "cst/evalmetrics.hpp"
#include "cst/io.hpp"
#include "cst/plot.hpp"
#include "cst/pseudolabel.hpp"
#include "cst/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cst {

double weight_distance(const std::vector<float>& a,
                       const std::vector<float>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("weight_distance: length mismatch");
  double sum = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return std::sqrt(sum);
}

double weight_distance(const DetectorModel& a, const DetectorModel& b) {
  return weight_distance(a.flat_parameters(), b.flat_parameters());
}

double kl_divergence_nats(const std::vector<double>& p,
                          const std::vector<double>& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("kl divergence: length mismatch");
  double sum = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0) continue;
    if (q[i] <= 0) return std::numeric_limits<double>::infinity();
    sum += p[i] * std::log(p[i] / q[i]);
  }
  return sum;
}

RegionStats region_feature_stats(const DetectorModel& teacher,
                                 const DetectorModel& student,
                                 const Tensor3<float>& image,
                                 const std::vector<Box>& boxes) {
  RegionStats out;
  out.num_boxes = static_cast<int>(boxes.size());
  if (boxes.empty()) return out;
  const auto pt = teacher.score_boxes(image, boxes);
  const auto ps = student.score_boxes(image, boxes);
  double d_sum = 0, kl_sum = 0;
  for (size_t i = 0; i < boxes.size(); ++i) {
    const auto ft = teacher.region_feature(image, boxes[i]);
    const auto fsd = student.region_feature(image, boxes[i]);
    double d2 = 0;
    for (size_t k = 0; k < ft.size(); ++k) {
      const double d = ft[k] - fsd[k];
      d2 += d * d;
    }
    d_sum += std::sqrt(d2);
    kl_sum += kl_divergence_nats(pt[i], ps[i]);
  }
  out.mean_feature_dist = d_sum / boxes.size();
  out.mean_kl = kl_sum / boxes.size();
  return out;
}

double point_biserial(const std::vector<double>& x,
                      const std::vector<bool>& y) {
  if (x.size() != y.size())
    throw std::invalid_argument("point_biserial: length mismatch");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const size_t n = x.size();
  if (n < 2) return nan;
  double m1 = 0, m0 = 0;
  size_t n1 = 0, n0 = 0;
  for (size_t i = 0; i < n; ++i) {
    if (y[i]) {
      m1 += x[i];
      ++n1;
    } else {
      m0 += x[i];
      ++n0;
    }
  }
  if (n1 == 0 || n0 == 0) return nan;
  m1 /= n1;
  m0 /= n0;
  double mean = 0;
  for (const double v : x) mean += v;
  mean /= n;
  double var = 0;
  for (const double v : x) var += (v - mean) * (v - mean);
  var /= n;
  if (var <= 0) return nan;
  return (m1 - m0) / std::sqrt(var) *
         std::sqrt(static_cast<double>(n1) * n0 / (static_cast<double>(n) * n));
}

ConsistencyBins bin_consistency(
    const std::vector<std::pair<double, bool>>& samples, int num_bins,
    double lo, double hi) {
  if (num_bins < 1 || !(hi > lo))
    throw std::invalid_argument("bin_consistency: bad bin layout");
  ConsistencyBins out;
  out.bins.resize(num_bins);
  const double width = (hi - lo) / num_bins;
  for (int b = 0; b < num_bins; ++b) {
    out.bins[b].lo = lo + b * width;
    out.bins[b].hi = b + 1 == num_bins ? hi : lo + (b + 1) * width;
  }
  std::vector<double> xs;
  std::vector<bool> ys;
  for (const auto& [c, correct] : samples) {
    int idx = static_cast<int>((c - lo) / width);
    idx = std::clamp(idx, 0, num_bins - 1);
    if (correct)
      ++out.bins[idx].accurate;
    else
      ++out.bins[idx].inaccurate;
    xs.push_back(c);
    ys.push_back(correct);
  }
  out.total = static_cast<int>(samples.size());
  out.correlation = point_biserial(xs, ys);
  return out;
}

namespace {

std::string num_cell(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string opt_cell(const std::optional<double>& v) {
  return v ? num_cell(*v) : std::string();
}

}  // namespace

std::string coupling_trace_csv(const CouplingTrace& trace) {
  std::ostringstream out;
  out << "iter,w_t1s2,w_t2s1,w_ts,d_t1s2,d_t2s1,d_ts,kl_t1s2,kl_t2s1,kl_ts\n";
  for (const auto& r : trace.records)
    out << r.iter << ',' << num_cell(r.w_t1s2) << ',' << num_cell(r.w_t2s1)
        << ',' << opt_cell(r.w_ts) << ',' << opt_cell(r.d_t1s2) << ','
        << opt_cell(r.d_t2s1) << ',' << opt_cell(r.d_ts) << ','
        << opt_cell(r.kl_t1s2) << ',' << opt_cell(r.kl_t2s1) << ','
        << opt_cell(r.kl_ts) << '\n';
  return out.str();
}

std::string consistency_bins_csv(const ConsistencyBins& bins) {
  std::ostringstream out;
  out << "# point_biserial=" << num_cell(bins.correlation)
      << " total=" << bins.total << "\n";
  out << "bin_lo,bin_hi,accurate,inaccurate,accuracy\n";
  for (const auto& b : bins.bins)
    out << num_cell(b.lo) << ',' << num_cell(b.hi) << ',' << b.accurate << ','
        << b.inaccurate << ',' << num_cell(b.accuracy()) << '\n';
  return out.str();
}

namespace {

struct LoadedRun {
  TrainConfig cfg;
  std::string data_dir;
  std::vector<std::pair<int, std::string>> ckpts;
};

LoadedRun open_run(const std::string& run_dir) {
  const fs::path mp = fs::path(run_dir) / "manifest.json";
  std::ifstream in(mp);
  if (!in) throw std::runtime_error("no manifest.json under " + run_dir);
  json mj;
  in >> mj;
  LoadedRun run;
  run.cfg = train_config_from_json(mj.at("config"));
  run.data_dir = mj.value("data_dir", "");
  run.ckpts = list_checkpoints(run_dir);
  if (run.ckpts.empty())
    throw std::runtime_error("no checkpoints under " + run_dir);
  return run;
}

std::vector<UnlabeledExample> unlabeled_pool(const std::string& run_dir,
                                             const std::string& data_dir) {
  std::vector<std::string> errors;
  auto data = load_dataset(data_dir, &errors);
  std::map<std::string, const LabeledExample*> by_id;
  for (const auto& ex : data) by_id[ex.id] = &ex;

  std::ifstream in(fs::path(run_dir) / "split.json");
  if (!in) throw std::runtime_error("no split.json under " + run_dir);
  json sj;
  in >> sj;
  std::vector<UnlabeledExample> pool;
  for (const auto& id : sj.at("unlabeled_ids")) {
    auto it = by_id.find(id.get<std::string>());
    if (it == by_id.end()) {
      std::cerr << "diagnose: unlabeled id " << id
                << " missing from dataset, skipped\n";
      continue;
    }
    pool.emplace_back(it->second->id, it->second->image,
                      it->second->annotations);
  }
  return pool;
}

std::vector<int> sample_indices(int pool, int want, Rng& rng) {
  std::vector<int> idx(pool);
  for (int i = 0; i < pool; ++i) idx[i] = i;
  const int k = std::min(want, pool);
  for (int i = 0; i < k; ++i) {
    const int j = rng.uniform_int(i, pool - 1);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

AugmentedView identity_view(const Tensor3<float>& image) {
  AugmentedView v;
  v.image = image;
  return v;
}

struct StatAccum {
  double sum = 0;
  long long count = 0;
  void add(const RegionStats& s, bool feature) {
    if (s.num_boxes == 0) return;
    const auto& v = feature ? s.mean_feature_dist : s.mean_kl;
    if (!v || !std::isfinite(*v)) return;
    sum += *v * s.num_boxes;
    count += s.num_boxes;
  }
  std::optional<double> mean() const {
    if (count == 0) return std::nullopt;
    return sum / count;
  }
};

// Feature/KL stats for one teacher-student pairing over the sampled images,
// on the teacher's own pseudo boxes.
void pair_stats(const DetectorModel& teacher, const DetectorModel& student,
                const std::vector<const UnlabeledExample*>& images,
                const TrainConfig& cfg, std::optional<double>* d_out,
                std::optional<double>* kl_out) {
  StatAccum d_acc, kl_acc;
  for (const UnlabeledExample* ex : images) {
    const PseudoLabelSet pl = generate_pseudo_labels(
        teacher, identity_view(ex->image), cfg.tau, cfg.nms_iou, 0);
    std::vector<Box> boxes;
    for (const auto& e : pl.entries) boxes.push_back(e.box);
    const RegionStats st =
        region_feature_stats(teacher, student, ex->image, boxes);
    d_acc.add(st, true);
    kl_acc.add(st, false);
  }
  *d_out = d_acc.mean();
  *kl_out = kl_acc.mean();
}

double consistency_floor(ConsistencyStyle style) {
  if (style == ConsistencyStyle::kL1Sigmoid)
    return 2.0 * (1.0 - 1.0 / (1.0 + std::exp(-2.0)));
  return 0.0;
}

void write_file(const std::string& path, const std::string& content,
                std::vector<std::string>* written) {
  std::ofstream out(path);
  out << content;
  written->push_back(path);
}

}  // namespace

DiagnoseResult run_diagnose(const DiagnoseOptions& opt) {
  LoadedRun run = open_run(opt.run_dir);
  const std::string data_dir =
      opt.data_dir.empty() ? run.data_dir : opt.data_dir;
  const std::string out_dir =
      opt.out_dir.empty() ? (fs::path(opt.run_dir) / "diagnostics").string()
                          : opt.out_dir;
  fs::create_directories(out_dir);

  std::map<int, std::string> baseline_ckpts;
  if (!opt.baseline_dir.empty())
    for (const auto& [it, path] : list_checkpoints(opt.baseline_dir))
      baseline_ckpts[it] = path;

  const std::vector<UnlabeledExample> pool =
      unlabeled_pool(opt.run_dir, data_dir);
  if (pool.empty())
    throw std::runtime_error("diagnose: empty unlabeled pool");

  Rng sample_rng = derive_rng(opt.seed, "diagnose-images");
  std::vector<const UnlabeledExample*> feat_images;
  for (const int i :
       sample_indices(static_cast<int>(pool.size()), opt.feature_images,
                      sample_rng))
    feat_images.push_back(&pool[i]);

  DiagnoseResult result;
  for (const auto& [iter, path] : run.ckpts) {
    const LoadedCheckpoint lc = load_checkpoint(path);
    CouplingRecord rec;
    rec.iter = iter;
    rec.w_t1s2 = weight_distance(lc.state.t1, lc.state.s2);
    rec.w_t2s1 = weight_distance(lc.state.t2, lc.state.s1);
    pair_stats(lc.state.t1, lc.state.s2, feat_images, run.cfg, &rec.d_t1s2,
               &rec.kl_t1s2);
    pair_stats(lc.state.t2, lc.state.s1, feat_images, run.cfg, &rec.d_t2s1,
               &rec.kl_t2s1);
    const auto bit = baseline_ckpts.find(iter);
    if (bit != baseline_ckpts.end()) {
      const LoadedCheckpoint lb = load_checkpoint(bit->second);
      rec.w_ts = weight_distance(lb.state.t1, lb.state.s1);
      pair_stats(lb.state.t1, lb.state.s1, feat_images, run.cfg, &rec.d_ts,
                 &rec.kl_ts);
    }
    result.trace.records.push_back(rec);
  }

  // Consistency vs accuracy at the final checkpoint, across the whole pool.
  {
    const LoadedCheckpoint lc = load_checkpoint(run.ckpts.back().second);
    std::vector<std::pair<double, bool>> samples;
    for (const auto& ex : pool) {
      const AugmentedView view = identity_view(ex.image);
      PseudoLabelSet pl1 = generate_pseudo_labels(lc.state.t1, view,
                                                  run.cfg.tau,
                                                  run.cfg.nms_iou, 1);
      PseudoLabelSet pl2 = generate_pseudo_labels(lc.state.t2, view,
                                                  run.cfg.tau,
                                                  run.cfg.nms_iou, 2);
      annotate_consistency(pl1, lc.state.t2, ex.image, run.cfg.consistency);
      annotate_consistency(pl2, lc.state.t1, ex.image, run.cfg.consistency);
      const auto& gt = DiagnosticsAccess::hidden_annotations(ex);
      for (const auto* pl : {&pl1, &pl2}) {
        const auto correct = pseudo_label_accuracy(*pl, gt, 0.5);
        for (size_t i = 0; i < pl->entries.size(); ++i)
          samples.emplace_back(pl->consistency[i], correct[i]);
      }
    }
    result.bins = bin_consistency(samples, opt.bin_count,
                                  consistency_floor(run.cfg.consistency.style),
                                  1.0);
  }

  write_file((fs::path(out_dir) / "coupling_trace.csv").string(),
             coupling_trace_csv(result.trace), &result.written);
  write_file((fs::path(out_dir) / "consistency_bins.csv").string(),
             consistency_bins_csv(result.bins), &result.written);

  // Loss curves out of the metrics log, matched with the baseline when given.
  std::vector<StepMetrics> rows;
  {
    std::ifstream in(fs::path(opt.run_dir) / "metrics.jsonl");
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) rows.push_back(parse_metrics_line(line));
  }
  std::map<int, double> baseline_total;
  if (!opt.baseline_dir.empty()) {
    std::ifstream in(fs::path(opt.baseline_dir) / "metrics.jsonl");
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) {
        const StepMetrics m = parse_metrics_line(line);
        baseline_total[m.iter] = m.l1_total;
      }
  }
  {
    std::ostringstream csv;
    csv << "iter,L_s1,L_u1,L_s2,L_u2,L1_total,L2_total,baseline_total\n";
    for (const auto& m : rows) {
      csv << m.iter << ',' << num_cell(m.l_s1) << ',' << num_cell(m.l_u1)
          << ',' << num_cell(m.l_s2) << ',' << num_cell(m.l_u2) << ','
          << num_cell(m.l1_total) << ',' << num_cell(m.l2_total) << ',';
      const auto it = baseline_total.find(m.iter);
      if (it != baseline_total.end()) csv << num_cell(it->second);
      csv << '\n';
    }
    write_file((fs::path(out_dir) / "loss_curves.csv").string(), csv.str(),
               &result.written);
  }

  const auto opt_series = [](const char* name,
                             const std::vector<CouplingRecord>& recs,
                             std::optional<double> CouplingRecord::*field,
                             float r, float g, float b) {
    PlotSeries s;
    s.name = name;
    s.r = r;
    s.g = g;
    s.b = b;
    for (const auto& rec : recs)
      if (rec.*field && std::isfinite(*(rec.*field))) {
        s.x.push_back(rec.iter);
        s.y.push_back(*(rec.*field));
      }
    return s;
  };

  {
    PlotSpec p;
    p.title = "weight distance";
    p.x_label = "iteration";
    p.y_label = "l2";
    PlotSeries a{"W T1-S2", {}, {}, 0.85f, 0.25f, 0.2f, true};
    PlotSeries b{"W T2-S1", {}, {}, 0.2f, 0.45f, 0.85f, true};
    for (const auto& rec : result.trace.records) {
      a.x.push_back(rec.iter);
      a.y.push_back(rec.w_t1s2);
      b.x.push_back(rec.iter);
      b.y.push_back(rec.w_t2s1);
    }
    p.series = {a, b};
    PlotSeries base =
        opt_series("W TS baseline", result.trace.records,
                   &CouplingRecord::w_ts, 0.25f, 0.6f, 0.3f);
    base.markers = true;
    if (!base.x.empty()) p.series.push_back(base);
    const std::string path = (fs::path(out_dir) / "fig1a.png").string();
    render_plot(p, path);
    result.written.push_back(path);
  }
  {
    PlotSpec p;
    p.title = "pseudo label accuracy by consistency";
    p.x_label = "consistency";
    p.y_label = "accuracy";
    PlotSeries s{"bin accuracy", {}, {}, 0.85f, 0.25f, 0.2f, true};
    for (const auto& b : result.bins.bins)
      if (b.count() > 0) {
        s.x.push_back(0.5 * (b.lo + b.hi));
        s.y.push_back(b.accuracy());
      }
    p.series = {s};
    const std::string path = (fs::path(out_dir) / "fig1b.png").string();
    render_plot(p, path);
    result.written.push_back(path);
  }
  {
    PlotSpec p;
    p.title = "region feature distance";
    p.x_label = "iteration";
    p.y_label = "mean l2";
    p.series = {
        opt_series("D T1-S2", result.trace.records, &CouplingRecord::d_t1s2,
                   0.85f, 0.25f, 0.2f),
        opt_series("D T2-S1", result.trace.records, &CouplingRecord::d_t2s1,
                   0.2f, 0.45f, 0.85f),
        opt_series("D TS baseline", result.trace.records,
                   &CouplingRecord::d_ts, 0.25f, 0.6f, 0.3f)};
    for (auto& s : p.series) s.markers = true;
    const std::string path = (fs::path(out_dir) / "fig5a.png").string();
    render_plot(p, path);
    result.written.push_back(path);
  }
  {
    PlotSpec p;
    p.title = "prediction divergence";
    p.x_label = "iteration";
    p.y_label = "mean kl (nats)";
    p.series = {
        opt_series("KL T1-S2", result.trace.records,
                   &CouplingRecord::kl_t1s2, 0.85f, 0.25f, 0.2f),
        opt_series("KL T2-S1", result.trace.records,
                   &CouplingRecord::kl_t2s1, 0.2f, 0.45f, 0.85f),
        opt_series("KL TS baseline", result.trace.records,
                   &CouplingRecord::kl_ts, 0.25f, 0.6f, 0.3f)};
    for (auto& s : p.series) s.markers = true;
    const std::string path = (fs::path(out_dir) / "fig5b.png").string();
    render_plot(p, path);
    result.written.push_back(path);
  }
  {
    PlotSpec p;
    p.title = "training loss";
    p.x_label = "iteration";
    p.y_label = "total loss";
    PlotSeries a{"pair 1 total", {}, {}, 0.85f, 0.25f, 0.2f, false};
    PlotSeries b{"pair 2 total", {}, {}, 0.2f, 0.45f, 0.85f, false};
    PlotSeries base{"baseline total", {}, {}, 0.25f, 0.6f, 0.3f, false};
    for (const auto& m : rows) {
      a.x.push_back(m.iter);
      a.y.push_back(m.l1_total);
      b.x.push_back(m.iter);
      b.y.push_back(m.l2_total);
      const auto it = baseline_total.find(m.iter);
      if (it != baseline_total.end()) {
        base.x.push_back(m.iter);
        base.y.push_back(it->second);
      }
    }
    p.series = {a, b};
    if (!base.x.empty()) p.series.push_back(base);
    const std::string path = (fs::path(out_dir) / "fig5c.png").string();
    render_plot(p, path);
    result.written.push_back(path);
  }
  return result;
}

}  // namespace cst

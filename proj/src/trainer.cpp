#include "cst/trainer.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "cst/diagnostics.hpp"
#include "cst/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace cst {

DcrPairing dcr_pairing_from_string(const std::string& s) {
  if (s == "tt") return DcrPairing::kTeacherTeacher;
  if (s == "own-ts") return DcrPairing::kOwnTeacherStudent;
  if (s == "cross-ts") return DcrPairing::kCrossTeacherStudent;
  throw ConfigError("unknown dcr pairing '" + s +
                    "' (expected tt, own-ts, cross-ts)");
}

std::string dcr_pairing_name(DcrPairing p) {
  switch (p) {
    case DcrPairing::kTeacherTeacher: return "tt";
    case DcrPairing::kOwnTeacherStudent: return "own-ts";
    case DcrPairing::kCrossTeacherStudent: return "cross-ts";
  }
  return "tt";
}

namespace {

// Single elementwise kernel shared by both overloads so a flat shadow
// recomputation tracks the per-array teacher update bit for bit.
void ema_kernel(float* t, const float* s, size_t n, float m) {
  const float k = 1.0f - m;
  for (size_t i = 0; i < n; ++i) t[i] = m * t[i] + k * s[i];
}

int env_workers() {
  static const int cached = [] {
    const char* s = std::getenv("CST_NUM_WORKERS");
    if (!s) return 1;
    const int v = std::atoi(s);
    return v < 1 ? 1 : v;
  }();
  return cached;
}

// Deterministic regardless of worker count: every slot draws from its own
// keyed stream and writes only its own output cell.
void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(env_workers(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto body = [&] {
    int i;
    while ((i = next.fetch_add(1)) < n) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

void ema_update(std::vector<float>& teacher, const std::vector<float>& student,
                float m) {
  if (teacher.size() != student.size())
    throw std::invalid_argument("ema_update: parameter length mismatch");
  if (!(m >= 0.0f && m <= 1.0f))
    throw std::invalid_argument("ema_update: momentum outside [0,1]");
  ema_kernel(teacher.data(), student.data(), teacher.size(), m);
}

void ema_update(DetectorModel& teacher, const DetectorModel& student,
                float m) {
  if (!(m >= 0.0f && m <= 1.0f))
    throw std::invalid_argument("ema_update: momentum outside [0,1]");
  auto tp = teacher.named_params();
  auto sp = const_cast<DetectorModel&>(student).named_params();
  if (tp.size() != sp.size())
    throw std::invalid_argument("ema_update: model structure mismatch");
  for (size_t i = 0; i < tp.size(); ++i) {
    if (tp[i].values->size() != sp[i].values->size())
      throw std::invalid_argument("ema_update: parameter length mismatch");
    ema_kernel(tp[i].values->data(), sp[i].values->data(),
               tp[i].values->size(), m);
  }
}

void sgd_step(DetectorModel& model, SgdState& opt, double lr, double mu,
              double wd) {
  const size_t total = model.param_count();
  if (opt.velocity.empty()) opt.velocity.assign(total, 0.0f);
  if (opt.velocity.size() != total)
    throw std::invalid_argument("sgd_step: velocity length mismatch");
  const float flr = static_cast<float>(lr);
  const float fmu = static_cast<float>(mu);
  const float fwd = static_cast<float>(wd);
  size_t off = 0;
  for (auto& p : model.named_params()) {
    float* theta = p.values->data();
    const float* g = p.grads->data();
    float* v = opt.velocity.data() + off;
    const size_t n = p.values->size();
    for (size_t i = 0; i < n; ++i) {
      v[i] = fmu * v[i] + (g[i] + fwd * theta[i]);
      theta[i] -= flr * v[i];
    }
    off += n;
  }
}

namespace streams {

std::vector<int> batch_indices(std::uint64_t seed, const char* purpose,
                               int iter, int pool_size, int n) {
  if (pool_size <= 0) throw std::invalid_argument("empty sample pool");
  Rng rng = derive_rng(seed, purpose, static_cast<std::uint64_t>(iter));
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) out[i] = rng.uniform_int(0, pool_size - 1);
  return out;
}

std::pair<AugmentedView, AugmentedView> labeled_views(
    const LabeledExample& ex, std::uint64_t seed, int iter, int slot,
    const AugmentConfig& cfg) {
  Rng wr = derive_rng(seed, "labeled-weak", iter, slot);
  Rng sr = derive_rng(seed, "labeled-strong", iter, slot);
  return {weak_augment(ex.image, ex.annotations, wr, cfg),
          strong_augment(ex.image, ex.annotations, sr, cfg)};
}

UnlabeledViews unlabeled_views(const UnlabeledExample& ex, std::uint64_t seed,
                               int iter, int slot, const AugmentConfig& cfg,
                               bool shared_strong) {
  UnlabeledViews v;
  Rng wr = derive_rng(seed, "unlabeled-weak", iter, slot);
  v.weak = weak_augment(ex.image, {}, wr, cfg);
  Rng s1 = derive_rng(seed, "unlabeled-strong", iter, slot, 1);
  v.strong1 = strong_augment(ex.image, {}, s1, cfg);
  if (shared_strong) {
    v.strong2 = v.strong1;
  } else {
    Rng s2 = derive_rng(seed, "unlabeled-strong", iter, slot, 2);
    v.strong2 = strong_augment(ex.image, {}, s2, cfg);
  }
  return v;
}

Rng sup_loss_rng(std::uint64_t seed, int iter, int slot, int view,
                 int model_id) {
  return derive_rng(stream_key(seed, "sup-loss", iter, slot), "sup-loss-leaf",
                    view, model_id);
}

Rng unsup_loss_rng(std::uint64_t seed, int iter, int slot, int model_id) {
  return derive_rng(seed, "unsup-loss", iter, slot, model_id);
}

Rng burnin_sup_loss_rng(std::uint64_t model_seed, int iter, int slot,
                        int view) {
  return derive_rng(model_seed, "burnin-sup-loss", iter, slot, view);
}

}  // namespace streams

std::string StepMetrics::to_json_line() const {
  ordered_json j;
  j["iter"] = iter;
  j["L_s1"] = l_s1;
  j["L_u1"] = l_u1;
  j["L_s2"] = l_s2;
  j["L_u2"] = l_u2;
  j["L1_total"] = l1_total;
  j["L2_total"] = l2_total;
  j["u_reg_s1"] = u_reg_s1;
  j["u_reg_s2"] = u_reg_s2;
  j["n_pseudo_mean"] = n_pseudo_mean;
  if (c_mean)
    j["c_mean"] = *c_mean;
  else
    j["c_mean"] = nullptr;
  j["w_dist_t1s2"] = w_dist_t1s2;
  j["w_dist_t2s1"] = w_dist_t2s1;
  j["lr"] = lr;
  return j.dump();
}

StepMetrics parse_metrics_line(const std::string& line) {
  const json j = json::parse(line);
  StepMetrics m;
  m.iter = j.value("iter", 0);
  m.l_s1 = j.value("L_s1", 0.0);
  m.l_u1 = j.value("L_u1", 0.0);
  m.l_s2 = j.value("L_s2", 0.0);
  m.l_u2 = j.value("L_u2", 0.0);
  m.l1_total = j.value("L1_total", 0.0);
  m.l2_total = j.value("L2_total", 0.0);
  m.u_reg_s1 = j.value("u_reg_s1", 0.0);
  m.u_reg_s2 = j.value("u_reg_s2", 0.0);
  m.n_pseudo_mean = j.value("n_pseudo_mean", 0.0);
  if (j.contains("c_mean") && !j.at("c_mean").is_null())
    m.c_mean = j.at("c_mean").get<double>();
  m.w_dist_t1s2 = j.value("w_dist_t1s2", 0.0);
  m.w_dist_t2s1 = j.value("w_dist_t2s1", 0.0);
  m.lr = j.value("lr", 0.0);
  return m;
}

namespace {

void check_finite(double v, const char* what, int iter) {
  if (!std::isfinite(v)) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "training diverged: %s is non-finite at iteration %d", what,
                  iter + 1);
    throw std::runtime_error(buf);
  }
}

}  // namespace

CycleState burn_in(std::uint64_t seed1, std::uint64_t seed2,
                   const std::vector<LabeledExample>& labeled,
                   const TrainConfig& cfg, const MetricsFn& metrics,
                   const StepObserver* obs) {
  if (seed1 == seed2)
    throw std::invalid_argument("burn-in seeds must differ");
  if (labeled.empty())
    throw std::invalid_argument("burn-in needs labeled data");

  CycleState st;
  st.s1 = DetectorModel::init(cfg.arch, seed1);
  st.s2 = DetectorModel::init(cfg.arch, seed2);
  st.t1 = st.s1;
  st.t2 = st.s2;

  const int n = cfg.batch_labeled;
  const float scale = static_cast<float>(1.0 / (2.0 * n));
  for (int it = 0; it < cfg.burn_in_iters; ++it) {
    double loss[2] = {0, 0};
    for (int mdl = 0; mdl < 2; ++mdl) {
      DetectorModel& s = mdl ? st.s2 : st.s1;
      const std::uint64_t mseed = mdl ? seed2 : seed1;
      const auto idx = streams::batch_indices(
          mseed, "burnin-batch", it, static_cast<int>(labeled.size()), n);
      std::vector<std::pair<AugmentedView, AugmentedView>> views(n);
      parallel_for(n, [&](int slot) {
        views[slot] =
            streams::labeled_views(labeled[idx[slot]], mseed, it, slot,
                                   cfg.augment);
      });
      s.zero_grads();
      double sum = 0;
      for (int slot = 0; slot < n; ++slot) {
        for (int view = 0; view < 2; ++view) {
          const AugmentedView& v =
              view == 0 ? views[slot].first : views[slot].second;
          Rng r = streams::burnin_sup_loss_rng(mseed, it, slot, view);
          sum += s.supervised_loss(v.image, v.boxes, cfg.loss, r, scale)
                     .total();
        }
      }
      loss[mdl] = sum / (2.0 * n);
      check_finite(loss[mdl], mdl ? "burn-in loss of model 2"
                                  : "burn-in loss of model 1",
                   it);
    }
    if (obs && obs->before_optimizer) obs->before_optimizer(st);
    sgd_step(st.s1, st.opt1, cfg.lr, cfg.sgd_momentum, cfg.weight_decay);
    sgd_step(st.s2, st.opt2, cfg.lr, cfg.sgd_momentum, cfg.weight_decay);
    if (obs && obs->after_optimizer) obs->after_optimizer(st);
    if (obs && obs->after_ema) obs->after_ema(st);
    if (metrics) {
      StepMetrics m;
      m.iter = it + 1;
      m.l_s1 = loss[0];
      m.l_s2 = loss[1];
      m.l1_total = loss[0];
      m.l2_total = loss[1];
      const double d = weight_distance(st.s1, st.s2);
      m.w_dist_t1s2 = d;
      m.w_dist_t2s1 = d;
      m.lr = cfg.lr;
      metrics(m);
    }
  }
  st.t1 = st.s1;
  st.t2 = st.s2;
  st.iteration = cfg.burn_in_iters;
  return st;
}

namespace {

StepMetrics supervised_step(CycleState& state,
                            const std::vector<LabeledExample>& labeled,
                            const TrainConfig& cfg, int iter,
                            const StepObserver* obs) {
  const int n = cfg.batch_labeled;
  const auto idx = streams::batch_indices(
      cfg.seed, "batch-labeled", iter, static_cast<int>(labeled.size()), n);
  std::vector<std::pair<AugmentedView, AugmentedView>> views(n);
  parallel_for(n, [&](int slot) {
    views[slot] = streams::labeled_views(labeled[idx[slot]], cfg.seed, iter,
                                         slot, cfg.augment);
  });
  const float scale = static_cast<float>(1.0 / (2.0 * n));
  state.s1.zero_grads();
  double sum = 0;
  for (int slot = 0; slot < n; ++slot) {
    for (int view = 0; view < 2; ++view) {
      const AugmentedView& v =
          view == 0 ? views[slot].first : views[slot].second;
      Rng r = streams::sup_loss_rng(cfg.seed, iter, slot, view, 1);
      sum += state.s1.supervised_loss(v.image, v.boxes, cfg.loss, r, scale)
                 .total();
    }
  }
  const double l_s1 = sum / (2.0 * n);
  check_finite(l_s1, "supervised loss", iter);

  if (obs && obs->before_optimizer) obs->before_optimizer(state);
  sgd_step(state.s1, state.opt1, cfg.lr, cfg.sgd_momentum, cfg.weight_decay);
  if (obs && obs->after_optimizer) obs->after_optimizer(state);
  state.t1 = state.s1;
  if (obs && obs->after_ema) obs->after_ema(state);

  StepMetrics m;
  m.iter = iter + 1;
  m.l_s1 = l_s1;
  m.l1_total = l_s1;
  m.lr = cfg.lr;
  return m;
}

}  // namespace

StepMetrics train_step(CycleState& state,
                       const std::vector<LabeledExample>& labeled,
                       const std::vector<UnlabeledExample>& unlabeled,
                       const TrainConfig& cfg, int iter,
                       const StepObserver* obs) {
  if (labeled.empty()) throw std::invalid_argument("no labeled data");
  if (cfg.supervised_only)
    return supervised_step(state, labeled, cfg, iter, obs);
  if (unlabeled.empty()) throw std::invalid_argument("no unlabeled data");

  const int n_l = cfg.batch_labeled;
  const int n_u = cfg.batch_labeled;
  const auto li = streams::batch_indices(
      cfg.seed, "batch-labeled", iter, static_cast<int>(labeled.size()), n_l);
  const auto ui = streams::batch_indices(cfg.seed, "batch-unlabeled", iter,
                                         static_cast<int>(unlabeled.size()),
                                         n_u);

  std::vector<std::pair<AugmentedView, AugmentedView>> lv(n_l);
  std::vector<streams::UnlabeledViews> uv(n_u);
  parallel_for(n_l + n_u, [&](int k) {
    if (k < n_l)
      lv[k] = streams::labeled_views(labeled[li[k]], cfg.seed, iter, k,
                                     cfg.augment);
    else
      uv[k - n_l] = streams::unlabeled_views(unlabeled[ui[k - n_l]], cfg.seed,
                                             iter, k - n_l, cfg.augment,
                                             cfg.shared_strong_view);
  });

  // Both teachers label the one shared weak view, then every kept box gets a
  // consistency weight from the paired model before anything moves.
  std::vector<PseudoLabelSet> pl1(n_u), pl2(n_u);
  parallel_for(n_u, [&](int slot) {
    pl1[slot] = generate_pseudo_labels(state.t1, uv[slot].weak, cfg.tau,
                                       cfg.nms_iou, 1);
    pl2[slot] = generate_pseudo_labels(state.t2, uv[slot].weak, cfg.tau,
                                       cfg.nms_iou, 2);
    if (cfg.dcr_on) {
      const DetectorModel* other1 = &state.t2;
      const DetectorModel* other2 = &state.t1;
      if (cfg.dcr_pairing == DcrPairing::kOwnTeacherStudent) {
        other1 = &state.s1;
        other2 = &state.s2;
      } else if (cfg.dcr_pairing == DcrPairing::kCrossTeacherStudent) {
        other1 = cfg.cycle_on ? &state.s2 : &state.s1;
        other2 = cfg.cycle_on ? &state.s1 : &state.s2;
      }
      annotate_consistency(pl1[slot], *other1, uv[slot].weak.image,
                           cfg.consistency);
      annotate_consistency(pl2[slot], *other2, uv[slot].weak.image,
                           cfg.consistency);
    }
  });
  if (obs && obs->on_pseudo)
    for (int slot = 0; slot < n_u; ++slot)
      obs->on_pseudo(iter + 1, slot, pl1[slot], pl2[slot]);

  state.s1.zero_grads();
  state.s2.zero_grads();

  const float sup_scale = static_cast<float>(1.0 / (2.0 * n_l));
  double l_s1 = 0, l_s2 = 0;
  for (int slot = 0; slot < n_l; ++slot) {
    for (int view = 0; view < 2; ++view) {
      const AugmentedView& v = view == 0 ? lv[slot].first : lv[slot].second;
      Rng r1 = streams::sup_loss_rng(cfg.seed, iter, slot, view, 1);
      l_s1 += state.s1.supervised_loss(v.image, v.boxes, cfg.loss, r1,
                                       sup_scale)
                  .total();
      Rng r2 = streams::sup_loss_rng(cfg.seed, iter, slot, view, 2);
      l_s2 += state.s2.supervised_loss(v.image, v.boxes, cfg.loss, r2,
                                       sup_scale)
                  .total();
    }
  }
  l_s1 /= 2.0 * n_l;
  l_s2 /= 2.0 * n_l;

  const float unsup_scale = static_cast<float>(cfg.alpha / n_u);
  double l_u1 = 0, l_u2 = 0, u_reg1 = 0, u_reg2 = 0;
  double n_pseudo = 0;
  for (int slot = 0; slot < n_u; ++slot) {
    n_pseudo += static_cast<double>(pl1[slot].entries.size() +
                                    pl2[slot].entries.size());
    const PseudoLabelSet& src1 = cfg.cycle_on ? pl2[slot] : pl1[slot];
    const PseudoLabelSet& src2 = cfg.cycle_on ? pl1[slot] : pl2[slot];
    if (src1.source_teacher != (cfg.cycle_on ? 2 : 1) ||
        src2.source_teacher != (cfg.cycle_on ? 1 : 2))
      throw std::logic_error("pseudo-label provenance violation");

    const AugmentedView& sv1 = uv[slot].strong1;
    const PseudoLabelSet m1 = transfer_to_strong_view(
        src1, sv1.transform, sv1.image.w, sv1.image.h);
    Rng r1 = streams::unsup_loss_rng(cfg.seed, iter, slot, 1);
    const auto res1 = state.s1.unsupervised_cls_loss(
        sv1.image, pseudo_targets(m1, cfg.dcr_on), cfg.loss, r1, unsup_scale);
    l_u1 += res1.total();
    u_reg1 += res1.reg;

    const AugmentedView& sv2 = uv[slot].strong2;
    const PseudoLabelSet m2 = transfer_to_strong_view(
        src2, sv2.transform, sv2.image.w, sv2.image.h);
    Rng r2 = streams::unsup_loss_rng(cfg.seed, iter, slot, 2);
    const auto res2 = state.s2.unsupervised_cls_loss(
        sv2.image, pseudo_targets(m2, cfg.dcr_on), cfg.loss, r2, unsup_scale);
    l_u2 += res2.total();
    u_reg2 += res2.reg;
  }
  l_u1 /= n_u;
  l_u2 /= n_u;

  const double l1_total = l_s1 + cfg.alpha * l_u1;
  const double l2_total = l_s2 + cfg.alpha * l_u2;
  check_finite(l1_total, "total loss of pair 1", iter);
  check_finite(l2_total, "total loss of pair 2", iter);

  if (obs && obs->before_optimizer) obs->before_optimizer(state);
  sgd_step(state.s1, state.opt1, cfg.lr, cfg.sgd_momentum, cfg.weight_decay);
  sgd_step(state.s2, state.opt2, cfg.lr, cfg.sgd_momentum, cfg.weight_decay);
  if (obs && obs->after_optimizer) obs->after_optimizer(state);
  ema_update(state.t1, state.s1, cfg.ema_momentum);
  ema_update(state.t2, state.s2, cfg.ema_momentum);
  if (obs && obs->after_ema) obs->after_ema(state);

  StepMetrics m;
  m.iter = iter + 1;
  m.l_s1 = l_s1;
  m.l_u1 = l_u1;
  m.l_s2 = l_s2;
  m.l_u2 = l_u2;
  m.l1_total = l1_total;
  m.l2_total = l2_total;
  m.u_reg_s1 = u_reg1;
  m.u_reg_s2 = u_reg2;
  m.n_pseudo_mean = n_pseudo / (2.0 * n_u);
  if (cfg.dcr_on) {
    double c_sum = 0;
    int c_count = 0;
    for (const auto* sets : {&pl1, &pl2})
      for (const auto& pl : *sets)
        for (const double c : pl.consistency) {
          c_sum += c;
          ++c_count;
        }
    if (c_count > 0) m.c_mean = c_sum / c_count;
  }
  if (cfg.cycle_on) {
    m.w_dist_t1s2 = weight_distance(state.t1, state.s2);
    m.w_dist_t2s1 = weight_distance(state.t2, state.s1);
  } else {
    m.w_dist_t1s2 = weight_distance(state.t1, state.s1);
    m.w_dist_t2s1 = weight_distance(state.t2, state.s2);
  }
  m.lr = cfg.lr;
  return m;
}

namespace {

std::string ckpt_path(const std::string& out_dir, int iter) {
  char name[32];
  std::snprintf(name, sizeof(name), "ckpt_%06d.bin", iter);
  return (fs::path(out_dir) / name).string();
}

// Drops metrics rows past the resume point so the log continues gapless.
void truncate_metrics(const std::string& path, int keep_upto) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      if (parse_metrics_line(line).iter <= keep_upto) kept.push_back(line);
    } catch (const std::exception&) {
    }
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : kept) out << l << "\n";
}

class LockFile {
 public:
  LockFile(const std::string& path, bool force) : path_(path) {
    if (fs::exists(path_)) {
      if (force) {
        fs::remove(path_);
      } else if (stale()) {
        std::cerr << "removing stale lock " << path_ << "\n";
        fs::remove(path_);
      } else {
        throw std::runtime_error(
            "run directory is locked by a live process (" + path_ +
            "); pass force to take over");
      }
    }
    std::ofstream out(path_);
    out << "pid " << ::getpid() << "\n";
  }
  ~LockFile() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;

 private:
  bool stale() const {
    std::ifstream in(path_);
    std::string word;
    long pid = 0;
    if (!(in >> word >> pid) || word != "pid") return false;
    return !fs::exists("/proc/" + std::to_string(pid));
  }
  std::string path_;
};

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace

std::vector<std::pair<int, std::string>> list_checkpoints(
    const std::string& dir) {
  std::vector<std::pair<int, std::string>> found;
  if (!fs::is_directory(dir)) return found;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    int it = -1;
    if (name.size() == 15 &&
        std::sscanf(name.c_str(), "ckpt_%06d.bin", &it) == 1)
      found.emplace_back(it, e.path().string());
  }
  std::sort(found.begin(), found.end());
  return found;
}

void save_checkpoint(const std::string& path, const CycleState& state,
                     const TrainConfig& cfg) {
  std::vector<NamedArray> arrays;
  const std::pair<const char*, const DetectorModel*> models[] = {
      {"s1", &state.s1}, {"s2", &state.s2}, {"t1", &state.t1},
      {"t2", &state.t2}};
  for (const auto& [prefix, model] : models) {
    auto params = const_cast<DetectorModel*>(model)->named_params();
    for (const auto& p : params)
      arrays.push_back({std::string(prefix) + "/" + p.name, p.shape,
                        *p.values});
  }
  const int n = static_cast<int>(state.s1.param_count());
  auto velocity_or_zeros = [n](const SgdState& o) {
    return o.velocity.empty() ? std::vector<float>(n, 0.0f) : o.velocity;
  };
  arrays.push_back({"opt1/velocity", {n}, velocity_or_zeros(state.opt1)});
  arrays.push_back({"opt2/velocity", {n}, velocity_or_zeros(state.opt2)});

  json meta;
  meta["kind"] = "cst-checkpoint";
  meta["iteration"] = state.iteration;
  meta["seed"] = cfg.seed;
  meta["arch"] = arch_to_json(cfg.arch);
  meta["config"] = train_config_to_json(cfg);

  const std::string tmp = path + ".tmp";
  write_array_container(tmp, meta, arrays);
  fs::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  auto [meta, arrays] = read_array_container(path);
  if (meta.value("kind", "") != "cst-checkpoint")
    throw std::runtime_error(path + " is not a training checkpoint");
  LoadedCheckpoint lc;
  lc.arch = arch_from_json(meta.at("arch"));
  lc.seed = meta.value("seed", std::uint64_t{0});
  lc.state.iteration = meta.value("iteration", 0);

  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  auto fetch = [&](const std::string& name) -> const NamedArray& {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint missing array " + name);
    return *it->second;
  };

  const std::pair<const char*, DetectorModel*> models[] = {
      {"s1", &lc.state.s1}, {"s2", &lc.state.s2}, {"t1", &lc.state.t1},
      {"t2", &lc.state.t2}};
  for (auto& [prefix, model] : models) {
    *model = DetectorModel::init(lc.arch, 0);
    for (auto& p : model->named_params()) {
      const NamedArray& a = fetch(std::string(prefix) + "/" + p.name);
      if (a.data.size() != p.values->size())
        throw std::runtime_error("checkpoint array shape mismatch for " +
                                 p.name);
      std::copy(a.data.begin(), a.data.end(), p.values->begin());
    }
  }
  lc.state.opt1.velocity = fetch("opt1/velocity").data;
  lc.state.opt2.velocity = fetch("opt2/velocity").data;
  return lc;
}

RunResult run_training(const TrainConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir, bool force,
                       bool stop_after_burn_in, const StepObserver* obs) {
  if (cfg.supervised_only && stop_after_burn_in)
    throw ConfigError("burn-in stage does not apply to supervised-only runs");
  fs::create_directories(out_dir);
  LockFile lock((fs::path(out_dir) / ".lock").string(), force);

  std::vector<std::string> load_errors;
  auto data = load_dataset(data_dir, &load_errors);
  for (const auto& e : load_errors) std::cerr << "dataset: " << e << "\n";
  if (data.empty())
    throw std::runtime_error("no usable examples under " + data_dir);
  const int ds_classes = dataset_class_count(data_dir);
  if (ds_classes != cfg.arch.num_classes)
    throw ConfigError("dataset has " + std::to_string(ds_classes) +
                      " classes but the model is configured for " +
                      std::to_string(cfg.arch.num_classes));

  SplitResult split =
      split_labeled(data, cfg.labeled_fraction, cfg.split_seed);
  if (!cfg.supervised_only && split.unlabeled.empty())
    throw ConfigError(
        "labeled_fraction leaves no unlabeled data for mutual training");
  const std::uint64_t dhash = dataset_hash(data);
  data.clear();
  data.shrink_to_fit();

  const std::uint64_t seed1 = stream_key(cfg.seed, "init", 1);
  const std::uint64_t seed2 = stream_key(cfg.seed, "init", 2);

  {
    ordered_json sj;
    sj["labeled_fraction"] = cfg.labeled_fraction;
    sj["split_seed"] = cfg.split_seed;
    sj["labeled_indices"] = split.labeled_indices;
    sj["unlabeled_indices"] = split.unlabeled_indices;
    json lids = json::array(), uids = json::array();
    for (const auto& ex : split.labeled) lids.push_back(ex.id);
    for (const auto& ex : split.unlabeled) uids.push_back(ex.id);
    sj["labeled_ids"] = lids;
    sj["unlabeled_ids"] = uids;
    std::ofstream out(fs::path(out_dir) / "split.json");
    out << sj.dump(2) << "\n";
  }

  const std::string metrics_path =
      (fs::path(out_dir) / "metrics.jsonl").string();
  CycleState state;
  int resumed_from = -1;

  if (force) {
    for (const auto& [it, path] : list_checkpoints(out_dir)) {
      (void)it;
      fs::remove(path);
    }
    std::error_code ec;
    fs::remove(metrics_path, ec);
  } else {
    auto ckpts = list_checkpoints(out_dir);
    for (auto it = ckpts.rbegin(); it != ckpts.rend(); ++it) {
      if (it->first > cfg.total_iters) continue;
      try {
        LoadedCheckpoint lc = load_checkpoint(it->second);
        if (!(lc.arch == cfg.arch))
          throw ConfigError("existing checkpoint " + it->second +
                            " was trained with a different architecture; use "
                            "a fresh output directory");
        if (lc.seed != cfg.seed)
          throw ConfigError("existing checkpoint " + it->second +
                            " was trained with a different seed; use a fresh "
                            "output directory");
        state = std::move(lc.state);
        resumed_from = state.iteration;
        break;
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        std::cerr << "skipping unreadable checkpoint " << it->second << ": "
                  << e.what() << "\n";
      }
    }
    truncate_metrics(metrics_path, resumed_from < 0 ? 0 : resumed_from);
  }

  auto write_manifest = [&](const std::string& status, double burn_secs,
                            double mutual_secs) {
    ordered_json mj;
    mj["version"] = version_string();
    mj["command"] = "train";
    mj["status"] = status;
    mj["created_utc"] = utc_now();
    mj["data_dir"] = data_dir;
    mj["dataset"] = {{"count", split.labeled.size() + split.unlabeled.size()},
                     {"classes", ds_classes},
                     {"hash", hash_hex(dhash)}};
    mj["seeds"] = {{"seed", cfg.seed},
                   {"burnin_seed1", seed1},
                   {"burnin_seed2", seed2},
                   {"split_seed", cfg.split_seed}};
    if (resumed_from >= 0) mj["resumed_from"] = resumed_from;
    mj["timings_sec"] = {{"burn_in", burn_secs}, {"mutual", mutual_secs}};
    mj["config"] = train_config_to_json(cfg);
    std::ofstream out(fs::path(out_dir) / "manifest.json");
    out << mj.dump(2) << "\n";
  };
  write_manifest("running", 0, 0);

  std::ofstream mfile(metrics_path, std::ios::app);
  MetricsFn sink = [&](const StepMetrics& m) {
    mfile << m.to_json_line() << "\n";
    mfile.flush();
  };

  using clock = std::chrono::steady_clock;
  double burn_secs = 0, mutual_secs = 0;
  std::string last_ckpt;
  if (resumed_from >= 0) last_ckpt = ckpt_path(out_dir, resumed_from);

  if (resumed_from < 0) {
    if (cfg.supervised_only) {
      state.s1 = DetectorModel::init(cfg.arch, seed1);
      state.s2 = DetectorModel::init(cfg.arch, seed2);
      state.t1 = state.s1;
      state.t2 = state.s2;
      state.iteration = 0;
    } else {
      const auto t0 = clock::now();
      state = burn_in(seed1, seed2, split.labeled, cfg, sink, obs);
      burn_secs = std::chrono::duration<double>(clock::now() - t0).count();
      last_ckpt = ckpt_path(out_dir, state.iteration);
      save_checkpoint(last_ckpt, state, cfg);
      if (obs && obs->on_checkpoint)
        obs->on_checkpoint(state.iteration, state, last_ckpt);
    }
  }

  if (!stop_after_burn_in) {
    const auto t0 = clock::now();
    for (int it = state.iteration; it < cfg.total_iters; ++it) {
      StepMetrics m =
          train_step(state, split.labeled, split.unlabeled, cfg, it, obs);
      state.iteration = it + 1;
      sink(m);
      if ((it + 1) % cfg.checkpoint_every == 0 ||
          it + 1 == cfg.total_iters) {
        last_ckpt = ckpt_path(out_dir, it + 1);
        save_checkpoint(last_ckpt, state, cfg);
        if (obs && obs->on_checkpoint)
          obs->on_checkpoint(it + 1, state, last_ckpt);
      }
    }
    mutual_secs = std::chrono::duration<double>(clock::now() - t0).count();
  }

  write_manifest("complete", burn_secs, mutual_secs);
  return {std::move(state), last_ckpt, std::move(split)};
}

}  // namespace cst

#include "cst/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>

using nlohmann::json;

namespace cst {

namespace {

constexpr char kMagic[] = "cst-ckpt-v1\n";
constexpr size_t kMagicLen = sizeof(kMagic) - 1;

void write_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::ifstream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_array_container(const std::string& path, const json& meta,
                           const std::vector<NamedArray>& arrays) {
  json full = meta;
  json index = json::array();
  for (const auto& a : arrays)
    index.push_back(
        {{"name", a.name}, {"shape", a.shape}, {"count", a.data.size()}});
  full["arrays"] = index;
  const std::string meta_str = full.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out.write(kMagic, kMagicLen);
  write_u64(out, meta_str.size());
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  for (const auto& a : arrays)
    out.write(reinterpret_cast<const char*>(a.data.data()),
              static_cast<std::streamsize>(a.data.size() * sizeof(float)));
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::pair<json, std::vector<NamedArray>> read_array_container(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw std::runtime_error("bad checkpoint header in " + path +
                             " (expected version cst-ckpt-v1)");
  const std::uint64_t meta_len = read_u64(in);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw std::runtime_error("truncated checkpoint meta in " + path);
  json meta = json::parse(meta_str);

  std::vector<NamedArray> arrays;
  for (const auto& e : meta.at("arrays")) {
    NamedArray a;
    a.name = e.at("name").get<std::string>();
    a.shape = e.at("shape").get<std::vector<int>>();
    a.data.resize(e.at("count").get<size_t>());
    in.read(reinterpret_cast<char*>(a.data.data()),
            static_cast<std::streamsize>(a.data.size() * sizeof(float)));
    if (!in)
      throw std::runtime_error("truncated checkpoint payload in " + path);
    arrays.push_back(std::move(a));
  }
  return {meta, arrays};
}

json arch_to_json(const ArchSpec& a) {
  return json{{"in_channels", a.in_channels},
              {"channels", a.channels},
              {"num_classes", a.num_classes},
              {"anchor_sizes", a.anchor_sizes},
              {"roi_grid", a.roi_grid},
              {"roi_hidden", a.roi_hidden}};
}

ArchSpec arch_from_json(const json& j) {
  ArchSpec a;
  static const std::set<std::string> known{"in_channels", "channels",
                                           "num_classes", "anchor_sizes",
                                           "roi_grid",    "roi_hidden"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown arch key: " + it.key());
  a.in_channels = j.value("in_channels", a.in_channels);
  a.channels = j.value("channels", a.channels);
  a.num_classes = j.value("num_classes", a.num_classes);
  a.anchor_sizes = j.value("anchor_sizes", a.anchor_sizes);
  a.roi_grid = j.value("roi_grid", a.roi_grid);
  a.roi_hidden = j.value("roi_hidden", a.roi_hidden);
  return a;
}

namespace {

json consistency_to_json(const ConsistencyConfig& c) {
  return json{{"style", consistency_style_name(c.style)}, {"beta", c.beta}};
}

ConsistencyConfig consistency_from_json(const json& j) {
  ConsistencyConfig c;
  static const std::set<std::string> known{"style", "beta"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown consistency key: " + it.key());
  if (j.contains("style"))
    c.style = consistency_style_from_string(j.at("style").get<std::string>());
  c.beta = j.value("beta", c.beta);
  return c;
}

json augment_to_json(const AugmentConfig& a) {
  return json{{"flip_prob", a.flip_prob},
              {"jitter_lo", a.jitter_lo},
              {"jitter_hi", a.jitter_hi},
              {"grayscale_prob", a.grayscale_prob},
              {"blur_prob", a.blur_prob},
              {"cutout_min", a.cutout_min},
              {"cutout_max", a.cutout_max},
              {"cutout_lo", a.cutout_lo},
              {"cutout_hi", a.cutout_hi}};
}

AugmentConfig augment_from_json(const json& j) {
  AugmentConfig a;
  static const std::set<std::string> known{
      "flip_prob",  "jitter_lo",  "jitter_hi", "grayscale_prob", "blur_prob",
      "cutout_min", "cutout_max", "cutout_lo", "cutout_hi"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown augment key: " + it.key());
  a.flip_prob = j.value("flip_prob", a.flip_prob);
  a.jitter_lo = j.value("jitter_lo", a.jitter_lo);
  a.jitter_hi = j.value("jitter_hi", a.jitter_hi);
  a.grayscale_prob = j.value("grayscale_prob", a.grayscale_prob);
  a.blur_prob = j.value("blur_prob", a.blur_prob);
  a.cutout_min = j.value("cutout_min", a.cutout_min);
  a.cutout_max = j.value("cutout_max", a.cutout_max);
  a.cutout_lo = j.value("cutout_lo", a.cutout_lo);
  a.cutout_hi = j.value("cutout_hi", a.cutout_hi);
  return a;
}

json loss_to_json(const DetLossOptions& o) {
  return json{{"fg_iou", o.fg_iou},
              {"bg_iou", o.bg_iou},
              {"sup_fg_iou", o.sup_fg_iou},
              {"sup_bg_iou", o.sup_bg_iou},
              {"force_match_floor", o.force_match_floor},
              {"bg_sample_floor", o.bg_sample_floor},
              {"bg_ratio", o.bg_ratio},
              {"huber_beta", o.huber_beta},
              {"focal", o.focal},
              {"focal_gamma", o.focal_gamma},
              {"region_loss_weight", o.region_loss_weight},
              {"region_bg_min", o.region_bg_min}};
}

DetLossOptions loss_from_json(const json& j) {
  DetLossOptions o;
  static const std::set<std::string> known{
      "fg_iou",        "bg_iou",      "sup_fg_iou",
      "sup_bg_iou",    "force_match_floor", "bg_sample_floor",
      "bg_ratio",      "huber_beta",  "focal",
      "focal_gamma",   "region_loss_weight", "region_bg_min"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("unknown loss key: " + it.key());
  o.fg_iou = j.value("fg_iou", o.fg_iou);
  o.bg_iou = j.value("bg_iou", o.bg_iou);
  o.sup_fg_iou = j.value("sup_fg_iou", o.sup_fg_iou);
  o.sup_bg_iou = j.value("sup_bg_iou", o.sup_bg_iou);
  o.force_match_floor = j.value("force_match_floor", o.force_match_floor);
  o.bg_sample_floor = j.value("bg_sample_floor", o.bg_sample_floor);
  o.bg_ratio = j.value("bg_ratio", o.bg_ratio);
  o.huber_beta = j.value("huber_beta", o.huber_beta);
  o.focal = j.value("focal", o.focal);
  o.focal_gamma = j.value("focal_gamma", o.focal_gamma);
  o.region_loss_weight = j.value("region_loss_weight", o.region_loss_weight);
  o.region_bg_min = j.value("region_bg_min", o.region_bg_min);
  return o;
}

}  // namespace

json train_config_to_json(const TrainConfig& c) {
  return json{{"seed", c.seed},
              {"alpha", c.alpha},
              {"tau", c.tau},
              {"ema_momentum", c.ema_momentum},
              {"burn_in_iters", c.burn_in_iters},
              {"total_iters", c.total_iters},
              {"lr", c.lr},
              {"sgd_momentum", c.sgd_momentum},
              {"weight_decay", c.weight_decay},
              {"batch_labeled", c.batch_labeled},
              {"labeled_fraction", c.labeled_fraction},
              {"split_seed", c.split_seed},
              {"nms_iou", c.nms_iou},
              {"consistency", consistency_to_json(c.consistency)},
              {"cycle_on", c.cycle_on},
              {"dcr_on", c.dcr_on},
              {"dcr_pairing", dcr_pairing_name(c.dcr_pairing)},
              {"shared_strong_view", c.shared_strong_view},
              {"supervised_only", c.supervised_only},
              {"arch", arch_to_json(c.arch)},
              {"augment", augment_to_json(c.augment)},
              {"loss", loss_to_json(c.loss)},
              {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  static const std::set<std::string> known{
      "seed",          "alpha",       "tau",
      "ema_momentum",  "burn_in_iters", "total_iters",
      "lr",            "sgd_momentum",  "weight_decay",
      "batch_labeled", "labeled_fraction", "split_seed",
      "nms_iou",       "consistency", "cycle_on",
      "dcr_on",        "dcr_pairing", "shared_strong_view",
      "supervised_only", "arch",      "augment",
      "loss",          "checkpoint_every"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown config key: " + it.key());
  try {
    c.seed = j.value("seed", c.seed);
    c.alpha = j.value("alpha", c.alpha);
    c.tau = j.value("tau", c.tau);
    c.ema_momentum = j.value("ema_momentum", c.ema_momentum);
    c.burn_in_iters = j.value("burn_in_iters", c.burn_in_iters);
    c.total_iters = j.value("total_iters", c.total_iters);
    c.lr = j.value("lr", c.lr);
    c.sgd_momentum = j.value("sgd_momentum", c.sgd_momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_labeled = j.value("batch_labeled", c.batch_labeled);
    c.labeled_fraction = j.value("labeled_fraction", c.labeled_fraction);
    c.split_seed = j.value("split_seed", c.split_seed);
    c.nms_iou = j.value("nms_iou", c.nms_iou);
    if (j.contains("consistency"))
      c.consistency = consistency_from_json(j.at("consistency"));
    c.cycle_on = j.value("cycle_on", c.cycle_on);
    c.dcr_on = j.value("dcr_on", c.dcr_on);
    if (j.contains("dcr_pairing"))
      c.dcr_pairing =
          dcr_pairing_from_string(j.at("dcr_pairing").get<std::string>());
    c.shared_strong_view = j.value("shared_strong_view", c.shared_strong_view);
    c.supervised_only = j.value("supervised_only", c.supervised_only);
    if (j.contains("arch")) c.arch = arch_from_json(j.at("arch"));
    if (j.contains("augment")) c.augment = augment_from_json(j.at("augment"));
    if (j.contains("loss")) c.loss = loss_from_json(j.at("loss"));
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  validate_train_config(c);
  return c;
}

void validate_train_config(const TrainConfig& c) {
  if (c.alpha < 0) throw ConfigError("alpha must be >= 0");
  if (c.tau <= 0 || c.tau >= 1) throw ConfigError("tau must be in (0,1)");
  if (c.ema_momentum < 0 || c.ema_momentum >= 1)
    throw ConfigError("ema_momentum must be in [0,1)");
  if (c.burn_in_iters >= c.total_iters)
    throw ConfigError("burn_in_iters must be < total_iters");
  if (c.batch_labeled < 1) throw ConfigError("batch_labeled must be >= 1");
  if (c.labeled_fraction <= 0 || c.labeled_fraction > 1)
    throw ConfigError("labeled_fraction must be in (0,1]");
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return train_config_from_json(j);
}

std::string version_string() { return "cst 0.1.0"; }

}  // namespace cst

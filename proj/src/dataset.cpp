#include "cst/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <stdexcept>

#include "cst/png_io.hpp"
#include "cst/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cst {

namespace {

struct ShapeColor {
  float r, g, b;
};

// Base color per class; classes beyond the first three walk a hue wheel.
ShapeColor class_color(int k, int num_classes) {
  static const ShapeColor base[3] = {
      {0.85f, 0.25f, 0.25f}, {0.25f, 0.70f, 0.30f}, {0.25f, 0.35f, 0.80f}};
  if (k < 3) return base[k];
  const double h = 6.0 * k / std::max(num_classes, 1);
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h) % 6) {
    case 0: r = 1; g = x; break;
    case 1: r = x; g = 1; break;
    case 2: g = 1; b = x; break;
    case 3: g = x; b = 1; break;
    case 4: r = x; b = 1; break;
    default: r = 1; b = x; break;
  }
  return {static_cast<float>(0.2 + 0.6 * r), static_cast<float>(0.2 + 0.6 * g),
          static_cast<float>(0.2 + 0.6 * b)};
}

int sample_class(const DatasetSpec& spec, Rng& rng) {
  if (spec.class_weights.empty()) return rng.uniform_int(0, spec.num_classes - 1);
  double total = 0;
  for (double w : spec.class_weights) total += w;
  double u = rng.uniform() * total;
  for (size_t k = 0; k < spec.class_weights.size(); ++k) {
    u -= spec.class_weights[k];
    if (u < 0) return static_cast<int>(k);
  }
  return static_cast<int>(spec.class_weights.size()) - 1;
}

bool inside_shape(int shape, double px, double py, const Box& b) {
  switch (shape) {
    case 0: {  // disc
      const double cx = 0.5 * (b.x_min + b.x_max);
      const double cy = 0.5 * (b.y_min + b.y_max);
      const double r = 0.5 * b.width();
      const double dx = px - cx, dy = py - cy;
      return dx * dx + dy * dy <= r * r;
    }
    case 1:  // filled square = whole bbox
      return px >= b.x_min && px < b.x_max && py >= b.y_min && py < b.y_max;
    default: {  // upward isoceles triangle
      if (py < b.y_min || py >= b.y_max) return false;
      const double t = (py - b.y_min) / b.height();  // 0 apex, 1 base
      const double cx = 0.5 * (b.x_min + b.x_max);
      const double half = 0.5 * b.width() * t;
      return px >= cx - half && px <= cx + half;
    }
  }
}

float quantize(float v) {
  v = v < 0 ? 0.0f : (v > 1 ? 1.0f : v);
  return std::round(v * 255.0f) / 255.0f;
}

}  // namespace

std::vector<LabeledExample> generate_dataset(const DatasetSpec& spec,
                                             std::uint64_t seed) {
  if (spec.count < 1 || spec.image_size < 16 || spec.num_classes < 1 ||
      spec.min_objects < 1 || spec.max_objects < spec.min_objects ||
      spec.min_size <= 2 || spec.max_size < spec.min_size ||
      spec.max_size > spec.image_size - 2)
    throw std::invalid_argument("bad dataset spec");
  if (!spec.class_weights.empty() &&
      static_cast<int>(spec.class_weights.size()) != spec.num_classes)
    throw std::invalid_argument("class_weights length != num_classes");

  std::vector<LabeledExample> out;
  out.reserve(spec.count);
  const int sz = spec.image_size;
  for (int i = 0; i < spec.count; ++i) {
    Rng rng = derive_rng(seed, "dataset-image", static_cast<std::uint64_t>(i));
    LabeledExample ex;
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%06d", i);
    ex.id = buf;
    ex.image = Tensor3<float>(3, sz, sz);

    float bg[3];
    const double g = rng.uniform(0.72, 0.9);
    for (float& c : bg) c = static_cast<float>(g + rng.uniform(-0.05, 0.05));
    for (int c = 0; c < 3; ++c)
      std::fill_n(ex.image.data.begin() + static_cast<size_t>(c) * sz * sz,
                  static_cast<size_t>(sz) * sz, bg[c]);

    const int n_obj = rng.uniform_int(spec.min_objects, spec.max_objects);
    for (int o = 0; o < n_obj; ++o) {
      const int cls = sample_class(spec, rng);
      const double side = rng.uniform(spec.min_size, spec.max_size);
      Box box;
      bool placed = false;
      for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
        const double x0 = rng.uniform(1.0, sz - 1.0 - side);
        const double y0 = rng.uniform(1.0, sz - 1.0 - side);
        box = {x0, y0, x0 + side, y0 + side};
        placed = true;
        for (const auto& a : ex.annotations)
          if (iou(box, a.box) > spec.max_overlap) {
            placed = false;
            break;
          }
      }
      if (!placed) continue;

      ShapeColor col = class_color(cls, spec.num_classes);
      col.r = static_cast<float>(col.r + rng.uniform(-spec.color_jitter,
                                                     spec.color_jitter));
      col.g = static_cast<float>(col.g + rng.uniform(-spec.color_jitter,
                                                     spec.color_jitter));
      col.b = static_cast<float>(col.b + rng.uniform(-spec.color_jitter,
                                                     spec.color_jitter));

      const int shape = cls % 3;
      const int px0 = std::max(0, static_cast<int>(std::floor(box.x_min)));
      const int py0 = std::max(0, static_cast<int>(std::floor(box.y_min)));
      const int px1 = std::min(sz - 1, static_cast<int>(std::ceil(box.x_max)));
      const int py1 = std::min(sz - 1, static_cast<int>(std::ceil(box.y_max)));
      for (int y = py0; y <= py1; ++y) {
        for (int x = px0; x <= px1; ++x) {
          if (!inside_shape(shape, x + 0.5, y + 0.5, box)) continue;
          ex.image.at(0, y, x) = col.r;
          ex.image.at(1, y, x) = col.g;
          ex.image.at(2, y, x) = col.b;
        }
      }
      ex.annotations.push_back({box, cls, 1.0});
    }

    if (spec.noise > 0) {
      for (auto& v : ex.image.data)
        v = static_cast<float>(v + rng.uniform(-spec.noise, spec.noise));
    }
    for (auto& v : ex.image.data) v = quantize(v);

    // Placement can fail for every object only when overlap constraints are
    // extreme; guarantee at least one annotation by dropping such images.
    if (ex.annotations.empty()) {
      const int cls = sample_class(spec, rng);
      const double side = spec.min_size;
      const double x0 = (sz - side) / 2, y0 = (sz - side) / 2;
      Box box{x0, y0, x0 + side, y0 + side};
      ShapeColor col = class_color(cls, spec.num_classes);
      const int shape = cls % 3;
      for (int y = 0; y < sz; ++y)
        for (int x = 0; x < sz; ++x)
          if (inside_shape(shape, x + 0.5, y + 0.5, box)) {
            ex.image.at(0, y, x) = quantize(col.r);
            ex.image.at(1, y, x) = quantize(col.g);
            ex.image.at(2, y, x) = quantize(col.b);
          }
      ex.annotations.push_back({box, cls, 1.0});
    }
    out.push_back(std::move(ex));
  }
  return out;
}

SplitResult split_labeled(const std::vector<LabeledExample>& data,
                          double fraction, std::uint64_t seed) {
  if (fraction <= 0 || fraction > 1)
    throw std::invalid_argument("fraction must be in (0,1]");
  const int n = static_cast<int>(data.size());
  const int n_lab = static_cast<int>(std::lround(fraction * n));
  if (n_lab < 1) throw std::invalid_argument("split yields zero labeled examples");

  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  Rng rng = derive_rng(seed, "labeled-split");
  for (int i = n - 1; i > 0; --i) {
    const int j = rng.uniform_int(0, i);
    std::swap(idx[i], idx[j]);
  }

  SplitResult res;
  res.labeled_indices.assign(idx.begin(), idx.begin() + n_lab);
  res.unlabeled_indices.assign(idx.begin() + n_lab, idx.end());
  std::sort(res.labeled_indices.begin(), res.labeled_indices.end());
  std::sort(res.unlabeled_indices.begin(), res.unlabeled_indices.end());
  for (int i : res.labeled_indices) res.labeled.push_back(data[i]);
  for (int i : res.unlabeled_indices)
    res.unlabeled.emplace_back(data[i].id, data[i].image, data[i].annotations);
  return res;
}

namespace {

json spec_to_json(const DatasetSpec& s) {
  return json{{"image_size", s.image_size},
              {"num_classes", s.num_classes},
              {"min_objects", s.min_objects},
              {"max_objects", s.max_objects},
              {"min_size", s.min_size},
              {"max_size", s.max_size},
              {"class_weights", s.class_weights},
              {"count", s.count},
              {"color_jitter", s.color_jitter},
              {"noise", s.noise},
              {"max_overlap", s.max_overlap}};
}

DatasetSpec spec_from_json(const json& j) {
  DatasetSpec s;
  s.image_size = j.value("image_size", s.image_size);
  s.num_classes = j.value("num_classes", s.num_classes);
  s.min_objects = j.value("min_objects", s.min_objects);
  s.max_objects = j.value("max_objects", s.max_objects);
  s.min_size = j.value("min_size", s.min_size);
  s.max_size = j.value("max_size", s.max_size);
  s.class_weights = j.value("class_weights", s.class_weights);
  s.count = j.value("count", s.count);
  s.color_jitter = j.value("color_jitter", s.color_jitter);
  s.noise = j.value("noise", s.noise);
  s.max_overlap = j.value("max_overlap", s.max_overlap);
  return s;
}

const char* kShapeNames[3] = {"circle", "square", "triangle"};

}  // namespace

void save_dataset(const std::string& dir,
                  const std::vector<LabeledExample>& data,
                  const DatasetSpec& spec, std::uint64_t seed) {
  fs::create_directories(fs::path(dir) / "images");
  json images = json::array();
  json annotations = json::array();
  int ann_id = 1;
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    const std::string file_name = ex.id + ".png";
    write_png_rgb((fs::path(dir) / "images" / file_name).string(), ex.image);
    images.push_back({{"id", static_cast<int>(i)},
                      {"file_name", file_name},
                      {"width", ex.image.w},
                      {"height", ex.image.h}});
    for (const auto& a : ex.annotations) {
      annotations.push_back(
          {{"id", ann_id++},
           {"image_id", static_cast<int>(i)},
           {"category_id", a.label},
           {"bbox", {a.box.x_min, a.box.y_min, a.box.width(), a.box.height()}},
           {"area", a.box.area()},
           {"iscrowd", 0}});
    }
  }
  json categories = json::array();
  for (int k = 0; k < spec.num_classes; ++k) {
    std::string name =
        k < 3 ? kShapeNames[k]
              : std::string(kShapeNames[k % 3]) + "_" + std::to_string(k);
    categories.push_back({{"id", k}, {"name", name}});
  }
  json coco{{"images", images},
            {"annotations", annotations},
            {"categories", categories}};
  std::ofstream((fs::path(dir) / "annotations.json").string()) << coco.dump(1);

  json sj = spec_to_json(spec);
  sj["seed"] = seed;
  std::ofstream((fs::path(dir) / "spec.json").string()) << sj.dump(1);
}

std::vector<LabeledExample> load_coco_annotations(
    const std::string& annotation_path, std::vector<std::string>* errors) {
  std::ifstream in(annotation_path);
  if (!in) throw std::runtime_error("cannot open: " + annotation_path);
  json doc;
  in >> doc;

  auto report = [&](const std::string& msg) {
    if (errors) errors->push_back(msg);
  };

  std::vector<int> cat_ids;
  for (const auto& c : doc.value("categories", json::array()))
    cat_ids.push_back(c.at("id").get<int>());
  std::sort(cat_ids.begin(), cat_ids.end());
  std::map<int, int> cat_remap;
  for (size_t k = 0; k < cat_ids.size(); ++k)
    cat_remap[cat_ids[k]] = static_cast<int>(k);

  const fs::path base = fs::path(annotation_path).parent_path();
  struct Pending {
    LabeledExample ex;
    bool ok = false;
  };
  std::map<int, Pending> by_id;
  std::vector<int> order;
  for (const auto& im : doc.value("images", json::array())) {
    int id;
    std::string file_name;
    try {
      id = im.at("id").get<int>();
      file_name = im.at("file_name").get<std::string>();
    } catch (const std::exception& e) {
      report(std::string("malformed image record: ") + e.what());
      continue;
    }
    fs::path p = base / file_name;
    if (!fs::exists(p)) p = base / "images" / file_name;
    Pending pe;
    pe.ex.id = fs::path(file_name).stem().string();
    if (!fs::exists(p)) {
      report("missing image file: " + file_name);
    } else {
      try {
        pe.ex.image = read_png_rgb(p.string());
        pe.ok = true;
      } catch (const std::exception& e) {
        report(std::string("unreadable image ") + file_name + ": " + e.what());
      }
    }
    by_id.emplace(id, std::move(pe));
    order.push_back(id);
  }

  for (const auto& an : doc.value("annotations", json::array())) {
    int image_id, cat;
    std::vector<double> bbox;
    try {
      image_id = an.at("image_id").get<int>();
      cat = an.at("category_id").get<int>();
      bbox = an.at("bbox").get<std::vector<double>>();
      if (bbox.size() != 4) throw std::runtime_error("bbox needs 4 entries");
    } catch (const std::exception& e) {
      report(std::string("malformed annotation record: ") + e.what());
      continue;
    }
    auto it = by_id.find(image_id);
    if (it == by_id.end() || !it->second.ok) {
      report("annotation for unknown or unloadable image id " +
             std::to_string(image_id));
      continue;
    }
    if (bbox[2] <= 0 || bbox[3] <= 0) {
      report("zero-area bbox on image id " + std::to_string(image_id));
      continue;
    }
    auto cit = cat_remap.find(cat);
    if (cit == cat_remap.end()) {
      report("unknown category id " + std::to_string(cat));
      continue;
    }
    it->second.ex.annotations.push_back(
        {Box{bbox[0], bbox[1], bbox[0] + bbox[2], bbox[1] + bbox[3]},
         cit->second, 1.0});
  }

  std::vector<LabeledExample> out;
  for (int id : order) {
    auto& pe = by_id.at(id);
    if (pe.ok) out.push_back(std::move(pe.ex));
  }
  return out;
}

std::vector<LabeledExample> load_dataset(const std::string& dir,
                                         std::vector<std::string>* errors) {
  return load_coco_annotations((fs::path(dir) / "annotations.json").string(),
                               errors);
}

DatasetSpec load_dataset_spec(const std::string& path, std::uint64_t* seed_out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  json j;
  in >> j;
  if (seed_out) *seed_out = j.value("seed", 0ull);
  return spec_from_json(j);
}

int dataset_class_count(const std::string& dir) {
  std::ifstream in((fs::path(dir) / "annotations.json").string());
  if (!in) throw std::runtime_error("cannot open annotations in: " + dir);
  json doc;
  in >> doc;
  return static_cast<int>(doc.value("categories", json::array()).size());
}

std::uint64_t dataset_hash(const std::vector<LabeledExample>& data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& ex : data) {
    for (char c : ex.id) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    for (float v : ex.image.data)
      mix(static_cast<std::uint64_t>(std::lround(v * 255.0f)));
    for (const auto& a : ex.annotations) {
      mix(static_cast<std::uint64_t>(a.label));
      for (double d : {a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max}) {
        std::uint64_t bits;
        static_assert(sizeof bits == sizeof d);
        std::memcpy(&bits, &d, sizeof bits);
        mix(bits);
      }
    }
  }
  return h;
}

}  // namespace cst

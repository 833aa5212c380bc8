#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cst/boxops.hpp"
#include "cst/tensor.hpp"

namespace cst {

struct DatasetSpec {
  int image_size = 128;
  int num_classes = 3;  // shapes cycle through circle, square, triangle
  int min_objects = 1;
  int max_objects = 4;
  double min_size = 24;
  double max_size = 48;
  std::vector<double> class_weights;  // empty = uniform
  int count = 100;
  double color_jitter = 0.15;
  double noise = 0.02;
  double max_overlap = 0.3;
};

struct LabeledExample {
  std::string id;
  Tensor3<float> image;
  std::vector<TargetBox> annotations;  // weight unused (1.0)
};

struct DiagnosticsAccess;

// Unlabeled image. Ground truth survives only behind DiagnosticsAccess so no
// training path can reach it.
class UnlabeledExample {
 public:
  UnlabeledExample(std::string id, Tensor3<float> image,
                   std::vector<TargetBox> hidden)
      : id(std::move(id)), image(std::move(image)), hidden_(std::move(hidden)) {}

  std::string id;
  Tensor3<float> image;

 private:
  std::vector<TargetBox> hidden_;
  friend struct DiagnosticsAccess;
};

struct DiagnosticsAccess {
  static const std::vector<TargetBox>& hidden_annotations(
      const UnlabeledExample& ex) {
    return ex.hidden_;
  }
};

std::vector<LabeledExample> generate_dataset(const DatasetSpec& spec,
                                             std::uint64_t seed);

struct SplitResult {
  std::vector<LabeledExample> labeled;
  std::vector<UnlabeledExample> unlabeled;
  std::vector<int> labeled_indices;
  std::vector<int> unlabeled_indices;
};

// |labeled| = round(fraction * |data|); throws when that is zero.
SplitResult split_labeled(const std::vector<LabeledExample>& data,
                          double fraction, std::uint64_t seed);

// Directory layout: <dir>/images/<id>.png + <dir>/annotations.json (COCO
// arrays) + <dir>/spec.json (generation spec + seed).
void save_dataset(const std::string& dir,
                  const std::vector<LabeledExample>& data,
                  const DatasetSpec& spec, std::uint64_t seed);

// COCO ingestion: bbox [x,y,w,h] -> corner boxes, category ids remapped to
// [0,C) in ascending id order. Bad records are skipped and reported via the
// optional error sink.
std::vector<LabeledExample> load_coco_annotations(
    const std::string& annotation_path,
    std::vector<std::string>* errors = nullptr);

std::vector<LabeledExample> load_dataset(const std::string& dir,
                                         std::vector<std::string>* errors = nullptr);

DatasetSpec load_dataset_spec(const std::string& path, std::uint64_t* seed_out);

int dataset_class_count(const std::string& dir);

// Order-sensitive FNV-1a content hash over images and annotations.
std::uint64_t dataset_hash(const std::vector<LabeledExample>& data);

}  // namespace cst

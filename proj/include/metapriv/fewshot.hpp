#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metapriv/network.hpp"
#include "metapriv/rng.hpp"
#include "metapriv/tensor.hpp"

namespace metapriv {

inline constexpr int kImageSide = 28;
inline constexpr int kImagePixels = kImageSide * kImageSide;

struct ImageExample {
    Tensor pixels;  // [28 x 28], values in [0, 1]
    int label = 0;
};

struct Dataset {
    std::string name;
    std::vector<ImageExample> examples;
    std::vector<std::vector<int>> class_index;  // example ids per label

    int num_classes() const { return static_cast<int>(class_index.size()); }
    void build_index();
};

struct FewShotSpec {
    int ways = 3;   // classes per task
    int shots = 1;  // support examples per class; query mirrors this
};

// One task: w dataset classes relabeled 0..w-1, class-major row layout
// (class 0's shots, then class 1's, ...), support and query disjoint.
struct TaskBatch {
    std::vector<int> classes;  // dataset labels; position = task label
    LabeledBatch support;
    LabeledBatch query;
    std::vector<int> support_ids;  // dataset example ids, row for row
    std::vector<int> query_ids;
};

// Reads an IDX image/label file pair: big-endian headers, magic 0x00000803
// for images and 0x00000801 for labels, pixels scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Striped-pattern corpus: per-class orientation and frequency, per-example
// phase jitter and pixel noise. Deterministic in (classes, per_class, seed).
Dataset synth_dataset(int classes, int per_class, std::uint64_t seed);

TaskBatch sample_task(const Dataset& data, const FewShotSpec& spec, Rng& rng);

// Uniform example of `label` whose id is not in `excluded`. Throws if none.
int sample_example_excluding(const Dataset& data, int label, const std::vector<int>& excluded, Rng& rng);

Tensor flatten_image(const Tensor& pixels);              // [28x28] -> [1 x 784] row
LabeledBatch batch_of(const Dataset& data, const std::vector<int>& ids, const std::vector<int>& classes);

}  // namespace metapriv

#include "metapriv/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace metapriv {

void Dataset::build_index() {
    int max_label = -1;
    for (const auto& e : examples) {
        if (e.label < 0) throw std::invalid_argument("dataset label negative");
        max_label = std::max(max_label, e.label);
    }
    class_index.assign(static_cast<std::size_t>(max_label + 1), {});
    for (std::size_t i = 0; i < examples.size(); ++i)
        class_index[static_cast<std::size_t>(examples[i].label)].push_back(static_cast<int>(i));
}

namespace {

std::uint32_t read_be32(std::istream& is, const std::string& file, const char* field) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error(file + ": truncated while reading " + field);
    return static_cast<std::uint32_t>(b[0]) << 24 | static_cast<std::uint32_t>(b[1]) << 16 |
           static_cast<std::uint32_t>(b[2]) << 8 | static_cast<std::uint32_t>(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw std::runtime_error("cannot open image file: " + images_path);
    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw std::runtime_error("cannot open label file: " + labels_path);

    const std::uint32_t img_magic = read_be32(imgs, images_path, "image magic");
    if (img_magic != 0x00000803u)
        throw std::runtime_error(images_path + ": image magic mismatch (got " + std::to_string(img_magic) + ")");
    const std::uint32_t n_images = read_be32(imgs, images_path, "image count");
    const std::uint32_t rows = read_be32(imgs, images_path, "row count");
    const std::uint32_t cols = read_be32(imgs, images_path, "column count");
    if (rows != kImageSide || cols != kImageSide)
        throw std::runtime_error(images_path + ": expected 28x28 images, got " + std::to_string(rows) + "x" +
                                 std::to_string(cols));

    const std::uint32_t lab_magic = read_be32(labs, labels_path, "label magic");
    if (lab_magic != 0x00000801u)
        throw std::runtime_error(labels_path + ": label magic mismatch (got " + std::to_string(lab_magic) + ")");
    const std::uint32_t n_labels = read_be32(labs, labels_path, "label count");
    if (n_images != n_labels)
        throw std::runtime_error("image count " + std::to_string(n_images) + " does not match label count " +
                                 std::to_string(n_labels));

    Dataset data;
    data.name = "idx";
    data.examples.reserve(n_images);
    std::vector<unsigned char> px(kImagePixels);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        if (!imgs.read(reinterpret_cast<char*>(px.data()), kImagePixels))
            throw std::runtime_error(images_path + ": truncated while reading pixel data");
        char lab;
        if (!labs.read(&lab, 1)) throw std::runtime_error(labels_path + ": truncated while reading label data");
        ImageExample ex;
        ex.pixels = Tensor({kImageSide, kImageSide});
        for (int j = 0; j < kImagePixels; ++j) ex.pixels[j] = static_cast<double>(px[static_cast<std::size_t>(j)]) / 255.0;
        ex.label = static_cast<unsigned char>(lab);
        data.examples.push_back(std::move(ex));
    }
    data.build_index();
    return data;
}

Dataset synth_dataset(int classes, int per_class, std::uint64_t seed) {
    if (classes < 2) throw std::invalid_argument("synth_dataset: need at least two classes");
    if (per_class < 1) throw std::invalid_argument("synth_dataset: need at least one example per class");
    Dataset data;
    data.name = "synthetic";
    for (int c = 0; c < classes; ++c) {
        const double angle = std::numbers::pi * c / classes;
        const double freq = 2.0 + c % 3;
        const double ca = std::cos(angle), sa = std::sin(angle);
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
        for (int k = 0; k < per_class; ++k) {
            const double phase = rng.uniform(-0.4, 0.4);
            ImageExample ex;
            ex.label = c;
            ex.pixels = Tensor({kImageSide, kImageSide});
            for (int i = 0; i < kImageSide; ++i)
                for (int j = 0; j < kImageSide; ++j) {
                    const double u = static_cast<double>(i) / kImageSide;
                    const double v = static_cast<double>(j) / kImageSide;
                    double val = 0.5 + 0.45 * std::sin(2.0 * std::numbers::pi * freq * (u * ca + v * sa) + phase);
                    val += rng.uniform(-0.07, 0.07);
                    ex.pixels.at(i, j) = std::clamp(val, 0.0, 1.0);
                }
            data.examples.push_back(std::move(ex));
        }
    }
    data.build_index();
    return data;
}

Tensor flatten_image(const Tensor& pixels) {
    if (pixels.rank() != 2 || pixels.rows() != kImageSide || pixels.cols() != kImageSide)
        throw std::invalid_argument("flatten_image: expected a 28x28 image, got " + pixels.shape_str());
    return Tensor({1, kImagePixels}, pixels.data());
}

LabeledBatch batch_of(const Dataset& data, const std::vector<int>& ids, const std::vector<int>& classes) {
    LabeledBatch b;
    b.inputs = Tensor({static_cast<int>(ids.size()), kImagePixels});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const ImageExample& ex = data.examples[static_cast<std::size_t>(ids[r])];
        for (int j = 0; j < kImagePixels; ++j) b.inputs.at(static_cast<int>(r), j) = ex.pixels[j];
        const auto it = std::find(classes.begin(), classes.end(), ex.label);
        if (it == classes.end()) throw std::invalid_argument("batch_of: example class not in task");
        b.labels.push_back(static_cast<int>(it - classes.begin()));
    }
    return b;
}

TaskBatch sample_task(const Dataset& data, const FewShotSpec& spec, Rng& rng) {
    if (spec.ways < 2) throw std::invalid_argument("sample_task: ways must be at least 2");
    if (spec.shots < 1) throw std::invalid_argument("sample_task: shots must be at least 1");

    std::vector<int> usable;
    for (int c = 0; c < data.num_classes(); ++c)
        if (static_cast<int>(data.class_index[static_cast<std::size_t>(c)].size()) >= 2 * spec.shots) usable.push_back(c);
    if (static_cast<int>(usable.size()) < spec.ways)
        throw std::invalid_argument("sample_task: dataset has only " + std::to_string(usable.size()) +
                                    " classes with " + std::to_string(2 * spec.shots) + "+ examples, need " +
                                    std::to_string(spec.ways));

    rng.shuffle(usable);
    TaskBatch task;
    task.classes.assign(usable.begin(), usable.begin() + spec.ways);

    for (int c : task.classes) {
        std::vector<int> pool = data.class_index[static_cast<std::size_t>(c)];
        // Partial Fisher-Yates: the first 2*shots entries become the draw.
        for (int i = 0; i < 2 * spec.shots; ++i) {
            const int j = i + rng.uniform_int(static_cast<int>(pool.size()) - i);
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
        }
        for (int k = 0; k < spec.shots; ++k) task.support_ids.push_back(pool[static_cast<std::size_t>(k)]);
        for (int k = spec.shots; k < 2 * spec.shots; ++k) task.query_ids.push_back(pool[static_cast<std::size_t>(k)]);
    }

    task.support = batch_of(data, task.support_ids, task.classes);
    task.query = batch_of(data, task.query_ids, task.classes);
    return task;
}

int sample_example_excluding(const Dataset& data, int label, const std::vector<int>& excluded, Rng& rng) {
    if (label < 0 || label >= data.num_classes()) throw std::invalid_argument("sample_example_excluding: bad label");
    std::vector<int> pool;
    for (int id : data.class_index[static_cast<std::size_t>(label)])
        if (std::find(excluded.begin(), excluded.end(), id) == excluded.end()) pool.push_back(id);
    if (pool.empty()) throw std::runtime_error("sample_example_excluding: class pool exhausted");
    return pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
}

}  // namespace metapriv

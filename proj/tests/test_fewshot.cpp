#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <metapriv/fewshot.hpp>
#include <metapriv/rng.hpp>

using namespace metapriv;

namespace {

void put_be32(std::ofstream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    os.write(b, 4);
}

struct IdxPair {
    std::string images = "test_idx_images.bin";
    std::string labels = "test_idx_labels.bin";
    ~IdxPair() {
        std::remove(images.c_str());
        std::remove(labels.c_str());
    }
};

// n images, pixel value = byte_of(i) everywhere, label = i % 10.
void write_idx_pair(const IdxPair& p, int n, std::uint32_t img_magic = 0x00000803u,
                    std::uint32_t lab_magic = 0x00000801u, int lab_count = -1, int rows = kImageSide,
                    bool truncate_pixels = false) {
    std::ofstream imgs(p.images, std::ios::binary);
    put_be32(imgs, img_magic);
    put_be32(imgs, static_cast<std::uint32_t>(n));
    put_be32(imgs, static_cast<std::uint32_t>(rows));
    put_be32(imgs, kImageSide);
    for (int i = 0; i < n; ++i) {
        const int limit = (truncate_pixels && i == n - 1) ? kImagePixels / 2 : kImagePixels;
        std::vector<char> px(static_cast<std::size_t>(limit), static_cast<char>(i * 50 % 256));
        imgs.write(px.data(), limit);
    }
    imgs.close();

    std::ofstream labs(p.labels, std::ios::binary);
    put_be32(labs, lab_magic);
    put_be32(labs, static_cast<std::uint32_t>(lab_count < 0 ? n : lab_count));
    for (int i = 0; i < n; ++i) {
        const char lab = static_cast<char>(i % 10);
        labs.write(&lab, 1);
    }
    labs.close();
}

double image_distance(const Tensor& a, const Tensor& b) {
    double acc = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc);
}

}  // namespace

TEST_CASE("idx loader scales bytes into the unit interval") {
    IdxPair p;
    write_idx_pair(p, 6);
    const Dataset data = load_idx(p.images, p.labels);
    REQUIRE(data.examples.size() == 6);
    CHECK(data.examples[0].pixels[0] == 0.0);
    CHECK(data.examples[1].pixels[0] == doctest::Approx(50.0 / 255.0).epsilon(1e-15));
    CHECK(data.examples[5].pixels[kImagePixels - 1] == doctest::Approx(250.0 / 255.0).epsilon(1e-15));
    for (int i = 0; i < 6; ++i) {
        CHECK(data.examples[static_cast<std::size_t>(i)].label == i);
        CHECK(data.examples[static_cast<std::size_t>(i)].pixels.shape() == std::vector<int>{28, 28});
    }
    CHECK(data.num_classes() == 6);
    CHECK(data.class_index[3] == std::vector<int>{3});
}

TEST_CASE("idx loader rejects malformed files") {
    IdxPair p;

    write_idx_pair(p, 2, 0x00000802u);
    CHECK_THROWS_WITH_AS(load_idx(p.images, p.labels), doctest::Contains("image magic"), std::runtime_error);

    write_idx_pair(p, 2, 0x00000803u, 0x00000807u);
    CHECK_THROWS_WITH_AS(load_idx(p.images, p.labels), doctest::Contains("label magic"), std::runtime_error);

    write_idx_pair(p, 2, 0x00000803u, 0x00000801u, 3);
    CHECK_THROWS_WITH_AS(load_idx(p.images, p.labels), doctest::Contains("does not match"), std::runtime_error);

    write_idx_pair(p, 2, 0x00000803u, 0x00000801u, -1, 14);
    CHECK_THROWS_WITH_AS(load_idx(p.images, p.labels), doctest::Contains("28x28"), std::runtime_error);

    write_idx_pair(p, 2, 0x00000803u, 0x00000801u, -1, kImageSide, true);
    CHECK_THROWS_WITH_AS(load_idx(p.images, p.labels), doctest::Contains("truncated"), std::runtime_error);

    CHECK_THROWS_AS(load_idx("no_such_images.bin", p.labels), std::runtime_error);
}

TEST_CASE("bundled digit subset loads cleanly") {
    const char* dir = std::getenv("METAPRIV_DATA_DIR");
    REQUIRE_MESSAGE(dir != nullptr, "METAPRIV_DATA_DIR must point at the decompressed data directory");
    const std::string base(dir);
    const Dataset data = load_idx(base + "/mnist-images.idx", base + "/mnist-labels.idx");
    CHECK(data.examples.size() == 10000);
    REQUIRE(data.num_classes() == 10);
    double lo = 1e9, hi = -1e9;
    for (const auto& ex : data.examples)
        for (std::int64_t i = 0; i < ex.pixels.size(); ++i) {
            lo = std::min(lo, ex.pixels[i]);
            hi = std::max(hi, ex.pixels[i]);
        }
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
    CHECK(hi > 0.9);
    for (int c = 0; c < 10; ++c) CHECK(data.class_index[static_cast<std::size_t>(c)].size() >= 800);
}

TEST_CASE("synthetic corpus is deterministic and class-separated") {
    const Dataset a = synth_dataset(4, 6, 9);
    const Dataset b = synth_dataset(4, 6, 9);
    const Dataset c = synth_dataset(4, 6, 10);
    REQUIRE(a.examples.size() == 24);
    CHECK(a.num_classes() == 4);
    for (std::size_t i = 0; i < a.examples.size(); ++i) {
        CHECK(a.examples[i].pixels.data() == b.examples[i].pixels.data());
        CHECK(a.examples[i].label == b.examples[i].label);
    }
    bool any_diff = false;
    for (std::size_t i = 0; i < a.examples.size() && !any_diff; ++i)
        any_diff = a.examples[i].pixels.data() != c.examples[i].pixels.data();
    CHECK(any_diff);

    for (const auto& ex : a.examples)
        for (std::int64_t i = 0; i < ex.pixels.size(); ++i) {
            CHECK(ex.pixels[i] >= 0.0);
            CHECK(ex.pixels[i] <= 1.0);
        }

    // Same-class pairs sit closer than cross-class pairs on average.
    double within = 0, between = 0;
    int nw = 0, nb = 0;
    for (int i = 0; i < 6; ++i)
        for (int j = i + 1; j < 6; ++j) {
            within += image_distance(a.examples[static_cast<std::size_t>(i)].pixels,
                                     a.examples[static_cast<std::size_t>(j)].pixels);
            ++nw;
        }
    for (int i = 0; i < 6; ++i)
        for (int j = 6; j < 12; ++j) {
            between += image_distance(a.examples[static_cast<std::size_t>(i)].pixels,
                                      a.examples[static_cast<std::size_t>(j)].pixels);
            ++nb;
        }
    CHECK(within / nw < between / nb);

    CHECK_THROWS_AS(synth_dataset(1, 5, 0), std::invalid_argument);
    CHECK_THROWS_AS(synth_dataset(3, 0, 0), std::invalid_argument);
}

TEST_CASE("task sampling keeps support and query disjoint with class-major labels") {
    const Dataset data = synth_dataset(5, 8, 21);
    const FewShotSpec spec{3, 2};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const TaskBatch task = sample_task(data, spec, rng);
        REQUIRE(task.classes.size() == 3);
        std::set<int> classes(task.classes.begin(), task.classes.end());
        CHECK(classes.size() == 3);
        for (int c : task.classes) {
            CHECK(c >= 0);
            CHECK(c < 5);
        }

        REQUIRE(task.support_ids.size() == 6);
        REQUIRE(task.query_ids.size() == 6);
        std::set<int> sup(task.support_ids.begin(), task.support_ids.end());
        std::set<int> qry(task.query_ids.begin(), task.query_ids.end());
        CHECK(sup.size() == 6);
        CHECK(qry.size() == 6);
        std::vector<int> overlap;
        std::set_intersection(sup.begin(), sup.end(), qry.begin(), qry.end(), std::back_inserter(overlap));
        CHECK(overlap.empty());

        const std::vector<int> want_labels{0, 0, 1, 1, 2, 2};
        CHECK(task.support.labels == want_labels);
        CHECK(task.query.labels == want_labels);
        CHECK(task.support.inputs.rows() == 6);
        CHECK(task.support.inputs.cols() == kImagePixels);

        // Each row is the flattened dataset example its id names.
        for (int r = 0; r < 6; ++r) {
            const ImageExample& ex = data.examples[static_cast<std::size_t>(task.support_ids[static_cast<std::size_t>(r)])];
            CHECK(ex.label == task.classes[static_cast<std::size_t>(task.support.labels[static_cast<std::size_t>(r)])]);
            const Tensor flat = flatten_image(ex.pixels);
            bool same = true;
            for (int j = 0; j < kImagePixels && same; ++j) same = task.support.inputs.at(r, j) == flat[j];
            CHECK(same);
        }
    }
}

TEST_CASE("task sampling is a pure function of the generator state") {
    const Dataset data = synth_dataset(4, 6, 2);
    const FewShotSpec spec{3, 1};
    Rng r1(77), r2(77);
    const TaskBatch a = sample_task(data, spec, r1);
    const TaskBatch b = sample_task(data, spec, r2);
    CHECK(a.classes == b.classes);
    CHECK(a.support_ids == b.support_ids);
    CHECK(a.query_ids == b.query_ids);
    const TaskBatch c = sample_task(data, spec, r1);
    CHECK((a.classes != c.classes || a.support_ids != c.support_ids));
}

TEST_CASE("task sampling rejects hopeless requests") {
    const Dataset data = synth_dataset(3, 2, 4);
    Rng rng(1);
    const FewShotSpec too_wide{4, 1};
    CHECK_THROWS_AS(sample_task(data, too_wide, rng), std::invalid_argument);
    const FewShotSpec too_deep{3, 2};  // needs 4 per class, corpus has 2
    CHECK_THROWS_AS(sample_task(data, too_deep, rng), std::invalid_argument);
    const FewShotSpec one_way{1, 1};
    CHECK_THROWS_AS(sample_task(data, one_way, rng), std::invalid_argument);
    const FewShotSpec no_shots{3, 0};
    CHECK_THROWS_AS(sample_task(data, no_shots, rng), std::invalid_argument);
}

TEST_CASE("excluded-id sampling respects label and exclusions") {
    const Dataset data = synth_dataset(3, 4, 5);
    Rng rng(3);
    const std::vector<int> excluded{4, 5, 6};  // class 1 owns ids 4..7
    std::set<int> seen;
    for (int i = 0; i < 60; ++i) {
        const int id = sample_example_excluding(data, 1, excluded, rng);
        CHECK(data.examples[static_cast<std::size_t>(id)].label == 1);
        CHECK(std::find(excluded.begin(), excluded.end(), id) == excluded.end());
        seen.insert(id);
    }
    CHECK(seen == std::set<int>{7});

    const std::vector<int> all{4, 5, 6, 7};
    CHECK_THROWS_AS(sample_example_excluding(data, 1, all, rng), std::runtime_error);
    CHECK_THROWS_AS(sample_example_excluding(data, 9, {}, rng), std::invalid_argument);
}

TEST_CASE("flatten_image lays pixels out row-major") {
    Tensor img({kImageSide, kImageSide});
    img.at(0, 3) = 0.25;
    img.at(1, 0) = 0.5;
    const Tensor flat = flatten_image(img);
    REQUIRE(flat.shape() == std::vector<int>{1, kImagePixels});
    CHECK(flat[3] == 0.25);
    CHECK(flat[kImageSide] == 0.5);
    const Tensor small({3, 3});
    CHECK_THROWS_AS(flatten_image(small), std::invalid_argument);
}

TEST_CASE("batch_of relabels into task positions") {
    const Dataset data = synth_dataset(4, 3, 8);
    const std::vector<int> classes{2, 0};  // task label 0 = dataset class 2
    const std::vector<int> ids{6, 0};      // class 2 example, class 0 example
    const LabeledBatch b = batch_of(data, ids, classes);
    CHECK(b.labels == std::vector<int>{0, 1});
    CHECK(b.inputs.rows() == 2);
    const std::vector<int> foreign{9};  // class 3, absent from the task
    CHECK_THROWS_AS(batch_of(data, foreign, classes), std::invalid_argument);
}

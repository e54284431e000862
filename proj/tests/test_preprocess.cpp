#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "cervinet/errors.hpp"
#include "cervinet/metrics.hpp"
#include "cervinet/preprocess.hpp"

using namespace cervinet;

namespace {

GrayImage ramp(int size) {
    GrayImage g(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) g.at(x, y) = static_cast<float>(x) / (size - 1);
    }
    return g;
}

BinaryMask box(int size, int x0, int y0, int w, int h) {
    BinaryMask m(size, size);
    for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) m.at(x, y) = 1;
    }
    return m;
}

BinaryMask disk(int size, double radius) {
    BinaryMask m(size, size);
    const double c = size / 2.0;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) m.at(x, y) = std::hypot(x + 0.5 - c, y + 0.5 - c) <= radius;
    }
    return m;
}

// Paints a plus sign and returns the painted pixels.
BinaryMask paint_cross(RgbImage& img, int cx, int cy, int arm, std::array<float, 3> color) {
    BinaryMask painted(img.width, img.height);
    for (int d = -arm; d <= arm; ++d) {
        for (auto [x, y] : {std::pair{cx + d, cy}, std::pair{cx, cy + d}}) {
            if (!img.contains(x, y)) continue;
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = color[c];
            painted.at(x, y) = 1;
        }
    }
    return painted;
}

RgbImage gray_rgb(int size, float v) { return RgbImage::from_gray(GrayImage(size, size, v)); }

Sample make_sample(const std::string& id, int label, const std::string& patient, int size = 8) {
    Sample s;
    s.id = id;
    s.source_id = id;
    s.label = label;
    s.patient_id = patient;
    s.image = GrayImage(size, size, 0.4f);
    s.mask = box(size, 2, 2, size / 2, size / 2);
    return s;
}

std::vector<Sample> make_split(int controls, int preterm, int size = 8) {
    std::vector<Sample> out;
    for (int i = 0; i < controls; ++i) out.push_back(make_sample("c" + std::to_string(i), 0, "pc" + std::to_string(i), size));
    for (int i = 0; i < preterm; ++i) out.push_back(make_sample("p" + std::to_string(i), 1, "pp" + std::to_string(i), size));
    return out;
}

std::pair<std::size_t, std::size_t> class_counts(const std::vector<Sample>& v) {
    const auto pos = static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](const Sample& s) { return s.label == 1; }));
    return {v.size() - pos, pos};
}

}  // namespace

TEST_CASE("gray images carry no markers") {
    CHECK(count_ones(detect_markers(gray_rgb(32, 0.5f))) == 0);
    CHECK(count_ones(detect_markers(GrayImage(32, 32, 0.7f))) == 0);
}

TEST_CASE("painted yellow cross is detected") {
    RgbImage img = gray_rgb(48, 0.3f);
    const BinaryMask painted = paint_cross(img, 20, 24, 5, {1.0f, 1.0f, 0.0f});
    const BinaryMask found = detect_markers(img);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < painted.size(); ++i) covered += painted.data[i] && found.data[i];
    CHECK(covered >= 0.95 * count_ones(painted));
    CHECK(found.at(0, 0) == 0);
}

TEST_CASE("muted yellow and green are detected, other hues are not") {
    RgbImage img = gray_rgb(40, 0.4f);
    const BinaryMask yellow = paint_cross(img, 8, 8, 3, {0.85f, 0.8f, 0.2f});
    const BinaryMask green = paint_cross(img, 30, 8, 3, {0.2f, 0.7f, 0.25f});
    paint_cross(img, 8, 30, 3, {0.9f, 0.1f, 0.1f});
    paint_cross(img, 30, 30, 3, {0.1f, 0.2f, 0.9f});
    MarkerDetectionConfig cfg;
    cfg.dilation_radius = 0;
    const BinaryMask found = detect_markers(img, cfg);
    BinaryMask expected(40, 40);
    for (std::size_t i = 0; i < expected.size(); ++i) expected.data[i] = yellow.data[i] | green.data[i];
    CHECK(found == expected);
}

TEST_CASE("green cross at the border is clipped to the image") {
    RgbImage img = gray_rgb(32, 0.5f);
    const BinaryMask painted = paint_cross(img, 0, 31, 4, {0.0f, 1.0f, 0.0f});
    const BinaryMask found = detect_markers(img);
    CHECK(found.width == 32);
    for (std::size_t i = 0; i < painted.size(); ++i) {
        if (painted.data[i]) CHECK(found.data[i] == 1);
    }
    CHECK(found.at(31, 0) == 0);
}

TEST_CASE("dilation grows the mask by the radius") {
    BinaryMask m(9, 9);
    m.at(4, 4) = 1;
    CHECK(count_ones(dilate(m, 0)) == 1);
    CHECK(count_ones(dilate(m, 1)) == 5);
    CHECK(count_ones(dilate(m, 2)) == 13);
}

TEST_CASE("inpainting leaves known pixels untouched") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (int k = 0; k < 10; ++k) {
        GrayImage img(24, 24);
        for (float& v : img.data) v = u(rng);
        BinaryMask hole(24, 24);
        for (auto& v : hole.data) v = u(rng) < 0.2f;
        hole.at(0, 0) = 0;
        const GrayImage out = telea_inpaint(img, hole);
        for (std::size_t i = 0; i < img.size(); ++i) {
            if (!hole.data[i]) CHECK(out.data[i] == img.data[i]);
            else CHECK(std::isfinite(out.data[i]));
        }
    }
}

TEST_CASE("inpainted values stay within the surrounding known range") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(0.2f, 0.7f);
    GrayImage img(32, 32);
    for (float& v : img.data) v = u(rng);
    const BinaryMask hole = box(32, 10, 12, 7, 5);
    const GrayImage out = telea_inpaint(img, hole, 3);
    const BinaryMask ring = dilate(hole, 3);
    float lo = 1.0f, hi = 0.0f;
    for (std::size_t i = 0; i < img.size(); ++i) {
        if (ring.data[i] && !hole.data[i]) {
            lo = std::min(lo, img.data[i]);
            hi = std::max(hi, img.data[i]);
        }
    }
    for (std::size_t i = 0; i < img.size(); ++i) {
        if (!hole.data[i]) continue;
        CHECK(out.data[i] >= lo - 1e-6f);
        CHECK(out.data[i] <= hi + 1e-6f);
    }
}

TEST_CASE("inpainting preserves a constant image") {
    const GrayImage img(20, 20, 0.5f);
    const GrayImage out = telea_inpaint(img, box(20, 3, 4, 9, 6));
    for (float v : out.data) CHECK(std::abs(v - 0.5f) <= 1e-6f);
}

TEST_CASE("inpainting reconstructs a linear ramp through a 5x5 hole") {
    const GrayImage img = ramp(32);
    const BinaryMask hole = box(32, 14, 14, 5, 5);
    const GrayImage out = telea_inpaint(img, hole);
    double worst = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) worst = std::max(worst, std::abs(static_cast<double>(out.data[i] - img.data[i])));
    CHECK(worst <= 0.05);
}

TEST_CASE("inpainting edge cases") {
    const GrayImage img = ramp(8);
    CHECK(telea_inpaint(img, BinaryMask(8, 8)) == img);
    CHECK_THROWS_AS(telea_inpaint(img, BinaryMask(8, 8, 1)), DataError);
    CHECK_THROWS_AS(telea_inpaint(img, BinaryMask(4, 4)), ShapeError);
}

TEST_CASE("prepare resizes and keeps clean inputs") {
    CHECK(prepare_image(GrayImage(512, 512, 0.3f), PrepareOptions{}).width == 256);
    const GrayImage r = ramp(256);
    CHECK(prepare_image(r, PrepareOptions{}) == r);
    CHECK(prepare_image(RgbImage::from_gray(r), PrepareOptions{}) == r);
}

TEST_CASE("prepare changes only pixels under the marker mask") {
    const GrayImage base = ramp(64);
    RgbImage img = RgbImage::from_gray(base);
    paint_cross(img, 20, 30, 4, {1.0f, 1.0f, 0.0f});
    paint_cross(img, 45, 10, 3, {0.0f, 1.0f, 0.0f});
    PrepareOptions opts;
    opts.target_size = 64;
    const GrayImage out = prepare_image(img, opts);
    const BinaryMask markers = detect_markers(img, opts.markers);
    for (std::size_t i = 0; i < base.size(); ++i) {
        if (!markers.data[i]) CHECK(out.data[i] == base.data[i]);
        else CHECK(std::abs(out.data[i] - base.data[i]) < 0.05f);
    }
}

TEST_CASE("missing files raise an io error naming the path") {
    try {
        prepare_image_file("/nonexistent/scan.png");
        FAIL("expected an error");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("/nonexistent/scan.png") != std::string::npos);
    }
}

TEST_CASE("identity policy leaves samples unchanged") {
    const Sample s = make_sample("a", 1, "p", 16);
    Rng rng(3);
    const Sample out = augment(s, AugmentationPolicy::identity(), rng);
    CHECK(out.image == s.image);
    CHECK(out.mask == s.mask);
}

TEST_CASE("augmentation moves image and mask together") {
    AugmentationPolicy geometric = AugmentationPolicy::identity();
    geometric.rotation_probability = 1.0;
    geometric.crop_probability = 0.7;
    Sample s = make_sample("a", 1, "p7", 48);
    s.mask = disk(48, 12.0);
    s.mask.at(5, 40) = 1;
    for (std::size_t i = 0; i < s.mask.size(); ++i) s.image.data[i] = s.mask.data[i];
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const Sample out = augment(s, geometric, rng);
        CHECK(out.label == 1);
        CHECK(out.patient_id == "p7");
        CHECK(is_binary(out.mask));
        // Where all four bilinear taps agree, the nearest tap must agree too.
        for (std::size_t i = 0; i < out.mask.size(); ++i) {
            if (out.image.data[i] == 1.0f) CHECK(out.mask.data[i] == 1);
            if (out.image.data[i] == 0.0f) CHECK(out.mask.data[i] == 0);
        }
    }
}

TEST_CASE("photometric augmentation leaves the mask alone") {
    AugmentationPolicy photometric = AugmentationPolicy::identity();
    photometric.brightness_probability = 1.0;
    photometric.contrast_probability = 1.0;
    photometric.noise_probability = 1.0;
    const Sample s = make_sample("a", 0, "p", 16);
    Rng rng(9);
    const Sample out = augment(s, photometric, rng);
    CHECK(out.mask == s.mask);
    CHECK(out.image != s.image);
    for (float v : out.image.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("rotation there and back keeps a centered disk") {
    const BinaryMask d = disk(64, 16.0);
    GeometricTransform plus, minus;
    plus.rotation_degrees = 15.0;
    minus.rotation_degrees = -15.0;
    CHECK(iou(apply_geometric(apply_geometric(d, plus), minus), d) >= 0.98);
}

TEST_CASE("augmentation policy validation and json") {
    AugmentationPolicy p;
    CHECK_NOTHROW(p.validate());
    CHECK(augmentation_policy_from_json(to_json(p)).rotation_degrees == p.rotation_degrees);
    p.rotation_degrees = {-200.0, 10.0};
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = {};
    p.noise_probability = 1.5;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = {};
    p.crop_fraction = {0.0, 1.0};
    CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("balancing adds minority copies") {
    const auto split = make_split(9, 1);
    const auto out = balance_split(split, "train", AugmentationPolicy{}, BalanceOptions{});
    CHECK(out.size() == 18);
    CHECK(class_counts(out) == std::pair<std::size_t, std::size_t>{9, 9});
    for (std::size_t i = 0; i < split.size(); ++i) CHECK(out[i].id == split[i].id);
    for (std::size_t i = split.size(); i < out.size(); ++i) {
        CHECK(out[i].label == 1);
        CHECK(out[i].patient_id == "pp0");
        CHECK(out[i].source_id == "p0");
    }
    std::set<std::string> ids;
    for (const Sample& s : out) ids.insert(s.id);
    CHECK(ids.size() == out.size());
}

TEST_CASE("balanced splits stay as they are") {
    const auto split = make_split(4, 4);
    CHECK(balance_split(split, "val", AugmentationPolicy{}, BalanceOptions{}).size() == 8);
}

TEST_CASE("majority multiplier reaches the configured total") {
    const auto split = make_split(319, 35, 4);
    BalanceOptions opts;
    opts.majority_multiplier = 6354.0 / (2.0 * 319.0);
    const auto out = balance_split(split, "train", AugmentationPolicy{}, opts);
    const auto [neg, pos] = class_counts(out);
    CHECK(out.size() == 6354);
    CHECK(std::llabs(static_cast<long long>(neg) - static_cast<long long>(pos)) <= 1);
}

TEST_CASE("post-balancing ratio is within one sample of the target") {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> count(1, 40);
    for (int k = 0; k < 30; ++k) {
        BalanceOptions opts;
        opts.seed = k;
        const auto out = balance_split(make_split(count(rng), count(rng), 4), "train", AugmentationPolicy{}, opts);
        const auto [neg, pos] = class_counts(out);
        CHECK(std::llabs(static_cast<long long>(neg) - static_cast<long long>(pos)) <= 1);
    }
    BalanceOptions forty;
    forty.target_ratio = 0.4;
    const auto out = balance_split(make_split(20, 4, 4), "train", AugmentationPolicy{}, forty);
    CHECK(class_counts(out) == std::pair<std::size_t, std::size_t>{20, 13});
}

TEST_CASE("balancing is seeded and rejects single-class splits") {
    const auto split = make_split(5, 2);
    const auto a = balance_split(split, "train", AugmentationPolicy{}, {0.5, 1.0, 4});
    const auto b = balance_split(split, "train", AugmentationPolicy{}, {0.5, 1.0, 4});
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].image == b[i].image);
    try {
        balance_split(make_split(5, 0), "val", AugmentationPolicy{}, BalanceOptions{});
        FAIL("expected an error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("'val'") != std::string::npos);
    }
}

TEST_CASE("balance_and_augment keeps copies inside their split") {
    SplitSamples splits{{"train", make_split(6, 2)}, {"val", make_split(3, 1)}, {"test", make_split(2, 2)}};
    for (auto& [name, v] : splits) {
        for (Sample& s : v) s.id = name + "_" + s.id;
    }
    const SplitSamples out = balance_and_augment(splits, AugmentationPolicy{}, BalanceOptions{});
    for (const auto& [name, v] : out) {
        const auto [neg, pos] = class_counts(v);
        CHECK(neg == pos);
        for (const Sample& s : v) CHECK(s.id.rfind(name + "_", 0) == 0);
    }
}

TEST_CASE("split targets follow floor-and-distribute rounding") {
    CHECK(split_targets(10, {0.6, 0.2, 0.2}) == std::array<std::size_t, 3>{6, 2, 2});
    CHECK(split_targets(354, {0.6, 0.2, 0.2}) == std::array<std::size_t, 3>{212, 71, 71});
}

TEST_CASE("patient split of single-image patients") {
    std::vector<SampleRef> refs;
    for (int i = 0; i < 354; ++i) refs.push_back({"img" + std::to_string(i), "pt" + std::to_string(i)});
    const SplitManifest m = split_by_patient(refs, {0.6, 0.2, 0.2}, 1);
    CHECK(m.ids("train").size() == 212);
    CHECK(m.ids("val").size() == 71);
    CHECK(m.ids("test").size() == 71);

    std::vector<SampleRef> ten(refs.begin(), refs.begin() + 10);
    const SplitManifest small = split_by_patient(ten, {0.6, 0.2, 0.2}, 1);
    CHECK(small.ids("train").size() == 6);
    CHECK(small.ids("val").size() == 2);
    CHECK(small.ids("test").size() == 2);
}

TEST_CASE("patient split is a patient-disjoint partition") {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> per_patient(1, 5);
    std::vector<SampleRef> refs;
    std::map<std::string, std::string> patient_of;
    int max_images = 0;
    for (int p = 0; p < 60; ++p) {
        const int k = per_patient(rng);
        max_images = std::max(max_images, k);
        for (int i = 0; i < k; ++i) {
            const std::string id = "p" + std::to_string(p) + "_" + std::to_string(i);
            refs.push_back({id, "pt" + std::to_string(p)});
            patient_of[id] = "pt" + std::to_string(p);
        }
    }
    const SplitManifest m = split_by_patient(refs, {0.6, 0.2, 0.2}, 8);
    std::set<std::string> seen;
    std::map<std::string, std::string> split_of_patient;
    std::size_t shared = 0;
    for (const std::string& name : kSplitNames) {
        for (const std::string& id : m.ids(name)) {
            CHECK(seen.insert(id).second);
            auto [it, fresh] = split_of_patient.emplace(patient_of.at(id), name);
            if (!fresh && it->second != name) ++shared;
        }
    }
    CHECK(seen.size() == refs.size());
    CHECK(shared == 0);
    const auto targets = split_targets(refs.size(), {0.6, 0.2, 0.2});
    for (std::size_t s = 0; s < 3; ++s) {
        CHECK(std::llabs(static_cast<long long>(m.ids(kSplitNames[s]).size()) - static_cast<long long>(targets[s])) <= max_images);
    }
    CHECK(to_json(split_by_patient(refs, {0.6, 0.2, 0.2}, 8)) == to_json(m));
    CHECK(to_json(split_manifest_from_json(to_json(m))) == to_json(m));
}

TEST_CASE("patient split errors") {
    const std::vector<SampleRef> two{{"a", "p1"}, {"b", "p2"}, {"c", "p2"}};
    CHECK_THROWS_AS(split_by_patient(two, {0.6, 0.2, 0.2}, 0), DataError);
    const std::vector<SampleRef> refs{{"a", "1"}, {"b", "2"}, {"c", "3"}};
    CHECK_THROWS_AS(split_by_patient(refs, {0.6, 0.3, 0.2}, 0), ConfigError);
    CHECK_THROWS_AS(split_by_patient(refs, {1.0, 0.0, 0.0}, 0), ConfigError);
}

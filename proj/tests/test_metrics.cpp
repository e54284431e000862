#include <doctest.h>

#include <random>

#include "cervinet/errors.hpp"
#include "cervinet/metrics.hpp"
#include "oracles.hpp"

using namespace cervinet;

namespace {

// Labels and scores whose confusion at threshold 0.5 has the given counts.
void from_counts(const ConfusionMatrix& cm, std::vector<int>& labels, std::vector<double>& scores) {
    auto add = [&](std::int64_t n, int label, double score) {
        for (std::int64_t i = 0; i < n; ++i) {
            labels.push_back(label);
            scores.push_back(score);
        }
    };
    add(cm.tp, 1, 0.9);
    add(cm.fn, 1, 0.1);
    add(cm.fp, 0, 0.7);
    add(cm.tn, 0, 0.2);
}

BinaryMask block(int x0, int y0, int w, int h, int size = 8) {
    BinaryMask m(size, size);
    for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) m.at(x, y) = 1;
    }
    return m;
}

}  // namespace

TEST_CASE("rates from the reference confusion counts") {
    std::vector<int> labels;
    std::vector<double> scores;
    from_counts({85, 40, 41, 1105}, labels, scores);
    const ClassificationRates r = confusion_and_rates(labels, scores);
    CHECK(r.confusion == ConfusionMatrix{85, 40, 41, 1105});
    CHECK(*r.sensitivity == doctest::Approx(85.0 / 126.0));
    CHECK(std::abs(*r.sensitivity - 0.6746) <= 5e-4);
    CHECK(std::abs(*r.precision - 0.6800) <= 5e-4);
    CHECK(std::abs(*r.fpr - 0.0349) <= 5e-4);
    CHECK(*r.specificity == doctest::Approx(1105.0 / 1145.0));
    CHECK(*r.specificity + *r.fpr == doctest::Approx(1.0));
}

TEST_CASE("threshold is inclusive") {
    const std::vector<int> labels{1, 0};
    const std::vector<double> scores{0.5, 0.5};
    const auto r = confusion_and_rates(labels, scores, 0.5);
    CHECK(r.confusion == ConfusionMatrix{1, 1, 0, 0});
}

TEST_CASE("perfect and single-class predictions") {
    const std::vector<int> labels{1, 0, 1, 0};
    const std::vector<double> scores{0.8, 0.1, 0.9, 0.3};
    const auto r = confusion_and_rates(labels, scores);
    CHECK(*r.sensitivity == 1.0);
    CHECK(*r.precision == 1.0);
    CHECK(*r.specificity == 1.0);

    const std::vector<int> negatives{0, 0, 0};
    const std::vector<double> s{0.2, 0.7, 0.1};
    const auto n = confusion_and_rates(negatives, s);
    CHECK_FALSE(n.sensitivity.has_value());
    REQUIRE(n.fpr.has_value());
    CHECK(*n.fpr == doctest::Approx(1.0 / 3.0));

    CHECK_THROWS_AS(confusion_and_rates(std::vector<int>{}, std::vector<double>{}), DataError);
}

TEST_CASE("auc examples") {
    CHECK(roc_auc(std::vector<int>{1, 1, 0, 0}, std::vector<double>{0.9, 0.8, 0.2, 0.1}) == 1.0);
    CHECK(roc_auc(std::vector<int>{1, 0}, std::vector<double>{0.3, 0.3}) == 0.5);
    CHECK(roc_auc(std::vector<int>{1, 1, 0, 0}, std::vector<double>{0.9, 0.4, 0.6, 0.2}) == 0.75);
    CHECK_THROWS_AS(roc_auc(std::vector<int>{1, 1}, std::vector<double>{0.1, 0.2}), DataError);
}

TEST_CASE("auc equals pair counting on 1000 random inputs") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> length(2, 50), level(0, 9);
    std::uniform_real_distribution<double> cont(0.0, 1.0);
    int mismatches = 0;
    for (int k = 0; k < 1000; ++k) {
        std::vector<int> labels;
        std::vector<double> scores;
        const int n = length(rng);
        for (int i = 0; i < n; ++i) {
            labels.push_back(static_cast<int>(rng() % 2));
            // Half the cases draw from ten levels so ties are common.
            scores.push_back(k % 2 ? level(rng) / 10.0 : cont(rng));
        }
        labels[0] = 1;
        labels[1] = 0;
        if (roc_auc(labels, scores) != oracle::pair_count_auc(labels, scores)) ++mismatches;
    }
    CHECK(mismatches == 0);
}

TEST_CASE("auc is invariant to monotone score transforms") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<int> labels;
    std::vector<double> scores, squashed;
    for (int i = 0; i < 40; ++i) {
        labels.push_back(i % 3 == 0);
        scores.push_back(u(rng));
        squashed.push_back(std::pow(scores.back(), 3.0) * 7.0 - 2.0);
    }
    CHECK(roc_auc(labels, scores) == roc_auc(labels, squashed));
}

TEST_CASE("iou examples") {
    const BinaryMask a = block(2, 2, 2, 2);
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, block(5, 5, 2, 2)) == 0.0);
    CHECK(iou(a, block(3, 2, 2, 2)) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
    CHECK(iou(BinaryMask(8, 8), BinaryMask(8, 8)) == 1.0);

    BinaryMask bad = a;
    bad.data[0] = 2;
    CHECK_THROWS_AS(iou(a, bad), DataError);
    CHECK_THROWS_AS(iou(a, BinaryMask(4, 4)), ShapeError);
}

TEST_CASE("iou is symmetric and bounded") {
    std::mt19937_64 rng(11);
    for (int k = 0; k < 50; ++k) {
        BinaryMask a(6, 6), b(6, 6);
        for (auto& v : a.data) v = rng() % 2;
        for (auto& v : b.data) v = rng() % 2;
        const double ab = iou(a, b);
        CHECK(ab == iou(b, a));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
    }
}

TEST_CASE("mean and sample deviation") {
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    const MeanSd m = mean_sd(v);
    CHECK(m.mean == 2.5);
    CHECK(m.sd == doctest::Approx(std::sqrt(5.0 / 3.0)));
    CHECK(mean_sd(std::vector<double>{7.0}).sd == 0.0);
}

TEST_CASE("report json round trip") {
    MetricsReport r;
    r.sample_count = 12;
    r.iou = {0.9, 0.05};
    std::vector<int> labels;
    std::vector<double> scores;
    from_counts({3, 1, 2, 6}, labels, scores);
    r.rates = confusion_and_rates(labels, scores);
    r.auc = 0.8;
    const MetricsReport back = metrics_report_from_json(to_json(r));
    CHECK(to_json(back) == to_json(r));
    CHECK(format_report(r).find("auc 0.8000") != std::string::npos);
}

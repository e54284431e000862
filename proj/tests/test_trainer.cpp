#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

#include "cervinet/errors.hpp"
#include "cervinet/trainer.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cervinet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::current_path() / ("trainer_" + name);
    fs::remove_all(p);
    return p;
}

std::vector<std::string> lines_of(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Sample tiny_sample(int label, std::uint64_t seed, int size = 4) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Sample s;
    s.id = "s" + std::to_string(seed);
    s.image = GrayImage(size, size);
    s.mask = BinaryMask(size, size);
    for (float& v : s.image.data) v = u(rng);
    for (auto& v : s.mask.data) v = u(rng) > 0.5f ? 1 : 0;
    s.label = label;
    return s;
}

}  // namespace

TEST_CASE("config validation names the field") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.epochs = 0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("epochs"), ConfigError);
    c = {};
    c.batch_size = 0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("batch_size"), ConfigError);
    c = {};
    c.learning_rate = 0.0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("learning_rate"), ConfigError);
    c = {};
    c.pos_weight = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config json round trip") {
    TrainConfig c = fixture::tiny_config(7);
    c.pos_weight = 2.5;
    c.seed = 11;
    const TrainConfig back = train_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(back.epochs == 7);
    CHECK(back.network.base_channels == 4);
    REQUIRE(back.pos_weight.has_value());
    CHECK(*back.pos_weight == 2.5);
}

TEST_CASE("adam matches a double-precision reference of the same recurrence") {
    nn::Parameter w{"w", nn::Tensor({3}), nn::Tensor({3}), true};
    nn::Parameter b{"b", nn::Tensor({1}), nn::Tensor({1}), false};
    w.value.values() = {0.5f, -1.0f, 2.0f};
    b.value.values() = {0.25f};
    const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, decay = 0.1;
    Adam adam({&w, &b}, lr, b1, b2, eps, decay);

    std::vector<double> rw{0.5, -1.0, 2.0, 0.25}, m(4, 0.0), v(4, 0.0);
    const std::vector<std::vector<double>> grads{{0.3, -0.2, 0.1, 1.0}, {-0.1, 0.4, 0.0, -0.5}, {0.2, 0.2, -0.3, 0.05}};
    for (std::size_t t = 0; t < grads.size(); ++t) {
        for (int i = 0; i < 3; ++i) w.grad[i] = static_cast<float>(grads[t][i]);
        b.grad[0] = static_cast<float>(grads[t][3]);
        adam.step();
        const double c1 = 1.0 - std::pow(b1, t + 1.0), c2 = 1.0 - std::pow(b2, t + 1.0);
        for (int i = 0; i < 4; ++i) {
            const double g = grads[t][i] + (i < 3 ? decay * rw[i] : 0.0);
            m[i] = b1 * m[i] + (1 - b1) * g;
            v[i] = b2 * v[i] + (1 - b2) * g * g;
            rw[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
    CHECK(adam.steps() == 3);
    for (int i = 0; i < 3; ++i) CHECK(w.value[i] == doctest::Approx(rw[i]).epsilon(1e-5));
    CHECK(b.value[0] == doctest::Approx(rw[3]).epsilon(1e-5));
}

TEST_CASE("batch loss logit gradients match finite differences") {
    const Sample s0 = tiny_sample(1, 1), s1 = tiny_sample(0, 2);
    const std::vector<const Sample*> batch{&s0, &s1};
    LossWeights weights;
    weights.pos_weight = 2.0;

    std::mt19937_64 rng(9);
    std::normal_distribution<double> z(0.0, 1.5);
    std::vector<double> x(2 * 16 + 2);
    for (double& v : x) v = z(rng);

    auto output = [](const std::vector<double>& logits) {
        BatchOutput out;
        out.seg_logits = nn::Tensor::nchw(2, 1, 4, 4);
        out.seg_probs = nn::Tensor::nchw(2, 1, 4, 4);
        for (std::size_t i = 0; i < 32; ++i) {
            out.seg_logits[i] = static_cast<float>(logits[i]);
            out.seg_probs[i] = static_cast<float>(sigmoid(logits[i]));
        }
        for (std::size_t b = 0; b < 2; ++b) {
            out.cls_logits.push_back(static_cast<float>(logits[32 + b]));
            out.cls_probs.push_back(static_cast<float>(sigmoid(logits[32 + b])));
        }
        return out;
    };

    const BatchLoss bl = batch_loss(batch, output(x), weights);
    CHECK(bl.loss.total == bl.loss.seg + bl.loss.cls);
    std::vector<double> analytic;
    for (float g : bl.seg_logit_grad.values()) analytic.push_back(g);
    for (float g : bl.cls_logit_grad) analytic.push_back(g);

    // Reference loss evaluated in double from the plain definitions.
    auto reference = [&](const std::vector<double>& logits) {
        std::vector<double> sy, sp, cy, cp;
        for (int b = 0; b < 2; ++b) {
            const Sample& s = *batch[b];
            for (int i = 0; i < 16; ++i) {
                sy.push_back(s.mask.data[i]);
                sp.push_back(sigmoid(logits[b * 16 + i]));
            }
            cy.push_back(s.label);
            cp.push_back(sigmoid(logits[32 + b]));
        }
        const double seg = weights.alpha * oracle::bce(sy, sp, 1.0) + (1 - weights.alpha) * oracle::dice(sy, sp, weights.epsilon);
        return seg + weights.beta * oracle::bce(cy, cp, weights.pos_weight);
    };
    CHECK(reference(x) == doctest::Approx(bl.loss.total).epsilon(1e-5));
    CHECK(oracle::fd_relative_error(analytic, x, reference, 1e-5) < 1e-4);
}

TEST_CASE("batch loss rejects mismatched masks") {
    const Sample s = tiny_sample(1, 1, 4);
    BatchOutput out;
    out.seg_probs = nn::Tensor::nchw(1, 1, 5, 5, 0.5f);
    out.seg_logits = nn::Tensor::nchw(1, 1, 5, 5);
    out.cls_probs = {0.5f};
    out.cls_logits = {0.0f};
    CHECK_THROWS_AS(batch_loss({&s}, out, LossWeights{}), ShapeError);
}

TEST_CASE("default pos_weight is negatives over positives") {
    std::vector<Sample> s{tiny_sample(0, 1), tiny_sample(0, 2), tiny_sample(0, 3), tiny_sample(1, 4)};
    CHECK(default_pos_weight(s) == 3.0);
    s.pop_back();
    CHECK(default_pos_weight(s) == 1.0);
}

TEST_CASE("fit_to_network and image_batch") {
    const Sample s = fixture::phantoms(1, 3, 0.3, 64)[0];
    const Sample f = fit_to_network(s, 32);
    CHECK(f.image.width == 32);
    CHECK(f.mask.height == 32);
    CHECK(is_binary(f.mask));
    CHECK(fit_to_network(s, 64).image == s.image);

    const Sample other = tiny_sample(0, 5, 32);
    const nn::Tensor t = image_batch({&f, &other});
    CHECK(t.shape() == std::vector<int>{2, 1, 32, 32});
    CHECK(t.at(1, 0, 3, 4) == other.image.at(4, 3));
    CHECK_THROWS_AS(image_batch({&f, &s}), ShapeError);
    CHECK_THROWS_AS(image_batch({}), ShapeError);
}

TEST_CASE("overfit probe drives one batch to near zero loss") {
    const OverfitResult r = overfit_probe(fixture::probe_config(), fixture::probe_batch(), 200);
    REQUIRE(r.step_losses.size() == 200);
    for (int i = 1; i <= 10; ++i) CHECK(r.step_losses[i].total < r.step_losses[i - 1].total);
    CHECK(r.final_loss.seg < 0.05);
    CHECK(r.correct == 4);
    for (const LossParts& p : r.step_losses) CHECK(std::isfinite(p.total));
}

TEST_CASE("training writes a complete, reproducible run") {
    const std::vector<Sample> train_set = fixture::phantoms(16, 21);
    const std::vector<Sample> val_set = fixture::phantoms(8, 22);
    const TrainConfig config = fixture::tiny_config(4);

    const fs::path a = fresh_dir("run_a"), b = fresh_dir("run_b");
    int callbacks = 0;
    const RunRecord ra = train(config, train_set, val_set, a, [&](const EpochRecord&) { ++callbacks; });
    const RunRecord rb = train(config, train_set, val_set, b);

    CHECK(callbacks == 4);
    REQUIRE(ra.epochs.size() == 4);
    CHECK(fs::exists(a / "checkpoints" / "best.ckpt"));
    CHECK(fs::exists(a / "checkpoints" / "last.ckpt"));
    CHECK(fs::exists(a / "config.json"));
    CHECK(fs::exists(a / "run_record.json"));

    const auto history = lines_of(a / "history.jsonl");
    REQUIRE(history.size() == 4);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < history.size(); ++i) {
        const EpochRecord e = epoch_record_from_json(nlohmann::json::parse(history[i]));
        CHECK(e.epoch == static_cast<int>(i) + 1);
        for (const LossParts& p : {e.train, e.val}) {
            CHECK(std::isfinite(p.total));
            CHECK(p.total == doctest::Approx(p.seg + p.cls).epsilon(1e-12));
        }
        best = std::min(best, e.val.total);
    }
    CHECK(ra.epochs[ra.best_epoch - 1].val.total == best);
    CHECK(best <= ra.epochs.back().val.total);

    // Same seed: identical curves and identical weights.
    for (std::size_t i = 0; i < ra.epochs.size(); ++i) {
        CHECK(ra.epochs[i].train.total == rb.epochs[i].train.total);
        CHECK(ra.epochs[i].val.total == rb.epochs[i].val.total);
        CHECK(ra.epochs[i].val_iou == rb.epochs[i].val_iou);
    }
    CHECK(MultiTaskUNet::from_checkpoint(ra.last_checkpoint).parameter_hash() ==
          MultiTaskUNet::from_checkpoint(rb.last_checkpoint).parameter_hash());

    // Evaluation is read-only and repeatable.
    MultiTaskUNet model = MultiTaskUNet::from_checkpoint(ra.best_checkpoint);
    const std::uint64_t before = model.parameter_hash();
    const MetricsReport m1 = evaluate(model, val_set);
    const MetricsReport m2 = evaluate(ra.best_checkpoint, val_set);
    CHECK(model.parameter_hash() == before);
    CHECK(to_json(m1) == to_json(m2));
    CHECK(m1.sample_count == val_set.size());

    TrainConfig other = config;
    other.seed = 1;
    const RunRecord rc = train(other, train_set, val_set, fresh_dir("run_c"));
    CHECK(rc.epochs[0].train.total != ra.epochs[0].train.total);
}

TEST_CASE("single-class evaluation omits the AUC") {
    std::vector<Sample> controls;
    for (const Sample& s : fixture::phantoms(12, 4)) {
        if (s.label == 0) controls.push_back(s);
    }
    REQUIRE(!controls.empty());
    MultiTaskUNet model(fixture::tiny_config(1).network);
    const MetricsReport r = evaluate(model, controls);
    CHECK_FALSE(r.auc.has_value());
    CHECK(r.sample_count == controls.size());
    CHECK_THROWS_AS(evaluate(model, {}), DataError);
}

TEST_CASE("training errors") {
    const std::vector<Sample> good = fixture::phantoms(8, 7);
    TrainConfig config = fixture::tiny_config(1);
    CHECK_THROWS_AS(train(config, {}, good, fresh_dir("empty")), DataError);
    CHECK_THROWS_AS(train(config, good, {}, fresh_dir("empty")), DataError);
    config.epochs = 0;
    CHECK_THROWS_AS(train(config, good, good, fresh_dir("zero")), ConfigError);

    std::vector<Sample> poisoned = good;
    for (Sample& s : poisoned) s.image.at(3, 3) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(train(fixture::tiny_config(1), poisoned, good, fresh_dir("nan")),
                         doctest::Contains("non-finite"), DataError);

    // A runaway step size overflows the weights within the first epoch.
    TrainConfig runaway = fixture::tiny_config(1);
    runaway.learning_rate = 1e30;
    CHECK_THROWS_WITH_AS(train(runaway, good, good, fresh_dir("runaway")), doctest::Contains("non-finite loss at epoch 1 step"),
                         TrainingError);
    CHECK_THROWS_AS(MultiTaskUNet::from_checkpoint(fresh_dir("missing") / "best.ckpt"), IoError);
}

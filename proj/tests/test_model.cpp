#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "cervinet/errors.hpp"
#include "cervinet/image.hpp"
#include "cervinet/model.hpp"

using namespace cervinet;
namespace fs = std::filesystem;

namespace {

NetworkConfig tiny(int depth = 2, int base = 4, int input = 32) {
    NetworkConfig c;
    c.depth = depth;
    c.base_channels = base;
    c.input_size = input;
    c.fc_widths = {8};
    c.seed = 5;
    return c;
}

nn::Tensor random_images(int batch, int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    nn::Tensor t = nn::Tensor::nchw(batch, 1, size, size);
    for (float& v : t.values()) v = u(rng);
    return t;
}

bool all_finite(const nn::Tensor& t) {
    for (float v : t.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

nn::Parameter* find_param(MultiTaskUNet& m, const std::string& name) {
    for (nn::Parameter* p : m.parameters()) {
        if (p->name == name) return p;
    }
    return nullptr;
}

}  // namespace

TEST_CASE("config invariants") {
    CHECK(NetworkConfig{}.bottleneck_channels() == 1024);
    NetworkConfig c = tiny();
    CHECK_NOTHROW(c.validate());
    c.input_size = 30;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.depth = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.base_channels = 2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.dropout_rate = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    const NetworkConfig desk = NetworkConfig::desk();
    CHECK(desk.depth == 3);
    CHECK(desk.base_channels == 16);
    CHECK(desk.input_size == 64);
    CHECK(to_json(network_config_from_json(to_json(desk))) == to_json(desk));
}

TEST_CASE("shape contract over random valid configs") {
    std::mt19937_64 rng(8);
    for (int k = 0; k < 8; ++k) {
        NetworkConfig c;
        c.depth = 2 + static_cast<int>(rng() % 2);
        c.base_channels = 4 * (1 + static_cast<int>(rng() % 2));
        c.input_size = (1 << c.depth) * (2 + static_cast<int>(rng() % 3));
        c.fc_widths = rng() % 2 ? std::vector<int>{6} : std::vector<int>{8, 4};
        c.normalization = rng() % 2 ? "batch" : "none";
        c.seed = k;
        MultiTaskUNet m(c);
        const int batch = 1 + static_cast<int>(rng() % 3);
        const BatchOutput out = m.forward(random_images(batch, c.input_size, k), nn::Mode::eval);
        CHECK(out.seg_probs.shape() == std::vector<int>{batch, 1, c.input_size, c.input_size});
        CHECK(out.seg_logits.shape() == out.seg_probs.shape());
        CHECK(out.cls_probs.size() == static_cast<std::size_t>(batch));
        CHECK(all_finite(out.seg_probs));
        for (float v : out.seg_probs.values()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        for (float p : out.cls_probs) {
            CHECK(p > 0.0f);
            CHECK(p < 1.0f);
        }
    }
}

TEST_CASE("single image at depth 2") {
    MultiTaskUNet m(tiny());
    const BatchOutput out = m.forward(random_images(1, 32, 1), nn::Mode::eval);
    CHECK(out.seg_probs.shape() == std::vector<int>{1, 1, 32, 32});
    CHECK(out.cls_probs.size() == 1);
}

TEST_CASE("batch of four at full resolution") {
    NetworkConfig c = tiny(4, 4, 256);
    MultiTaskUNet m(c);
    const BatchOutput out = m.forward(random_images(4, 256, 2), nn::Mode::eval);
    CHECK(out.seg_probs.shape() == std::vector<int>{4, 1, 256, 256});
    CHECK(out.cls_probs.size() == 4);
}

TEST_CASE("zero input gives finite outputs") {
    MultiTaskUNet m(tiny());
    const BatchOutput out = m.forward(nn::Tensor::nchw(2, 1, 32, 32), nn::Mode::train);
    CHECK(all_finite(out.seg_probs));
    for (float p : out.cls_probs) CHECK(std::isfinite(p));
}

TEST_CASE("wrong input size names the expected size") {
    MultiTaskUNet m(tiny());
    try {
        m.forward(nn::Tensor::nchw(1, 1, 16, 16), nn::Mode::eval);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("32") != std::string::npos);
    }
}

TEST_CASE("seeded builds are identical and eval forward is deterministic") {
    MultiTaskUNet a(tiny()), b(tiny());
    CHECK(a.parameter_hash() == b.parameter_hash());
    NetworkConfig other = tiny();
    other.seed = 6;
    CHECK(MultiTaskUNet(other).parameter_hash() != a.parameter_hash());

    const nn::Tensor x = random_images(2, 32, 3);
    const BatchOutput o1 = a.forward(x, nn::Mode::eval);
    const BatchOutput o2 = a.forward(x, nn::Mode::eval);
    CHECK(o1.seg_probs.values() == o2.seg_probs.values());
    CHECK(o1.cls_probs == o2.cls_probs);
}

TEST_CASE("encoder parameters feed both heads") {
    MultiTaskUNet m(tiny());
    const nn::Tensor x = random_images(1, 32, 4);
    const BatchOutput before = m.forward(x, nn::Mode::eval);
    nn::Parameter* p = m.parameters().front();
    CHECK(p->name.rfind("enc0", 0) == 0);
    for (float& v : p->value.values()) v += 0.05f;
    const BatchOutput after = m.forward(x, nn::Mode::eval);
    CHECK(after.seg_probs.values() != before.seg_probs.values());
    CHECK(after.cls_probs != before.cls_probs);
}

TEST_CASE("decoder parameters do not touch the classification branch") {
    MultiTaskUNet m(tiny(3, 4, 32));
    const nn::Tensor x = random_images(2, 32, 5);
    const BatchOutput before = m.forward(x, nn::Mode::eval);
    const auto names = m.decoder_parameter_names();
    REQUIRE_FALSE(names.empty());
    for (const std::string& name : names) {
        nn::Parameter* p = find_param(m, name);
        REQUIRE(p != nullptr);
        for (float& v : p->value.values()) v = 0.0f;
    }
    const BatchOutput after = m.forward(x, nn::Mode::eval);
    CHECK(after.cls_probs == before.cls_probs);
    CHECK(after.seg_probs.values() != before.seg_probs.values());
}

TEST_CASE("parameter names are unique and counted") {
    MultiTaskUNet m(tiny());
    std::set<std::string> names;
    std::size_t total = 0;
    for (nn::Parameter* p : m.parameters()) {
        CHECK(names.insert(p->name).second);
        CHECK(p->grad.same_shape(p->value));
        total += p->value.numel();
    }
    CHECK(m.parameter_count() == total);
}

TEST_CASE("activation capture") {
    NetworkConfig c = tiny(4, 4, 256);
    MultiTaskUNet m(c);
    CHECK(m.layer_names() == std::vector<std::string>{"enc0", "enc1", "enc2", "enc3", "bottleneck"});
    const auto cap = m.expose_activations("bottleneck");
    m.classification_logit(random_images(1, 256, 6));
    CHECK(cap->activation.shape() == std::vector<int>{1, 64, 16, 16});
    m.backward_classification(1.0f);
    CHECK(cap->gradient.same_shape(cap->activation));
    CHECK(cap->forward_count == 1);
    CHECK(cap->backward_count == 1);
    bool nonzero = false;
    for (float g : cap->gradient.values()) nonzero = nonzero || g != 0.0f;
    CHECK(nonzero);

    const nn::Tensor first = cap->activation;
    m.classification_logit(random_images(1, 256, 7));
    CHECK(cap->forward_count == 2);
    CHECK(cap->activation.values() != first.values());

    try {
        m.expose_activations("dec0");
        FAIL("expected a lookup error");
    } catch (const LookupError& e) {
        CHECK(std::string(e.what()).find("bottleneck") != std::string::npos);
    }
}

TEST_CASE("encoder stage capture has the stage resolution") {
    MultiTaskUNet m(tiny(3, 4, 32));
    const auto cap = m.expose_activations("enc1");
    m.classification_logit(random_images(1, 32, 8));
    CHECK(cap->activation.shape() == std::vector<int>{1, 8, 16, 16});
}

TEST_CASE("checkpoint round trip") {
    const fs::path path = fs::current_path() / "model_roundtrip.ckpt";
    MultiTaskUNet a(tiny());
    // Move away from the seeded initialization so the load is observable.
    for (nn::Parameter* p : a.parameters()) {
        for (float& v : p->value.values()) v *= 1.5f;
    }
    a.forward(random_images(4, 32, 9), nn::Mode::train);
    a.save(path);

    MultiTaskUNet b(tiny());
    CHECK(b.parameter_hash() != a.parameter_hash());
    b.load(path);
    CHECK(b.parameter_hash() == a.parameter_hash());
    const nn::Tensor x = random_images(2, 32, 10);
    CHECK(a.forward(x, nn::Mode::eval).cls_probs == b.forward(x, nn::Mode::eval).cls_probs);

    MultiTaskUNet c = MultiTaskUNet::from_checkpoint(path);
    CHECK(c.parameter_hash() == a.parameter_hash());
    CHECK(to_json(MultiTaskUNet::read_checkpoint_config(path)) == to_json(tiny()));

    MultiTaskUNet wrong(tiny(2, 8, 32));
    CHECK_THROWS_AS(wrong.load(path), Error);
    CHECK_THROWS_AS(MultiTaskUNet::from_checkpoint(fs::current_path() / "missing.ckpt"), IoError);
    write_file(fs::current_path() / "garbage.ckpt", "not a checkpoint");
    CHECK_THROWS_AS(MultiTaskUNet::from_checkpoint(fs::current_path() / "garbage.ckpt"), IoError);
}

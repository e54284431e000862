#include "cervinet/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "cervinet/image.hpp"

namespace cervinet {

using nn::Mode;
using nn::Tensor;

void NetworkConfig::validate() const {
    if (depth < 2) throw ConfigError("network.depth", "must be >= 2");
    if (base_channels < 4) throw ConfigError("network.base_channels", "must be >= 4");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("network.dropout_rate", "must lie in [0,1)");
    if (input_size < 1 || input_size % (1 << depth) != 0) {
        throw ConfigError("network.input_size", "must be divisible by 2^depth = " + std::to_string(1 << depth));
    }
    for (int w : fc_widths) {
        if (w < 1) throw ConfigError("network.fc_widths", "every width must be >= 1");
    }
    if (normalization != "batch" && normalization != "none") {
        throw ConfigError("network.normalization", "must be \"batch\" or \"none\"");
    }
}

NetworkConfig NetworkConfig::desk() {
    NetworkConfig c;
    c.depth = 3;
    c.base_channels = 16;
    c.input_size = 64;
    return c;
}

nlohmann::json to_json(const NetworkConfig& c) {
    return {{"depth", c.depth},
            {"base_channels", c.base_channels},
            {"fc_widths", c.fc_widths},
            {"dropout_rate", c.dropout_rate},
            {"input_size", c.input_size},
            {"normalization", c.normalization},
            {"seed", c.seed}};
}

NetworkConfig network_config_from_json(const nlohmann::json& doc, NetworkConfig c) {
    try {
        c.depth = doc.value("depth", c.depth);
        c.base_channels = doc.value("base_channels", c.base_channels);
        c.fc_widths = doc.value("fc_widths", c.fc_widths);
        c.dropout_rate = doc.value("dropout_rate", c.dropout_rate);
        c.input_size = doc.value("input_size", c.input_size);
        c.normalization = doc.value("normalization", c.normalization);
        c.seed = doc.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("network", e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------

Tensor MultiTaskUNet::ConvBlock::forward(const Tensor& x, Mode mode) {
    Tensor h = conv1.forward(x);
    if (norm) h = bn1.forward(h, mode);
    h = relu1.forward(h);
    h = conv2.forward(h);
    if (norm) h = bn2.forward(h, mode);
    return relu2.forward(h);
}

Tensor MultiTaskUNet::ConvBlock::backward(const Tensor& g) {
    Tensor d = relu2.backward(g);
    if (norm) d = bn2.backward(d);
    d = conv2.backward(d);
    d = relu1.backward(d);
    if (norm) d = bn1.backward(d);
    return conv1.backward(d);
}

void MultiTaskUNet::ConvBlock::collect(std::vector<nn::Parameter*>& out) {
    conv1.collect(out);
    if (norm) bn1.collect(out);
    conv2.collect(out);
    if (norm) bn2.collect(out);
}

void MultiTaskUNet::ConvBlock::collect_buffers(std::vector<nn::Buffer*>& out) {
    if (!norm) return;
    bn1.collect_buffers(out);
    bn2.collect_buffers(out);
}

MultiTaskUNet::ConvBlock MultiTaskUNet::make_block(const std::string& name, int in, int out, Rng& rng) const {
    ConvBlock b;
    b.norm = config_.normalization == "batch";
    b.conv1 = nn::Conv2d(name + ".conv1", in, out, 3, rng);
    b.conv2 = nn::Conv2d(name + ".conv2", out, out, 3, rng);
    if (b.norm) {
        b.bn1 = nn::BatchNorm2d(name + ".bn1", out);
        b.bn2 = nn::BatchNorm2d(name + ".bn2", out);
    }
    return b;
}

MultiTaskUNet::MultiTaskUNet(const NetworkConfig& config)
    : config_(config), dropout_rng_(derive_seed(config.seed, {0xd2095})) {
    config_.validate();
    Rng rng(derive_seed(config_.seed, {0x1417}));
    const int base = config_.base_channels;
    int in = 1;
    for (int i = 0; i < config_.depth; ++i) {
        const int out = base << i;
        encoders_.push_back(make_block("enc" + std::to_string(i), in, out, rng));
        pools_.emplace_back();
        skip_channels_.push_back(out);
        in = out;
    }
    bottleneck_ = make_block("bottleneck", in, base << config_.depth, rng);
    in = base << config_.depth;
    for (int i = config_.depth - 1; i >= 0; --i) {
        const int out = base << i;
        ups_.emplace_back("up" + std::to_string(i), in, out, rng);
        decoders_.push_back(make_block("dec" + std::to_string(i), 2 * out, out, rng));
        in = out;
    }
    head_ = nn::Conv2d("seg_head", base, 1, 1, rng, 1.0);

    int features = config_.bottleneck_channels();
    for (std::size_t k = 0; k < config_.fc_widths.size(); ++k) {
        fc_.emplace_back("fc" + std::to_string(k), features, config_.fc_widths[k], rng);
        fc_relu_.emplace_back();
        fc_drop_.emplace_back(config_.dropout_rate);
        features = config_.fc_widths[k];
    }
    cls_out_ = nn::Linear("cls_out", features, 1, rng, 1.0);
}

std::vector<std::string> MultiTaskUNet::layer_names() const {
    std::vector<std::string> names;
    for (int i = 0; i < config_.depth; ++i) names.push_back("enc" + std::to_string(i));
    names.push_back("bottleneck");
    return names;
}

std::shared_ptr<const ActivationCapture> MultiTaskUNet::expose_activations(const std::string& layer) {
    const auto names = layer_names();
    if (std::find(names.begin(), names.end(), layer) == names.end()) {
        std::string valid;
        for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
        throw LookupError("unknown layer '" + layer + "'; valid layers: " + valid);
    }
    capture_ = std::make_shared<ActivationCapture>();
    capture_->layer = layer;
    return capture_;
}

void MultiTaskUNet::record(const std::string& layer, const Tensor& activation) {
    if (capture_ && capture_->layer == layer) {
        capture_->activation = activation;
        capture_->gradient = Tensor();
        ++capture_->forward_count;
    }
}

void MultiTaskUNet::record_gradient(const std::string& layer, const Tensor& gradient) {
    if (capture_ && capture_->layer == layer) {
        capture_->gradient = gradient;
        ++capture_->backward_count;
    }
}

BatchOutput MultiTaskUNet::forward(const Tensor& images, Mode mode) {
    const int s = config_.input_size;
    if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != s || images.dim(3) != s) {
        throw ShapeError("forward: expected [B,1," + std::to_string(s) + "," + std::to_string(s) + "] input, got " +
                         images.shape_string());
    }
    batch_ = images.dim(0);
    std::vector<Tensor> skips;
    Tensor x = images;
    for (int i = 0; i < config_.depth; ++i) {
        Tensor e = encoders_[i].forward(x, mode);
        record("enc" + std::to_string(i), e);
        x = pools_[i].forward(e);
        skips.push_back(std::move(e));
    }
    Tensor bottom = bottleneck_.forward(x, mode);
    record("bottleneck", bottom);
    bottleneck_shape_ = bottom.shape();

    Tensor y = bottom;
    for (int j = 0; j < config_.depth; ++j) {
        const int level = config_.depth - 1 - j;
        Tensor up = ups_[j].forward(y);
        y = decoders_[j].forward(nn::concat_channels(up, skips[level]), mode);
    }
    BatchOutput out;
    out.seg_logits = head_.forward(y);
    out.seg_probs = out.seg_logits;
    for (float& v : out.seg_probs.values()) v = nn::sigmoid(v);

    Tensor f = nn::global_average_pool(bottom);
    for (std::size_t k = 0; k < fc_.size(); ++k) {
        f = fc_[k].forward(f);
        f = fc_relu_[k].forward(f);
        f = fc_drop_[k].forward(f, mode, dropout_rng_);
    }
    Tensor logits = cls_out_.forward(f);
    out.cls_logits.assign(logits.values().begin(), logits.values().end());
    out.cls_probs.resize(out.cls_logits.size());
    std::transform(out.cls_logits.begin(), out.cls_logits.end(), out.cls_probs.begin(), nn::sigmoid);
    return out;
}

void MultiTaskUNet::backward(const Tensor& seg_logit_grad, std::span<const float> cls_logit_grad) {
    if (bottleneck_shape_.empty()) throw ShapeError("backward called before forward");
    if (cls_logit_grad.size() != static_cast<std::size_t>(batch_)) {
        throw ShapeError("backward: expected " + std::to_string(batch_) + " classification gradients");
    }
    Tensor grad_bottom(bottleneck_shape_);
    std::vector<Tensor> grad_skip(config_.depth);
    if (!seg_logit_grad.empty()) {
        Tensor g = head_.backward(seg_logit_grad);
        for (int j = config_.depth - 1; j >= 0; --j) {
            const int level = config_.depth - 1 - j;
            g = decoders_[j].backward(g);
            auto [g_up, g_skip] = nn::split_channels(g, skip_channels_[level]);
            grad_skip[level] = std::move(g_skip);
            g = ups_[j].backward(g_up);
        }
        grad_bottom = std::move(g);
    }

    Tensor gc({batch_, 1});
    std::copy(cls_logit_grad.begin(), cls_logit_grad.end(), gc.values().begin());
    gc = cls_out_.backward(gc);
    for (std::size_t k = fc_.size(); k-- > 0;) {
        gc = fc_drop_[k].backward(gc);
        gc = fc_relu_[k].backward(gc);
        gc = fc_[k].backward(gc);
    }
    const Tensor from_cls = nn::global_average_pool_backward(gc, bottleneck_shape_);
    for (std::size_t i = 0; i < grad_bottom.numel(); ++i) grad_bottom[i] += from_cls[i];
    record_gradient("bottleneck", grad_bottom);

    Tensor g = bottleneck_.backward(grad_bottom);
    for (int i = config_.depth - 1; i >= 0; --i) {
        g = pools_[i].backward(g);
        if (!grad_skip[i].empty()) {
            for (std::size_t k = 0; k < g.numel(); ++k) g[k] += grad_skip[i][k];
        }
        record_gradient("enc" + std::to_string(i), g);
        g = encoders_[i].backward(g);
    }
}

float MultiTaskUNet::classification_logit(const Tensor& image) {
    if (image.rank() != 4 || image.dim(0) != 1) throw ShapeError("classification_logit: expected a single image [1,1,S,S]");
    return forward(image, Mode::eval).cls_logits[0];
}

void MultiTaskUNet::backward_classification(float scale) {
    const float g[1] = {scale};
    backward(Tensor(), g);
}

std::vector<nn::Parameter*> MultiTaskUNet::parameters() {
    std::vector<nn::Parameter*> out;
    for (auto& b : encoders_) b.collect(out);
    bottleneck_.collect(out);
    for (std::size_t j = 0; j < ups_.size(); ++j) {
        ups_[j].collect(out);
        decoders_[j].collect(out);
    }
    head_.collect(out);
    for (auto& l : fc_) l.collect(out);
    cls_out_.collect(out);
    return out;
}

std::vector<const nn::Parameter*> MultiTaskUNet::const_parameters() const {
    auto params = const_cast<MultiTaskUNet*>(this)->parameters();
    return {params.begin(), params.end()};
}

std::vector<nn::Buffer*> MultiTaskUNet::buffers() {
    std::vector<nn::Buffer*> out;
    for (auto& b : encoders_) b.collect_buffers(out);
    bottleneck_.collect_buffers(out);
    for (auto& b : decoders_) b.collect_buffers(out);
    return out;
}

void MultiTaskUNet::zero_grad() {
    for (nn::Parameter* p : parameters()) p->grad.fill(0.0f);
}

std::size_t MultiTaskUNet::parameter_count() {
    std::size_t n = 0;
    for (nn::Parameter* p : parameters()) n += p->value.numel();
    return n;
}

std::vector<std::string> MultiTaskUNet::decoder_parameter_names() {
    std::vector<nn::Parameter*> params;
    for (std::size_t j = 0; j < ups_.size(); ++j) {
        ups_[j].collect(params);
        decoders_[j].collect(params);
    }
    head_.collect(params);
    std::vector<std::string> names;
    for (auto* p : params) names.push_back(p->name);
    return names;
}

std::uint64_t MultiTaskUNet::parameter_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const Tensor& t) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
        for (std::size_t i = 0; i < t.numel() * sizeof(float); ++i) h = (h ^ bytes[i]) * 1099511628211ULL;
    };
    auto* self = const_cast<MultiTaskUNet*>(this);
    for (nn::Parameter* p : self->parameters()) mix(p->value);
    for (nn::Buffer* b : self->buffers()) mix(b->value);
    return h;
}

// ---------------------------------------------------------------------------
// Checkpoint archive: magic, u64 header length, JSON header, raw float32 data.

namespace {

constexpr char kMagic[8] = {'C', 'V', 'N', 'T', 'C', 'K', 'P', '1'};

struct Archive {
    nlohmann::json header;
    std::string payload;
};

Archive read_archive(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw IoError(path.string() + ": not a checkpoint archive");
    }
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data() + 8, 8);
    if (16 + header_len > bytes.size()) throw IoError(path.string() + ": truncated checkpoint header");
    Archive a;
    a.header = nlohmann::json::parse(bytes.substr(16, header_len), nullptr, false);
    if (a.header.is_discarded()) throw IoError(path.string() + ": corrupt checkpoint header");
    a.payload = bytes.substr(16 + header_len);
    return a;
}

}  // namespace

void MultiTaskUNet::save(const std::filesystem::path& path) const {
    auto* self = const_cast<MultiTaskUNet*>(this);
    nlohmann::json tensors = nlohmann::json::array();
    std::string payload;
    auto add = [&](const std::string& name, const Tensor& t, const char* kind) {
        tensors.push_back({{"name", name}, {"kind", kind}, {"shape", t.shape()}, {"offset", payload.size()}, {"count", t.numel()}});
        payload.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(float));
    };
    for (nn::Parameter* p : self->parameters()) add(p->name, p->value, "parameter");
    for (nn::Buffer* b : self->buffers()) add(b->name, b->value, "buffer");
    const nlohmann::json header = {{"format", "cervinet-checkpoint"}, {"version", 1}, {"config", to_json(config_)}, {"tensors", tensors}};
    const std::string header_text = header.dump();
    const std::uint64_t len = header_text.size();
    std::string bytes(kMagic, 8);
    bytes.append(reinterpret_cast<const char*>(&len), 8);
    bytes += header_text;
    bytes += payload;
    write_file(path, bytes);
}

NetworkConfig MultiTaskUNet::read_checkpoint_config(const std::filesystem::path& path) {
    return network_config_from_json(read_archive(path).header.at("config"));
}

void MultiTaskUNet::load(const std::filesystem::path& path) {
    const Archive a = read_archive(path);
    const NetworkConfig stored = network_config_from_json(a.header.at("config"));
    if (to_json(stored) != to_json(config_)) {
        NetworkConfig mine = config_, theirs = stored;
        mine.seed = theirs.seed = 0;
        if (to_json(mine) != to_json(theirs)) {
            throw ConfigError("network", "checkpoint " + path.string() + " was built with an incompatible configuration");
        }
    }
    std::map<std::string, const nlohmann::json*> entries;
    for (const auto& t : a.header.at("tensors")) entries[t.at("name").get<std::string>()] = &t;
    auto restore = [&](const std::string& name, Tensor& dst) {
        auto it = entries.find(name);
        if (it == entries.end()) throw IoError(path.string() + ": missing tensor '" + name + "'");
        const auto& e = *it->second;
        if (e.at("shape").get<std::vector<int>>() != dst.shape()) throw IoError(path.string() + ": shape mismatch for '" + name + "'");
        const std::size_t offset = e.at("offset").get<std::size_t>();
        if (offset + dst.numel() * sizeof(float) > a.payload.size()) throw IoError(path.string() + ": truncated payload");
        std::memcpy(dst.data(), a.payload.data() + offset, dst.numel() * sizeof(float));
    };
    for (nn::Parameter* p : parameters()) restore(p->name, p->value);
    for (nn::Buffer* b : buffers()) restore(b->name, b->value);
}

MultiTaskUNet MultiTaskUNet::from_checkpoint(const std::filesystem::path& path) {
    MultiTaskUNet model(read_checkpoint_config(path));
    model.load(path);
    return model;
}

}  // namespace cervinet

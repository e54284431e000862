#include "cervinet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "cervinet/errors.hpp"
#include "cervinet/image.hpp"

namespace cervinet {

using nn::Mode;
using nn::Tensor;

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("train.adam_beta1", "must lie in [0,1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("train.adam_beta2", "must lie in [0,1)");
    if (!(adam_epsilon > 0.0)) throw ConfigError("train.adam_epsilon", "must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay", "must be >= 0");
    if (pos_weight && !(*pos_weight > 0.0)) throw ConfigError("train.pos_weight", "must be > 0");
    if (!(target_ratio > 0.0 && target_ratio < 1.0)) throw ConfigError("train.target_ratio", "must lie in (0,1)");
    if (!(majority_multiplier >= 1.0)) throw ConfigError("train.majority_multiplier", "must be >= 1");
    loss.validate();
    network.validate();
    augmentation.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j = {{"epochs", c.epochs},
                        {"batch_size", c.batch_size},
                        {"learning_rate", c.learning_rate},
                        {"adam_beta1", c.adam_beta1},
                        {"adam_beta2", c.adam_beta2},
                        {"adam_epsilon", c.adam_epsilon},
                        {"weight_decay", c.weight_decay},
                        {"seed", c.seed},
                        {"loss", to_json(c.loss)},
                        {"pos_weight", nullptr},
                        {"network", to_json(c.network)},
                        {"augmentation", to_json(c.augmentation)},
                        {"target_ratio", c.target_ratio},
                        {"majority_multiplier", c.majority_multiplier}};
    if (c.pos_weight) j["pos_weight"] = *c.pos_weight;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& doc, TrainConfig c) {
    try {
        c.epochs = doc.value("epochs", c.epochs);
        c.batch_size = doc.value("batch_size", c.batch_size);
        c.learning_rate = doc.value("learning_rate", c.learning_rate);
        c.adam_beta1 = doc.value("adam_beta1", c.adam_beta1);
        c.adam_beta2 = doc.value("adam_beta2", c.adam_beta2);
        c.adam_epsilon = doc.value("adam_epsilon", c.adam_epsilon);
        c.weight_decay = doc.value("weight_decay", c.weight_decay);
        c.seed = doc.value("seed", c.seed);
        c.target_ratio = doc.value("target_ratio", c.target_ratio);
        c.majority_multiplier = doc.value("majority_multiplier", c.majority_multiplier);
        if (doc.contains("pos_weight")) {
            if (doc["pos_weight"].is_null()) {
                c.pos_weight.reset();
            } else {
                c.pos_weight = doc["pos_weight"].get<double>();
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("train", e.what());
    }
    if (doc.contains("loss")) c.loss = loss_weights_from_json(doc["loss"], c.loss);
    if (doc.contains("network")) c.network = network_config_from_json(doc["network"], c.network);
    if (doc.contains("augmentation")) c.augmentation = augmentation_policy_from_json(doc["augmentation"], c.augmentation);
    return c;
}

namespace {

nlohmann::json to_json(const LossParts& p) { return {{"total", p.total}, {"seg", p.seg}, {"cls", p.cls}}; }

LossParts loss_parts_from_json(const nlohmann::json& j) {
    return {j.at("total").get<double>(), j.at("seg").get<double>(), j.at("cls").get<double>()};
}

LossParts parts_of(const TotalLoss& l) { return {l.total, l.seg, l.cls}; }

void accumulate(LossParts& acc, const LossParts& p, double weight) {
    acc.total += weight * p.total;
    acc.seg += weight * p.seg;
    acc.cls += weight * p.cls;
}

void scale(LossParts& p, double s) {
    p.total *= s;
    p.seg *= s;
    p.cls *= s;
}

bool finite(const LossParts& p) { return std::isfinite(p.total) && std::isfinite(p.seg) && std::isfinite(p.cls); }

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<std::vector<const Sample*>> batches_of(const std::vector<Sample>& samples, const std::vector<std::size_t>& order,
                                                   int batch_size) {
    std::vector<std::vector<const Sample*>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        std::vector<const Sample*> b;
        for (std::size_t k = i; k < std::min(order.size(), i + batch_size); ++k) b.push_back(&samples[order[k]]);
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<Sample> fit_all(const std::vector<Sample>& samples, int size) {
    std::vector<Sample> out;
    out.reserve(samples.size());
    for (const Sample& s : samples) out.push_back(fit_to_network(s, size));
    return out;
}

bool has_both_classes(std::span<const int> labels) {
    const auto pos = std::count(labels.begin(), labels.end(), 1);
    return pos > 0 && pos < static_cast<std::ptrdiff_t>(labels.size());
}

BinaryMask threshold_mask(const Tensor& probs, int n) {
    const int h = probs.dim(2), w = probs.dim(3);
    BinaryMask m(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) m.at(x, y) = probs.at(n, 0, y, x) >= 0.5f ? 1 : 0;
    }
    return m;
}

}  // namespace

nlohmann::json to_json(const EpochRecord& e) {
    nlohmann::json j = {{"epoch", e.epoch},
                        {"train", to_json(e.train)},
                        {"val", to_json(e.val)},
                        {"val_iou", e.val_iou},
                        {"val_auc", nullptr},
                        {"seconds", e.seconds}};
    if (e.val_auc) j["val_auc"] = *e.val_auc;
    return j;
}

EpochRecord epoch_record_from_json(const nlohmann::json& j) {
    EpochRecord e;
    e.epoch = j.at("epoch").get<int>();
    e.train = loss_parts_from_json(j.at("train"));
    e.val = loss_parts_from_json(j.at("val"));
    e.val_iou = j.at("val_iou").get<double>();
    if (j.contains("val_auc") && !j["val_auc"].is_null()) e.val_auc = j["val_auc"].get<double>();
    e.seconds = j.value("seconds", 0.0);
    return e;
}

nlohmann::json to_json(const RunRecord& r) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : r.epochs) epochs.push_back(to_json(e));
    return {{"epochs", epochs},
            {"wall_seconds", r.wall_seconds},
            {"config", r.config},
            {"pos_weight", r.pos_weight},
            {"best_epoch", r.best_epoch},
            {"best_checkpoint", r.best_checkpoint.string()},
            {"last_checkpoint", r.last_checkpoint.string()}};
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<nn::Parameter*> params, double lr, double beta1, double beta2, double epsilon, double weight_decay)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon), decay_(weight_decay) {
    for (const nn::Parameter* p : params_) {
        m_.emplace_back(p->value.numel(), 0.0f);
        v_.emplace_back(p->value.numel(), 0.0f);
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
    const float step = static_cast<float>(lr_ / c1);
    const float inv_c2 = static_cast<float>(1.0 / c2);
    const float eps = static_cast<float>(eps_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        nn::Parameter& p = *params_[k];
        const float decay = p.decay ? static_cast<float>(decay_) : 0.0f;
        float* w = p.value.data();
        const float* g = p.grad.data();
        float* m = m_[k].data();
        float* v = v_[k].data();
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            const float gi = g[i] + decay * w[i];
            m[i] = b1 * m[i] + (1.0f - b1) * gi;
            v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
            w[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
        }
    }
}

// ---------------------------------------------------------------------------

Sample fit_to_network(const Sample& sample, int size) {
    if (sample.image.width == size && sample.image.height == size) return sample;
    Sample out = sample;
    out.image = resize_bilinear(sample.image, size, size);
    out.mask = resize_nearest(sample.mask, size, size);
    return out;
}

Tensor image_batch(const std::vector<const Sample*>& samples) {
    if (samples.empty()) throw ShapeError("image_batch: no samples");
    const int w = samples[0]->image.width, h = samples[0]->image.height;
    Tensor t = Tensor::nchw(static_cast<int>(samples.size()), 1, h, w);
    for (std::size_t b = 0; b < samples.size(); ++b) {
        const GrayImage& img = samples[b]->image;
        if (img.width != w || img.height != h) throw ShapeError("image_batch: samples differ in size");
        std::copy(img.data.begin(), img.data.end(), t.data() + b * img.size());
    }
    return t;
}

BatchLoss batch_loss(const std::vector<const Sample*>& samples, const BatchOutput& out, const LossWeights& weights) {
    const std::size_t n = samples.size();
    const std::size_t pixels = out.seg_probs.numel();
    std::vector<double> seg_y(pixels), seg_p(pixels), cls_y(n), cls_p(n);
    const std::size_t plane = pixels / n;
    for (std::size_t b = 0; b < n; ++b) {
        const BinaryMask& m = samples[b]->mask;
        if (m.size() != plane) throw ShapeError("batch_loss: mask size does not match the network output");
        for (std::size_t i = 0; i < plane; ++i) seg_y[b * plane + i] = m.data[i];
        cls_y[b] = samples[b]->label;
        cls_p[b] = out.cls_probs[b];
    }
    for (std::size_t i = 0; i < pixels; ++i) seg_p[i] = out.seg_probs[i];

    BatchLoss r;
    r.loss = total_loss(seg_y, seg_p, cls_y, cls_p, weights);

    // Logit gradients use the fused sigmoid/BCE form so saturated logits still
    // receive a signal; the Dice part is chained through p(1-p).
    const LossWithGrad dice = dice_loss_with_grad(seg_y, seg_p, weights.epsilon);
    r.seg_logit_grad = Tensor(out.seg_probs.shape());
    const double inv_pixels = 1.0 / static_cast<double>(pixels);
    for (std::size_t i = 0; i < pixels; ++i) {
        const double p = seg_p[i], y = seg_y[i];
        const double g_bce = (p - y) * inv_pixels;
        const double g_dice = dice.grad[i] * p * (1.0 - p);
        r.seg_logit_grad[i] = static_cast<float>(weights.alpha * g_bce + (1.0 - weights.alpha) * g_dice);
    }
    r.cls_logit_grad.resize(n);
    for (std::size_t b = 0; b < n; ++b) {
        const double p = cls_p[b], y = cls_y[b], w = weights.pos_weight;
        r.cls_logit_grad[b] = static_cast<float>(weights.beta * (w * y * (p - 1.0) + (1.0 - y) * p) / static_cast<double>(n));
    }
    return r;
}

double default_pos_weight(const std::vector<Sample>& samples) {
    const auto pos = std::count_if(samples.begin(), samples.end(), [](const Sample& s) { return s.label == 1; });
    const auto neg = static_cast<std::ptrdiff_t>(samples.size()) - pos;
    if (pos == 0 || neg == 0) return 1.0;
    return static_cast<double>(neg) / static_cast<double>(pos);
}

Predictions predict(MultiTaskUNet& model, const std::vector<Sample>& samples, int batch_size) {
    Predictions p;
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    for (const auto& batch : batches_of(samples, order, batch_size)) {
        const BatchOutput out = model.forward(image_batch(batch), Mode::eval);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            p.scores.push_back(out.cls_probs[b]);
            p.ious.push_back(iou(threshold_mask(out.seg_probs, static_cast<int>(b)), batch[b]->mask));
        }
    }
    return p;
}

MetricsReport evaluate(MultiTaskUNet& model, const std::vector<Sample>& samples, double threshold, int batch_size) {
    if (samples.empty()) throw DataError("evaluate: the split is empty");
    const std::vector<Sample> fitted = fit_all(samples, model.config().input_size);
    const Predictions p = predict(model, fitted, batch_size);
    std::vector<int> labels;
    for (const Sample& s : fitted) labels.push_back(s.label);
    MetricsReport r;
    r.sample_count = fitted.size();
    r.threshold = threshold;
    r.iou = mean_sd(p.ious);
    r.rates = confusion_and_rates(labels, p.scores, threshold);
    if (has_both_classes(labels)) r.auc = roc_auc(labels, p.scores);
    return r;
}

MetricsReport evaluate(const std::filesystem::path& checkpoint, const std::vector<Sample>& samples, double threshold,
                       int batch_size) {
    MultiTaskUNet model = MultiTaskUNet::from_checkpoint(checkpoint);
    return evaluate(model, samples, threshold, batch_size);
}

// ---------------------------------------------------------------------------

namespace {

// Tiny datasets can leave a split with one class; there is nothing to balance then.
std::vector<Sample> balance_if_mixed(const std::vector<Sample>& split, const std::string& name,
                                     const AugmentationPolicy& policy, const BalanceOptions& options) {
    const auto positives = std::count_if(split.begin(), split.end(), [](const Sample& s) { return s.label == 1; });
    if (positives == 0 || positives == static_cast<std::ptrdiff_t>(split.size())) return split;
    return balance_split(split, name, policy, options);
}

}  // namespace

RunRecord train(const TrainConfig& config, const std::vector<Sample>& train_split, const std::vector<Sample>& val_split,
                const std::filesystem::path& run_dir, const std::function<void(const EpochRecord&)>& on_epoch) {
    config.validate();
    if (train_split.empty()) throw DataError("train split is empty");
    if (val_split.empty()) throw DataError("val split is empty");
    for (const Sample& s : train_split) s.validate();
    for (const Sample& s : val_split) s.validate();
    const auto start = std::chrono::steady_clock::now();

    RunRecord record;
    record.pos_weight = config.pos_weight ? *config.pos_weight : default_pos_weight(train_split);
    LossWeights weights = config.loss;
    weights.pos_weight = record.pos_weight;
    TrainConfig resolved = config;
    resolved.pos_weight = record.pos_weight;
    resolved.loss.pos_weight = record.pos_weight;
    record.config = to_json(resolved);

    const int size = config.network.input_size;
    BalanceOptions balance{config.target_ratio, config.majority_multiplier, derive_seed(config.seed, {0xba1})};
    const std::vector<Sample> train = balance_if_mixed(fit_all(train_split, size), "train", config.augmentation, balance);
    balance.seed = derive_seed(config.seed, {0xba2});
    const std::vector<Sample> val = balance_if_mixed(fit_all(val_split, size), "val", config.augmentation, balance);

    std::filesystem::create_directories(run_dir / "checkpoints");
    if (!std::filesystem::exists(run_dir / "config.json")) write_json_file(run_dir / "config.json", {{"train", record.config}});
    record.best_checkpoint = run_dir / "checkpoints" / "best.ckpt";
    record.last_checkpoint = run_dir / "checkpoints" / "last.ckpt";

    MultiTaskUNet model(config.network);
    Adam adam(model.parameters(), config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon,
              config.weight_decay);

    std::vector<int> val_labels;
    for (const Sample& s : val) val_labels.push_back(s.label);
    std::vector<std::size_t> val_order(val.size());
    std::iota(val_order.begin(), val_order.end(), 0);
    const auto val_batches = batches_of(val, val_order, config.batch_size);

    std::string history;
    double best_val = std::numeric_limits<double>::infinity();
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        EpochRecord e;
        e.epoch = epoch;

        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(config.seed, {0x5f1, static_cast<std::uint64_t>(epoch)}));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        int step = 0;
        for (const auto& batch : batches_of(train, order, config.batch_size)) {
            ++step;
            model.zero_grad();
            const BatchOutput out = model.forward(image_batch(batch), Mode::train);
            const BatchLoss bl = batch_loss(batch, out, weights);
            const LossParts parts = parts_of(bl.loss);
            if (!finite(parts)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
            }
            accumulate(e.train, parts, static_cast<double>(batch.size()));
            model.backward(bl.seg_logit_grad, bl.cls_logit_grad);
            adam.step();
        }
        scale(e.train, 1.0 / static_cast<double>(train.size()));

        std::vector<double> scores, ious;
        for (const auto& batch : val_batches) {
            const BatchOutput out = model.forward(image_batch(batch), Mode::eval);
            const TotalLoss l = batch_loss(batch, out, weights).loss;
            accumulate(e.val, parts_of(l), static_cast<double>(batch.size()));
            for (std::size_t b = 0; b < batch.size(); ++b) {
                scores.push_back(out.cls_probs[b]);
                ious.push_back(iou(threshold_mask(out.seg_probs, static_cast<int>(b)), batch[b]->mask));
            }
        }
        scale(e.val, 1.0 / static_cast<double>(val.size()));
        if (!finite(e.val)) throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
        e.val_iou = mean_sd(ious).mean;
        if (has_both_classes(val_labels)) e.val_auc = roc_auc(val_labels, scores);
        e.seconds = seconds_since(epoch_start);

        if (e.val.total < best_val) {
            best_val = e.val.total;
            record.best_epoch = epoch;
            model.save(record.best_checkpoint);
        }
        model.save(record.last_checkpoint);
        record.epochs.push_back(e);
        history += to_json(e).dump() + "\n";
        write_file(run_dir / "history.jsonl", history);
        if (on_epoch) on_epoch(e);
    }
    record.wall_seconds = seconds_since(start);
    write_json_file(run_dir / "run_record.json", to_json(record));
    return record;
}

OverfitResult overfit_probe(const TrainConfig& config, const std::vector<Sample>& batch_samples, int steps) {
    config.validate();
    const std::vector<Sample> fitted = fit_all(batch_samples, config.network.input_size);
    std::vector<const Sample*> batch;
    for (const Sample& s : fitted) batch.push_back(&s);
    LossWeights weights = config.loss;
    weights.pos_weight = config.pos_weight.value_or(1.0);

    MultiTaskUNet model(config.network);
    Adam adam(model.parameters(), config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon,
              config.weight_decay);
    const Tensor x = image_batch(batch);
    OverfitResult r;
    for (int step = 0; step < steps; ++step) {
        model.zero_grad();
        const BatchOutput out = model.forward(x, Mode::train);
        const BatchLoss bl = batch_loss(batch, out, weights);
        r.step_losses.push_back(parts_of(bl.loss));
        model.backward(bl.seg_logit_grad, bl.cls_logit_grad);
        adam.step();
    }
    const BatchOutput out = model.forward(x, Mode::eval);
    r.final_loss = parts_of(batch_loss(batch, out, weights).loss);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        r.final_scores.push_back(out.cls_probs[b]);
        if ((out.cls_probs[b] >= 0.5f) == (batch[b]->label == 1)) ++r.correct;
    }
    return r;
}

}  // namespace cervinet

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cervinet/dataset.hpp"
#include "cervinet/losses.hpp"
#include "cervinet/metrics.hpp"
#include "cervinet/model.hpp"
#include "cervinet/preprocess.hpp"

namespace cervinet {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 4;
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    /// L2 term added to the gradient of conv/dense weights only.
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;
    LossWeights loss;
    /// When unset, pos_weight = negatives / positives of the train split before balancing.
    std::optional<double> pos_weight;
    NetworkConfig network = NetworkConfig::desk();
    AugmentationPolicy augmentation;
    /// Balancing of the train and val splits; the seed is derived from `seed`.
    double target_ratio = 0.5;
    double majority_multiplier = 1.0;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& doc, TrainConfig base = {});

struct LossParts {
    double total = 0.0;
    double seg = 0.0;
    double cls = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    LossParts train;
    LossParts val;
    double val_iou = 0.0;
    std::optional<double> val_auc;
    double seconds = 0.0;
};

nlohmann::json to_json(const EpochRecord& e);
EpochRecord epoch_record_from_json(const nlohmann::json& doc);

struct RunRecord {
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0.0;
    nlohmann::json config;
    double pos_weight = 1.0;
    int best_epoch = 0;
    std::filesystem::path best_checkpoint;
    std::filesystem::path last_checkpoint;
};

nlohmann::json to_json(const RunRecord& r);

/// Adam with bias correction; decay-flagged parameters get weight_decay * w added to their gradient.
class Adam {
public:
    Adam(std::vector<nn::Parameter*> params, double lr, double beta1, double beta2, double epsilon, double weight_decay);
    void step();
    long long steps() const { return t_; }

private:
    std::vector<nn::Parameter*> params_;
    std::vector<std::vector<float>> m_, v_;
    double lr_, beta1_, beta2_, eps_, decay_;
    long long t_ = 0;
};

/// Resizes a sample to `size` (bilinear image, nearest mask); unchanged when it already matches.
Sample fit_to_network(const Sample& sample, int size);

/// Packs images into a [B,1,S,S] tensor.
nn::Tensor image_batch(const std::vector<const Sample*>& samples);

/// Loss of one batch against the model outputs, plus logit gradients.
struct BatchLoss {
    TotalLoss loss;
    nn::Tensor seg_logit_grad;
    std::vector<float> cls_logit_grad;
};

BatchLoss batch_loss(const std::vector<const Sample*>& samples, const BatchOutput& out, const LossWeights& weights);

/// Negatives / positives; 1 when either class is missing.
double default_pos_weight(const std::vector<Sample>& samples);

/// Trains on `train`, selects by validation loss, and writes history.jsonl and
/// checkpoints/{best,last}.ckpt under `run_dir`.
RunRecord train(const TrainConfig& config, const std::vector<Sample>& train, const std::vector<Sample>& val,
                const std::filesystem::path& run_dir, const std::function<void(const EpochRecord&)>& on_epoch = {});

struct Predictions {
    std::vector<double> scores;
    std::vector<double> ious;
};

/// Evaluation-mode predictions; parameters are not touched.
Predictions predict(MultiTaskUNet& model, const std::vector<Sample>& samples, int batch_size = 4);

MetricsReport evaluate(MultiTaskUNet& model, const std::vector<Sample>& samples, double threshold = 0.5,
                       int batch_size = 4);
MetricsReport evaluate(const std::filesystem::path& checkpoint, const std::vector<Sample>& samples,
                       double threshold = 0.5, int batch_size = 4);

struct OverfitResult {
    /// Training-mode loss before each step.
    std::vector<LossParts> step_losses;
    /// Evaluation-mode loss and predictions after the last step.
    LossParts final_loss;
    std::vector<double> final_scores;
    int correct = 0;
};

/// Repeatedly fits one fixed batch.
OverfitResult overfit_probe(const TrainConfig& config, const std::vector<Sample>& batch, int steps);

}  // namespace cervinet

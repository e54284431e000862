#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cervinet/nn.hpp"

namespace cervinet {

struct NetworkConfig {
    /// Number of encoder stages (= number of 2x downsamplings).
    int depth = 4;
    int base_channels = 64;
    /// Hidden widths of the classification branch.
    std::vector<int> fc_widths{256};
    double dropout_rate = 0.5;
    int input_size = 256;
    /// "batch" or "none".
    std::string normalization = "batch";
    std::uint64_t seed = 0;

    void validate() const;
    int bottleneck_channels() const { return base_channels << depth; }

    /// depth 3, base 16, input 64.
    static NetworkConfig desk();
};

nlohmann::json to_json(const NetworkConfig& c);
NetworkConfig network_config_from_json(const nlohmann::json& doc, NetworkConfig base = {});

struct BatchOutput {
    nn::Tensor seg_logits;  // [B,1,H,W]
    nn::Tensor seg_probs;   // [B,1,H,W]
    std::vector<float> cls_logits;
    std::vector<float> cls_probs;
};

/// Latest activation of one named layer and the gradient that last flowed into it.
struct ActivationCapture {
    std::string layer;
    nn::Tensor activation;
    nn::Tensor gradient;
    int forward_count = 0;
    int backward_count = 0;
};

/// Network that can be explained by gradient-weighted activation maps: one
/// scalar classification logit and named convolutional layers.
class ExplainableModel {
public:
    virtual ~ExplainableModel() = default;

    virtual std::vector<std::string> layer_names() const = 0;
    /// Starts recording `layer`. Throws LookupError listing valid names.
    virtual std::shared_ptr<const ActivationCapture> expose_activations(const std::string& layer) = 0;
    /// Eval-mode forward of a [1,1,H,W] image; returns the classification logit.
    virtual float classification_logit(const nn::Tensor& image) = 0;
    /// Backpropagates d(logit) = `scale` from the last classification_logit call.
    virtual void backward_classification(float scale) = 0;
};

/// U-Net with a classification branch fed from the bottleneck through global
/// average pooling and dense layers.
class MultiTaskUNet final : public ExplainableModel {
public:
    explicit MultiTaskUNet(const NetworkConfig& config);

    const NetworkConfig& config() const { return config_; }

    /// `images` is [B,1,S,S] with S = config().input_size.
    BatchOutput forward(const nn::Tensor& images, nn::Mode mode);
    /// Gradients with respect to the logits of the last forward call. Pass an
    /// empty `seg_logit_grad` to backpropagate the classification head only.
    void backward(const nn::Tensor& seg_logit_grad, std::span<const float> cls_logit_grad);

    std::vector<nn::Parameter*> parameters();
    std::vector<nn::Buffer*> buffers();
    void zero_grad();
    std::size_t parameter_count();

    std::vector<std::string> layer_names() const override;
    std::shared_ptr<const ActivationCapture> expose_activations(const std::string& layer) override;
    void clear_capture() { capture_.reset(); }
    float classification_logit(const nn::Tensor& image) override;
    void backward_classification(float scale) override;

    void save(const std::filesystem::path& path) const;
    /// Throws IoError / ConfigError when the archive does not match `config()`.
    void load(const std::filesystem::path& path);
    static MultiTaskUNet from_checkpoint(const std::filesystem::path& path);
    static NetworkConfig read_checkpoint_config(const std::filesystem::path& path);

    /// FNV-1a over every parameter and buffer value.
    std::uint64_t parameter_hash() const;

    /// Decoder and segmentation-head parameter names (not on the classification path).
    std::vector<std::string> decoder_parameter_names();

private:
    struct ConvBlock {
        nn::Conv2d conv1, conv2;
        nn::BatchNorm2d bn1, bn2;
        nn::ReLU relu1, relu2;
        bool norm = true;

        nn::Tensor forward(const nn::Tensor& x, nn::Mode mode);
        nn::Tensor backward(const nn::Tensor& g);
        void collect(std::vector<nn::Parameter*>& out);
        void collect_buffers(std::vector<nn::Buffer*>& out);
    };

    ConvBlock make_block(const std::string& name, int in, int out, Rng& rng) const;
    void record(const std::string& layer, const nn::Tensor& activation);
    void record_gradient(const std::string& layer, const nn::Tensor& gradient);
    std::vector<const nn::Parameter*> const_parameters() const;

    NetworkConfig config_;
    Rng dropout_rng_;
    std::vector<ConvBlock> encoders_;
    std::vector<nn::MaxPool2> pools_;
    ConvBlock bottleneck_;
    std::vector<nn::UpConv2> ups_;
    std::vector<ConvBlock> decoders_;
    nn::Conv2d head_;
    std::vector<nn::Linear> fc_;
    std::vector<nn::ReLU> fc_relu_;
    std::vector<nn::Dropout> fc_drop_;
    nn::Linear cls_out_;

    // Forward cache.
    int batch_ = 0;
    std::vector<int> bottleneck_shape_;
    std::vector<int> skip_channels_;
    std::shared_ptr<ActivationCapture> capture_;
};

}  // namespace cervinet

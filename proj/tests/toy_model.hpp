#pragma once

#include <algorithm>
#include <array>
#include <memory>
#include <string>
#include <vector>

#include "cervinet/errors.hpp"
#include "cervinet/model.hpp"

namespace toy {

using namespace cervinet;

// One 3x3 zero-padded convolution per channel, ReLU, global average pooling
// and a dense output: logit = sum_c v_c * mean(A_c) + bias.
class ToyModel final : public ExplainableModel {
public:
    ToyModel(std::vector<std::array<float, 9>> kernels, std::vector<float> v) : kernels_(std::move(kernels)), v_(std::move(v)) {}

    std::vector<std::string> layer_names() const override { return {"conv"}; }

    std::shared_ptr<const ActivationCapture> expose_activations(const std::string& layer) override {
        if (layer != "conv") throw LookupError("unknown layer '" + layer + "'; valid: conv");
        capture_ = std::make_shared<ActivationCapture>();
        capture_->layer = layer;
        return capture_;
    }

    float classification_logit(const nn::Tensor& image) override {
        const int h = image.dim(2), w = image.dim(3), channels = static_cast<int>(kernels_.size());
        nn::Tensor a = nn::Tensor::nchw(1, channels, h, w);
        double logit = 0.25;
        for (int c = 0; c < channels; ++c) {
            double sum = 0.0;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    float s = 0.0f;
                    for (int ky = -1; ky <= 1; ++ky) {
                        for (int kx = -1; kx <= 1; ++kx) {
                            const int yy = y + ky, xx = x + kx;
                            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                            s += kernels_[c][(ky + 1) * 3 + (kx + 1)] * image.at(0, 0, yy, xx);
                        }
                    }
                    a.at(0, c, y, x) = std::max(s, 0.0f);
                    sum += a.at(0, c, y, x);
                }
            }
            logit += v_[c] * sum / (h * w);
        }
        if (capture_) {
            capture_->activation = a;
            ++capture_->forward_count;
        }
        shape_ = a.shape();
        return static_cast<float>(logit);
    }

    void backward_classification(float scale) override {
        if (!capture_) return;
        nn::Tensor g(shape_);
        const int hw = shape_[2] * shape_[3];
        for (int c = 0; c < shape_[1]; ++c) {
            for (int i = 0; i < hw; ++i) g[static_cast<std::size_t>(c) * hw + i] = scale * v_[c] / hw;
        }
        capture_->gradient = g;
        ++capture_->backward_count;
    }

private:
    std::vector<std::array<float, 9>> kernels_;
    std::vector<float> v_;
    std::shared_ptr<ActivationCapture> capture_;
    std::vector<int> shape_;
};

}  // namespace toy

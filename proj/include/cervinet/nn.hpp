#pragma once

// Minimal NCHW float tensor and layers with hand-written backward passes.

#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "cervinet/errors.hpp"
#include "cervinet/random.hpp"

namespace cervinet::nn {

// Vectorized reductions peel by address, so a fixed alignment keeps sums
// identical from one allocation to the next.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using FloatStore = std::vector<float, AlignedAllocator<float>>;

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, float fill = 0.0f);

    static Tensor nchw(int n, int c, int h, int w, float fill = 0.0f) { return Tensor({n, c, h, w}, fill); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(std::size_t i) const { return shape_.at(i); }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> span() { return data_; }
    std::span<const float> span() const { return data_; }
    FloatStore& values() { return data_; }
    const FloatStore& values() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    /// Element (n, c, y, x) of a rank-4 tensor.
    float& at(int n, int c, int y, int x) {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }
    float at(int n, int c, int y, int x) const {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

    void fill(float v);
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_string() const;

    bool operator==(const Tensor&) const = default;

private:
    std::vector<int> shape_;
    FloatStore data_;
};

/// Trainable tensor with its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    /// Weight decay applies (conv/dense weights only).
    bool decay = false;
};

/// Non-trainable persistent state (batch-norm running statistics).
struct Buffer {
    std::string name;
    Tensor value;
};

enum class Mode { train, eval };

class Conv2d {
public:
    Conv2d() = default;
    /// Stride 1, "same" padding; kernel is 1 or 3.
    Conv2d(std::string name, int in_channels, int out_channels, int kernel, Rng& rng, double init_gain = 2.0);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out);
    void collect(std::vector<Parameter*>& out) { out.push_back(&weight_); out.push_back(&bias_); }

    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }

private:
    int in_ = 0, out_ = 0, kernel_ = 3;
    Parameter weight_;  // [out, in * k * k]
    Parameter bias_;    // [out]
    Tensor input_;
};

class BatchNorm2d {
public:
    BatchNorm2d() = default;
    BatchNorm2d(std::string name, int channels);

    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& grad_out);
    void collect(std::vector<Parameter*>& out) { out.push_back(&gamma_); out.push_back(&beta_); }
    void collect_buffers(std::vector<Buffer*>& out) { out.push_back(&running_mean_); out.push_back(&running_var_); }

    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.1;

private:
    int channels_ = 0;
    Parameter gamma_, beta_;
    Buffer running_mean_, running_var_;
    Mode mode_ = Mode::eval;
    Tensor xhat_;
    std::vector<double> inv_std_;
};

class ReLU {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out) const;

private:
    Tensor output_;
};

class MaxPool2 {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out) const;

private:
    std::vector<int> input_shape_;
    std::vector<std::uint32_t> argmax_;
};

/// Transposed 2x2 convolution with stride 2 (exact 2x upsampling).
class UpConv2 {
public:
    UpConv2() = default;
    UpConv2(std::string name, int in_channels, int out_channels, Rng& rng);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out);
    void collect(std::vector<Parameter*>& out) { out.push_back(&weight_); out.push_back(&bias_); }

private:
    int in_ = 0, out_ = 0;
    Parameter weight_;  // [in, out * 4]
    Parameter bias_;    // [out]
    Tensor input_;
};

class Linear {
public:
    Linear() = default;
    Linear(std::string name, int in_features, int out_features, Rng& rng, double init_gain = 2.0);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out);
    void collect(std::vector<Parameter*>& out) { out.push_back(&weight_); out.push_back(&bias_); }

    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }

private:
    int in_ = 0, out_ = 0;
    Parameter weight_;  // [out, in]
    Parameter bias_;
    Tensor input_;
};

class Dropout {
public:
    explicit Dropout(double rate = 0.0) : rate_(rate) {}

    Tensor forward(const Tensor& x, Mode mode, Rng& rng);
    Tensor backward(const Tensor& grad_out) const;

private:
    double rate_ = 0.0;
    std::vector<float> scale_;
};

/// [N, C, H, W] -> [N, C]
Tensor global_average_pool(const Tensor& x);
Tensor global_average_pool_backward(const Tensor& grad_out, const std::vector<int>& input_shape);

/// Channel concatenation of two rank-4 tensors.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Splits a channel-concatenated gradient back into its two parts.
std::pair<Tensor, Tensor> split_channels(const Tensor& grad, int first_channels);

float sigmoid(float z);

}  // namespace cervinet::nn

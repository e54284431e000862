#include "cervinet/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace cervinet::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_rank4(const Tensor& x, const char* who) {
    if (x.rank() != 4) throw ShapeError(std::string(who) + ": expected a rank-4 NCHW tensor, got " + x.shape_string());
}

void init_normal(Tensor& t, Rng& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (float& v : t.values()) v = static_cast<float>(dist(rng));
}

// cols[(ci * k * k + ky * k + kx), y * w + x] = x[ci, y + ky - pad, x + kx - pad]
void im2col(const float* in, int channels, int h, int w, int k, float* cols) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < channels; ++c) {
        const float* plane = in + c * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                float* row = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * hw;
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    float* dst = row + static_cast<std::size_t>(y) * w;
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + w, 0.0f);
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(sy) * w;
                    std::fill(dst, dst + x0, 0.0f);
                    if (x1 > x0) std::memcpy(dst + x0, src + x0 + dx, sizeof(float) * (x1 - x0));
                    std::fill(dst + std::max(x0, x1), dst + w, 0.0f);
                }
            }
        }
    }
}

void col2im(const float* cols, int channels, int h, int w, int k, float* out) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < channels; ++c) {
        float* plane = out + c * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const float* row = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * hw;
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    const float* src = row + static_cast<std::size_t>(y) * w;
                    float* dst = plane + static_cast<std::size_t>(sy) * w;
                    for (int x = x0; x < x1; ++x) dst[x + dx] += src[x];
                }
            }
        }
    }
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, float fill) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
        if (d < 0) throw ShapeError("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, fill);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_string() const {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) out << (i ? "x" : "") << shape_[i];
    out << ']';
    return out.str();
}

float sigmoid(float z) {
    if (z >= 0.0f) return 1.0f / (1.0f + std::exp(-z));
    const float e = std::exp(z);
    return e / (1.0f + e);
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, Rng& rng, double init_gain)
    : in_(in_channels), out_(out_channels), kernel_(kernel) {
    if (kernel != 1 && kernel != 3) throw ConfigError("kernel", "Conv2d supports 1x1 and 3x3 kernels");
    const int fan_in = in_channels * kernel * kernel;
    weight_ = {name + ".weight", Tensor({out_channels, fan_in}), Tensor({out_channels, fan_in}), true};
    bias_ = {name + ".bias", Tensor({out_channels}), Tensor({out_channels}), false};
    init_normal(weight_.value, rng, std::sqrt(init_gain / fan_in));
}

Tensor Conv2d::forward(const Tensor& x) {
    require_rank4(x, "Conv2d");
    if (x.dim(1) != in_) throw ShapeError("Conv2d: expected " + std::to_string(in_) + " channels, got " + x.shape_string());
    input_ = x;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int hw = h * w, k2 = in_ * kernel_ * kernel_;
    Tensor out = Tensor::nchw(n, out_, h, w);
    FloatStore cols(kernel_ == 1 ? 0 : static_cast<std::size_t>(k2) * hw);
    ConstMapMat wmat(weight_.value.data(), out_, k2);
    for (int b = 0; b < n; ++b) {
        const float* src = x.data() + static_cast<std::size_t>(b) * in_ * hw;
        if (kernel_ != 1) {
            im2col(src, in_, h, w, kernel_, cols.data());
            src = cols.data();
        }
        MapMat o(out.data() + static_cast<std::size_t>(b) * out_ * hw, out_, hw);
        o.noalias() = wmat * ConstMapMat(src, k2, hw);
        for (int c = 0; c < out_; ++c) o.row(c).array() += bias_.value[c];
    }
    return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
    const int hw = h * w, k2 = in_ * kernel_ * kernel_;
    Tensor grad_in(input_.shape());
    FloatStore cols(kernel_ == 1 ? 0 : static_cast<std::size_t>(k2) * hw);
    FloatStore dcols(kernel_ == 1 ? 0 : static_cast<std::size_t>(k2) * hw);
    ConstMapMat wmat(weight_.value.data(), out_, k2);
    MapMat dw(weight_.grad.data(), out_, k2);
    for (int b = 0; b < n; ++b) {
        const float* src = input_.data() + static_cast<std::size_t>(b) * in_ * hw;
        ConstMapMat g(grad_out.data() + static_cast<std::size_t>(b) * out_ * hw, out_, hw);
        for (int c = 0; c < out_; ++c) bias_.grad[c] += g.row(c).sum();
        float* gin = grad_in.data() + static_cast<std::size_t>(b) * in_ * hw;
        if (kernel_ == 1) {
            dw.noalias() += g * ConstMapMat(src, k2, hw).transpose();
            MapMat(gin, k2, hw).noalias() = wmat.transpose() * g;
        } else {
            im2col(src, in_, h, w, kernel_, cols.data());
            dw.noalias() += g * ConstMapMat(cols.data(), k2, hw).transpose();
            MapMat(dcols.data(), k2, hw).noalias() = wmat.transpose() * g;
            col2im(dcols.data(), in_, h, w, kernel_, gin);
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(std::string name, int channels) : channels_(channels) {
    gamma_ = {name + ".gamma", Tensor({channels}, 1.0f), Tensor({channels}), false};
    beta_ = {name + ".beta", Tensor({channels}), Tensor({channels}), false};
    running_mean_ = {name + ".running_mean", Tensor({channels})};
    running_var_ = {name + ".running_var", Tensor({channels}, 1.0f)};
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
    require_rank4(x, "BatchNorm2d");
    if (x.dim(1) != channels_) throw ShapeError("BatchNorm2d: channel mismatch, got " + x.shape_string());
    mode_ = mode;
    const int n = x.dim(0), hw = x.dim(2) * x.dim(3);
    const double count = static_cast<double>(n) * hw;
    Tensor out(x.shape());
    xhat_ = Tensor(x.shape());
    inv_std_.assign(channels_, 0.0);
    for (int c = 0; c < channels_; ++c) {
        double mean, var;
        if (mode == Mode::train) {
            double s = 0.0, ss = 0.0;
            for (int b = 0; b < n; ++b) {
                const float* p = x.data() + (static_cast<std::size_t>(b) * channels_ + c) * hw;
                for (int i = 0; i < hw; ++i) s += p[i];
            }
            mean = s / count;
            for (int b = 0; b < n; ++b) {
                const float* p = x.data() + (static_cast<std::size_t>(b) * channels_ + c) * hw;
                for (int i = 0; i < hw; ++i) ss += (p[i] - mean) * (p[i] - mean);
            }
            var = ss / count;
            const double unbiased = count > 1 ? ss / (count - 1) : var;
            running_mean_.value[c] = static_cast<float>((1 - kMomentum) * running_mean_.value[c] + kMomentum * mean);
            running_var_.value[c] = static_cast<float>((1 - kMomentum) * running_var_.value[c] + kMomentum * unbiased);
        } else {
            mean = running_mean_.value[c];
            var = running_var_.value[c];
        }
        const double inv = 1.0 / std::sqrt(var + kEps);
        inv_std_[c] = inv;
        const float g = gamma_.value[c], be = beta_.value[c];
        for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * channels_ + c) * hw;
            for (int i = 0; i < hw; ++i) {
                const float xh = static_cast<float>((x.data()[off + i] - mean) * inv);
                xhat_.data()[off + i] = xh;
                out.data()[off + i] = g * xh + be;
            }
        }
    }
    return out;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
    const int n = xhat_.dim(0), hw = xhat_.dim(2) * xhat_.dim(3);
    const double count = static_cast<double>(n) * hw;
    Tensor grad_in(xhat_.shape());
    for (int c = 0; c < channels_; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * channels_ + c) * hw;
            for (int i = 0; i < hw; ++i) {
                sum_dy += grad_out.data()[off + i];
                sum_dy_xhat += static_cast<double>(grad_out.data()[off + i]) * xhat_.data()[off + i];
            }
        }
        gamma_.grad[c] += static_cast<float>(sum_dy_xhat);
        beta_.grad[c] += static_cast<float>(sum_dy);
        const double g = gamma_.value[c];
        const double inv = inv_std_[c];
        for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * channels_ + c) * hw;
            for (int i = 0; i < hw; ++i) {
                double d;
                if (mode_ == Mode::train) {
                    d = g * inv * (grad_out.data()[off + i] - sum_dy / count - xhat_.data()[off + i] * sum_dy_xhat / count);
                } else {
                    d = g * inv * grad_out.data()[off + i];
                }
                grad_in.data()[off + i] = static_cast<float>(d);
            }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x) {
    output_ = x;
    for (float& v : output_.values()) v = v > 0.0f ? v : 0.0f;
    return output_;
}

Tensor ReLU::backward(const Tensor& grad_out) const {
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.numel(); ++i) {
        if (output_[i] <= 0.0f) g[i] = 0.0f;
    }
    return g;
}

Tensor MaxPool2::forward(const Tensor& x) {
    require_rank4(x, "MaxPool2");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 || w % 2) throw ShapeError("MaxPool2: spatial size must be even, got " + x.shape_string());
    input_shape_ = x.shape();
    Tensor out = Tensor::nchw(n, c, h / 2, w / 2);
    argmax_.assign(out.numel(), 0);
    std::size_t o = 0;
    for (int p = 0; p < n * c; ++p) {
        const float* plane = x.data() + static_cast<std::size_t>(p) * h * w;
        for (int y = 0; y < h / 2; ++y) {
            for (int xx = 0; xx < w / 2; ++xx, ++o) {
                std::uint32_t best = static_cast<std::uint32_t>(2 * y * w + 2 * xx);
                for (std::uint32_t cand : {best + 1, best + static_cast<std::uint32_t>(w), best + static_cast<std::uint32_t>(w) + 1}) {
                    if (plane[cand] > plane[best]) best = cand;
                }
                out[o] = plane[best];
                argmax_[o] = best;
            }
        }
    }
    return out;
}

Tensor MaxPool2::backward(const Tensor& grad_out) const {
    Tensor g(input_shape_);
    const std::size_t plane_in = static_cast<std::size_t>(input_shape_[2]) * input_shape_[3];
    const std::size_t plane_out = plane_in / 4;
    for (std::size_t o = 0; o < grad_out.numel(); ++o) g[(o / plane_out) * plane_in + argmax_[o]] += grad_out[o];
    return g;
}

// ---------------------------------------------------------------------------

UpConv2::UpConv2(std::string name, int in_channels, int out_channels, Rng& rng) : in_(in_channels), out_(out_channels) {
    weight_ = {name + ".weight", Tensor({in_channels, out_channels * 4}), Tensor({in_channels, out_channels * 4}), true};
    bias_ = {name + ".bias", Tensor({out_channels}), Tensor({out_channels}), false};
    init_normal(weight_.value, rng, std::sqrt(2.0 / in_channels));
}

Tensor UpConv2::forward(const Tensor& x) {
    require_rank4(x, "UpConv2");
    if (x.dim(1) != in_) throw ShapeError("UpConv2: channel mismatch, got " + x.shape_string());
    input_ = x;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3), hw = h * w;
    Tensor out = Tensor::nchw(n, out_, 2 * h, 2 * w);
    RowMat tmp(out_ * 4, hw);
    ConstMapMat wmat(weight_.value.data(), in_, out_ * 4);
    for (int b = 0; b < n; ++b) {
        tmp.noalias() = wmat.transpose() * ConstMapMat(x.data() + static_cast<std::size_t>(b) * in_ * hw, in_, hw);
        for (int c = 0; c < out_; ++c) {
            for (int k = 0; k < 4; ++k) {
                const int dy = k / 2, dx = k % 2;
                const float* row = tmp.data() + static_cast<std::size_t>(c * 4 + k) * hw;
                for (int y = 0; y < h; ++y) {
                    for (int xx = 0; xx < w; ++xx) out.at(b, c, 2 * y + dy, 2 * xx + dx) = row[y * w + xx] + bias_.value[c];
                }
            }
        }
    }
    return out;
}

Tensor UpConv2::backward(const Tensor& grad_out) {
    const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3), hw = h * w;
    Tensor grad_in(input_.shape());
    RowMat g(out_ * 4, hw);
    MapMat dw(weight_.grad.data(), in_, out_ * 4);
    ConstMapMat wmat(weight_.value.data(), in_, out_ * 4);
    for (int b = 0; b < n; ++b) {
        for (int c = 0; c < out_; ++c) {
            double bsum = 0.0;
            for (int k = 0; k < 4; ++k) {
                const int dy = k / 2, dx = k % 2;
                float* row = g.data() + static_cast<std::size_t>(c * 4 + k) * hw;
                for (int y = 0; y < h; ++y) {
                    for (int xx = 0; xx < w; ++xx) {
                        row[y * w + xx] = grad_out.at(b, c, 2 * y + dy, 2 * xx + dx);
                        bsum += row[y * w + xx];
                    }
                }
            }
            bias_.grad[c] += static_cast<float>(bsum);
        }
        ConstMapMat in(input_.data() + static_cast<std::size_t>(b) * in_ * hw, in_, hw);
        dw.noalias() += in * g.transpose();
        MapMat(grad_in.data() + static_cast<std::size_t>(b) * in_ * hw, in_, hw).noalias() = wmat * g;
    }
    return grad_in;
}

// ---------------------------------------------------------------------------

Linear::Linear(std::string name, int in_features, int out_features, Rng& rng, double init_gain)
    : in_(in_features), out_(out_features) {
    weight_ = {name + ".weight", Tensor({out_features, in_features}), Tensor({out_features, in_features}), true};
    bias_ = {name + ".bias", Tensor({out_features}), Tensor({out_features}), false};
    init_normal(weight_.value, rng, std::sqrt(init_gain / in_features));
}

Tensor Linear::forward(const Tensor& x) {
    if (x.rank() != 2 || x.dim(1) != in_) throw ShapeError("Linear: expected [N, " + std::to_string(in_) + "], got " + x.shape_string());
    input_ = x;
    const int n = x.dim(0);
    Tensor out({n, out_});
    MapMat o(out.data(), n, out_);
    o.noalias() = ConstMapMat(x.data(), n, in_) * ConstMapMat(weight_.value.data(), out_, in_).transpose();
    for (int b = 0; b < n; ++b) o.row(b) += Eigen::Map<const Eigen::RowVectorXf>(bias_.value.data(), out_);
    return out;
}

Tensor Linear::backward(const Tensor& grad_out) {
    const int n = input_.dim(0);
    ConstMapMat g(grad_out.data(), n, out_);
    MapMat(weight_.grad.data(), out_, in_).noalias() += g.transpose() * ConstMapMat(input_.data(), n, in_);
    Eigen::Map<Eigen::RowVectorXf>(bias_.grad.data(), out_) += g.colwise().sum();
    Tensor grad_in({n, in_});
    MapMat(grad_in.data(), n, in_).noalias() = g * ConstMapMat(weight_.value.data(), out_, in_);
    return grad_in;
}

// ---------------------------------------------------------------------------

Tensor Dropout::forward(const Tensor& x, Mode mode, Rng& rng) {
    if (mode == Mode::eval || rate_ <= 0.0) {
        scale_.assign(x.numel(), 1.0f);
        return x;
    }
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const float keep_scale = static_cast<float>(1.0 / (1.0 - rate_));
    scale_.resize(x.numel());
    Tensor out = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        scale_[i] = uni(rng) < rate_ ? 0.0f : keep_scale;
        out[i] *= scale_[i];
    }
    return out;
}

Tensor Dropout::backward(const Tensor& grad_out) const {
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= scale_[i];
    return g;
}

// ---------------------------------------------------------------------------

Tensor global_average_pool(const Tensor& x) {
    require_rank4(x, "global_average_pool");
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out({n, c});
    for (int p = 0; p < n * c; ++p) {
        double s = 0.0;
        const float* plane = x.data() + static_cast<std::size_t>(p) * hw;
        for (int i = 0; i < hw; ++i) s += plane[i];
        out[p] = static_cast<float>(s / hw);
    }
    return out;
}

Tensor global_average_pool_backward(const Tensor& grad_out, const std::vector<int>& input_shape) {
    Tensor g(input_shape);
    const int hw = input_shape[2] * input_shape[3];
    for (std::size_t p = 0; p < grad_out.numel(); ++p) {
        const float v = grad_out[p] / static_cast<float>(hw);
        std::fill(g.data() + p * hw, g.data() + (p + 1) * hw, v);
    }
    return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_rank4(a, "concat_channels");
    require_rank4(b, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw ShapeError("concat_channels: " + a.shape_string() + " vs " + b.shape_string());
    }
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
    Tensor out = Tensor::nchw(n, ca + cb, a.dim(2), a.dim(3));
    for (int i = 0; i < n; ++i) {
        float* dst = out.data() + i * (ca + cb) * hw;
        std::memcpy(dst, a.data() + i * ca * hw, sizeof(float) * ca * hw);
        std::memcpy(dst + ca * hw, b.data() + i * cb * hw, sizeof(float) * cb * hw);
    }
    return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& grad, int first_channels) {
    const int n = grad.dim(0), c = grad.dim(1), h = grad.dim(2), w = grad.dim(3);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    Tensor a = Tensor::nchw(n, first_channels, h, w), b = Tensor::nchw(n, c - first_channels, h, w);
    for (int i = 0; i < n; ++i) {
        const float* src = grad.data() + i * c * hw;
        std::memcpy(a.data() + i * first_channels * hw, src, sizeof(float) * first_channels * hw);
        std::memcpy(b.data() + i * (c - first_channels) * hw, src + first_channels * hw,
                    sizeof(float) * (c - first_channels) * hw);
    }
    return {std::move(a), std::move(b)};
}

}  // namespace cervinet::nn

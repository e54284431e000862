#include "cervinet/losses.hpp"

#include <algorithm>
#include <cmath>

#include "cervinet/errors.hpp"

namespace cervinet {

void LossWeights::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("loss.alpha", "must lie in [0,1]");
    if (!(beta >= 0.0)) throw ConfigError("loss.beta", "must be >= 0");
    if (!(pos_weight > 0.0)) throw ConfigError("loss.pos_weight", "must be > 0");
    if (!(epsilon > 0.0)) throw ConfigError("loss.epsilon", "must be > 0");
}

nlohmann::json to_json(const LossWeights& w) {
    return {{"alpha", w.alpha}, {"beta", w.beta}, {"pos_weight", w.pos_weight}, {"epsilon", w.epsilon}};
}

LossWeights loss_weights_from_json(const nlohmann::json& doc, LossWeights w) {
    try {
        w.alpha = doc.value("alpha", w.alpha);
        w.beta = doc.value("beta", w.beta);
        w.pos_weight = doc.value("pos_weight", w.pos_weight);
        w.epsilon = doc.value("epsilon", w.epsilon);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("loss", e.what());
    }
    return w;
}

namespace {

void require_same(std::span<const double> y, std::span<const double> p, const char* what) {
    if (y.size() != p.size()) {
        throw ShapeError(std::string(what) + ": target has " + std::to_string(y.size()) + " values, prediction has " +
                         std::to_string(p.size()));
    }
    if (y.empty()) throw ShapeError(std::string(what) + ": empty input");
}

}  // namespace

LossWithGrad bce_with_grad(std::span<const double> y, std::span<const double> p, double pos_weight) {
    require_same(y, p, "bce");
    const double n = static_cast<double>(y.size());
    LossWithGrad out;
    out.grad.resize(y.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const bool clamped = p[i] < kProbClamp || p[i] > 1.0 - kProbClamp;
        const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
        acc -= pos_weight * y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
        out.grad[i] = clamped ? 0.0 : (-pos_weight * y[i] / q + (1.0 - y[i]) / (1.0 - q)) / n;
    }
    out.value = acc / n;
    return out;
}

double bce(std::span<const double> y, std::span<const double> p, double pos_weight) {
    require_same(y, p, "bce");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
        acc -= pos_weight * y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
    }
    return acc / static_cast<double>(y.size());
}

LossWithGrad dice_loss_with_grad(std::span<const double> y, std::span<const double> p, double epsilon) {
    require_same(y, p, "dice_loss");
    double inter = 0.0, denom = epsilon;
    for (std::size_t i = 0; i < y.size(); ++i) {
        inter += y[i] * p[i];
        denom += y[i] * y[i] + p[i] * p[i];
    }
    LossWithGrad out;
    out.value = 1.0 - 2.0 * inter / denom;
    out.grad.resize(y.size());
    const double denom2 = denom * denom;
    for (std::size_t i = 0; i < y.size(); ++i) out.grad[i] = -2.0 * (y[i] * denom - 2.0 * p[i] * inter) / denom2;
    return out;
}

double dice_loss(std::span<const double> y, std::span<const double> p, double epsilon) {
    return dice_loss_with_grad(y, p, epsilon).value;
}

TotalLoss total_loss(std::span<const double> seg_target, std::span<const double> seg_probs,
                     std::span<const double> cls_target, std::span<const double> cls_probs, const LossWeights& weights) {
    weights.validate();
    LossWithGrad seg_bce = bce_with_grad(seg_target, seg_probs, 1.0);
    LossWithGrad seg_dice = dice_loss_with_grad(seg_target, seg_probs, weights.epsilon);
    LossWithGrad cls_bce = bce_with_grad(cls_target, cls_probs, weights.pos_weight);

    TotalLoss out;
    out.seg_bce = seg_bce.value;
    out.seg_dice = seg_dice.value;
    out.cls_bce = cls_bce.value;
    out.seg = weights.alpha * seg_bce.value + (1.0 - weights.alpha) * seg_dice.value;
    out.cls = weights.beta * cls_bce.value;
    out.total = out.seg + out.cls;

    out.seg_grad.resize(seg_probs.size());
    for (std::size_t i = 0; i < seg_probs.size(); ++i) {
        out.seg_grad[i] = weights.alpha * seg_bce.grad[i] + (1.0 - weights.alpha) * seg_dice.grad[i];
    }
    out.cls_grad.resize(cls_probs.size());
    for (std::size_t i = 0; i < cls_probs.size(); ++i) out.cls_grad[i] = weights.beta * cls_bce.grad[i];
    return out;
}

}  // namespace cervinet

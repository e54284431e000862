#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace cervinet {

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logs.
inline constexpr double kProbClamp = 1e-7;

struct LossWeights {
    /// BCE share of the segmentation loss; Dice gets 1 - alpha.
    double alpha = 0.5;
    /// Scale of the classification loss.
    double beta = 0.8;
    /// Weight of the positive (preterm) term in the classification BCE.
    double pos_weight = 1.0;
    double epsilon = 1e-6;

    void validate() const;
};

nlohmann::json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& doc, LossWeights base = {});

/// Loss value with its gradient with respect to the predictions.
struct LossWithGrad {
    double value = 0.0;
    std::vector<double> grad;
};

/// Mean of -[w*y*log(p) + (1-y)*log(1-p)].
double bce(std::span<const double> y, std::span<const double> p, double pos_weight = 1.0);
LossWithGrad bce_with_grad(std::span<const double> y, std::span<const double> p, double pos_weight = 1.0);

/// 1 - 2*sum(y*p) / (sum(y^2) + sum(p^2) + epsilon)
double dice_loss(std::span<const double> y, std::span<const double> p, double epsilon = 1e-6);
LossWithGrad dice_loss_with_grad(std::span<const double> y, std::span<const double> p, double epsilon = 1e-6);

struct TotalLoss {
    double total = 0.0;
    double seg = 0.0;
    double cls = 0.0;
    double seg_bce = 0.0;
    double seg_dice = 0.0;
    double cls_bce = 0.0;
    std::vector<double> seg_grad;
    std::vector<double> cls_grad;
};

/// total = seg + cls, seg = alpha*BCE + (1-alpha)*Dice, cls = beta*BCE_w.
TotalLoss total_loss(std::span<const double> seg_target, std::span<const double> seg_probs,
                     std::span<const double> cls_target, std::span<const double> cls_probs, const LossWeights& weights);

}  // namespace cervinet

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "cervinet/image.hpp"

namespace cervinet {

/// |a & b| / |a | b|; two empty masks score 1.
double iou(const BinaryMask& a, const BinaryMask& b);

struct ConfusionMatrix {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
    bool operator==(const ConfusionMatrix&) const = default;
};

/// Ratios with a zero denominator are absent rather than 0.
struct ClassificationRates {
    ConfusionMatrix confusion;
    std::optional<double> sensitivity;
    std::optional<double> precision;
    std::optional<double> specificity;
    std::optional<double> fpr;
};

ClassificationRates rates_from_confusion(const ConfusionMatrix& cm);

/// Predicted positive iff score >= threshold.
ClassificationRates confusion_and_rates(std::span<const int> labels, std::span<const double> scores,
                                        double threshold = 0.5);

/// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 * P(tie).
double roc_auc(std::span<const int> labels, std::span<const double> scores);

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

/// Sample standard deviation (n - 1); sd = 0 for a single value.
MeanSd mean_sd(std::span<const double> values);

struct MetricsReport {
    std::size_t sample_count = 0;
    double threshold = 0.5;
    MeanSd iou;
    ClassificationRates rates;
    std::optional<double> auc;
};

nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const nlohmann::json& doc);

/// Rows actual, columns predicted (control first).
std::string format_confusion(const ConfusionMatrix& cm);
std::string format_report(const MetricsReport& r);

}  // namespace cervinet

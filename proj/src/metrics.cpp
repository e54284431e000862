#include "cervinet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <vector>

namespace cervinet {

double iou(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_shape(b)) throw ShapeError("iou: mask dimensions differ");
    if (!is_binary(a) || !is_binary(b)) throw DataError("iou: masks must be binary");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a.data[i] & b.data[i]);
        uni += (a.data[i] | b.data[i]);
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ClassificationRates rates_from_confusion(const ConfusionMatrix& cm) {
    if (cm.tp < 0 || cm.fp < 0 || cm.fn < 0 || cm.tn < 0) throw DataError("confusion counts must be non-negative");
    ClassificationRates r;
    r.confusion = cm;
    r.sensitivity = ratio(cm.tp, cm.tp + cm.fn);
    r.precision = ratio(cm.tp, cm.tp + cm.fp);
    r.specificity = ratio(cm.tn, cm.tn + cm.fp);
    r.fpr = ratio(cm.fp, cm.fp + cm.tn);
    return r;
}

ClassificationRates confusion_and_rates(std::span<const int> labels, std::span<const double> scores, double threshold) {
    if (labels.size() != scores.size()) throw ShapeError("confusion_and_rates: labels and scores differ in length");
    if (labels.empty()) throw DataError("confusion_and_rates: empty input");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        const bool actual = labels[i] == 1;
        if (actual && predicted) ++cm.tp;
        else if (actual) ++cm.fn;
        else if (predicted) ++cm.fp;
        else ++cm.tn;
    }
    return rates_from_confusion(cm);
}

double roc_auc(std::span<const int> labels, std::span<const double> scores) {
    if (labels.size() != scores.size()) throw ShapeError("roc_auc: labels and scores differ in length");
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Walk tie groups in ascending score; every positive beats the negatives
    // strictly below it and ties half of those in its own group.
    double wins2 = 0.0;  // twice the win count, exact in double
    std::int64_t negatives_below = 0, positives = 0, negatives = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::int64_t group_pos = 0, group_neg = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? group_pos : group_neg)++;
            ++j;
        }
        wins2 += static_cast<double>(group_pos) * static_cast<double>(2 * negatives_below + group_neg);
        negatives_below += group_neg;
        positives += group_pos;
        negatives += group_neg;
        i = j;
    }
    if (positives == 0 || negatives == 0) throw DataError("roc_auc: both classes must be present");
    return wins2 / 2.0 / (static_cast<double>(positives) * static_cast<double>(negatives));
}

MeanSd mean_sd(std::span<const double> values) {
    MeanSd out;
    if (values.empty()) return out;
    out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - out.mean) * (v - out.mean);
        out.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return out;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& doc, const char* key) {
    if (!doc.contains(key) || doc.at(key).is_null()) return std::nullopt;
    return doc.at(key).get<double>();
}

std::string fmt_opt(const std::optional<double>& v) {
    if (!v) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return buf;
}

}  // namespace

nlohmann::json to_json(const MetricsReport& r) {
    const ConfusionMatrix& cm = r.rates.confusion;
    return {{"sample_count", r.sample_count},
            {"threshold", r.threshold},
            {"mean_iou", r.iou.mean},
            {"iou_sd", r.iou.sd},
            {"recall", opt(r.rates.sensitivity)},
            {"precision", opt(r.rates.precision)},
            {"specificity", opt(r.rates.specificity)},
            {"fpr", opt(r.rates.fpr)},
            {"auc", opt(r.auc)},
            {"confusion", {{"tp", cm.tp}, {"fp", cm.fp}, {"fn", cm.fn}, {"tn", cm.tn}}}};
}

MetricsReport metrics_report_from_json(const nlohmann::json& doc) {
    MetricsReport r;
    r.sample_count = doc.at("sample_count").get<std::size_t>();
    r.threshold = doc.at("threshold").get<double>();
    r.iou = {doc.at("mean_iou").get<double>(), doc.at("iou_sd").get<double>()};
    const auto& c = doc.at("confusion");
    r.rates = rates_from_confusion({c.at("tp").get<std::int64_t>(), c.at("fp").get<std::int64_t>(),
                                    c.at("fn").get<std::int64_t>(), c.at("tn").get<std::int64_t>()});
    r.auc = opt_from(doc, "auc");
    return r;
}

std::string format_confusion(const ConfusionMatrix& cm) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "                  predicted\n"
                  "                  control  preterm\n"
                  "actual  control  %8lld %8lld\n"
                  "        preterm  %8lld %8lld\n",
                  static_cast<long long>(cm.tn), static_cast<long long>(cm.fp), static_cast<long long>(cm.fn),
                  static_cast<long long>(cm.tp));
    return buf;
}

std::string format_report(const MetricsReport& r) {
    std::ostringstream out;
    char buf[128];
    std::snprintf(buf, sizeof buf, "samples %zu  threshold %.3f\nIoU %.4f +/- %.4f\n", r.sample_count, r.threshold,
                  r.iou.mean, r.iou.sd);
    out << buf;
    out << "recall " << fmt_opt(r.rates.sensitivity) << "  precision " << fmt_opt(r.rates.precision)
        << "  specificity " << fmt_opt(r.rates.specificity) << "  fpr " << fmt_opt(r.rates.fpr) << "  auc "
        << fmt_opt(r.auc) << "\n";
    out << format_confusion(r.rates.confusion);
    return out.str();
}

}  // namespace cervinet

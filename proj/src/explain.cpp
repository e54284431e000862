#include "cervinet/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cervinet/errors.hpp"

namespace cervinet {

std::string to_string(CamClass c) { return c == CamClass::preterm ? "preterm" : "control"; }

CamClass cam_class_from_string(const std::string& name) {
    if (name == "preterm") return CamClass::preterm;
    if (name == "control") return CamClass::control;
    throw ConfigError("class", "expected \"control\" or \"preterm\", got \"" + name + "\"");
}

CamHeatmap grad_cam(ExplainableModel& model, const GrayImage& image, const std::string& target_layer, CamClass target) {
    const auto capture = model.expose_activations(target_layer);
    nn::Tensor x = nn::Tensor::nchw(1, 1, image.height, image.width);
    std::copy(image.data.begin(), image.data.end(), x.data());
    model.classification_logit(x);
    model.backward_classification(target == CamClass::preterm ? 1.0f : -1.0f);

    const nn::Tensor& a = capture->activation;
    const nn::Tensor& g = capture->gradient;
    if (a.rank() != 4 || !a.same_shape(g)) throw ShapeError("grad_cam: capture of '" + target_layer + "' is incomplete");
    const int channels = a.dim(1), h = a.dim(2), w = a.dim(3);
    const std::size_t hw = static_cast<std::size_t>(h) * w;

    GrayImage cam(w, h);
    for (int c = 0; c < channels; ++c) {
        const float* gc = g.data() + c * hw;
        const double weight = std::accumulate(gc, gc + hw, 0.0) / static_cast<double>(hw);
        const float* ac = a.data() + c * hw;
        for (std::size_t i = 0; i < hw; ++i) cam.data[i] += static_cast<float>(weight * ac[i]);
    }
    for (float& v : cam.data) v = std::max(v, 0.0f);

    CamHeatmap out;
    out.target_layer = target_layer;
    out.target = target;
    out.grid = resize_bilinear(cam, image.width, image.height);
    const float peak = *std::max_element(out.grid.data.begin(), out.grid.data.end());
    if (peak > 0.0f) {
        for (float& v : out.grid.data) v = std::clamp(v / peak, 0.0f, 1.0f);
    } else {
        std::fill(out.grid.data.begin(), out.grid.data.end(), 0.0f);
        out.zero_map = true;
    }
    return out;
}

void check_heatmap(const CamHeatmap& heatmap) {
    float peak = 0.0f;
    for (float v : heatmap.grid.data) {
        if (!(v >= 0.0f && v <= 1.0f)) throw DataError("heatmap value outside [0,1]");
        peak = std::max(peak, v);
    }
    if (heatmap.zero_map ? peak != 0.0f : peak != 1.0f) throw DataError("heatmap is not max-normalized");
}

std::array<float, 3> hot_color(float v) {
    const float t = std::clamp(v, 0.0f, 1.0f) * 3.0f;
    return {std::clamp(t, 0.0f, 1.0f), std::clamp(t - 1.0f, 0.0f, 1.0f), std::clamp(t - 2.0f, 0.0f, 1.0f)};
}

RgbImage overlay(const CamHeatmap& heatmap, const GrayImage& image, double alpha) {
    if (!heatmap.grid.same_shape(image)) throw ShapeError("overlay: heatmap and image sizes differ");
    const float a = static_cast<float>(alpha);
    RgbImage out(image.width, image.height);
    for (std::size_t i = 0; i < image.size(); ++i) {
        const auto c = hot_color(heatmap.grid.data[i]);
        for (int k = 0; k < 3; ++k) out.data[3 * i + k] = (1.0f - a) * image.data[i] + a * c[k];
    }
    return out;
}

double top_mass_inside(const GrayImage& heatmap, const BinaryMask& region, double top_fraction) {
    if (!heatmap.same_shape(region)) throw ShapeError("top_mass_inside: heatmap and region sizes differ");
    std::vector<std::size_t> order(heatmap.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return heatmap.data[l] > heatmap.data[r]; });
    const auto count = static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(order.size())));
    double inside = 0.0, total = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
        const double v = heatmap.data[order[k]];
        total += v;
        if (region.data[order[k]]) inside += v;
    }
    return total > 0.0 ? inside / total : 0.0;
}

nlohmann::json sidecar(const CamHeatmap& heatmap) {
    return {{"target_layer", heatmap.target_layer},
            {"class", to_string(heatmap.target)},
            {"normalization_flag", heatmap.zero_map ? "zero" : "max"},
            {"image_id", heatmap.image_id},
            {"width", heatmap.grid.width},
            {"height", heatmap.grid.height}};
}

void export_heatmap(const std::filesystem::path& stem, const CamHeatmap& heatmap, const GrayImage& image, double alpha) {
    const std::string base = stem.string();
    write_file(base + ".png", encode_png(heatmap.grid));
    write_file(base + "_overlay.png", encode_png(overlay(heatmap, image, alpha)));
    write_file(base + ".json", sidecar(heatmap).dump(2) + "\n");
}

}  // namespace cervinet

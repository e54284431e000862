#pragma once

#include <array>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "cervinet/image.hpp"
#include "cervinet/model.hpp"

namespace cervinet {

enum class CamClass { control, preterm };

std::string to_string(CamClass c);
/// Accepts "control" or "preterm"; throws ConfigError otherwise.
CamClass cam_class_from_string(const std::string& name);

struct CamHeatmap {
    /// Values in [0,1]; maximum 1 unless `zero_map`.
    GrayImage grid;
    std::string target_layer;
    CamClass target = CamClass::preterm;
    bool zero_map = false;
    std::string image_id;
};

/// Gradient-weighted activation map of `target_layer` for `image` (network
/// input size). The control class uses the negated logit.
CamHeatmap grad_cam(ExplainableModel& model, const GrayImage& image, const std::string& target_layer, CamClass target);

/// Throws DataError when a value is outside [0,1] or a nonzero map is not max-normalized.
void check_heatmap(const CamHeatmap& heatmap);

/// "hot" colormap: black, red, yellow, white.
std::array<float, 3> hot_color(float v);

/// (1 - alpha) * gray + alpha * hot(heatmap).
RgbImage overlay(const CamHeatmap& heatmap, const GrayImage& image, double alpha = 0.45);

/// Share of heatmap mass inside `region` among the `top_fraction` hottest pixels.
double top_mass_inside(const GrayImage& heatmap, const BinaryMask& region, double top_fraction = 0.1);

nlohmann::json sidecar(const CamHeatmap& heatmap);

/// Writes <stem>.png (heatmap), <stem>_overlay.png and <stem>.json.
void export_heatmap(const std::filesystem::path& stem, const CamHeatmap& heatmap, const GrayImage& image, double alpha = 0.45);

}  // namespace cervinet

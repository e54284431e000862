#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cervinet/image.hpp"

namespace cervinet {

struct Point {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Point&) const = default;
};

using ControlPoints = std::array<Point, 4>;

/// One expert outline: a cubic Bezier through P0..P3, closed by the chord P3->P0.
struct CervixAnnotation {
    std::string image_id;
    ControlPoints control_points{};
    std::string annotator_id;

    bool operator==(const CervixAnnotation&) const = default;
};

/// Bernstein-form evaluation. Throws std::domain_error for t outside [0,1].
Point eval_cubic_bezier(const ControlPoints& p, double t);

/// Closed outline polygon: the curve sampled at `samples` uniform parameters.
/// The closing chord back to the first vertex is implicit.
std::vector<Point> bezier_outline(const ControlPoints& p, int samples);

struct RasterResult {
    BinaryMask mask;
    /// Set when the outline encloses no area; `mask` is then all zeros.
    bool degenerate = false;
};

/// Even-odd scanline fill of `polygon` sampled at pixel centers (x+0.5, y+0.5).
/// Centers lying exactly on the outline count as inside.
BinaryMask fill_polygon_even_odd(std::span<const Point> polygon, int width, int height);

RasterResult annotation_to_mask(const CervixAnnotation& a, int width, int height, int samples = 256);

/// Pixel-wise majority vote across annotators; ties are included.
BinaryMask majority_vote(std::span<const BinaryMask> masks);

/// Throws ValidationError("control_points", ...) when any coordinate leaves [0,W]x[0,H].
void validate_bounds(const CervixAnnotation& a, int width, int height);

/// {image_id, annotator_id, control_points: [[x,y] x4]}
CervixAnnotation parse_annotation(const nlohmann::json& doc);
CervixAnnotation parse_annotation(const std::string& text);
nlohmann::json serialize_annotation(const CervixAnnotation& a);

}  // namespace cervinet

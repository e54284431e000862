#include "cervinet/annotations.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cervinet {

Point eval_cubic_bezier(const ControlPoints& p, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("bezier parameter t must lie in [0,1]");
    const double u = 1.0 - t;
    const double b0 = u * u * u;
    const double b1 = 3.0 * u * u * t;
    const double b2 = 3.0 * u * t * t;
    const double b3 = t * t * t;
    return {b0 * p[0].x + b1 * p[1].x + b2 * p[2].x + b3 * p[3].x,
            b0 * p[0].y + b1 * p[1].y + b2 * p[2].y + b3 * p[3].y};
}

std::vector<Point> bezier_outline(const ControlPoints& p, int samples) {
    if (samples < 2) throw std::invalid_argument("bezier_outline needs at least 2 samples");
    std::vector<Point> out;
    out.reserve(samples);
    for (int i = 0; i < samples; ++i) {
        double t = (i == samples - 1) ? 1.0 : static_cast<double>(i) / (samples - 1);
        out.push_back(eval_cubic_bezier(p, t));
    }
    return out;
}

BinaryMask fill_polygon_even_odd(std::span<const Point> polygon, int width, int height) {
    BinaryMask mask(width, height);
    const std::size_t n = polygon.size();
    if (n < 2) return mask;
    std::vector<double> crossings;
    for (int y = 0; y < height; ++y) {
        const double py = y + 0.5;
        crossings.clear();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            const Point& a = polygon[i];
            const Point& b = polygon[j];
            if ((a.y > py) != (b.y > py)) {
                crossings.push_back(a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y));
            } else if (a.y == py && b.y == py) {
                // Horizontal edge on the scanline: boundary pixels only.
                const double lo = std::min(a.x, b.x);
                const double hi = std::max(a.x, b.x);
                int x0 = std::max(0, static_cast<int>(std::floor(lo - 0.5)));
                int x1 = std::min(width - 1, static_cast<int>(std::ceil(hi)));
                for (int x = x0; x <= x1; ++x) {
                    const double px = x + 0.5;
                    if (px >= lo && px <= hi) mask.at(x, y) = 1;
                }
            }
        }
        for (const Point& v : polygon) {
            // A local y-extremum sitting exactly on a pixel center produces no crossing.
            if (v.y == py && v.x >= 0.5 && v.x - 0.5 == std::floor(v.x - 0.5) && v.x - 0.5 < width) {
                mask.at(static_cast<int>(v.x - 0.5), y) = 1;
            }
        }
        std::sort(crossings.begin(), crossings.end());
        for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
            const double lo = crossings[k];
            const double hi = crossings[k + 1];
            if (hi < 0.0 || lo > width) continue;
            int x0 = std::max(0, static_cast<int>(std::floor(lo - 0.5)));
            int x1 = std::min(width - 1, static_cast<int>(std::ceil(hi)));
            for (int x = x0; x <= x1; ++x) {
                const double px = x + 0.5;
                if (px >= lo && px <= hi) mask.at(x, y) = 1;
            }
        }
    }
    return mask;
}

namespace {

bool encloses_area(std::span<const Point> polygon) {
    const Point& o = polygon.front();
    double extent = 0.0;
    for (const Point& q : polygon) extent = std::max({extent, std::abs(q.x - o.x), std::abs(q.y - o.y)});
    if (extent == 0.0) return false;
    const double tolerance = 1e-12 * extent * extent;
    for (std::size_t i = 1; i + 1 < polygon.size(); ++i) {
        for (std::size_t j = i + 1; j < polygon.size(); ++j) {
            const double cross = (polygon[i].x - o.x) * (polygon[j].y - o.y) - (polygon[i].y - o.y) * (polygon[j].x - o.x);
            if (std::abs(cross) > tolerance) return true;
        }
    }
    return false;
}

}  // namespace

RasterResult annotation_to_mask(const CervixAnnotation& a, int width, int height, int samples) {
    if (width < 1 || height < 1) throw std::invalid_argument("mask dimensions must be at least 1x1");
    if (samples < 2) throw std::invalid_argument("samples must be at least 2");
    const std::vector<Point> outline = bezier_outline(a.control_points, samples);
    RasterResult result;
    // All Bezier points are convex combinations of the control points, so a
    // collinear control polygon is the only way to enclose nothing.
    const std::span<const Point> hull(a.control_points.data(), a.control_points.size());
    if (!encloses_area(hull) || !encloses_area(outline)) {
        result.mask = BinaryMask(width, height);
        result.degenerate = true;
        return result;
    }
    result.mask = fill_polygon_even_odd(outline, width, height);
    return result;
}

BinaryMask majority_vote(std::span<const BinaryMask> masks) {
    if (masks.empty()) throw std::invalid_argument("majority_vote needs at least one mask");
    BinaryMask out(masks.front().width, masks.front().height);
    std::vector<int> votes(out.size(), 0);
    for (const BinaryMask& m : masks) {
        if (!m.same_shape(out)) throw ShapeError("majority_vote: mask dimensions differ");
        for (std::size_t i = 0; i < m.size(); ++i) votes[i] += m.data[i] ? 1 : 0;
    }
    const int n = static_cast<int>(masks.size());
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = (2 * votes[i] >= n) ? 1 : 0;
    return out;
}

void validate_bounds(const CervixAnnotation& a, int width, int height) {
    for (std::size_t i = 0; i < a.control_points.size(); ++i) {
        const Point& p = a.control_points[i];
        if (!(p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height)) {
            throw ValidationError("control_points", "point " + std::to_string(i) + " outside image bounds " +
                                                        std::to_string(width) + "x" + std::to_string(height));
        }
    }
}

CervixAnnotation parse_annotation(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ValidationError("document", "expected a JSON object");
    CervixAnnotation a;
    auto require_string = [&](const char* key) {
        auto it = doc.find(key);
        if (it == doc.end() || !it->is_string()) throw ValidationError(key, "expected a string");
        return it->get<std::string>();
    };
    a.image_id = require_string("image_id");
    a.annotator_id = require_string("annotator_id");
    auto pts = doc.find("control_points");
    if (pts == doc.end() || !pts->is_array()) throw ValidationError("control_points", "expected an array");
    if (pts->size() != 4) throw ValidationError("control_points", "expected 4, got " + std::to_string(pts->size()));
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& p = (*pts)[i];
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
            throw ValidationError("control_points", "entry " + std::to_string(i) + " must be [x, y]");
        }
        const double x = p[0].get<double>();
        const double y = p[1].get<double>();
        if (!std::isfinite(x) || !std::isfinite(y)) {
            throw ValidationError("control_points", "entry " + std::to_string(i) + " is not finite");
        }
        a.control_points[i] = {x, y};
    }
    return a;
}

CervixAnnotation parse_annotation(const std::string& text) {
    nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw ValidationError("document", "malformed JSON");
    return parse_annotation(doc);
}

nlohmann::json serialize_annotation(const CervixAnnotation& a) {
    nlohmann::json pts = nlohmann::json::array();
    for (const Point& p : a.control_points) pts.push_back({p.x, p.y});
    return {{"image_id", a.image_id}, {"annotator_id", a.annotator_id}, {"control_points", pts}};
}

}  // namespace cervinet

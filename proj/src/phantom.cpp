#include "cervinet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "cervinet/random.hpp"

namespace cervinet {

void PhantomSpec::validate() const {
    if (image_size < 32) throw ConfigError("image_size", "must be at least 32");
    if (!(cervix_scale_min > 0.0)) throw ConfigError("cervix_scale_range", "min must be > 0");
    if (!(cervix_scale_min <= cervix_scale_max)) throw ConfigError("cervix_scale_range", "min must be <= max");
    if (!(cervix_scale_max < 1.0)) throw ConfigError("cervix_scale_range", "max must be < 1");
    if (!(preterm_fraction >= 0.0 && preterm_fraction <= 1.0)) throw ConfigError("preterm_fraction", "must lie in [0,1]");
    if (!(speckle_noise_sd >= 0.0)) throw ConfigError("speckle_noise_sd", "must be >= 0");
    if (!(class_signal_strength >= 0.0 && class_signal_strength <= 1.0)) {
        throw ConfigError("class_signal_strength", "must lie in [0,1]");
    }
    if (images_per_patient < 1) throw ConfigError("images_per_patient", "must be >= 1");
    if (!(marker_fraction >= 0.0 && marker_fraction <= 1.0)) throw ConfigError("marker_fraction", "must lie in [0,1]");
}

nlohmann::json to_json(const PhantomSpec& s) {
    return {{"image_size", s.image_size},
            {"speckle_noise_sd", s.speckle_noise_sd},
            {"cervix_scale_range", {s.cervix_scale_min, s.cervix_scale_max}},
            {"preterm_fraction", s.preterm_fraction},
            {"class_signal_strength", s.class_signal_strength},
            {"seed", s.seed},
            {"images_per_patient", s.images_per_patient},
            {"marker_fraction", s.marker_fraction}};
}

PhantomSpec phantom_spec_from_json(const nlohmann::json& doc, PhantomSpec s) {
    try {
        s.image_size = doc.value("image_size", s.image_size);
        s.speckle_noise_sd = doc.value("speckle_noise_sd", s.speckle_noise_sd);
        if (doc.contains("cervix_scale_range")) {
            const auto& r = doc.at("cervix_scale_range");
            if (!r.is_array() || r.size() != 2) throw ConfigError("cervix_scale_range", "expected [min, max]");
            s.cervix_scale_min = r[0].get<double>();
            s.cervix_scale_max = r[1].get<double>();
        }
        s.preterm_fraction = doc.value("preterm_fraction", s.preterm_fraction);
        s.class_signal_strength = doc.value("class_signal_strength", s.class_signal_strength);
        s.seed = doc.value("seed", s.seed);
        s.images_per_patient = doc.value("images_per_patient", s.images_per_patient);
        s.marker_fraction = doc.value("marker_fraction", s.marker_fraction);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("phantom", e.what());
    }
    return s;
}

int phantom_label(const PhantomSpec& spec, std::int64_t index) {
    // Low-discrepancy assignment: the preterm count over any prefix of n patients
    // stays within one of n * preterm_fraction.
    const std::int64_t patient = index / spec.images_per_patient;
    const double offset = unit_from_hash(derive_seed(spec.seed, {0x1abe1}));
    const double p = spec.preterm_fraction;
    const auto hi = static_cast<std::int64_t>(std::floor((patient + 1) * p + offset));
    const auto lo = static_cast<std::int64_t>(std::floor(patient * p + offset));
    return hi > lo ? 1 : 0;
}

namespace {

struct SmoothField {
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves;

    SmoothField(Rng& rng, int count) {
        std::uniform_real_distribution<double> freq(0.5, 3.0), phase(0.0, 2.0 * std::numbers::pi), sign(-1.0, 1.0);
        for (int i = 0; i < count; ++i) waves.push_back({freq(rng) * (sign(rng) < 0 ? -1 : 1), freq(rng), phase(rng), 1.0 / count});
    }

    // Roughly in [-1,1] over the unit square.
    double operator()(double u, double v) const {
        double acc = 0.0;
        for (const Wave& w : waves) acc += w.amp * std::cos(2.0 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase);
        return acc;
    }
};

double outline_area(const std::vector<Point>& poly) {
    double a = 0.0;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) a += poly[j].x * poly[i].y - poly[i].x * poly[j].y;
    return std::abs(a) / 2.0;
}

struct ShapeDraw {
    ControlPoints unit;
    double theta;
    double target_fraction;
    double center_u, center_v;
};

ShapeDraw draw_shape(const PhantomSpec& spec, Rng& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> jitter(0.0, 0.06);
    const double length = 1.6 + 0.4 * uni(rng);
    const double depth = 0.9 + 0.4 * uni(rng);
    const double spread = 0.7 + 0.4 * uni(rng);
    ShapeDraw d;
    d.unit = {Point{-length / 2, 0.0}, Point{-spread * length / 2, 4.0 / 3.0 * depth},
              Point{spread * length / 2, 4.0 / 3.0 * depth}, Point{length / 2, 0.0}};
    for (Point& p : d.unit) {
        p.x += jitter(rng);
        p.y += jitter(rng);
    }
    d.theta = (uni(rng) * 30.0 - 15.0) * std::numbers::pi / 180.0;
    d.target_fraction = spec.cervix_scale_min + (spec.cervix_scale_max - spec.cervix_scale_min) * uni(rng);
    d.center_u = uni(rng);
    d.center_v = uni(rng);
    return d;
}

ControlPoints place_shape(const ShapeDraw& d, double scale, int size) {
    const double c = std::cos(d.theta), s = std::sin(d.theta);
    ControlPoints pts;
    double minx = 1e300, maxx = -1e300, miny = 1e300, maxy = -1e300;
    for (std::size_t i = 0; i < 4; ++i) {
        const double x = scale * (c * d.unit[i].x - s * d.unit[i].y);
        const double y = scale * (s * d.unit[i].x + c * d.unit[i].y);
        pts[i] = {x, y};
        minx = std::min(minx, x);
        maxx = std::max(maxx, x);
        miny = std::min(miny, y);
        maxy = std::max(maxy, y);
    }
    const double margin = 1.0;
    auto pick = [&](double lo, double hi, double u) { return hi >= lo ? lo + (hi - lo) * u : (lo + hi) / 2.0; };
    const double ox = pick(margin - minx, size - margin - maxx, d.center_u);
    const double oy = pick(margin - miny, size - margin - maxy, d.center_v);
    for (Point& p : pts) {
        p.x = std::clamp(p.x + ox, 0.0, static_cast<double>(size));
        p.y = std::clamp(p.y + oy, 0.0, static_cast<double>(size));
    }
    return pts;
}

void paint_cross(RgbImage& img, BinaryMask& painted, int cx, int cy, int arm, const float color[3]) {
    for (int d = -arm; d <= arm; ++d) {
        for (auto [x, y] : {std::pair{cx + d, cy}, std::pair{cx, cy + d}}) {
            if (!img.contains(x, y)) continue;
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = color[c];
            painted.at(x, y) = 1;
        }
    }
}

}  // namespace

PhantomSample generate_sample(const PhantomSpec& spec, std::int64_t index) {
    spec.validate();
    if (index < 0) throw ConfigError("index", "must be >= 0");
    const int size = spec.image_size;
    const double area = static_cast<double>(size) * size;
    Rng rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(index)}));

    char buf[32];
    PhantomSample out;
    std::snprintf(buf, sizeof buf, "img%05lld", static_cast<long long>(index));
    out.sample.id = buf;
    out.sample.source_id = buf;
    std::snprintf(buf, sizeof buf, "pt%05lld", static_cast<long long>(index / spec.images_per_patient));
    out.sample.patient_id = buf;
    out.sample.label = phantom_label(spec, index);

    // Geometry: four control points -> annotation -> rasterized mask.
    const ShapeDraw shape = draw_shape(spec, rng);
    const double unit_area = outline_area(bezier_outline(shape.unit, 256));
    double scale = size * std::sqrt(shape.target_fraction / unit_area);
    out.annotation.image_id = out.sample.id;
    out.annotation.annotator_id = "phantom";
    for (int attempt = 0; attempt < 12; ++attempt) {
        out.annotation.control_points = place_shape(shape, scale, size);
        out.sample.mask = annotation_to_mask(out.annotation, size, size).mask;
        const double fraction = count_ones(out.sample.mask) / area;
        if (fraction >= spec.cervix_scale_min && fraction <= spec.cervix_scale_max) break;
        // Pull the target toward the middle of the allowed range and rescale.
        const double goal = 0.5 * (shape.target_fraction + 0.5 * (spec.cervix_scale_min + spec.cervix_scale_max));
        scale *= std::sqrt(goal / std::max(fraction, 1e-6));
    }

    // Cue location: centroid of the lowest 30% of the shape's rows.
    const BinaryMask& mask = out.sample.mask;
    int ymin = size, ymax = -1;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            if (mask.at(x, y)) {
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
            }
        }
    }
    double cue_x = size / 2.0, cue_y = size / 2.0;
    if (ymax >= 0) {
        const double cut = ymin + 0.7 * (ymax - ymin);
        double sx = 0, sy = 0, count = 0;
        for (int y = 0; y < size; ++y) {
            if (y < cut) continue;
            for (int x = 0; x < size; ++x) {
                if (mask.at(x, y)) {
                    sx += x + 0.5;
                    sy += y + 0.5;
                    count += 1;
                }
            }
        }
        cue_x = sx / count;
        cue_y = sy / count;
    }
    const double cue_radius = 0.11 * size;
    const double cue_sigma = cue_radius / 2.0;
    out.cue_region = BinaryMask(size, size);

    // Intensity model.
    const SmoothField background(rng, 4);
    const SmoothField tissue(rng, 4);
    GrayImage base(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double u = (x + 0.5) / size, v = (y + 0.5) / size;
            const double value = mask.at(x, y) ? 0.55 + 0.05 * tissue(u, v) : 0.15 + 0.07 * background(u, v) + 0.05 * (1.0 - v);
            base.at(x, y) = static_cast<float>(value);
        }
    }
    GrayImage blurred(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            double acc = 0;
            int n = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (base.contains(x + dx, y + dy)) {
                        acc += base.at(x + dx, y + dy);
                        ++n;
                    }
                }
            }
            blurred.at(x, y) = static_cast<float>(acc / n);
        }
    }
    std::normal_distribution<double> speckle(0.0, 1.0);
    GrayImage& image = out.sample.image;
    image = GrayImage(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double dx = x + 0.5 - cue_x, dy = y + 0.5 - cue_y;
            const double d2 = dx * dx + dy * dy;
            if (d2 <= cue_radius * cue_radius) out.cue_region.at(x, y) = 1;
            double value = blurred.at(x, y);
            if (out.sample.label == 1) value *= 1.0 - spec.class_signal_strength * std::exp(-d2 / (2.0 * cue_sigma * cue_sigma));
            value *= 1.0 + spec.speckle_noise_sd * speckle(rng);
            image.at(x, y) = static_cast<float>(std::clamp(value, 0.0, 1.0));
        }
    }

    // Optional embedded markers, drawn from an independent stream.
    out.marker_pixels = BinaryMask(size, size);
    Rng marker_rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(index), 0x3a4c}));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    if (uni(marker_rng) < spec.marker_fraction) {
        static constexpr float kYellow[3] = {1.0f, 1.0f, 0.0f};
        static constexpr float kGreen[3] = {0.0f, 1.0f, 0.0f};
        RgbImage marked = RgbImage::from_gray(image);
        const int crosses = 1 + static_cast<int>(uni(marker_rng) * 3.0);
        const int arm = std::max(2, size / 40);
        for (int i = 0; i < crosses; ++i) {
            const int cx = static_cast<int>(uni(marker_rng) * size);
            const int cy = static_cast<int>(uni(marker_rng) * size);
            paint_cross(marked, out.marker_pixels, cx, cy, arm, uni(marker_rng) < 0.5 ? kYellow : kGreen);
        }
        out.marked = std::move(marked);
    }
    return out;
}

std::vector<PhantomSample> generate_dataset(const PhantomSpec& spec, int n, const std::filesystem::path& out_dir) {
    spec.validate();
    if (n < 1) throw ConfigError("n", "must be >= 1");
    std::vector<PhantomSample> samples;
    samples.reserve(n);
    Manifest manifest;
    manifest.generator = to_json(spec);
    manifest.generator["n"] = n;
    manifest.generator["noise_model"] = kPhantomNoiseModel;
    for (int i = 0; i < n; ++i) {
        PhantomSample ps = generate_sample(spec, i);
        const std::string& id = ps.sample.id;
        ManifestEntry e;
        e.id = id;
        e.path = "images/" + id + ".png";
        e.mask_path = "masks/" + id + ".png";
        e.cue_path = "cues/" + id + ".png";
        e.annotation_path = "annotations/" + id + ".json";
        e.label = ps.sample.label;
        e.patient_id = ps.sample.patient_id;
        if (ps.marked) {
            write_png(out_dir / e.path, *ps.marked);
        } else {
            write_png(out_dir / e.path, ps.sample.image);
        }
        write_png(out_dir / e.mask_path, ps.sample.mask);
        write_png(out_dir / *e.cue_path, ps.cue_region);
        write_json_file(out_dir / *e.annotation_path, serialize_annotation(ps.annotation));
        manifest.entries.push_back(std::move(e));
        samples.push_back(std::move(ps));
    }
    write_manifest(out_dir / "manifest.json", manifest);
    return samples;
}

}  // namespace cervinet

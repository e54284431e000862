#include "cervinet/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <queue>
#include <set>
#include <unordered_map>

namespace cervinet {

// ---------------------------------------------------------------------------
// Markers
// ---------------------------------------------------------------------------

BinaryMask dilate(const BinaryMask& mask, int radius) {
    if (radius <= 0) return mask;
    BinaryMask out(mask.width, mask.height);
    const int r2 = radius * radius;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            for (int dy = -radius; dy <= radius; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx) {
                    if (dx * dx + dy * dy <= r2 && out.contains(x + dx, y + dy)) out.at(x + dx, y + dy) = 1;
                }
            }
        }
    }
    return out;
}

BinaryMask detect_markers(const RgbImage& image, const MarkerDetectionConfig& config) {
    BinaryMask raw(image.width, image.height);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const double r = image.at(x, y, 0), g = image.at(x, y, 1), b = image.at(x, y, 2);
            const double hi = std::max({r, g, b});
            const double lo = std::min({r, g, b});
            const double delta = hi - lo;
            if (hi <= 0.0 || delta <= 0.0) continue;
            const double saturation = delta / hi;
            if (saturation < config.min_saturation || hi < config.min_value) continue;
            double hue;
            if (hi == r) hue = 60.0 * std::fmod((g - b) / delta, 6.0);
            else if (hi == g) hue = 60.0 * ((b - r) / delta + 2.0);
            else hue = 60.0 * ((r - g) / delta + 4.0);
            if (hue < 0.0) hue += 360.0;
            if (config.yellow_hue.contains(hue) || config.green_hue.contains(hue)) raw.at(x, y) = 1;
        }
    }
    return dilate(raw, config.dilation_radius);
}

BinaryMask detect_markers(const GrayImage& image, const MarkerDetectionConfig&) {
    return BinaryMask(image.width, image.height);
}

// ---------------------------------------------------------------------------
// Fast-marching inpainting
// ---------------------------------------------------------------------------

namespace {

enum class Front : std::uint8_t { known, band, inside };

struct Marcher {
    int width, height;
    std::vector<Front> flag;
    std::vector<double> time;
    std::vector<double> value;

    std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
    bool in(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
    bool settled(int x, int y) const { return in(x, y) && flag[idx(x, y)] != Front::inside; }

    // First-order upwind solution of |grad T| = 1 from one horizontal and one vertical neighbor.
    double solve(int x1, int y1, int x2, int y2) const {
        constexpr double kFar = 1e6;
        const double a = settled(x1, y1) ? time[idx(x1, y1)] : kFar;
        const double b = settled(x2, y2) ? time[idx(x2, y2)] : kFar;
        if (a >= kFar && b >= kFar) return kFar;
        if (a >= kFar || b >= kFar) return 1.0 + std::min(a, b);
        const double d = a - b;
        if (std::abs(d) >= 1.0) return 1.0 + std::min(a, b);
        return 0.5 * (a + b + std::sqrt(2.0 - d * d));
    }

    double arrival(int x, int y) const {
        return std::min({solve(x - 1, y, x, y - 1), solve(x + 1, y, x, y - 1), solve(x - 1, y, x, y + 1),
                         solve(x + 1, y, x, y + 1)});
    }

    // One-sided where a neighbor is still unknown; zero when both are.
    template <typename Field>
    std::pair<double, double> gradient(int x, int y, const Field& field) const {
        auto axis = [&](int dx, int dy) {
            const bool fwd = settled(x + dx, y + dy), back = settled(x - dx, y - dy);
            if (fwd && back) return 0.5 * (field[idx(x + dx, y + dy)] - field[idx(x - dx, y - dy)]);
            if (fwd) return field[idx(x + dx, y + dy)] - field[idx(x, y)];
            if (back) return field[idx(x, y)] - field[idx(x - dx, y - dy)];
            return 0.0;
        };
        return {axis(1, 0), axis(0, 1)};
    }

    double estimate(int x, int y, int radius) const {
        auto [tx, ty] = gradient(x, y, time);
        const double tnorm = std::hypot(tx, ty);
        double wsum = 0.0, acc = 0.0;
        const double t_here = time[idx(x, y)];
        for (int dy = -radius; dy <= radius; ++dy) {
            for (int dx = -radius; dx <= radius; ++dx) {
                const int qx = x + dx, qy = y + dy;
                if ((dx == 0 && dy == 0) || dx * dx + dy * dy > radius * radius || !settled(qx, qy)) continue;
                // r points from q to p.
                const double rx = -dx, ry = -dy;
                const double rlen2 = rx * rx + ry * ry;
                double dir = tnorm > 0.0 ? std::abs(rx * tx + ry * ty) / (std::sqrt(rlen2) * tnorm) : 1.0;
                dir = std::max(dir, 1e-6);
                const double dst = 1.0 / rlen2;
                const double lev = 1.0 / (1.0 + std::abs(time[idx(qx, qy)] - t_here));
                const double w = dir * dst * lev;
                auto [gx, gy] = gradient(qx, qy, value);
                acc += w * (value[idx(qx, qy)] + gx * rx + gy * ry);
                wsum += w;
            }
        }
        return wsum > 0.0 ? acc / wsum : 0.0;
    }
};

}  // namespace

GrayImage telea_inpaint(const GrayImage& image, const BinaryMask& hole, int radius) {
    if (!image.same_shape(hole)) throw ShapeError("telea_inpaint: image and hole mask dimensions differ");
    if (radius < 1) throw ConfigError("inpaint_radius", "must be >= 1");
    const std::size_t holes = count_ones(hole);
    if (holes == 0) return image;
    if (holes == hole.size()) throw DataError("telea_inpaint: no boundary information (hole covers the whole image)");

    const int w = image.width, h = image.height;
    Marcher m{w, h, std::vector<Front>(image.size(), Front::known), std::vector<double>(image.size(), 0.0),
              std::vector<double>(image.data.begin(), image.data.end())};

    // Range of original known pixels around each hole; inpainted values never leave it.
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    const BinaryMask ring = dilate(hole, radius);
    for (std::size_t i = 0; i < image.size(); ++i) {
        if (hole.data[i]) {
            m.flag[i] = Front::inside;
            m.time[i] = 1e6;
        } else if (ring.data[i]) {
            lo = std::min(lo, static_cast<double>(image.data[i]));
            hi = std::max(hi, static_cast<double>(image.data[i]));
        }
    }

    using Entry = std::tuple<double, std::uint64_t, std::size_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    std::uint64_t seq = 0;
    constexpr int kNx[4] = {1, -1, 0, 0};
    constexpr int kNy[4] = {0, 0, 1, -1};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (hole.at(x, y)) continue;
            for (int k = 0; k < 4; ++k) {
                const int nx = x + kNx[k], ny = y + kNy[k];
                if (m.in(nx, ny) && hole.at(nx, ny)) {
                    m.flag[m.idx(x, y)] = Front::band;
                    heap.emplace(0.0, seq++, m.idx(x, y));
                    break;
                }
            }
        }
    }

    while (!heap.empty()) {
        auto [t, order, i] = heap.top();
        heap.pop();
        (void)order;
        if (m.flag[i] == Front::known) continue;
        m.flag[i] = Front::known;
        const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
        for (int k = 0; k < 4; ++k) {
            const int nx = x + kNx[k], ny = y + kNy[k];
            if (!m.in(nx, ny) || m.flag[m.idx(nx, ny)] != Front::inside) continue;
            const std::size_t n = m.idx(nx, ny);
            m.time[n] = m.arrival(nx, ny);
            // Estimate before flagging so the pixel's stale value never feeds a neighbor gradient.
            m.value[n] = std::clamp(m.estimate(nx, ny, radius), lo, hi);
            m.flag[n] = Front::band;
            heap.emplace(m.time[n], seq++, n);
        }
    }

    GrayImage out = image;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (hole.data[i]) out.data[i] = static_cast<float>(m.value[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Image preparation
// ---------------------------------------------------------------------------

namespace {

GrayImage clamp_unit(GrayImage image) {
    for (float& v : image.data) v = std::clamp(v, 0.0f, 1.0f);
    return image;
}

}  // namespace

GrayImage prepare_image(const RgbImage& image, const PrepareOptions& options) {
    if (options.target_size < 1) throw ConfigError("prepare.target_size", "must be >= 1");
    const BinaryMask markers = detect_markers(image, options.markers);
    GrayImage gray = to_gray(image);
    if (count_ones(markers) > 0) gray = telea_inpaint(gray, markers, options.inpaint_radius);
    return clamp_unit(resize_bilinear(gray, options.target_size, options.target_size));
}

GrayImage prepare_image(const GrayImage& image, const PrepareOptions& options) {
    if (options.target_size < 1) throw ConfigError("prepare.target_size", "must be >= 1");
    return clamp_unit(resize_bilinear(image, options.target_size, options.target_size));
}

GrayImage prepare_image_file(const std::filesystem::path& path, const PrepareOptions& options) {
    return prepare_image(read_png_rgb(path), options);
}

BinaryMask resize_nearest(const BinaryMask& mask, int width, int height) {
    if (mask.width == width && mask.height == height) return mask;
    BinaryMask out(width, height);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(mask.height - 1, static_cast<int>((y + 0.5) * mask.height / height));
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(mask.width - 1, static_cast<int>((x + 0.5) * mask.width / width));
            out.at(x, y) = mask.at(sx, sy);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

AugmentationPolicy AugmentationPolicy::identity() {
    AugmentationPolicy p;
    p.rotation_probability = p.crop_probability = p.brightness_probability = p.contrast_probability =
        p.noise_probability = 0.0;
    return p;
}

void AugmentationPolicy::validate() const {
    auto prob = [](double p, const char* field) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(field, "probability must lie in [0,1]");
    };
    auto ordered = [](const Interval& i, const char* field) {
        if (!(i.min <= i.max)) throw ConfigError(field, "interval min must be <= max");
    };
    ordered(rotation_degrees, "augmentation.rotation_degrees");
    if (rotation_degrees.min < -180.0 || rotation_degrees.max > 180.0) {
        throw ConfigError("augmentation.rotation_degrees", "must lie within [-180, 180]");
    }
    ordered(crop_fraction, "augmentation.crop_fraction");
    if (!(crop_fraction.min > 0.0 && crop_fraction.max <= 1.0)) {
        throw ConfigError("augmentation.crop_fraction", "must lie within (0, 1]");
    }
    ordered(brightness_delta, "augmentation.brightness_delta");
    ordered(contrast_factor, "augmentation.contrast_factor");
    if (contrast_factor.min < 0.0) throw ConfigError("augmentation.contrast_factor", "must be >= 0");
    ordered(noise_sd, "augmentation.noise_sd");
    if (noise_sd.min < 0.0) throw ConfigError("augmentation.noise_sd", "must be >= 0");
    prob(rotation_probability, "augmentation.rotation_probability");
    prob(crop_probability, "augmentation.crop_probability");
    prob(brightness_probability, "augmentation.brightness_probability");
    prob(contrast_probability, "augmentation.contrast_probability");
    prob(noise_probability, "augmentation.noise_probability");
}

namespace {

nlohmann::json interval_json(const Interval& i) { return {i.min, i.max}; }

Interval interval_from(const nlohmann::json& doc, const char* key, Interval fallback) {
    if (!doc.contains(key)) return fallback;
    const auto& v = doc.at(key);
    if (!v.is_array() || v.size() != 2) throw ConfigError(std::string("augmentation.") + key, "expected [min, max]");
    return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace

nlohmann::json to_json(const AugmentationPolicy& p) {
    return {{"rotation_degrees", interval_json(p.rotation_degrees)},
            {"rotation_probability", p.rotation_probability},
            {"crop_fraction", interval_json(p.crop_fraction)},
            {"crop_probability", p.crop_probability},
            {"brightness_delta", interval_json(p.brightness_delta)},
            {"brightness_probability", p.brightness_probability},
            {"contrast_factor", interval_json(p.contrast_factor)},
            {"contrast_probability", p.contrast_probability},
            {"noise_sd", interval_json(p.noise_sd)},
            {"noise_probability", p.noise_probability}};
}

AugmentationPolicy augmentation_policy_from_json(const nlohmann::json& doc, AugmentationPolicy p) {
    try {
        p.rotation_degrees = interval_from(doc, "rotation_degrees", p.rotation_degrees);
        p.rotation_probability = doc.value("rotation_probability", p.rotation_probability);
        p.crop_fraction = interval_from(doc, "crop_fraction", p.crop_fraction);
        p.crop_probability = doc.value("crop_probability", p.crop_probability);
        p.brightness_delta = interval_from(doc, "brightness_delta", p.brightness_delta);
        p.brightness_probability = doc.value("brightness_probability", p.brightness_probability);
        p.contrast_factor = interval_from(doc, "contrast_factor", p.contrast_factor);
        p.contrast_probability = doc.value("contrast_probability", p.contrast_probability);
        p.noise_sd = interval_from(doc, "noise_sd", p.noise_sd);
        p.noise_probability = doc.value("noise_probability", p.noise_probability);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("augmentation", e.what());
    }
    p.validate();
    return p;
}

namespace {

// Maps an output pixel center to source coordinates.
struct InverseMap {
    double cx, cy, cos_t, sin_t, side_x, side_y, off_x, off_y, scale_x, scale_y;

    InverseMap(const GeometricTransform& t, int width, int height) {
        cx = width / 2.0;
        cy = height / 2.0;
        const double theta = t.rotation_degrees * std::numbers::pi / 180.0;
        cos_t = std::cos(theta);
        sin_t = std::sin(theta);
        const double side = std::sqrt(t.crop_fraction);
        side_x = side * width;
        side_y = side * height;
        off_x = (width - side_x) * t.crop_u;
        off_y = (height - side_y) * t.crop_v;
        scale_x = side_x / width;
        scale_y = side_y / height;
    }

    std::pair<double, double> operator()(int x, int y) const {
        const double px = off_x + (x + 0.5) * scale_x - cx;
        const double py = off_y + (y + 0.5) * scale_y - cy;
        // Output is the source rotated by +theta, so sample at R(-theta) * p.
        return {cos_t * px + sin_t * py + cx, -sin_t * px + cos_t * py + cy};
    }
};

}  // namespace

GrayImage apply_geometric(const GrayImage& image, const GeometricTransform& t) {
    if (t.is_identity()) return image;
    const InverseMap map(t, image.width, image.height);
    GrayImage out(image.width, image.height);
    auto fetch = [&](int x, int y) -> double { return image.contains(x, y) ? image.at(x, y) : 0.0; };
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            auto [sx, sy] = map(x, y);
            const double fx = sx - 0.5, fy = sy - 0.5;
            const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
            const double wx = fx - x0, wy = fy - y0;
            const double top = fetch(x0, y0) * (1 - wx) + fetch(x0 + 1, y0) * wx;
            const double bottom = fetch(x0, y0 + 1) * (1 - wx) + fetch(x0 + 1, y0 + 1) * wx;
            out.at(x, y) = static_cast<float>(top * (1 - wy) + bottom * wy);
        }
    }
    return out;
}

BinaryMask apply_geometric(const BinaryMask& mask, const GeometricTransform& t) {
    if (t.is_identity()) return mask;
    const InverseMap map(t, mask.width, mask.height);
    BinaryMask out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            auto [sx, sy] = map(x, y);
            const int ix = static_cast<int>(std::floor(sx)), iy = static_cast<int>(std::floor(sy));
            out.at(x, y) = mask.contains(ix, iy) && mask.at(ix, iy) ? 1 : 0;
        }
    }
    return out;
}

Sample augment(const Sample& sample, const AugmentationPolicy& policy, Rng& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto draw = [&](const Interval& i) { return i.min + (i.max - i.min) * uni(rng); };
    // Fixed draw order keeps streams aligned regardless of which ops fire.
    const bool rotate = uni(rng) < policy.rotation_probability;
    const double angle = draw(policy.rotation_degrees);
    const bool crop = uni(rng) < policy.crop_probability;
    const double crop_fraction = draw(policy.crop_fraction);
    const double crop_u = uni(rng), crop_v = uni(rng);
    const bool contrast = uni(rng) < policy.contrast_probability;
    const double contrast_factor = draw(policy.contrast_factor);
    const bool brighten = uni(rng) < policy.brightness_probability;
    const double brightness = draw(policy.brightness_delta);
    const bool noisy = uni(rng) < policy.noise_probability;
    const double noise_sd = draw(policy.noise_sd);
    const std::uint64_t noise_seed = rng();

    Sample out = sample;
    GeometricTransform t;
    if (rotate) t.rotation_degrees = angle;
    if (crop) {
        t.crop_fraction = crop_fraction;
        t.crop_u = crop_u;
        t.crop_v = crop_v;
    }
    out.image = apply_geometric(sample.image, t);
    out.mask = apply_geometric(sample.mask, t);

    if (contrast) {
        const double mean = std::accumulate(out.image.data.begin(), out.image.data.end(), 0.0) / out.image.size();
        for (float& v : out.image.data) v = static_cast<float>((v - mean) * contrast_factor + mean);
    }
    if (brighten) {
        for (float& v : out.image.data) v = static_cast<float>(v + brightness);
    }
    if (noisy && noise_sd > 0.0) {
        Rng noise_rng(noise_seed);
        std::normal_distribution<double> noise(0.0, noise_sd);
        for (float& v : out.image.data) v = static_cast<float>(v + noise(noise_rng));
    }
    if (contrast || brighten || noisy) {
        for (float& v : out.image.data) v = std::clamp(v, 0.0f, 1.0f);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Class balancing
// ---------------------------------------------------------------------------

namespace {

std::uint64_t string_key(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    return h;
}

}  // namespace

std::vector<Sample> balance_split(const std::vector<Sample>& split, const std::string& split_name,
                                  const AugmentationPolicy& policy, const BalanceOptions& options) {
    policy.validate();
    if (!(options.target_ratio > 0.0 && options.target_ratio < 1.0)) {
        throw ConfigError("balance.target_ratio", "must lie in (0,1)");
    }
    if (!(options.majority_multiplier >= 1.0)) throw ConfigError("balance.majority_multiplier", "must be >= 1");
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < split.size(); ++i) by_class[split[i].label == 1 ? 1 : 0].push_back(i);
    if (by_class[0].empty() || by_class[1].empty()) {
        throw DataError("split '" + split_name + "' contains a single class; cannot balance");
    }
    const int majority = by_class[1].size() > by_class[0].size() ? 1 : 0;
    const int minority = 1 - majority;
    const auto majority_final = static_cast<std::size_t>(std::llround(by_class[majority].size() * options.majority_multiplier));
    const auto minority_final = static_cast<std::size_t>(
        std::llround(static_cast<double>(majority_final) * options.target_ratio / (1.0 - options.target_ratio)));

    std::vector<Sample> out = split;
    const std::uint64_t split_seed = derive_seed(options.seed, {string_key(split_name)});
    std::uint64_t copy_counter = 0;
    auto extend = [&](int cls, std::size_t final_count) {
        const std::vector<std::size_t>& sources = by_class[cls];
        if (final_count <= sources.size()) return;
        std::vector<std::size_t> order = sources;
        Rng shuffle_rng(derive_seed(split_seed, {static_cast<std::uint64_t>(cls), 0x5eed}));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        std::unordered_map<std::size_t, int> generation;
        for (std::size_t k = 0; k < final_count - sources.size(); ++k) {
            const Sample& src = split[order[k % order.size()]];
            Rng rng(derive_seed(split_seed, {copy_counter++}));
            Sample copy = augment(src, policy, rng);
            copy.id = src.id + "-aug" + std::to_string(++generation[order[k % order.size()]]);
            copy.source_id = src.source_id;
            out.push_back(std::move(copy));
        }
    };
    extend(majority, majority_final);
    extend(minority, minority_final);
    return out;
}

SplitSamples balance_and_augment(const SplitSamples& splits, const AugmentationPolicy& policy,
                                 const BalanceOptions& options) {
    SplitSamples out;
    for (const auto& [name, samples] : splits) out[name] = balance_split(samples, name, policy, options);
    return out;
}

// ---------------------------------------------------------------------------
// Patient-level split
// ---------------------------------------------------------------------------

const std::vector<std::string>& SplitManifest::ids(const std::string& split) const {
    auto it = splits.find(split);
    if (it == splits.end()) throw LookupError("unknown split '" + split + "' (expected train, val or test)");
    return it->second;
}

nlohmann::json to_json(const SplitManifest& m) {
    nlohmann::json splits = nlohmann::json::object();
    for (const auto& [name, ids] : m.splits) splits[name] = ids;
    return {{"seed", m.seed}, {"fractions", m.fractions}, {"splits", splits}};
}

SplitManifest split_manifest_from_json(const nlohmann::json& doc) {
    SplitManifest m;
    try {
        m.seed = doc.at("seed").get<std::uint64_t>();
        const auto& f = doc.at("fractions");
        for (std::size_t i = 0; i < 3; ++i) m.fractions[i] = f.at(i).get<double>();
        for (const auto& [name, ids] : doc.at("splits").items()) m.splits[name] = ids.get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed split manifest: ") + e.what());
    }
    return m;
}

std::array<std::size_t, 3> split_targets(std::size_t n, const std::array<double, 3>& fractions) {
    std::array<std::size_t, 3> targets{};
    std::array<double, 3> remainder{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = fractions[i] * static_cast<double>(n);
        // Nudge to absorb representation error in products like 0.6 * 10.
        targets[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        remainder[i] = exact - static_cast<double>(targets[i]);
        assigned += targets[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++targets[order[k % 3]];
    return targets;
}

SplitManifest split_by_patient(const std::vector<SampleRef>& samples, std::array<double, 3> fractions, std::uint64_t seed) {
    double sum = 0.0;
    for (double f : fractions) {
        if (!(f > 0.0)) throw ConfigError("split.fractions", "every fraction must be positive");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split.fractions", "must sum to 1");

    std::map<std::string, std::vector<std::string>> by_patient;
    for (const SampleRef& s : samples) by_patient[s.patient_id].push_back(s.id);
    if (by_patient.size() < 3) {
        throw DataError("split_by_patient: " + std::to_string(by_patient.size()) + " patients cannot fill 3 splits");
    }
    std::vector<std::string> patients;
    for (const auto& [p, ids] : by_patient) patients.push_back(p);
    Rng rng(derive_seed(seed, {0x5917}));
    std::shuffle(patients.begin(), patients.end(), rng);

    const auto targets = split_targets(samples.size(), fractions);
    std::array<std::int64_t, 3> filled{};
    SplitManifest m;
    m.seed = seed;
    m.fractions = fractions;
    for (const std::string& name : kSplitNames) m.splits[name];
    // Seed each split with one patient so none stays empty.
    std::size_t next = 0;
    for (std::size_t s = 0; s < 3; ++s, ++next) {
        for (const std::string& id : by_patient[patients[next]]) m.splits[kSplitNames[s]].push_back(id);
        filled[s] += static_cast<std::int64_t>(by_patient[patients[next]].size());
    }
    for (; next < patients.size(); ++next) {
        std::size_t best = 0;
        std::int64_t best_deficit = std::numeric_limits<std::int64_t>::min();
        for (std::size_t s = 0; s < 3; ++s) {
            const std::int64_t deficit = static_cast<std::int64_t>(targets[s]) - filled[s];
            if (deficit > best_deficit) {
                best_deficit = deficit;
                best = s;
            }
        }
        for (const std::string& id : by_patient[patients[next]]) m.splits[kSplitNames[best]].push_back(id);
        filled[best] += static_cast<std::int64_t>(by_patient[patients[next]].size());
    }
    for (auto& [name, ids] : m.splits) std::sort(ids.begin(), ids.end());
    return m;
}

std::vector<Sample> select_split(const std::vector<Sample>& samples, const SplitManifest& manifest, const std::string& split) {
    const auto& ids = manifest.ids(split);
    std::unordered_map<std::string, const Sample*> index;
    for (const Sample& s : samples) index[s.id] = &s;
    std::vector<Sample> out;
    out.reserve(ids.size());
    for (const std::string& id : ids) {
        auto it = index.find(id);
        if (it == index.end()) throw LookupError("split '" + split + "' references unknown sample '" + id + "'");
        out.push_back(*it->second);
    }
    return out;
}

}  // namespace cervinet

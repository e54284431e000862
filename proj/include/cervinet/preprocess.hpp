#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cervinet/dataset.hpp"
#include "cervinet/random.hpp"

namespace cervinet {

// ---------------------------------------------------------------------------
// Embedded marker removal
// ---------------------------------------------------------------------------

struct Interval {
    double min = 0.0;
    double max = 0.0;

    bool contains(double v) const { return v >= min && v <= max; }
    bool operator==(const Interval&) const = default;
};

/// HSV bands (hue in degrees) that identify the yellow and green crosses.
struct MarkerDetectionConfig {
    Interval yellow_hue{40.0, 80.0};
    Interval green_hue{80.0, 140.0};
    double min_saturation = 0.4;
    double min_value = 0.25;
    int dilation_radius = 2;
};

BinaryMask detect_markers(const RgbImage& image, const MarkerDetectionConfig& config = {});
/// Grayscale images carry no chroma; the result is always empty.
BinaryMask detect_markers(const GrayImage& image, const MarkerDetectionConfig& config = {});

/// Disk dilation, clipped to the grid.
BinaryMask dilate(const BinaryMask& mask, int radius);

/// Fast-marching inpainting: hole pixels are filled in order of increasing
/// distance from the hole boundary, each from the known pixels within
/// `radius`. Pixels outside the hole are returned untouched.
GrayImage telea_inpaint(const GrayImage& image, const BinaryMask& hole, int radius = 3);

struct PrepareOptions {
    int target_size = 256;
    int inpaint_radius = 3;
    MarkerDetectionConfig markers;
};

/// Marker removal, grayscale conversion, bilinear resize, clamp to [0,1].
GrayImage prepare_image(const RgbImage& image, const PrepareOptions& options = {});
GrayImage prepare_image(const GrayImage& image, const PrepareOptions& options = {});
/// Throws IoError naming the path when the file cannot be read.
GrayImage prepare_image_file(const std::filesystem::path& path, const PrepareOptions& options = {});
/// Nearest-neighbor resize for masks.
BinaryMask resize_nearest(const BinaryMask& mask, int width, int height);

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentationPolicy {
    Interval rotation_degrees{-15.0, 15.0};
    double rotation_probability = 0.8;
    /// Fraction of the image area kept by a crop (resized back to full size).
    Interval crop_fraction{0.8, 1.0};
    double crop_probability = 0.5;
    Interval brightness_delta{-0.08, 0.08};
    double brightness_probability = 0.5;
    Interval contrast_factor{0.85, 1.15};
    double contrast_probability = 0.5;
    Interval noise_sd{0.0, 0.03};
    double noise_probability = 0.5;

    /// Every probability zero.
    static AugmentationPolicy identity();
    void validate() const;
};

nlohmann::json to_json(const AugmentationPolicy& p);
AugmentationPolicy augmentation_policy_from_json(const nlohmann::json& doc, AugmentationPolicy base = {});

/// Crop window followed by a rotation about the image center.
struct GeometricTransform {
    double rotation_degrees = 0.0;
    double crop_fraction = 1.0;
    /// Crop window position in [0,1] across the free range.
    double crop_u = 0.5;
    double crop_v = 0.5;

    bool is_identity() const { return rotation_degrees == 0.0 && crop_fraction == 1.0; }
};

GrayImage apply_geometric(const GrayImage& image, const GeometricTransform& t);
BinaryMask apply_geometric(const BinaryMask& mask, const GeometricTransform& t);

/// Same geometric transform for image (bilinear) and mask (nearest);
/// photometric changes touch the image only.
Sample augment(const Sample& sample, const AugmentationPolicy& policy, Rng& rng);

struct BalanceOptions {
    /// Minority share of each split after balancing.
    double target_ratio = 0.5;
    /// Majority class grows to round(count * multiplier) via augmented copies.
    double majority_multiplier = 1.0;
    std::uint64_t seed = 0;
};

using SplitSamples = std::map<std::string, std::vector<Sample>>;

/// Adds augmented copies within one split. Throws DataError naming the split
/// when it holds a single class.
std::vector<Sample> balance_split(const std::vector<Sample>& split, const std::string& split_name,
                                  const AugmentationPolicy& policy, const BalanceOptions& options);
SplitSamples balance_and_augment(const SplitSamples& splits, const AugmentationPolicy& policy,
                                 const BalanceOptions& options);

// ---------------------------------------------------------------------------
// Patient-level splitting
// ---------------------------------------------------------------------------

inline const std::array<std::string, 3> kSplitNames{"train", "val", "test"};

struct SplitManifest {
    std::uint64_t seed = 0;
    std::array<double, 3> fractions{0.6, 0.2, 0.2};
    std::map<std::string, std::vector<std::string>> splits;

    const std::vector<std::string>& ids(const std::string& split) const;
};

nlohmann::json to_json(const SplitManifest& m);
SplitManifest split_manifest_from_json(const nlohmann::json& doc);

struct SampleRef {
    std::string id;
    std::string patient_id;
};

/// Shuffles patients with `seed` and assigns each to the split with the
/// largest remaining image deficit.
SplitManifest split_by_patient(const std::vector<SampleRef>& samples, std::array<double, 3> fractions, std::uint64_t seed);

/// Image-count targets: floor, then the remainder goes to the largest fractional parts.
std::array<std::size_t, 3> split_targets(std::size_t n, const std::array<double, 3>& fractions);

/// Samples of `split`, in manifest order.
std::vector<Sample> select_split(const std::vector<Sample>& samples, const SplitManifest& manifest, const std::string& split);

}  // namespace cervinet

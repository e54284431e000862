#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "cervinet/annotations.hpp"
#include "cervinet/dataset.hpp"

namespace cervinet {

/// Parameters of the synthetic ultrasound-like phantom generator.
struct PhantomSpec {
    int image_size = 256;
    double speckle_noise_sd = 0.2;
    double cervix_scale_min = 0.12;
    double cervix_scale_max = 0.3;
    double preterm_fraction = 35.0 / 354.0;
    /// Depth of the hypoechoic preterm patch, as a fraction of tissue brightness.
    double class_signal_strength = 0.5;
    std::uint64_t seed = 0;
    int images_per_patient = 1;
    /// Probability that an image carries painted yellow/green crosses.
    double marker_fraction = 0.0;

    /// Throws ConfigError naming the violated field.
    void validate() const;
};

nlohmann::json to_json(const PhantomSpec& spec);
PhantomSpec phantom_spec_from_json(const nlohmann::json& doc, PhantomSpec base = {});

struct PhantomSample {
    Sample sample;
    /// The annotation the mask was rasterized from.
    CervixAnnotation annotation;
    /// Where the preterm cue is (or would be, for controls) planted.
    BinaryMask cue_region;
    /// RGB rendering with painted markers, when this sample received any.
    std::optional<RgbImage> marked;
    BinaryMask marker_pixels;
};

int phantom_label(const PhantomSpec& spec, std::int64_t index);

PhantomSample generate_sample(const PhantomSpec& spec, std::int64_t index);

/// Writes images/, masks/, cues/, annotations/ and manifest.json under `out_dir`.
std::vector<PhantomSample> generate_dataset(const PhantomSpec& spec, int n, const std::filesystem::path& out_dir);

/// Multiplicative speckle model description recorded in every manifest.
inline constexpr const char* kPhantomNoiseModel =
    "multiplicative gaussian: I * (1 + sd * N(0,1)), clipped to [0,1]";

}  // namespace cervinet

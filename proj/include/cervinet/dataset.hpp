#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cervinet/image.hpp"

namespace cervinet {

enum class BirthLabel : int { control = 0, preterm = 1 };

/// One training example: grayscale image, cervix mask, birth label.
struct Sample {
    std::string id;
    GrayImage image;
    BinaryMask mask;
    int label = 0;
    std::string patient_id;
    /// Id of the original image this one was augmented from (itself for originals).
    std::string source_id;

    /// Throws DataError when shapes differ or values leave their domain.
    void validate() const;
};

struct ManifestEntry {
    std::string id;
    std::string path;
    std::string mask_path;
    int label = 0;
    std::string patient_id;
    std::optional<std::string> cue_path;
    std::optional<std::string> annotation_path;
};

/// Dataset manifest: file paths are relative to the manifest's directory.
struct Manifest {
    nlohmann::json generator = nlohmann::json::object();
    std::vector<ManifestEntry> entries;

    const ManifestEntry& find(const std::string& id) const;
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& doc);
void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

/// Loads every entry's image (as grayscale) and mask.
std::vector<Sample> load_samples(const std::filesystem::path& manifest_path);
Sample load_sample(const std::filesystem::path& root, const ManifestEntry& entry);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace cervinet

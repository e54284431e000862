#include "cervinet/dataset.hpp"

#include <algorithm>
#include <cmath>

namespace cervinet {

void Sample::validate() const {
    if (!image.same_shape(mask)) throw DataError(id + ": image and mask dimensions differ");
    if (!is_binary(mask)) throw DataError(id + ": mask is not binary");
    if (label != 0 && label != 1) throw DataError(id + ": label must be 0 or 1");
    for (float v : image.data) {
        if (!std::isfinite(v)) throw DataError(id + ": non-finite intensity");
    }
}

const ManifestEntry& Manifest::find(const std::string& id) const {
    auto it = std::find_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.id == id; });
    if (it == entries.end()) throw LookupError("unknown sample id '" + id + "'");
    return *it;
}

nlohmann::json to_json(const Manifest& m) {
    nlohmann::json samples = nlohmann::json::array();
    for (const ManifestEntry& e : m.entries) {
        nlohmann::json j = {{"id", e.id},         {"path", e.path},
                            {"mask_path", e.mask_path}, {"label", e.label},
                            {"patient_id", e.patient_id}};
        if (e.cue_path) j["cue_path"] = *e.cue_path;
        if (e.annotation_path) j["annotation_path"] = *e.annotation_path;
        samples.push_back(std::move(j));
    }
    return {{"generator", m.generator}, {"samples", samples}};
}

Manifest manifest_from_json(const nlohmann::json& doc) {
    Manifest m;
    try {
        if (doc.contains("generator")) m.generator = doc.at("generator");
        for (const auto& j : doc.at("samples")) {
            ManifestEntry e;
            e.id = j.at("id").get<std::string>();
            e.path = j.at("path").get<std::string>();
            e.mask_path = j.at("mask_path").get<std::string>();
            e.label = j.at("label").get<int>();
            e.patient_id = j.at("patient_id").get<std::string>();
            if (j.contains("cue_path")) e.cue_path = j.at("cue_path").get<std::string>();
            if (j.contains("annotation_path")) e.annotation_path = j.at("annotation_path").get<std::string>();
            m.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed manifest: ") + ex.what());
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) { write_json_file(path, to_json(m)); }

Manifest read_manifest(const std::filesystem::path& path) { return manifest_from_json(read_json_file(path)); }

Sample load_sample(const std::filesystem::path& root, const ManifestEntry& entry) {
    Sample s;
    s.id = entry.id;
    s.source_id = entry.id;
    s.label = entry.label;
    s.patient_id = entry.patient_id;
    s.image = read_png_gray(root / entry.path);
    s.mask = read_png_mask(root / entry.mask_path);
    s.validate();
    return s;
}

std::vector<Sample> load_samples(const std::filesystem::path& manifest_path) {
    const Manifest m = read_manifest(manifest_path);
    const auto root = manifest_path.parent_path();
    std::vector<Sample> out;
    out.reserve(m.entries.size());
    for (const ManifestEntry& e : m.entries) out.push_back(load_sample(root, e));
    return out;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw DataError("malformed JSON in " + path.string());
    return doc;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
    write_file(path, doc.dump(2) + "\n");
}

}  // namespace cervinet

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cervinet/annotations.hpp"

namespace httplib {
class Server;
}

namespace cervinet {

struct StoredAnnotation {
    CervixAnnotation annotation;
    std::uint64_t version = 0;
};

/// Annotation document plus its server-assigned version.
nlohmann::json to_json(const StoredAnnotation& s);

struct ImageRecord {
    std::string id;
    std::filesystem::path path;
    int width = 0;
    int height = 0;
};

/// File-per-annotation store under <root>/annotation_store/<image>/<annotator>.json,
/// indexed from <root>/manifest.json.
class AnnotationStore {
public:
    explicit AnnotationStore(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    const std::vector<ImageRecord>& images() const { return images_; }
    /// Throws LookupError for unknown ids.
    const ImageRecord& image(const std::string& id) const;

    /// Sorted by annotator id.
    std::vector<StoredAnnotation> annotations(const std::string& image_id) const;
    std::optional<StoredAnnotation> annotation(const std::string& image_id, const std::string& annotator) const;

    /// Validates and persists; the version is one more than the previous one for this key.
    StoredAnnotation put(const CervixAnnotation& a);

    /// Throws LookupError when the image or annotation does not exist.
    RasterResult mask(const std::string& image_id, const std::string& annotator) const;
    BinaryMask majority_mask(const std::string& image_id) const;

    std::filesystem::path annotation_path(const std::string& image_id, const std::string& annotator) const;

private:
    using Key = std::pair<std::string, std::string>;

    std::mutex& key_mutex(const Key& key);

    std::filesystem::path root_;
    std::vector<ImageRecord> images_;
    std::map<std::string, std::size_t> by_id_;

    mutable std::shared_mutex index_mutex_;
    std::map<Key, std::shared_ptr<const StoredAnnotation>> index_;

    std::mutex locks_mutex_;
    std::map<Key, std::unique_ptr<std::mutex>> locks_;
};

/// Throws ValidationError naming `field` unless `id` is a safe path component.
void validate_identifier(const std::string& id, const std::string& field);

/// HTTP front end of an AnnotationStore.
class AnnotateServer {
public:
    explicit AnnotateServer(AnnotationStore& store, std::string cors_origin = "*");
    ~AnnotateServer();

    AnnotateServer(const AnnotateServer&) = delete;
    AnnotateServer& operator=(const AnnotateServer&) = delete;

    /// Binds to `port` (0 picks a free one) and returns the bound port, or -1.
    int bind(const std::string& host, int port);
    /// Blocks serving requests until stop().
    bool listen();
    void stop();

private:
    void install_routes();

    AnnotationStore& store_;
    std::string cors_origin_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace cervinet

#include "cervinet/service.hpp"

#include <algorithm>
#include <cctype>

#include <httplib.h>

#include "cervinet/dataset.hpp"
#include "cervinet/errors.hpp"
#include "cervinet/image.hpp"

namespace cervinet {

namespace fs = std::filesystem;

nlohmann::json to_json(const StoredAnnotation& s) {
    nlohmann::json j = serialize_annotation(s.annotation);
    j["version"] = s.version;
    return j;
}

void validate_identifier(const std::string& id, const std::string& field) {
    if (id.empty() || id.size() > 128 || id == "." || id == "..") throw ValidationError(field, "invalid identifier");
    for (char c : id) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
        if (!ok) throw ValidationError(field, "only letters, digits, '-', '_' and '.' are allowed");
    }
}

AnnotationStore::AnnotationStore(fs::path root) : root_(std::move(root)) {
    const Manifest manifest = read_manifest(root_ / "manifest.json");
    for (const ManifestEntry& e : manifest.entries) {
        validate_identifier(e.id, "image_id");
        ImageRecord r;
        r.id = e.id;
        r.path = root_ / e.path;
        const PngPixels px = read_png(r.path);
        r.width = px.width;
        r.height = px.height;
        by_id_[r.id] = images_.size();
        images_.push_back(std::move(r));
    }

    const fs::path store = root_ / "annotation_store";
    if (!fs::exists(store)) return;
    for (const auto& dir : fs::directory_iterator(store)) {
        if (!dir.is_directory() || !by_id_.count(dir.path().filename().string())) continue;
        for (const auto& file : fs::directory_iterator(dir.path())) {
            if (file.path().extension() != ".json") continue;
            const nlohmann::json doc = read_json_file(file.path());
            auto stored = std::make_shared<StoredAnnotation>();
            stored->annotation = parse_annotation(doc);
            stored->version = doc.value("version", std::uint64_t{1});
            index_[{stored->annotation.image_id, stored->annotation.annotator_id}] = std::move(stored);
        }
    }
}

const ImageRecord& AnnotationStore::image(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw LookupError("unknown image id '" + id + "'");
    return images_[it->second];
}

std::vector<StoredAnnotation> AnnotationStore::annotations(const std::string& image_id) const {
    image(image_id);
    std::shared_lock lock(index_mutex_);
    std::vector<StoredAnnotation> out;
    for (auto it = index_.lower_bound({image_id, ""}); it != index_.end() && it->first.first == image_id; ++it) {
        out.push_back(*it->second);
    }
    return out;
}

std::optional<StoredAnnotation> AnnotationStore::annotation(const std::string& image_id, const std::string& annotator) const {
    image(image_id);
    std::shared_lock lock(index_mutex_);
    auto it = index_.find({image_id, annotator});
    if (it == index_.end()) return std::nullopt;
    return *it->second;
}

fs::path AnnotationStore::annotation_path(const std::string& image_id, const std::string& annotator) const {
    return root_ / "annotation_store" / image_id / (annotator + ".json");
}

std::mutex& AnnotationStore::key_mutex(const Key& key) {
    std::lock_guard lock(locks_mutex_);
    auto& slot = locks_[key];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
}

StoredAnnotation AnnotationStore::put(const CervixAnnotation& a) {
    const ImageRecord& img = image(a.image_id);
    validate_identifier(a.annotator_id, "annotator_id");
    validate_bounds(a, img.width, img.height);

    const Key key{a.image_id, a.annotator_id};
    std::lock_guard write_lock(key_mutex(key));
    auto stored = std::make_shared<StoredAnnotation>();
    stored->annotation = a;
    {
        std::shared_lock lock(index_mutex_);
        auto it = index_.find(key);
        stored->version = it == index_.end() ? 1 : it->second->version + 1;
    }
    write_file(annotation_path(a.image_id, a.annotator_id), to_json(*stored).dump(2) + "\n");
    {
        std::unique_lock lock(index_mutex_);
        index_[key] = stored;
    }
    return *stored;
}

RasterResult AnnotationStore::mask(const std::string& image_id, const std::string& annotator) const {
    const ImageRecord& img = image(image_id);
    const auto a = annotation(image_id, annotator);
    if (!a) throw LookupError("no annotation by '" + annotator + "' for image '" + image_id + "'");
    return annotation_to_mask(a->annotation, img.width, img.height);
}

BinaryMask AnnotationStore::majority_mask(const std::string& image_id) const {
    const ImageRecord& img = image(image_id);
    std::vector<BinaryMask> masks;
    for (const StoredAnnotation& s : annotations(image_id)) {
        masks.push_back(annotation_to_mask(s.annotation, img.width, img.height).mask);
    }
    if (masks.empty()) throw LookupError("no annotations for image '" + image_id + "'");
    return majority_vote(masks);
}

// ---------------------------------------------------------------------------

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message,
                const std::string& field = {}) {
    nlohmann::json body = {{"error", kind}, {"message", message}};
    if (!field.empty()) body["field"] = field;
    send_json(res, status, body);
}

template <class Handler>
auto guarded(Handler handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
        try {
            handler(req, res);
        } catch (const ValidationError& e) {
            send_error(res, 422, e.kind(), e.what(), e.field());
        } catch (const LookupError& e) {
            send_error(res, 404, e.kind(), e.what());
        } catch (const Error& e) {
            send_error(res, 500, e.kind(), e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, "internal", e.what());
        }
    };
}

}  // namespace

AnnotateServer::AnnotateServer(AnnotationStore& store, std::string cors_origin)
    : store_(store), cors_origin_(std::move(cors_origin)), server_(std::make_unique<httplib::Server>()) {
    install_routes();
}

AnnotateServer::~AnnotateServer() = default;

int AnnotateServer::bind(const std::string& host, int port) {
    if (port == 0) return server_->bind_to_any_port(host);
    return server_->bind_to_port(host, port) ? port : -1;
}

bool AnnotateServer::listen() { return server_->listen_after_bind(); }

void AnnotateServer::stop() { server_->stop(); }

void AnnotateServer::install_routes() {
    httplib::Server& s = *server_;
    s.set_default_headers({{"Access-Control-Allow-Origin", cors_origin_},
                           {"Access-Control-Allow-Methods", "GET, PUT, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
    s.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    s.Get("/images", guarded([this](const httplib::Request&, httplib::Response& res) {
        nlohmann::json list = nlohmann::json::array();
        for (const ImageRecord& img : store_.images()) {
            nlohmann::json annotators = nlohmann::json::array();
            for (const StoredAnnotation& a : store_.annotations(img.id)) annotators.push_back(a.annotation.annotator_id);
            list.push_back({{"id", img.id},
                            {"width", img.width},
                            {"height", img.height},
                            {"annotated", !annotators.empty()},
                            {"annotators", annotators}});
        }
        send_json(res, 200, list);
    }));

    s.Get(R"(/images/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const ImageRecord& img = store_.image(req.matches[1]);
        res.set_content(read_file(img.path), "image/png");
    }));

    s.Get(R"(/annotations/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        nlohmann::json list = nlohmann::json::array();
        for (const StoredAnnotation& a : store_.annotations(req.matches[1])) list.push_back(to_json(a));
        send_json(res, 200, list);
    }));

    s.Get(R"(/annotations/([^/]+)/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto a = store_.annotation(req.matches[1], req.matches[2]);
        if (!a) throw LookupError("no annotation by '" + std::string(req.matches[2]) + "'");
        send_json(res, 200, to_json(*a));
    }));

    s.Put(R"(/annotations/([^/]+)/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const std::string image_id = req.matches[1], annotator = req.matches[2];
        store_.image(image_id);
        validate_identifier(annotator, "annotator_id");
        nlohmann::json doc = nlohmann::json::parse(req.body, nullptr, false);
        if (doc.is_discarded()) throw ValidationError("document", "malformed JSON");
        if (doc.is_object()) {
            if (!doc.contains("image_id")) doc["image_id"] = image_id;
            if (!doc.contains("annotator_id")) doc["annotator_id"] = annotator;
        }
        const CervixAnnotation a = parse_annotation(doc);
        if (a.image_id != image_id) throw ValidationError("image_id", "does not match the request path");
        if (a.annotator_id != annotator) throw ValidationError("annotator_id", "does not match the request path");
        send_json(res, 200, to_json(store_.put(a)));
    }));

    s.Get(R"(/masks/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        BinaryMask mask;
        if (req.get_param_value("mode") == "majority") {
            mask = store_.majority_mask(id);
        } else if (req.has_param("annotator")) {
            const RasterResult r = store_.mask(id, req.get_param_value("annotator"));
            mask = r.mask;
            if (r.degenerate) res.set_header("X-Degenerate-Annotation", "1");
        } else {
            throw ValidationError("annotator", "give ?annotator=<id> or ?mode=majority");
        }
        res.set_content(encode_png(mask), "image/png");
    }));
}

}  // namespace cervinet

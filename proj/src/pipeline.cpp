#include "cervinet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>

#include "cervinet/errors.hpp"
#include "cervinet/image.hpp"

namespace cervinet {

namespace fs = std::filesystem;

namespace {

nlohmann::json markers_to_json(const MarkerDetectionConfig& m) {
    return {{"yellow_hue", {m.yellow_hue.min, m.yellow_hue.max}},
            {"green_hue", {m.green_hue.min, m.green_hue.max}},
            {"min_saturation", m.min_saturation},
            {"min_value", m.min_value},
            {"dilation_radius", m.dilation_radius}};
}

Interval interval_of(const nlohmann::json& j, const char* field) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
        throw ConfigError(field, "expected [lo, hi]");
    }
    return {j[0].get<double>(), j[1].get<double>()};
}

MarkerDetectionConfig markers_from_json(const nlohmann::json& j) {
    MarkerDetectionConfig m;
    m.yellow_hue = interval_of(j.at("yellow_hue"), "preprocess.markers.yellow_hue");
    m.green_hue = interval_of(j.at("green_hue"), "preprocess.markers.green_hue");
    m.min_saturation = j.at("min_saturation").get<double>();
    m.min_value = j.at("min_value").get<double>();
    m.dilation_radius = j.at("dilation_radius").get<int>();
    if (m.dilation_radius < 0) throw ConfigError("preprocess.markers.dilation_radius", "must be >= 0");
    return m;
}

fs::path optional_path(const nlohmann::json& j, const fs::path& base, const fs::path& fallback) {
    if (j.is_null()) return fallback;
    const fs::path p = j.get<std::string>();
    return p.is_absolute() ? p : base / p;
}

template <class T>
T get_field(const nlohmann::json& doc, const std::string& section, const std::string& key) {
    try {
        return doc.at(section).at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(section + "." + key, "missing or of the wrong type");
    }
}

}  // namespace

nlohmann::json default_pipeline_config() {
    PhantomSpec phantom;
    phantom.image_size = 64;
    phantom.preterm_fraction = 0.25;
    nlohmann::json phantom_json = to_json(phantom);
    phantom_json["n"] = 200;

    return {{"paths", {{"run", "run"}, {"data", nullptr}, {"prepared", nullptr}}},
            {"phantom", phantom_json},
            {"preprocess", {{"target_size", 64}, {"inpaint_radius", 3}, {"markers", markers_to_json({})}}},
            {"split", {{"fractions", {0.6, 0.2, 0.2}}, {"seed", 0}}},
            {"train", to_json(TrainConfig{})},
            {"eval", {{"split", "test"}, {"checkpoint", "best"}, {"threshold", 0.5}}},
            {"gradcam", {{"layer", "bottleneck"}, {"class", "preterm"}, {"image", nullptr}, {"alpha", 0.45}}},
            {"serve", {{"host", "127.0.0.1"}, {"port", 8080}, {"cors_origin", "*"}, {"root", nullptr}}}};
}

nlohmann::json merge_config(const nlohmann::json& defaults, const nlohmann::json& user) {
    std::function<void(nlohmann::json&, const nlohmann::json&, const std::string&)> merge =
        [&](nlohmann::json& dst, const nlohmann::json& src, const std::string& prefix) {
            if (!src.is_object()) throw ConfigError(prefix.empty() ? "config" : prefix, "expected an object");
            for (auto it = src.begin(); it != src.end(); ++it) {
                const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
                if (!dst.contains(it.key())) throw ConfigError(path, "unknown setting");
                nlohmann::json& slot = dst[it.key()];
                if (slot.is_object() && it.value().is_object()) {
                    merge(slot, it.value(), path);
                } else {
                    slot = it.value();
                }
            }
        };
    nlohmann::json out = defaults;
    merge(out, user, "");
    return out;
}

void apply_override(nlohmann::json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key.path=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    nlohmann::json* node = &config;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(part)) throw ConfigError(key, "unknown setting");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = std::move(value);
}

fs::path PipelinePaths::dataset() const {
    if (fs::exists(prepared / "manifest.json")) return prepared;
    return data;
}

void PipelineConfig::validate() const {
    phantom.validate();
    if (phantom_count < 1) throw ConfigError("phantom.n", "must be >= 1");
    if (prepare.target_size < 8) throw ConfigError("preprocess.target_size", "must be >= 8");
    if (prepare.inpaint_radius < 1) throw ConfigError("preprocess.inpaint_radius", "must be >= 1");
    train.validate();
    if (std::find(kSplitNames.begin(), kSplitNames.end(), eval_split) == kSplitNames.end()) {
        throw ConfigError("eval.split", "must be train, val or test");
    }
    if (!(eval_threshold >= 0.0 && eval_threshold <= 1.0)) throw ConfigError("eval.threshold", "must lie in [0,1]");
    if (!(gradcam_alpha >= 0.0 && gradcam_alpha <= 1.0)) throw ConfigError("gradcam.alpha", "must lie in [0,1]");
    if (serve_port < 0 || serve_port > 65535) throw ConfigError("serve.port", "must lie in [0,65535]");
    double sum = 0.0;
    for (double f : split_fractions) {
        if (!(f > 0.0)) throw ConfigError("split.fractions", "every fraction must be > 0");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split.fractions", "must sum to 1");
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& doc, const fs::path& base_dir) {
    PipelineConfig c;
    c.document = doc;
    const nlohmann::json& paths = doc.at("paths");
    if (!paths.at("run").is_string()) throw ConfigError("paths.run", "expected a path");
    c.paths.run = optional_path(paths.at("run"), base_dir, {});
    c.paths.data = optional_path(paths.at("data"), base_dir, c.paths.run / "data");
    c.paths.prepared = optional_path(paths.at("prepared"), base_dir, c.paths.run / "prepared");

    c.phantom = phantom_spec_from_json(doc.at("phantom"));
    c.phantom_count = get_field<int>(doc, "phantom", "n");

    try {
        c.prepare.target_size = doc.at("preprocess").at("target_size").get<int>();
        c.prepare.inpaint_radius = doc.at("preprocess").at("inpaint_radius").get<int>();
        c.prepare.markers = markers_from_json(doc.at("preprocess").at("markers"));
        const auto& fr = doc.at("split").at("fractions");
        if (!fr.is_array() || fr.size() != 3) throw ConfigError("split.fractions", "expected three fractions");
        for (std::size_t i = 0; i < 3; ++i) c.split_fractions[i] = fr[i].get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("preprocess", e.what());
    }
    c.split_seed = get_field<std::uint64_t>(doc, "split", "seed");
    c.train = train_config_from_json(doc.at("train"));

    c.eval_split = get_field<std::string>(doc, "eval", "split");
    c.eval_checkpoint = get_field<std::string>(doc, "eval", "checkpoint");
    c.eval_threshold = get_field<double>(doc, "eval", "threshold");

    c.gradcam_layer = get_field<std::string>(doc, "gradcam", "layer");
    c.gradcam_class = cam_class_from_string(get_field<std::string>(doc, "gradcam", "class"));
    const auto& image = doc.at("gradcam").at("image");
    c.gradcam_image = image.is_null() ? "" : image.get<std::string>();
    c.gradcam_alpha = get_field<double>(doc, "gradcam", "alpha");

    c.serve_host = get_field<std::string>(doc, "serve", "host");
    c.serve_port = get_field<int>(doc, "serve", "port");
    c.serve_cors_origin = get_field<std::string>(doc, "serve", "cors_origin");
    c.serve_root = optional_path(doc.at("serve").at("root"), base_dir, c.paths.data);
    return c;
}

PipelineConfig load_pipeline_config(const fs::path& config_file, const std::vector<std::string>& overrides) {
    nlohmann::json doc = default_pipeline_config();
    fs::path base = fs::current_path();
    if (!config_file.empty()) {
        nlohmann::json user = nlohmann::json::parse(read_file(config_file), nullptr, false);
        if (user.is_discarded()) throw ConfigError(config_file.string(), "not valid JSON");
        doc = merge_config(doc, user);
    }
    for (const std::string& o : overrides) apply_override(doc, o);
    PipelineConfig c = pipeline_config_from_json(doc, base);
    c.validate();
    return c;
}

void write_config_snapshot(const PipelineConfig& config, const fs::path& dir) {
    write_json_file(dir / "config.json", config.document);
}

// ---------------------------------------------------------------------------

void run_phantom(const PipelineConfig& config, std::ostream& log) {
    const auto samples = generate_dataset(config.phantom, config.phantom_count, config.paths.data);
    write_config_snapshot(config, config.paths.data);
    const auto preterm = std::count_if(samples.begin(), samples.end(), [](const PhantomSample& s) { return s.sample.label == 1; });
    log << "phantom: " << samples.size() << " images (" << preterm << " preterm) -> " << config.paths.data.string() << "\n";
}

void run_preprocess(const PipelineConfig& config, std::ostream& log) {
    const Manifest source = read_manifest(config.paths.data / "manifest.json");
    const int size = config.prepare.target_size;
    Manifest out;
    out.generator = {{"source", source.generator}, {"preprocess", config.document.at("preprocess")}};
    int inpainted = 0;
    for (const ManifestEntry& e : source.entries) {
        const RgbImage rgb = read_png_rgb(config.paths.data / e.path);
        if (count_ones(detect_markers(rgb, config.prepare.markers)) > 0) ++inpainted;
        const GrayImage image = prepare_image(rgb, config.prepare);
        const BinaryMask source_mask = read_png_mask(config.paths.data / e.mask_path);
        const double sx = static_cast<double>(size) / source_mask.width, sy = static_cast<double>(size) / source_mask.height;

        ManifestEntry p = e;
        write_png(config.paths.prepared / p.path, image);
        write_png(config.paths.prepared / p.mask_path, resize_nearest(source_mask, size, size));
        if (e.cue_path) {
            write_png(config.paths.prepared / *p.cue_path, resize_nearest(read_png_mask(config.paths.data / *e.cue_path), size, size));
        }
        if (e.annotation_path) {
            CervixAnnotation a = parse_annotation(read_json_file(config.paths.data / *e.annotation_path));
            for (Point& q : a.control_points) q = {q.x * sx, q.y * sy};
            write_json_file(config.paths.prepared / *p.annotation_path, serialize_annotation(a));
        }
        out.entries.push_back(std::move(p));
    }
    write_manifest(config.paths.prepared / "manifest.json", out);
    write_config_snapshot(config, config.paths.prepared);
    log << "preprocess: " << out.entries.size() << " images at " << size << "x" << size << ", " << inpainted
        << " with markers inpainted -> " << config.paths.prepared.string() << "\n";
}

SplitManifest run_split(const PipelineConfig& config, std::ostream& log) {
    const fs::path dataset = config.paths.dataset();
    const Manifest manifest = read_manifest(dataset / "manifest.json");
    std::vector<SampleRef> refs;
    for (const ManifestEntry& e : manifest.entries) refs.push_back({e.id, e.patient_id});
    const SplitManifest split = split_by_patient(refs, config.split_fractions, config.split_seed);
    write_json_file(config.paths.split_manifest(), to_json(split));
    write_config_snapshot(config, config.paths.run);
    log << "split (" << dataset.string() << "):";
    for (const std::string& name : kSplitNames) log << " " << name << "=" << split.ids(name).size();
    log << "\n";
    return split;
}

std::vector<Sample> load_split(const PipelineConfig& config, const std::string& split) {
    const fs::path split_path = config.paths.split_manifest();
    if (!fs::exists(split_path)) throw IoError("missing split manifest " + split_path.string() + " (run the split subcommand)");
    const SplitManifest manifest = split_manifest_from_json(read_json_file(split_path));
    const fs::path dataset = config.paths.dataset();
    const Manifest data = read_manifest(dataset / "manifest.json");
    std::vector<Sample> out;
    for (const std::string& id : manifest.ids(split)) out.push_back(load_sample(dataset, data.find(id)));
    return out;
}

RunRecord run_train(const PipelineConfig& config, std::ostream& log) {
    const std::vector<Sample> train_split = load_split(config, "train");
    const std::vector<Sample> val_split = load_split(config, "val");
    write_config_snapshot(config, config.paths.run);
    log << "train: " << train_split.size() << " train / " << val_split.size() << " val images, "
        << config.train.epochs << " epochs\n";
    const RunRecord record = train(config.train, train_split, val_split, config.paths.run, [&](const EpochRecord& e) {
        log << "epoch " << e.epoch << "  train " << e.train.total << " (seg " << e.train.seg << ", cls " << e.train.cls
            << ")  val " << e.val.total << "  val_iou " << e.val_iou;
        if (e.val_auc) log << "  val_auc " << *e.val_auc;
        log << "  " << e.seconds << "s\n";
        log.flush();
    });
    const MetricsReport val_report = evaluate(record.best_checkpoint, val_split, config.eval_threshold, config.train.batch_size);
    write_json_file(config.paths.run / "metrics_val.json", to_json(val_report));
    log << "best epoch " << record.best_epoch << " -> " << record.best_checkpoint.string() << "\n";
    return record;
}

namespace {

fs::path resolve_checkpoint(const PipelineConfig& config) {
    if (config.eval_checkpoint == "best" || config.eval_checkpoint == "last") return config.paths.checkpoint(config.eval_checkpoint);
    const fs::path p = config.eval_checkpoint;
    return p.is_absolute() ? p : fs::current_path() / p;
}

}  // namespace

MetricsReport run_eval(const PipelineConfig& config, std::ostream& log) {
    const fs::path ckpt = resolve_checkpoint(config);
    if (!fs::exists(ckpt)) throw IoError("checkpoint not found: " + ckpt.string());
    MultiTaskUNet model = MultiTaskUNet::from_checkpoint(ckpt);
    const std::vector<Sample> samples = load_split(config, config.eval_split);
    const MetricsReport report = evaluate(model, samples, config.eval_threshold, config.train.batch_size);
    write_json_file(config.paths.run / ("metrics_" + config.eval_split + ".json"), to_json(report));
    log << "eval " << config.eval_split << " (" << ckpt.string() << ")\n" << format_report(report) << "\n";
    return report;
}

CamHeatmap run_gradcam(const PipelineConfig& config, std::ostream& log) {
    if (config.gradcam_image.empty()) throw ConfigError("gradcam.image", "name the image id to explain");
    const fs::path ckpt = resolve_checkpoint(config);
    if (!fs::exists(ckpt)) throw IoError("checkpoint not found: " + ckpt.string());
    MultiTaskUNet model = MultiTaskUNet::from_checkpoint(ckpt);

    const fs::path dataset = config.paths.dataset();
    const Manifest data = read_manifest(dataset / "manifest.json");
    const ManifestEntry& entry = data.find(config.gradcam_image);
    const Sample sample = fit_to_network(load_sample(dataset, entry), model.config().input_size);

    CamHeatmap heatmap = grad_cam(model, sample.image, config.gradcam_layer, config.gradcam_class);
    heatmap.image_id = sample.id;
    const fs::path out_dir = config.paths.run / "gradcam";
    const fs::path stem = out_dir / (sample.id + "_" + to_string(config.gradcam_class));
    export_heatmap(stem, heatmap, sample.image, config.gradcam_alpha);
    write_config_snapshot(config, out_dir);

    log << "gradcam " << sample.id << " class " << to_string(config.gradcam_class) << " layer " << config.gradcam_layer
        << (heatmap.zero_map ? " (zero map)" : "") << " -> " << stem.string() << ".png\n";
    if (entry.cue_path) {
        const BinaryMask cue = resize_nearest(read_png_mask(dataset / *entry.cue_path), sample.image.width, sample.image.height);
        log << "top-decile mass inside cue region: " << top_mass_inside(heatmap.grid, cue) << "\n";
    }
    return heatmap;
}

}  // namespace cervinet

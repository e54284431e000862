#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cervinet/explain.hpp"
#include "cervinet/metrics.hpp"
#include "cervinet/phantom.hpp"
#include "cervinet/preprocess.hpp"
#include "cervinet/trainer.hpp"

namespace cervinet {

/// Every setting with its default (the desk preset).
nlohmann::json default_pipeline_config();

/// Recursively replaces defaults with `user` values; unknown keys throw ConfigError.
nlohmann::json merge_config(const nlohmann::json& defaults, const nlohmann::json& user);

/// Applies "a.b.c=value"; the value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

struct PipelinePaths {
    std::filesystem::path run;
    std::filesystem::path data;
    std::filesystem::path prepared;

    /// Prepared data when present, else the raw phantom data.
    std::filesystem::path dataset() const;
    std::filesystem::path split_manifest() const { return run / "split.json"; }
    std::filesystem::path checkpoint(const std::string& which) const { return run / "checkpoints" / (which + ".ckpt"); }
};

struct PipelineConfig {
    nlohmann::json document;
    PipelinePaths paths;
    PhantomSpec phantom;
    int phantom_count = 200;
    PrepareOptions prepare;
    std::array<double, 3> split_fractions{0.6, 0.2, 0.2};
    std::uint64_t split_seed = 0;
    TrainConfig train;
    std::string eval_split = "test";
    std::string eval_checkpoint = "best";
    double eval_threshold = 0.5;
    std::string gradcam_layer = "bottleneck";
    CamClass gradcam_class = CamClass::preterm;
    std::string gradcam_image;
    double gradcam_alpha = 0.45;
    std::string serve_host = "127.0.0.1";
    int serve_port = 8080;
    std::string serve_cors_origin = "*";
    std::filesystem::path serve_root;

    void validate() const;
};

/// Builds the typed configuration from a merged document. Relative paths
/// resolve against `base_dir`; data and prepared default to <run>/data and <run>/prepared.
PipelineConfig pipeline_config_from_json(const nlohmann::json& merged, const std::filesystem::path& base_dir);

/// Reads `config_file` (may be empty), applies overrides, and validates.
PipelineConfig load_pipeline_config(const std::filesystem::path& config_file, const std::vector<std::string>& overrides);

/// Writes `config.json` with the merged document into `dir`.
void write_config_snapshot(const PipelineConfig& config, const std::filesystem::path& dir);

void run_phantom(const PipelineConfig& config, std::ostream& log);
void run_preprocess(const PipelineConfig& config, std::ostream& log);
SplitManifest run_split(const PipelineConfig& config, std::ostream& log);
RunRecord run_train(const PipelineConfig& config, std::ostream& log);
MetricsReport run_eval(const PipelineConfig& config, std::ostream& log);
CamHeatmap run_gradcam(const PipelineConfig& config, std::ostream& log);

/// Samples of one split of the configured dataset.
std::vector<Sample> load_split(const PipelineConfig& config, const std::string& split);

}  // namespace cervinet

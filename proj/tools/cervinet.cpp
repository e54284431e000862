#include <csignal>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cervinet/errors.hpp"
#include "cervinet/pipeline.hpp"
#include "cervinet/service.hpp"

namespace {

cervinet::AnnotateServer* active_server = nullptr;

void stop_server(int) {
    if (active_server) active_server->stop();
}

int serve(const cervinet::PipelineConfig& config) {
    cervinet::AnnotationStore store(config.serve_root);
    cervinet::AnnotateServer server(store, config.serve_cors_origin);
    const int port = server.bind(config.serve_host, config.serve_port);
    if (port < 0) {
        throw cervinet::IoError("cannot bind " + config.serve_host + ":" + std::to_string(config.serve_port));
    }
    std::cout << "annotate-serve: " << store.images().size() << " images from " << config.serve_root.string()
              << " on http://" << config.serve_host << ":" << port << std::endl;
    active_server = &server;
    std::signal(SIGINT, stop_server);
    std::signal(SIGTERM, stop_server);
    server.listen();
    active_server = nullptr;
    return 0;
}

std::string one_line(std::string s) {
    for (char& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cervix ultrasound segmentation and preterm-birth classification pipeline", "cervinet"};
    app.require_subcommand(1, 1);

    std::string config_file;
    std::vector<std::string> overrides;
    std::optional<std::string> run_dir;
    app.add_option("-c,--config", config_file, "JSON configuration file")->check(CLI::ExistingFile);
    app.add_option("-s,--set", overrides, "Dotted-path override such as train.epochs=5 (repeatable)")->take_all();
    app.add_option("-r,--run-dir", run_dir, "Run directory (overrides paths.run)");

    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom dataset");
    std::optional<int> n;
    phantom->add_option("-n,--count", n, "Number of phantoms (overrides phantom.n)");

    app.add_subcommand("preprocess", "Inpaint markers and resize the phantom dataset");
    app.add_subcommand("split", "Patient-disjoint train/val/test split");
    app.add_subcommand("train", "Train the multi-task network");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    std::optional<std::string> eval_split, eval_ckpt;
    eval->add_option("--split", eval_split, "train, val or test");
    eval->add_option("--checkpoint", eval_ckpt, "best, last or a checkpoint path");

    auto* gradcam = app.add_subcommand("gradcam", "Export a Grad-CAM heatmap for one image");
    std::optional<std::string> image, cls, layer, cam_ckpt;
    gradcam->add_option("--image", image, "Image id");
    gradcam->add_option("--class", cls, "preterm or control");
    gradcam->add_option("--layer", layer, "Capture layer such as bottleneck or enc2");
    gradcam->add_option("--checkpoint", cam_ckpt, "best, last or a checkpoint path");

    auto* annotate = app.add_subcommand("annotate-serve", "Serve the annotation HTTP API");
    std::optional<std::string> root, host;
    std::optional<int> port;
    annotate->add_option("--root", root, "Dataset directory holding manifest.json");
    annotate->add_option("--host", host, "Bind address");
    annotate->add_option("--port", port, "Port (0 picks a free one)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << one_line(e.what()) << "\n\n" << app.help();
        return 2;
    }

    auto set = [&](const std::string& key, const std::string& json_value) { overrides.push_back(key + "=" + json_value); };
    auto quoted = [](const std::string& s) { return nlohmann::json(s).dump(); };
    if (run_dir) set("paths.run", quoted(*run_dir));
    if (n) set("phantom.n", std::to_string(*n));
    if (eval_split) set("eval.split", quoted(*eval_split));
    if (eval_ckpt) set("eval.checkpoint", quoted(*eval_ckpt));
    if (cam_ckpt) set("eval.checkpoint", quoted(*cam_ckpt));
    if (image) set("gradcam.image", quoted(*image));
    if (cls) set("gradcam.class", quoted(*cls));
    if (layer) set("gradcam.layer", quoted(*layer));
    if (root) set("serve.root", quoted(*root));
    if (host) set("serve.host", quoted(*host));
    if (port) set("serve.port", std::to_string(*port));

    try {
        const cervinet::PipelineConfig config = cervinet::load_pipeline_config(config_file, overrides);
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "phantom") cervinet::run_phantom(config, std::cout);
        else if (name == "preprocess") cervinet::run_preprocess(config, std::cout);
        else if (name == "split") cervinet::run_split(config, std::cout);
        else if (name == "train") cervinet::run_train(config, std::cout);
        else if (name == "eval") cervinet::run_eval(config, std::cout);
        else if (name == "gradcam") cervinet::run_gradcam(config, std::cout);
        else return serve(config);
    } catch (const cervinet::Error& e) {
        std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}

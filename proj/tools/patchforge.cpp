// patchforge: dense-patch random-forest codebooks with topic-model soft-label
// feedback. Subcommands cover feature extraction, synthetic corpus
// generation, supervised and semi-supervised training runs, standalone
// classification, run reports and soft-label visualization.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "patchforge/experiment.hpp"
#include "patchforge/image_io.hpp"
#include "patchforge/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace patchforge;

namespace {

// --threads beats PATCHFORGE_THREADS beats hardware default
void apply_threads(unsigned cli_threads) {
    if (cli_threads) {
        set_max_threads(cli_threads);
        return;
    }
    if (const char* env = std::getenv("PATCHFORGE_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v > 0) set_max_threads(static_cast<unsigned>(v));
    }
}

std::vector<std::string> collect_corpus_images(const std::string& root) {
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    std::vector<std::string> files;
    for (const auto& dir : class_dirs) {
        std::vector<fs::path> here;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            std::string ext = entry.path().extension().string();
            for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            if (ext == ".png" || ext == ".pgm") here.push_back(entry.path());
        }
        std::sort(here.begin(), here.end());
        for (const auto& f : here) files.push_back(f.string());
    }
    return files;
}

int cmd_extract(const std::vector<std::string>& images, const std::string& folder,
                const std::string& output, const GridConfig& grid) {
    std::vector<std::string> files = images;
    if (!folder.empty()) {
        auto found = collect_corpus_images(folder);
        files.insert(files.end(), found.begin(), found.end());
    }
    if (files.empty()) {
        std::cerr << "extract: no input images\n";
        return 1;
    }
    std::vector<std::vector<PatchDescriptor>> per_image(files.size());
    parallel_for(files.size(), [&](std::size_t i) {
        RasterImage img = resize_max_edge(read_image(files[i]), grid.max_edge);
        per_image[i] = extract_dense(img, grid, static_cast<std::uint32_t>(i));
    });
    save_descriptors(output, per_image);
    std::size_t total = 0;
    for (const auto& v : per_image) total += v.size();
    std::printf("extracted %zu patches from %zu images -> %s\n", total, files.size(),
                output.c_str());
    return 0;
}

int cmd_synth_gen(const SyntheticSpec& spec, const std::string& output) {
    SplitConfig no_split; // the folder layout is the product; splits happen at load time
    LoadedCorpus corpus = generate_synthetic(spec, no_split);
    // images/ holds the plain class tree a folder corpus expects; masks sit
    // beside it so they are never mistaken for a class
    for (std::size_t d = 0; d < corpus.corpus.docs.size(); ++d) {
        const Document& doc = corpus.corpus.docs[d];
        std::string cls = corpus.corpus.class_names[static_cast<std::size_t>(doc.label)];
        fs::create_directories(output + "/images/" + cls);
        fs::create_directories(output + "/masks/" + cls);
        char name[32];
        std::snprintf(name, sizeof(name), "img_%04zu.pgm", d);
        write_pgm(output + "/images/" + cls + "/" + name, corpus.images[d]);
        RasterImage mask;
        mask.width = corpus.images[d].width;
        mask.height = corpus.images[d].height;
        mask.pixels.resize(corpus.object_masks[d].size());
        for (std::size_t i = 0; i < mask.pixels.size(); ++i)
            mask.pixels[i] = corpus.object_masks[d][i] ? 1.0f : 0.0f;
        write_pgm(output + "/masks/" + cls + "/" + name, mask);
    }
    json manifest;
    manifest["classes"] = spec.num_classes;
    manifest["images_per_class"] = spec.images_per_class;
    manifest["image_size"] = spec.image_size;
    manifest["background_fraction"] = spec.background_fraction;
    manifest["noise_sigma"] = spec.noise_sigma;
    manifest["stripe_amplitude"] = spec.stripe_amplitude;
    manifest["seed"] = spec.seed;
    std::ofstream os(output + "/synth_manifest.json");
    os << manifest.dump(2) << '\n';
    std::printf("wrote %zu images under %s\n", corpus.corpus.docs.size(), output.c_str());
    return 0;
}

int cmd_run(const RunConfig& cfg) {
    RunSummary summary = run_experiment(cfg);
    for (const auto& m : summary.iterations)
        std::printf("iter %2u  train %.4f  val %.4f  test %.4f  shift %.5f  em %u  %.1fs\n",
                    m.iteration, m.train_acc, m.val_acc, m.test_acc, m.label_shift, m.em_iters,
                    m.wall_seconds);
    std::printf("best iteration %zu, returned %zu, test accuracy %.4f\n", summary.best_iteration,
                summary.returned_iteration, summary.test_accuracy);
    std::printf("artifacts in %s\n", cfg.output_dir.c_str());
    return 0;
}

int cmd_classify(const std::string& model_dir, const std::string& descriptors,
                 const std::string& folder, const std::string& output) {
    std::ifstream ms(model_dir + "/model.json");
    if (!ms) {
        std::cerr << "classify: cannot open " << model_dir << "/model.json\n";
        return 1;
    }
    json model = json::parse(ms);

    FeedbackState state;
    state.forest = load_forest(model_dir + "/" + model["forest_file"].get<std::string>());
    state.plsa = load_plsa(model_dir + "/" + model["plsa_file"].get<std::string>());
    state.model_classes = model["model_classes"].get<std::vector<std::int32_t>>();
    state.topics.sets = model["dominant_topics"].get<std::vector<std::vector<std::uint32_t>>>();
    state.topics.topic_count = model["topic_count"].get<std::uint32_t>();
    std::vector<std::string> class_names = model["class_names"].get<std::vector<std::string>>();

    ClassThresholds thresholds;
    thresholds.h = model["thresholds"].get<std::vector<double>>();

    PipelineConfig pcfg;
    pcfg.foldin_max_iters = model["foldin_max_iters"].get<std::uint32_t>();
    pcfg.em.rel_tol = model["rel_tol"].get<double>();
    pcfg.em.smoothing_eps = model["smoothing_eps"].get<double>();

    GridConfig grid;
    grid.patch_size = model["features"]["patch_size"].get<int>();
    grid.step_size = model["features"]["step_size"].get<int>();
    grid.max_edge = model["features"]["max_edge"].get<int>();
    grid.orientation_bins = model["features"]["orientation_bins"].get<int>();
    grid.spatial_cells = model["features"]["spatial_cells"].get<int>();

    EvalSet docs;
    std::vector<std::string> names;
    if (!descriptors.empty()) {
        auto per_image = load_descriptors(descriptors);
        for (std::size_t i = 0; i < per_image.size(); ++i) {
            docs.push_back({std::move(per_image[i]), -1});
            names.push_back(descriptors + "#" + std::to_string(i));
        }
    }
    if (!folder.empty()) {
        auto files = collect_corpus_images(folder);
        std::size_t base = docs.size();
        docs.resize(base + files.size());
        parallel_for(files.size(), [&](std::size_t i) {
            RasterImage img = resize_max_edge(read_image(files[i]), grid.max_edge);
            docs[base + i] = {extract_dense(img, grid, static_cast<std::uint32_t>(base + i)), -1};
        });
        names.insert(names.end(), files.begin(), files.end());
    }
    if (docs.empty()) {
        std::cerr << "classify: no inputs (use --descriptors or --folder)\n";
        return 1;
    }

    std::vector<Prediction> preds = classify(docs, state, pcfg, thresholds);
    std::ofstream os(output);
    if (!os) {
        std::cerr << "classify: cannot open " << output << " for write\n";
        return 1;
    }
    os << "input,predicted,predicted_name";
    for (std::int32_t c : state.model_classes) os << ",prob_" << class_names[static_cast<std::size_t>(c)];
    for (std::int32_t c : state.model_classes) os << ",det_" << class_names[static_cast<std::size_t>(c)];
    os << '\n';
    for (std::size_t i = 0; i < preds.size(); ++i) {
        os << names[i] << ',' << preds[i].predicted << ','
           << class_names[static_cast<std::size_t>(preds[i].predicted)];
        char buf[40];
        for (double p : preds[i].class_probs) {
            std::snprintf(buf, sizeof(buf), "%.17g", p);
            os << ',' << buf;
        }
        for (char d : preds[i].detections) os << ',' << (d ? 1 : 0);
        os << '\n';
    }
    std::printf("classified %zu documents -> %s\n", docs.size(), output.c_str());
    return 0;
}

int cmd_report(const std::string& results_dir) {
    std::ifstream is(results_dir + "/manifest.json");
    if (!is) {
        std::cerr << "report: cannot open " << results_dir << "/manifest.json\n";
        return 1;
    }
    json manifest = json::parse(is);
    const json& iters = manifest["iterations"];
    if (iters.empty()) {
        std::cerr << "report: manifest has no iterations\n";
        return 1;
    }

    auto row = [&](const char* tag, const json& m) {
        std::printf("%-14s %4d   %8.4f %8.4f %8.4f   %9.5f\n", tag,
                    m["iteration"].get<int>(), m["train_acc"].get<double>(),
                    m["val_acc"].get<double>(), m["test_acc"].get<double>(),
                    m["label_shift"].get<double>());
    };
    std::printf("%-14s %4s   %8s %8s %8s   %9s\n", "stage", "iter", "train", "val", "test",
                "shift");
    row("initial", iters[0]);
    if (iters.size() > 1) row("1st feedback", iters[1]);
    row("converged", iters[iters.size() - 1]);
    row("best", iters[manifest["best_iteration"].get<std::size_t>()]);
    std::printf("returned iteration: %zu, test accuracy %.4f\n",
                manifest["returned_iteration"].get<std::size_t>(),
                manifest["test_accuracy"].get<double>());

    std::ofstream os(results_dir + "/report.csv");
    os << "iteration,train_acc,val_acc,test_acc,label_shift\n";
    for (const auto& m : iters)
        os << m["iteration"].get<int>() << ',' << m["train_acc"].get<double>() << ','
           << m["val_acc"].get<double>() << ',' << m["test_acc"].get<double>() << ','
           << m["label_shift"].get<double>() << '\n';
    std::printf("wrote %s/report.csv\n", results_dir.c_str());
    return 0;
}

int cmd_visualize(const std::string& grid_file, const std::string& prefix) {
    SoftLabelGrid grid = load_soft_label_grid(grid_file);
    RasterImage img;
    img.width = static_cast<int>(grid.cols);
    img.height = static_cast<int>(grid.rows);
    img.pixels.resize(static_cast<std::size_t>(grid.rows) * grid.cols);

    for (std::uint32_t m = 0; m < grid.classes; ++m) {
        for (std::uint32_t r = 0; r < grid.rows; ++r)
            for (std::uint32_t c = 0; c < grid.cols; ++c)
                img.pixels[static_cast<std::size_t>(r) * grid.cols + c] = grid.at(m, r, c);
        write_pgm(prefix + "_class_" + std::to_string(m) + ".pgm", img);
    }
    for (std::uint32_t r = 0; r < grid.rows; ++r)
        for (std::uint32_t c = 0; c < grid.cols; ++c) {
            float best = 0.0f;
            for (std::uint32_t m = 0; m < grid.classes; ++m) best = std::max(best, grid.at(m, r, c));
            img.pixels[static_cast<std::size_t>(r) * grid.cols + c] = best;
        }
    write_pgm(prefix + "_max.pgm", img);
    std::printf("wrote %u class planes plus max plane with prefix %s\n", grid.classes,
                prefix.c_str());
    return 0;
}

void add_run_overrides(CLI::App* cmd, RunConfig& cfg, std::string& config_path) {
    cmd->add_option("--config", config_path, "JSON run configuration")->required();
    cmd->add_option("--seed", cfg.seed, "master RNG seed");
    cmd->add_option("--threads", cfg.threads, "worker thread cap");
    cmd->add_option("--output-dir", cfg.output_dir, "artifact directory");
    cmd->add_option("--trees", cfg.forest.num_trees, "number of trees");
    cmd->add_option("--leaves", cfg.forest.max_leaves, "leaf budget per tree");
    cmd->add_option("--topics", cfg.topics, "topic count");
    cmd->add_option("--patch-size", cfg.grid.patch_size, "patch side in pixels");
    cmd->add_option("--step-size", cfg.grid.step_size, "grid step in pixels");
    cmd->add_option("--max-edge", cfg.grid.max_edge, "resize bound for the longest edge");
    cmd->add_option("--labeled-fraction", cfg.corpus.split.labeled_fraction,
                    "labeled share of the training documents");
    cmd->add_option("--max-feedback-iters", cfg.loop.max_feedback_iters, "feedback iteration cap");
    cmd->add_flag("--checkpoint-all", cfg.checkpoint_all, "save models for every iteration");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"random-forest codebooks with soft-label topic feedback"};
    app.require_subcommand(1);

    // extract
    auto* extract = app.add_subcommand("extract", "images to descriptor file");
    std::vector<std::string> extract_images;
    std::string extract_folder, extract_output = "descriptors.pfd";
    GridConfig extract_grid;
    unsigned extract_threads = 0;
    extract->add_option("images", extract_images, "image files");
    extract->add_option("--folder", extract_folder, "corpus root (class subdirectories)");
    extract->add_option("--output", extract_output, "output descriptor file");
    extract->add_option("--patch-size", extract_grid.patch_size, "patch side in pixels");
    extract->add_option("--step-size", extract_grid.step_size, "grid step in pixels");
    extract->add_option("--max-edge", extract_grid.max_edge, "resize bound");
    extract->add_option("--orientation-bins", extract_grid.orientation_bins, "histogram bins");
    extract->add_option("--spatial-cells", extract_grid.spatial_cells, "cells per patch side");
    extract->add_option("--threads", extract_threads, "worker thread cap");

    // synth-gen
    auto* synth = app.add_subcommand("synth-gen", "generate a stripe-texture corpus");
    SyntheticSpec synth_spec;
    std::string synth_output = "synthetic_corpus";
    synth->add_option("--output", synth_output, "output directory");
    synth->add_option("--classes", synth_spec.num_classes, "number of classes");
    synth->add_option("--images-per-class", synth_spec.images_per_class, "images per class");
    synth->add_option("--image-size", synth_spec.image_size, "square image side");
    synth->add_option("--background-fraction", synth_spec.background_fraction,
                      "noise background share of each image");
    synth->add_option("--noise-sigma", synth_spec.noise_sigma, "additive Gaussian noise sigma");
    synth->add_option("--stripe-amplitude", synth_spec.stripe_amplitude, "texture contrast");
    synth->add_option("--seed", synth_spec.seed, "generator seed");

    // run / ssl-run
    auto* run = app.add_subcommand("run", "supervised training run");
    RunConfig run_cfg;
    std::string run_config_path;
    add_run_overrides(run, run_cfg, run_config_path);

    auto* ssl = app.add_subcommand("ssl-run", "semi-supervised training run");
    RunConfig ssl_cfg;
    std::string ssl_config_path;
    add_run_overrides(ssl, ssl_cfg, ssl_config_path);

    // classify
    auto* cls = app.add_subcommand("classify", "apply a trained model");
    std::string cls_model_dir, cls_descriptors, cls_folder, cls_output = "predictions.csv";
    unsigned cls_threads = 0;
    cls->add_option("--model-dir", cls_model_dir, "run output directory")->required();
    cls->add_option("--descriptors", cls_descriptors, "descriptor file input");
    cls->add_option("--folder", cls_folder, "image folder input");
    cls->add_option("--output", cls_output, "predictions CSV");
    cls->add_option("--threads", cls_threads, "worker thread cap");

    // report
    auto* report = app.add_subcommand("report", "summarize a run directory");
    std::string report_dir;
    report->add_option("--results", report_dir, "run output directory")->required();

    // visualize
    auto* vis = app.add_subcommand("visualize", "soft-label grid to PGM images");
    std::string vis_grid, vis_prefix = "softlabel";
    vis->add_option("--grid", vis_grid, "soft-label grid file")->required();
    vis->add_option("--output-prefix", vis_prefix, "output PGM prefix");

    CLI11_PARSE(app, argc, argv);

    try {
        if (extract->parsed()) {
            apply_threads(extract_threads);
            return cmd_extract(extract_images, extract_folder, extract_output, extract_grid);
        }
        if (synth->parsed()) return cmd_synth_gen(synth_spec, synth_output);
        if (run->parsed() || ssl->parsed()) {
            bool is_ssl = ssl->parsed();
            CLI::App* cmd = is_ssl ? ssl : run;
            RunConfig& flags = is_ssl ? ssl_cfg : run_cfg;
            RunConfig cfg = load_run_config(is_ssl ? ssl_config_path : run_config_path);
            // command-line overrides beat the file
            for (const auto& opt : cmd->get_options()) {
                if (opt->count() == 0) continue;
                std::string name = opt->get_name();
                if (name == "--seed") {
                    cfg.seed = flags.seed;
                    cfg.corpus.split.seed = flags.seed;
                    cfg.corpus.synth.seed = flags.seed;
                } else if (name == "--threads") cfg.threads = flags.threads;
                else if (name == "--output-dir") cfg.output_dir = flags.output_dir;
                else if (name == "--trees") cfg.forest.num_trees = flags.forest.num_trees;
                else if (name == "--leaves") cfg.forest.max_leaves = flags.forest.max_leaves;
                else if (name == "--topics") cfg.topics = flags.topics;
                else if (name == "--patch-size") cfg.grid.patch_size = flags.grid.patch_size;
                else if (name == "--step-size") cfg.grid.step_size = flags.grid.step_size;
                else if (name == "--max-edge") cfg.grid.max_edge = flags.grid.max_edge;
                else if (name == "--labeled-fraction")
                    cfg.corpus.split.labeled_fraction = flags.corpus.split.labeled_fraction;
                else if (name == "--max-feedback-iters")
                    cfg.loop.max_feedback_iters = flags.loop.max_feedback_iters;
                else if (name == "--checkpoint-all") cfg.checkpoint_all = flags.checkpoint_all;
            }
            if (is_ssl) cfg.ssl = true;
            apply_threads(cfg.threads);
            return cmd_run(cfg);
        }
        if (cls->parsed()) {
            apply_threads(cls_threads);
            return cmd_classify(cls_model_dir, cls_descriptors, cls_folder, cls_output);
        }
        if (report->parsed()) return cmd_report(report_dir);
        if (vis->parsed()) return cmd_visualize(vis_grid, vis_prefix);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

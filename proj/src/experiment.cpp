#include "patchforge/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "patchforge/image_io.hpp"
#include "patchforge/parallel.hpp"
#include "patchforge/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace patchforge {

namespace {

void expect_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw std::invalid_argument(std::string("config: ") + section + " must be an object");
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : allowed)
            if (item.key() == k) ok = true;
        if (!ok)
            throw std::invalid_argument(std::string("config: unknown key \"") + item.key() +
                                        "\" in " + section);
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

PipelineConfig RunConfig::pipeline_config() const {
    PipelineConfig p;
    p.forest = forest;
    p.topics = topics;
    p.em = em;
    p.foldin_max_iters = foldin_max_iters;
    p.loop = loop;
    p.threshold_percentile = threshold_percentile;
    p.master_seed = seed;
    return p;
}

RunConfig parse_run_config(const json& j) {
    expect_keys(j, "the top level",
                {"seed", "threads", "output_dir", "ssl", "checkpoint_all", "export_grids",
                 "export_bow", "corpus", "features", "forest", "plsa", "loop",
                 "threshold_percentile"});
    RunConfig cfg;
    get_if(j, "seed", cfg.seed);
    get_if(j, "threads", cfg.threads);
    get_if(j, "output_dir", cfg.output_dir);
    get_if(j, "ssl", cfg.ssl);
    get_if(j, "checkpoint_all", cfg.checkpoint_all);
    get_if(j, "export_grids", cfg.export_grids);
    get_if(j, "export_bow", cfg.export_bow);
    get_if(j, "threshold_percentile", cfg.threshold_percentile);

    cfg.corpus.split.seed = cfg.seed;
    if (j.contains("corpus")) {
        const json& c = j.at("corpus");
        expect_keys(c, "corpus",
                    {"type", "root", "train_fraction", "labeled_fraction", "split_seed", "classes",
                     "images_per_class", "image_size", "background_fraction", "noise_sigma",
                     "stripe_amplitude", "angles_deg", "frequencies", "synth_seed"});
        get_if(c, "type", cfg.corpus.type);
        if (cfg.corpus.type != "synthetic" && cfg.corpus.type != "folder")
            throw std::invalid_argument("config: corpus.type must be \"synthetic\" or \"folder\"");
        get_if(c, "root", cfg.corpus.root);
        get_if(c, "train_fraction", cfg.corpus.split.train_fraction);
        get_if(c, "labeled_fraction", cfg.corpus.split.labeled_fraction);
        get_if(c, "split_seed", cfg.corpus.split.seed);
        get_if(c, "classes", cfg.corpus.synth.num_classes);
        get_if(c, "images_per_class", cfg.corpus.synth.images_per_class);
        get_if(c, "image_size", cfg.corpus.synth.image_size);
        get_if(c, "background_fraction", cfg.corpus.synth.background_fraction);
        get_if(c, "noise_sigma", cfg.corpus.synth.noise_sigma);
        get_if(c, "stripe_amplitude", cfg.corpus.synth.stripe_amplitude);
        cfg.corpus.synth.seed = cfg.seed;
        get_if(c, "synth_seed", cfg.corpus.synth.seed);
        if (c.contains("angles_deg")) {
            std::vector<double> angles = c.at("angles_deg").get<std::vector<double>>();
            std::vector<double> freqs(angles.size(), 0.25);
            if (c.contains("frequencies")) freqs = c.at("frequencies").get<std::vector<double>>();
            if (freqs.size() != angles.size())
                throw std::invalid_argument("config: corpus.frequencies length must match angles_deg");
            cfg.corpus.synth.textures.clear();
            for (std::size_t i = 0; i < angles.size(); ++i)
                cfg.corpus.synth.textures.push_back({angles[i], freqs[i]});
        } else if (c.contains("frequencies")) {
            throw std::invalid_argument("config: corpus.frequencies requires angles_deg");
        }
    }

    if (j.contains("features")) {
        const json& f = j.at("features");
        expect_keys(f, "features",
                    {"patch_size", "step_size", "max_edge", "orientation_bins", "spatial_cells"});
        get_if(f, "patch_size", cfg.grid.patch_size);
        get_if(f, "step_size", cfg.grid.step_size);
        get_if(f, "max_edge", cfg.grid.max_edge);
        get_if(f, "orientation_bins", cfg.grid.orientation_bins);
        get_if(f, "spatial_cells", cfg.grid.spatial_cells);
        cfg.grid.validate();
    }

    if (j.contains("forest")) {
        const json& f = j.at("forest");
        expect_keys(f, "forest",
                    {"trees", "leaves", "candidate_features", "candidate_thresholds",
                     "min_node_size", "bagging_fraction"});
        get_if(f, "trees", cfg.forest.num_trees);
        get_if(f, "leaves", cfg.forest.max_leaves);
        get_if(f, "candidate_features", cfg.forest.candidate_features);
        get_if(f, "candidate_thresholds", cfg.forest.candidate_thresholds);
        get_if(f, "min_node_size", cfg.forest.min_node_size);
        get_if(f, "bagging_fraction", cfg.forest.bagging_fraction);
        cfg.forest.validate();
    }

    if (j.contains("plsa")) {
        const json& p = j.at("plsa");
        expect_keys(p, "plsa",
                    {"topics", "max_iters", "rel_tol", "smoothing_eps", "foldin_max_iters"});
        get_if(p, "topics", cfg.topics);
        get_if(p, "max_iters", cfg.em.max_iters);
        get_if(p, "rel_tol", cfg.em.rel_tol);
        get_if(p, "smoothing_eps", cfg.em.smoothing_eps);
        get_if(p, "foldin_max_iters", cfg.foldin_max_iters);
        cfg.em.validate();
        if (cfg.topics < 1) throw std::invalid_argument("config: plsa.topics must be >= 1");
        if (cfg.foldin_max_iters < 1)
            throw std::invalid_argument("config: plsa.foldin_max_iters must be >= 1");
    }

    if (j.contains("loop")) {
        const json& l = j.at("loop");
        expect_keys(l, "loop",
                    {"max_feedback_iters", "shift_tol", "keep_best", "validation_fraction",
                     "freeze_dominant_topics"});
        get_if(l, "max_feedback_iters", cfg.loop.max_feedback_iters);
        get_if(l, "shift_tol", cfg.loop.shift_tol);
        get_if(l, "keep_best", cfg.loop.keep_best);
        get_if(l, "validation_fraction", cfg.loop.validation_fraction);
        get_if(l, "freeze_dominant_topics", cfg.loop.freeze_dominant_topics);
        cfg.loop.validate();
    }

    if (cfg.corpus.type == "folder" && cfg.corpus.root.empty())
        throw std::invalid_argument("config: corpus.root is required for a folder corpus");
    if (!(cfg.threshold_percentile >= 0.0 && cfg.threshold_percentile <= 100.0))
        throw std::invalid_argument("config: threshold_percentile must be in [0, 100]");
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

json run_config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    j["output_dir"] = cfg.output_dir;
    j["ssl"] = cfg.ssl;
    j["checkpoint_all"] = cfg.checkpoint_all;
    j["export_grids"] = cfg.export_grids;
    j["export_bow"] = cfg.export_bow;
    j["threshold_percentile"] = cfg.threshold_percentile;
    json c;
    c["type"] = cfg.corpus.type;
    if (cfg.corpus.type == "folder") c["root"] = cfg.corpus.root;
    c["train_fraction"] = cfg.corpus.split.train_fraction;
    c["labeled_fraction"] = cfg.corpus.split.labeled_fraction;
    c["split_seed"] = cfg.corpus.split.seed;
    if (cfg.corpus.type == "synthetic") {
        c["classes"] = cfg.corpus.synth.num_classes;
        c["images_per_class"] = cfg.corpus.synth.images_per_class;
        c["image_size"] = cfg.corpus.synth.image_size;
        c["background_fraction"] = cfg.corpus.synth.background_fraction;
        c["noise_sigma"] = cfg.corpus.synth.noise_sigma;
        c["stripe_amplitude"] = cfg.corpus.synth.stripe_amplitude;
        c["synth_seed"] = cfg.corpus.synth.seed;
        if (!cfg.corpus.synth.textures.empty()) {
            std::vector<double> angles, freqs;
            for (const auto& t : cfg.corpus.synth.textures) {
                angles.push_back(t.angle_deg);
                freqs.push_back(t.frequency);
            }
            c["angles_deg"] = angles;
            c["frequencies"] = freqs;
        }
    }
    j["corpus"] = c;
    j["features"] = {{"patch_size", cfg.grid.patch_size},
                     {"step_size", cfg.grid.step_size},
                     {"max_edge", cfg.grid.max_edge},
                     {"orientation_bins", cfg.grid.orientation_bins},
                     {"spatial_cells", cfg.grid.spatial_cells}};
    j["forest"] = {{"trees", cfg.forest.num_trees},
                   {"leaves", cfg.forest.max_leaves},
                   {"candidate_features", cfg.forest.candidate_features},
                   {"candidate_thresholds", cfg.forest.candidate_thresholds},
                   {"min_node_size", cfg.forest.min_node_size},
                   {"bagging_fraction", cfg.forest.bagging_fraction}};
    j["plsa"] = {{"topics", cfg.topics},
                 {"max_iters", cfg.em.max_iters},
                 {"rel_tol", cfg.em.rel_tol},
                 {"smoothing_eps", cfg.em.smoothing_eps},
                 {"foldin_max_iters", cfg.foldin_max_iters}};
    j["loop"] = {{"max_feedback_iters", cfg.loop.max_feedback_iters},
                 {"shift_tol", cfg.loop.shift_tol},
                 {"keep_best", cfg.loop.keep_best},
                 {"validation_fraction", cfg.loop.validation_fraction},
                 {"freeze_dominant_topics", cfg.loop.freeze_dominant_topics}};
    return j;
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

PreparedData prepare_experiment(const RunConfig& cfg) {
    if (cfg.threads) set_max_threads(cfg.threads);

    LoadedCorpus loaded = cfg.corpus.type == "synthetic"
                              ? generate_synthetic(cfg.corpus.synth, cfg.corpus.split)
                              : load_folder_corpus(cfg.corpus.root, cfg.corpus.split);

    PreparedData data;
    data.corpus = loaded.corpus;
    data.class_names = loaded.corpus.class_names;

    const std::size_t n_docs = loaded.corpus.docs.size();
    std::vector<std::vector<PatchDescriptor>> features(n_docs);
    parallel_for(n_docs, [&](std::size_t d) {
        RasterImage img = resize_max_edge(loaded.images[d], cfg.grid.max_edge);
        features[d] = extract_dense(img, cfg.grid, loaded.corpus.docs[d].id);
    });

    // validation holdout: stratified over labeled training documents; every
    // class keeps at least one labeled document in the fit set
    std::vector<char> in_validation(n_docs, 0);
    if (cfg.loop.validation_fraction > 0.0) {
        for (std::size_t c = 0; c < loaded.corpus.class_names.size(); ++c) {
            std::vector<std::size_t> members;
            for (std::size_t d = 0; d < n_docs; ++d)
                if (loaded.corpus.is_labeled[d] &&
                    loaded.corpus.docs[d].label == static_cast<std::int32_t>(c))
                    members.push_back(d);
            if (members.size() < 2) continue;
            Rng rng(mix_seed(cfg.seed ^ (0x56414C00ULL + c)));
            for (std::size_t i = members.size(); i > 1; --i)
                std::swap(members[i - 1], members[rng.index(i)]);
            std::size_t take = static_cast<std::size_t>(
                std::llround(cfg.loop.validation_fraction * static_cast<double>(members.size())));
            take = std::min(take, members.size() - 1);
            for (std::size_t i = 0; i < take; ++i) in_validation[members[i]] = 1;
        }
    }

    data.inputs.num_classes = static_cast<std::uint32_t>(loaded.corpus.class_names.size());
    data.inputs.ssl_mode = cfg.ssl;
    for (std::size_t d = 0; d < n_docs; ++d) {
        const Document& doc = loaded.corpus.docs[d];
        if (loaded.corpus.is_test[d]) {
            data.test.push_back({std::move(features[d]), doc.label});
            data.test_doc_ids.push_back(doc.id);
        } else if (in_validation[d]) {
            data.validation.push_back({std::move(features[d]), doc.label});
            data.validation_doc_ids.push_back(doc.id);
        } else if (loaded.corpus.is_train[d]) {
            if (!loaded.object_masks.empty())
                data.fit_patch_truth.push_back(
                    patch_object_truth(loaded.object_masks[d], loaded.images[d].width,
                                       loaded.images[d].height, cfg.grid));
            data.inputs.docs.push_back(std::move(features[d]));
            data.inputs.labels.push_back(doc.label);
            data.inputs.labeled.push_back(loaded.corpus.is_labeled[d]);
            data.fit_doc_ids.push_back(doc.id);
        }
    }
    data.pipeline = cfg.pipeline_config();
    return data;
}

namespace {

void write_metrics_csv(const std::string& path, const std::vector<IterationMetrics>& metrics) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os << "iteration,train_acc,val_acc,test_acc,label_shift,em_iters,wall_seconds\n";
    for (const auto& m : metrics) {
        os << m.iteration << ',' << format_double(m.train_acc) << ',' << format_double(m.val_acc)
           << ',' << format_double(m.test_acc) << ',' << format_double(m.label_shift) << ','
           << m.em_iters << ',' << format_double(m.wall_seconds) << '\n';
    }
}

json metrics_to_json(const IterationMetrics& m) {
    return json{{"iteration", m.iteration},   {"train_acc", m.train_acc},
                {"val_acc", m.val_acc},       {"test_acc", m.test_acc},
                {"label_shift", m.label_shift}, {"em_iters", m.em_iters},
                {"wall_seconds", m.wall_seconds}};
}

void write_split_manifest(const std::string& path, const PreparedData& data) {
    json j;
    j["class_names"] = data.class_names;
    json docs = json::array();
    for (std::size_t d = 0; d < data.corpus.docs.size(); ++d) {
        const Document& doc = data.corpus.docs[d];
        std::string split = data.corpus.is_test[d] ? "test" : "train";
        bool validation =
            std::find(data.validation_doc_ids.begin(), data.validation_doc_ids.end(), doc.id) !=
            data.validation_doc_ids.end();
        docs.push_back(json{{"id", doc.id},
                            {"path", doc.path},
                            {"label", doc.label},
                            {"split", split},
                            {"labeled", static_cast<bool>(data.corpus.is_labeled[d])},
                            {"validation", validation}});
    }
    j["documents"] = docs;
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os << j.dump(2) << '\n';
}

void save_state_models(const std::string& dir, const std::string& tag, const FeedbackState& state) {
    save_forest(dir + "/forest" + tag + ".pff", state.forest);
    save_plsa(dir + "/plsa" + tag + ".pfp", state.plsa);
}

void write_predictions_csv(const std::string& path, const std::vector<Prediction>& preds,
                           const EvalSet& docs, const std::vector<std::uint32_t>& doc_ids,
                           const std::vector<std::int32_t>& model_classes,
                           const std::vector<std::string>& class_names) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os << "doc_id,truth,predicted";
    for (std::int32_t c : model_classes) os << ",prob_" << class_names[static_cast<std::size_t>(c)];
    for (std::int32_t c : model_classes) os << ",det_" << class_names[static_cast<std::size_t>(c)];
    os << '\n';
    for (std::size_t i = 0; i < preds.size(); ++i) {
        os << doc_ids[i] << ',' << docs[i].label << ',' << preds[i].predicted;
        for (double p : preds[i].class_probs) os << ',' << format_double(p);
        if (preds[i].detections.empty())
            for (std::size_t m = 0; m < preds[i].class_probs.size(); ++m) os << ",0";
        else
            for (char d : preds[i].detections) os << ',' << (d ? 1 : 0);
        os << '\n';
    }
}

} // namespace

RunSummary run_experiment(const RunConfig& cfg) {
    PreparedData data = prepare_experiment(cfg);
    fs::create_directories(cfg.output_dir);

    RunHistory history = cfg.ssl ? run_ssl(data.inputs, data.validation, data.test, data.pipeline)
                                 : run_supervised(data.inputs, data.validation, data.test,
                                                  data.pipeline);
    const FeedbackState& final_state = history.returned();

    // detection thresholds from the returned model's training soft labels
    std::vector<std::int32_t> to_model(data.inputs.num_classes, -1);
    for (std::size_t i = 0; i < final_state.model_classes.size(); ++i)
        to_model[static_cast<std::size_t>(final_state.model_classes[i])] =
            static_cast<std::int32_t>(i);
    std::vector<std::int32_t> model_label_of_doc(data.inputs.docs.size(), -1);
    for (std::size_t d = 0; d < data.inputs.docs.size(); ++d)
        if (data.inputs.labeled[d])
            model_label_of_doc[d] = to_model[static_cast<std::size_t>(data.inputs.labels[d])];
    ClassThresholds thresholds =
        derive_thresholds(final_state.image_labels, model_label_of_doc, cfg.threshold_percentile);

    std::vector<Prediction> test_preds =
        classify(data.test, final_state, data.pipeline, thresholds);
    double test_acc = data.test.empty() ? 0.0 : prediction_accuracy(test_preds, data.test);

    // artifacts
    write_split_manifest(cfg.output_dir + "/split_manifest.json", data);
    write_metrics_csv(cfg.output_dir + "/metrics.csv", history.metrics);
    save_state_models(cfg.output_dir, "", final_state);
    if (cfg.checkpoint_all)
        for (const auto& state : history.states)
            save_state_models(cfg.output_dir, "_iter" + std::to_string(state.iteration), state);

    if (cfg.export_bow) {
        std::vector<std::vector<std::uint32_t>> flat(data.inputs.docs.size());
        for (std::size_t d = 0; d < data.inputs.docs.size(); ++d) {
            auto assignments = leaf_assignments(final_state.forest, data.inputs.docs[d]);
            for (const auto& a : assignments) flat[d].insert(flat[d].end(), a.begin(), a.end());
        }
        BowMatrix bow = build_bow(flat, final_state.forest.codeword_count(), &data.fit_doc_ids);
        std::ofstream os(cfg.output_dir + "/bow.txt");
        if (!os) throw std::runtime_error("cannot open for write: " + cfg.output_dir + "/bow.txt");
        export_sparse(bow, os);
    }

    // per-document soft labels of the returned iteration
    {
        json arr = json::array();
        for (std::size_t d = 0; d < data.inputs.docs.size(); ++d) {
            std::vector<double> p(final_state.model_classes.size());
            for (std::size_t m = 0; m < p.size(); ++m) p[m] = final_state.image_labels.probs(m, d);
            arr.push_back(json{{"doc_id", data.fit_doc_ids[d]}, {"p_c", p}});
        }
        std::ofstream os(cfg.output_dir + "/soft_labels.json");
        if (!os)
            throw std::runtime_error("cannot open for write: " + cfg.output_dir +
                                     "/soft_labels.json");
        os << arr.dump(2) << '\n';
    }

    if (cfg.export_grids) {
        fs::create_directories(cfg.output_dir + "/grids");
        for (std::size_t d = 0; d < data.inputs.docs.size(); ++d) {
            if (final_state.patch_labels.positions[d].empty()) continue;
            SoftLabelGrid grid = make_soft_label_grid(
                final_state.patch_labels.probs[d],
                static_cast<std::uint32_t>(final_state.model_classes.size()),
                final_state.patch_labels.positions[d]);
            save_soft_label_grid(cfg.output_dir + "/grids/doc_" +
                                     std::to_string(data.fit_doc_ids[d]) + ".pfs",
                                 grid);
        }
    }

    if (!data.test.empty())
        write_predictions_csv(cfg.output_dir + "/predictions.csv", test_preds, data.test,
                              data.test_doc_ids, final_state.model_classes, data.class_names);

    json manifest;
    json effective = run_config_to_json(cfg);
    manifest["config"] = effective;
    char hash_hex[20];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(effective.dump())));
    manifest["config_hash"] = hash_hex;
    manifest["class_names"] = data.class_names;
    manifest["model_classes"] = final_state.model_classes;
    json iters = json::array();
    for (const auto& m : history.metrics) iters.push_back(metrics_to_json(m));
    manifest["iterations"] = iters;
    manifest["best_iteration"] = history.best_index;
    manifest["returned_iteration"] = history.returned_index;
    manifest["thresholds"] = thresholds.h;
    manifest["test_accuracy"] = test_acc;
    {
        std::ofstream os(cfg.output_dir + "/manifest.json");
        if (!os)
            throw std::runtime_error("cannot open for write: " + cfg.output_dir + "/manifest.json");
        os << manifest.dump(2) << '\n';
    }

    // model bundle for the standalone classifier
    json model;
    model["forest_file"] = "forest.pff";
    model["plsa_file"] = "plsa.pfp";
    model["class_names"] = data.class_names;
    model["model_classes"] = final_state.model_classes;
    model["dominant_topics"] = final_state.topics.sets;
    model["topic_count"] = final_state.topics.topic_count;
    model["thresholds"] = thresholds.h;
    model["features"] = effective["features"];
    model["foldin_max_iters"] = cfg.foldin_max_iters;
    model["rel_tol"] = cfg.em.rel_tol;
    model["smoothing_eps"] = cfg.em.smoothing_eps;
    {
        std::ofstream os(cfg.output_dir + "/model.json");
        if (!os)
            throw std::runtime_error("cannot open for write: " + cfg.output_dir + "/model.json");
        os << model.dump(2) << '\n';
    }

    RunSummary summary;
    summary.iterations = history.metrics;
    summary.best_iteration = history.best_index;
    summary.returned_iteration = history.returned_index;
    summary.test_accuracy = test_acc;
    summary.model_classes = final_state.model_classes;
    return summary;
}

} // namespace patchforge

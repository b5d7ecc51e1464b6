#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchforge/datasets.hpp"
#include "patchforge/pipeline.hpp"

namespace patchforge {

struct CorpusConfig {
    std::string type = "synthetic"; // or "folder"
    std::string root;
    SplitConfig split;
    SyntheticSpec synth;
};

struct RunConfig {
    std::uint64_t seed = 0;
    unsigned threads = 0;
    std::string output_dir = "out";
    bool ssl = false;
    bool checkpoint_all = false;
    bool export_grids = true;
    bool export_bow = true;
    CorpusConfig corpus;
    GridConfig grid;
    ForestConfig forest;
    std::uint32_t topics = 20;
    EmConfig em;
    std::uint32_t foldin_max_iters = 100;
    LoopConfig loop;
    double threshold_percentile = 10.0;

    PipelineConfig pipeline_config() const;
};

// Strict parse: unknown keys are errors naming the key. Missing keys keep
// their defaults.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);

// FNV-1a over a byte string, used to fingerprint the effective config.
std::uint64_t fnv1a64(const std::string& bytes);

// Corpus loading, feature extraction and the train / validation / test
// carve-up, ready for run_loop. Validation documents are held out of
// training entirely, stratified per class over the labeled training
// documents (each class keeps at least one labeled document to train on).
struct PreparedData {
    TrainInputs inputs;
    EvalSet validation;
    EvalSet test;
    PipelineConfig pipeline;
    std::vector<std::uint32_t> fit_doc_ids;
    std::vector<std::uint32_t> validation_doc_ids;
    std::vector<std::uint32_t> test_doc_ids;
    std::vector<std::vector<std::uint8_t>> fit_patch_truth; // synthetic corpora only
    std::vector<std::string> class_names;
    Corpus corpus;
};
PreparedData prepare_experiment(const RunConfig& cfg);

struct RunSummary {
    std::vector<IterationMetrics> iterations;
    std::size_t best_iteration = 0;
    std::size_t returned_iteration = 0;
    double test_accuracy = 0.0;
    std::vector<std::int32_t> model_classes;
};

// End-to-end run that writes every artifact (manifest, metrics, snapshots,
// soft labels, predictions) under cfg.output_dir.
RunSummary run_experiment(const RunConfig& cfg);

} // namespace patchforge

#pragma once

#include <cstdint>
#include <vector>

#include "patchforge/bow.hpp"
#include "patchforge/forest.hpp"
#include "patchforge/plsa.hpp"
#include "patchforge/softlabel.hpp"

namespace patchforge {

struct LoopConfig {
    std::uint32_t max_feedback_iters = 10;
    double shift_tol = 0.0; // <= 0 means 0.01 * num_classes
    bool keep_best = true; // return the iteration with the best validation accuracy
    double validation_fraction = 0.2;
    bool freeze_dominant_topics = false; // keep iteration-0 topic sets through the loop

    void validate() const;
};

struct PipelineConfig {
    ForestConfig forest; // rng_seed is overridden per iteration
    std::uint32_t topics = 20;
    EmConfig em; // rng_seed is overridden per iteration
    std::uint32_t foldin_max_iters = 100;
    LoopConfig loop;
    double threshold_percentile = 10.0;
    std::uint64_t master_seed = 0;
};

// Training documents, already reduced to descriptors. labels hold ground
// truth (or -1 when unknown); labeled marks what training may look at. In
// supervised mode every document must be labeled and every class covered.
// In semi-supervised mode the class set is whatever the labeled subset
// covers, so classes without any labeled document simply cannot be
// predicted.
struct TrainInputs {
    std::vector<std::vector<PatchDescriptor>> docs;
    std::vector<std::int32_t> labels;
    std::vector<char> labeled;
    std::uint32_t num_classes = 0;
    bool ssl_mode = false;

    void validate() const;
};

struct EvalDoc {
    std::vector<PatchDescriptor> patches;
    std::int32_t label = -1;
};
using EvalSet = std::vector<EvalDoc>;

struct FeedbackState {
    std::uint32_t iteration = 0;
    std::vector<std::int32_t> model_classes; // corpus class id per model class
    ForestCodebook forest;
    PlsaModel plsa;
    DominantTopicMap topics;
    ImageSoftLabels image_labels; // model classes x training docs
    PatchSoftLabels patch_labels;
    double train_accuracy = 0.0; // argmax soft label vs truth, labeled docs
    double label_shift = 0.0; // L1 change of image soft labels vs the previous iteration
    std::uint32_t em_iters = 0;
};

// Weak-label bootstrap: every patch inherits its image's one-hot label (in
// semi-supervised mode only labeled images train the forest), the codebook
// and topic model are fit, and soft labels are derived for all training
// documents and patches.
FeedbackState initial_learning(const TrainInputs& in, const PipelineConfig& cfg);

// One re-learning pass: patches take the previous iteration's soft labels,
// the forest / codeword histograms / topic model are retrained with a fresh
// RNG stream derived from master_seed and the iteration number, and soft
// labels are recomputed.
FeedbackState feedback_step(const TrainInputs& in, const FeedbackState& prev,
                            const PipelineConfig& cfg);

struct IterationMetrics {
    std::uint32_t iteration = 0;
    double train_acc = 0.0;
    double val_acc = 0.0;
    double test_acc = 0.0;
    double label_shift = 0.0;
    std::uint32_t em_iters = 0;
    double wall_seconds = 0.0;
};

struct RunHistory {
    std::vector<FeedbackState> states;
    std::vector<IterationMetrics> metrics;
    std::size_t best_index = 0; // highest validation accuracy, earliest on ties
    std::size_t returned_index = 0; // best_index when keep_best, else last

    const FeedbackState& returned() const { return states[returned_index]; }
};

// Full loop: initial learning, then feedback steps until the image soft
// labels stop moving (label_shift < shift_tol) or the iteration cap is hit.
// Validation and test documents are held out and scored by fold-in
// classification every iteration; either set may be empty.
RunHistory run_loop(const TrainInputs& in, const EvalSet& validation, const EvalSet& test,
                    const PipelineConfig& cfg);

// Mode-checked fronts for run_loop.
RunHistory run_supervised(const TrainInputs& in, const EvalSet& validation, const EvalSet& test,
                          const PipelineConfig& cfg);
RunHistory run_ssl(const TrainInputs& in, const EvalSet& validation, const EvalSet& test,
                   const PipelineConfig& cfg);

struct ClassThresholds {
    std::vector<double> h; // per model class
};

// Per-class detection thresholds: the q-th percentile (nearest-rank) of the
// training soft-label scores of each class's own labeled documents.
ClassThresholds derive_thresholds(const ImageSoftLabels& labels,
                                  const std::vector<std::int32_t>& model_class_of_doc,
                                  double percentile);

struct Prediction {
    std::int32_t predicted = -1; // corpus class id
    std::vector<double> class_probs; // over model classes
    std::vector<char> detections; // class_probs[m] > thresholds.h[m]
    bool degenerate = false; // empty document, uniform fallback
    std::uint32_t fold_iters = 0;
};

// Quantize, fold in, and apply the dominant-topic rule to held-out
// documents. thresholds may be empty, in which case no detection flags are
// produced.
std::vector<Prediction> classify(const EvalSet& docs, const FeedbackState& state,
                                 const PipelineConfig& cfg, const ClassThresholds& thresholds);

// Accuracy of argmax predictions over the documents that carry labels;
// returns 0 when none do.
double prediction_accuracy(const std::vector<Prediction>& preds, const EvalSet& docs);

} // namespace patchforge

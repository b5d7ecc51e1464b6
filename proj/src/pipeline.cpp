#include "patchforge/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "patchforge/parallel.hpp"
#include "patchforge/rng.hpp"

namespace patchforge {

void LoopConfig::validate() const {
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        throw std::invalid_argument("loop: validation_fraction must be in [0, 1)");
}

void TrainInputs::validate() const {
    if (docs.empty()) throw std::invalid_argument("pipeline: no training documents");
    if (labels.size() != docs.size() || labeled.size() != docs.size())
        throw std::invalid_argument("pipeline: labels/labeled length mismatch");
    if (num_classes < 1) throw std::invalid_argument("pipeline: num_classes must be >= 1");
    for (std::size_t n = 0; n < docs.size(); ++n) {
        if (labels[n] >= static_cast<std::int32_t>(num_classes))
            throw std::invalid_argument("pipeline: label out of range for document " +
                                        std::to_string(n));
        if (labeled[n] && labels[n] < 0)
            throw std::invalid_argument("pipeline: document " + std::to_string(n) +
                                        " is marked labeled but has no label");
        if (!ssl_mode && !labeled[n])
            throw std::invalid_argument(
                "pipeline: supervised mode requires every training document labeled (document " +
                std::to_string(n) + " is not)");
    }
}

namespace {

std::uint64_t forest_seed(std::uint64_t master, std::uint32_t iteration) {
    return mix_seed(mix_seed(master ^ iteration) ^ 0x464F5245ULL);
}

std::uint64_t plsa_seed(std::uint64_t master, std::uint32_t iteration) {
    return mix_seed(mix_seed(master ^ iteration) ^ 0x504C5341ULL);
}

// Model class set: in supervised mode all corpus classes (each of which must
// have a labeled document), in semi-supervised mode the classes the labeled
// subset covers.
std::vector<std::int32_t> model_class_set(const TrainInputs& in) {
    std::vector<char> seen(in.num_classes, 0);
    std::size_t labeled_docs = 0;
    for (std::size_t n = 0; n < in.docs.size(); ++n) {
        if (in.labeled[n]) {
            seen[static_cast<std::size_t>(in.labels[n])] = 1;
            ++labeled_docs;
        }
    }
    if (labeled_docs == 0) throw std::invalid_argument("pipeline: no labeled documents");

    std::vector<std::int32_t> classes;
    for (std::uint32_t c = 0; c < in.num_classes; ++c) {
        if (seen[c])
            classes.push_back(static_cast<std::int32_t>(c));
        else if (!in.ssl_mode)
            throw std::invalid_argument(
                "pipeline: class " + std::to_string(c) +
                " has no labeled training documents, topic sets cannot be derived for it");
    }
    return classes;
}

std::vector<std::int32_t> corpus_to_model_map(const std::vector<std::int32_t>& model_classes,
                                              std::uint32_t num_classes) {
    std::vector<std::int32_t> map(num_classes, -1);
    for (std::size_t i = 0; i < model_classes.size(); ++i)
        map[static_cast<std::size_t>(model_classes[i])] = static_cast<std::int32_t>(i);
    return map;
}

std::size_t total_patches(const TrainInputs& in, bool labeled_only) {
    std::size_t n = 0;
    for (std::size_t d = 0; d < in.docs.size(); ++d)
        if (!labeled_only || in.labeled[d]) n += in.docs[d].size();
    return n;
}

// Everything after forest training: quantization, topic model, topic sets,
// soft labels, metrics. Shared by the initial pass and the feedback steps.
FeedbackState finish_state(const TrainInputs& in, const PipelineConfig& cfg,
                           std::uint32_t iteration, std::vector<std::int32_t> model_classes,
                           ForestCodebook forest, const FeedbackState* prev) {
    FeedbackState state;
    state.iteration = iteration;
    state.model_classes = std::move(model_classes);
    state.forest = std::move(forest);

    const std::size_t n_docs = in.docs.size();
    const std::uint32_t n_model = static_cast<std::uint32_t>(state.model_classes.size());
    const std::vector<std::int32_t> to_model = corpus_to_model_map(state.model_classes,
                                                                   in.num_classes);

    // codeword assignments, kept per patch for the patch-level pass
    std::vector<std::vector<std::vector<std::uint32_t>>> assignments(n_docs);
    parallel_for(n_docs, [&](std::size_t d) {
        assignments[d] = leaf_assignments(state.forest, in.docs[d]);
    });

    std::vector<std::vector<std::uint32_t>> flat(n_docs);
    for (std::size_t d = 0; d < n_docs; ++d) {
        flat[d].reserve(assignments[d].size() * state.forest.trees.size());
        for (const auto& per_patch : assignments[d])
            flat[d].insert(flat[d].end(), per_patch.begin(), per_patch.end());
    }
    BowMatrix bow = build_bow(flat, state.forest.codeword_count());

    EmConfig em = cfg.em;
    em.rng_seed = plsa_seed(cfg.master_seed, iteration);
    state.plsa = train_plsa(bow, cfg.topics, em);
    state.em_iters = static_cast<std::uint32_t>(state.plsa.log_likelihood_trace.size());

    std::vector<std::int32_t> model_label_of_doc(n_docs, -1);
    for (std::size_t d = 0; d < n_docs; ++d)
        if (in.labeled[d]) model_label_of_doc[d] = to_model[static_cast<std::size_t>(in.labels[d])];

    if (cfg.loop.freeze_dominant_topics && prev) {
        state.topics = prev->topics;
    } else {
        Mat czd = class_topic_distribution(state.plsa, model_label_of_doc, n_model);
        state.topics = dominant_topics(czd);
    }

    state.image_labels = image_soft_labels(state.plsa, state.topics);

    // patch-level soft labels
    const double share = 1.0 / static_cast<double>(state.forest.trees.size());
    state.patch_labels.num_classes = n_model;
    state.patch_labels.probs.resize(n_docs);
    state.patch_labels.positions.resize(n_docs);
    std::vector<std::size_t> degenerate_per_doc(n_docs, 0);
    parallel_for(n_docs, [&](std::size_t d) {
        TopicPosterior post = topic_posterior(state.plsa, d);
        const auto& doc_patches = in.docs[d];
        auto& probs = state.patch_labels.probs[d];
        auto& positions = state.patch_labels.positions[d];
        probs.resize(doc_patches.size() * n_model);
        positions.resize(doc_patches.size());
        std::vector<std::pair<std::uint32_t, double>> quantized(state.forest.trees.size());
        for (std::size_t i = 0; i < doc_patches.size(); ++i) {
            for (std::size_t r = 0; r < quantized.size(); ++r)
                quantized[r] = {assignments[d][i][r], share};
            std::vector<double> ptd = patch_topic_distribution(post.rows, quantized);
            bool degenerate = false;
            std::vector<double> label = classify_soft_label(ptd, state.topics, &degenerate);
            if (degenerate) ++degenerate_per_doc[d];
            std::copy(label.begin(), label.end(), probs.begin() + i * n_model);
            positions[i] = {doc_patches[i].row, doc_patches[i].col};
        }
    });
    for (std::size_t d = 0; d < n_docs; ++d)
        state.patch_labels.degenerate_patches += degenerate_per_doc[d];

    // training accuracy over labeled documents
    std::size_t labeled_count = 0, correct = 0;
    for (std::size_t d = 0; d < n_docs; ++d) {
        if (model_label_of_doc[d] < 0) continue;
        ++labeled_count;
        std::size_t arg = 0;
        for (std::size_t m = 1; m < n_model; ++m)
            if (state.image_labels.probs(m, d) > state.image_labels.probs(arg, d)) arg = m;
        if (static_cast<std::int32_t>(arg) == model_label_of_doc[d]) ++correct;
    }
    state.train_accuracy =
        labeled_count == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(labeled_count);

    if (prev) {
        double shift = 0.0;
        for (std::size_t d = 0; d < n_docs; ++d)
            for (std::uint32_t m = 0; m < n_model; ++m)
                shift += std::abs(state.image_labels.probs(m, d) - prev->image_labels.probs(m, d));
        state.label_shift = shift / static_cast<double>(n_docs);
    }
    return state;
}

} // namespace

FeedbackState initial_learning(const TrainInputs& in, const PipelineConfig& cfg) {
    in.validate();
    cfg.em.validate();
    std::vector<std::int32_t> model_classes = model_class_set(in);
    const std::vector<std::int32_t> to_model = corpus_to_model_map(model_classes, in.num_classes);
    const std::uint32_t n_model = static_cast<std::uint32_t>(model_classes.size());

    // weak labels: each labeled image's patches take its one-hot label
    std::vector<LabeledPatch> patches;
    patches.reserve(total_patches(in, true));
    for (std::size_t d = 0; d < in.docs.size(); ++d) {
        if (!in.labeled[d]) continue;
        std::size_t model_cls =
            static_cast<std::size_t>(to_model[static_cast<std::size_t>(in.labels[d])]);
        ClassHistogram label = ClassHistogram::one_hot(model_cls, n_model);
        for (const auto& p : in.docs[d]) patches.push_back({p, label, 1.0});
    }

    ForestConfig fc = cfg.forest;
    fc.rng_seed = forest_seed(cfg.master_seed, 0);
    ForestCodebook forest = train_forest(patches, fc);
    return finish_state(in, cfg, 0, std::move(model_classes), std::move(forest), nullptr);
}

FeedbackState feedback_step(const TrainInputs& in, const FeedbackState& prev,
                            const PipelineConfig& cfg) {
    in.validate();
    if (prev.patch_labels.probs.size() != in.docs.size())
        throw std::invalid_argument("feedback_step: state does not match the inputs");
    const std::uint32_t iteration = prev.iteration + 1;
    const std::uint32_t n_model = static_cast<std::uint32_t>(prev.model_classes.size());

    // every patch now trains with its soft label from the previous pass
    std::vector<LabeledPatch> patches;
    patches.reserve(total_patches(in, false));
    std::vector<double> label(n_model);
    for (std::size_t d = 0; d < in.docs.size(); ++d) {
        const auto& probs = prev.patch_labels.probs[d];
        for (std::size_t i = 0; i < in.docs[d].size(); ++i) {
            label.assign(probs.begin() + i * n_model, probs.begin() + (i + 1) * n_model);
            patches.push_back({in.docs[d][i], feedback_histogram(label), 1.0});
        }
    }

    ForestConfig fc = cfg.forest;
    fc.rng_seed = forest_seed(cfg.master_seed, iteration);
    ForestCodebook forest = train_forest(patches, fc);
    return finish_state(in, cfg, iteration, prev.model_classes, std::move(forest), &prev);
}

RunHistory run_loop(const TrainInputs& in, const EvalSet& validation, const EvalSet& test,
                    const PipelineConfig& cfg) {
    cfg.loop.validate();
    using clock = std::chrono::steady_clock;
    RunHistory history;

    auto evaluate = [&](const FeedbackState& state, double wall) {
        IterationMetrics m;
        m.iteration = state.iteration;
        m.train_acc = state.train_accuracy;
        m.label_shift = state.label_shift;
        m.em_iters = state.em_iters;
        if (!validation.empty())
            m.val_acc = prediction_accuracy(classify(validation, state, cfg, {}), validation);
        if (!test.empty()) m.test_acc = prediction_accuracy(classify(test, state, cfg, {}), test);
        m.wall_seconds = wall;
        history.metrics.push_back(m);
    };

    auto t0 = clock::now();
    history.states.push_back(initial_learning(in, cfg));
    evaluate(history.states.back(), std::chrono::duration<double>(clock::now() - t0).count());

    const double shift_tol = cfg.loop.shift_tol > 0.0
                                 ? cfg.loop.shift_tol
                                 : 0.01 * static_cast<double>(history.states[0].model_classes.size());

    for (std::uint32_t it = 1; it <= cfg.loop.max_feedback_iters; ++it) {
        t0 = clock::now();
        FeedbackState state = feedback_step(in, history.states.back(), cfg);
        history.states.push_back(std::move(state));
        evaluate(history.states.back(), std::chrono::duration<double>(clock::now() - t0).count());
        if (history.states.back().label_shift < shift_tol) break;
    }

    if (validation.empty()) {
        history.best_index = history.states.size() - 1;
    } else {
        history.best_index = 0;
        for (std::size_t i = 1; i < history.metrics.size(); ++i)
            if (history.metrics[i].val_acc > history.metrics[history.best_index].val_acc)
                history.best_index = i;
    }
    history.returned_index = cfg.loop.keep_best ? history.best_index : history.states.size() - 1;
    return history;
}

RunHistory run_supervised(const TrainInputs& in, const EvalSet& validation, const EvalSet& test,
                          const PipelineConfig& cfg) {
    if (in.ssl_mode)
        throw std::invalid_argument("run_supervised: inputs are flagged semi-supervised");
    return run_loop(in, validation, test, cfg);
}

RunHistory run_ssl(const TrainInputs& in, const EvalSet& validation, const EvalSet& test,
                   const PipelineConfig& cfg) {
    if (!in.ssl_mode) throw std::invalid_argument("run_ssl: inputs are not flagged semi-supervised");
    return run_loop(in, validation, test, cfg);
}

ClassThresholds derive_thresholds(const ImageSoftLabels& labels,
                                  const std::vector<std::int32_t>& model_class_of_doc,
                                  double percentile) {
    if (!(percentile >= 0.0 && percentile <= 100.0))
        throw std::invalid_argument("derive_thresholds: percentile must be in [0, 100]");
    if (model_class_of_doc.size() != labels.probs.cols)
        throw std::invalid_argument("derive_thresholds: label list length mismatch");

    const std::size_t M = labels.probs.rows;
    ClassThresholds out;
    out.h.resize(M);
    for (std::size_t m = 0; m < M; ++m) {
        std::vector<double> scores;
        for (std::size_t n = 0; n < model_class_of_doc.size(); ++n)
            if (model_class_of_doc[n] == static_cast<std::int32_t>(m))
                scores.push_back(labels.probs(m, n));
        if (scores.empty())
            throw std::invalid_argument("derive_thresholds: class " + std::to_string(m) +
                                        " has no labeled documents");
        std::sort(scores.begin(), scores.end());
        std::size_t rank = static_cast<std::size_t>(
            std::ceil(percentile / 100.0 * static_cast<double>(scores.size())));
        if (rank < 1) rank = 1;
        out.h[m] = scores[rank - 1];
    }
    return out;
}

std::vector<Prediction> classify(const EvalSet& docs, const FeedbackState& state,
                                 const PipelineConfig& cfg, const ClassThresholds& thresholds) {
    if (!thresholds.h.empty() && thresholds.h.size() != state.model_classes.size())
        throw std::invalid_argument("classify: threshold count does not match the class count");

    EmConfig fold_cfg = cfg.em;
    fold_cfg.max_iters = cfg.foldin_max_iters;

    std::vector<Prediction> out(docs.size());
    parallel_for(docs.size(), [&](std::size_t i) {
        std::vector<double> counts(state.forest.codeword_count(), 0.0);
        for (const auto& patch : docs[i].patches)
            for (std::uint32_t cw : leaf_codewords(state.forest, patch.values.data()))
                counts[cw] += 1.0;

        FoldInResult fold = fold_in(state.plsa, counts, fold_cfg);
        Prediction& p = out[i];
        bool degenerate = false;
        p.class_probs = classify_soft_label(fold.topic_dist, state.topics, &degenerate);
        p.degenerate = fold.degenerate || degenerate;
        p.fold_iters = fold.iters;

        std::size_t arg = 0;
        for (std::size_t m = 1; m < p.class_probs.size(); ++m)
            if (p.class_probs[m] > p.class_probs[arg]) arg = m;
        p.predicted = state.model_classes[arg];

        if (!thresholds.h.empty()) {
            p.detections.resize(p.class_probs.size());
            for (std::size_t m = 0; m < p.class_probs.size(); ++m)
                p.detections[m] = p.class_probs[m] > thresholds.h[m] ? 1 : 0;
        }
    });
    return out;
}

double prediction_accuracy(const std::vector<Prediction>& preds, const EvalSet& docs) {
    if (preds.size() != docs.size())
        throw std::invalid_argument("prediction_accuracy: size mismatch");
    std::size_t labeled = 0, correct = 0;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (docs[i].label < 0) continue;
        ++labeled;
        if (preds[i].predicted == docs[i].label) ++correct;
    }
    return labeled == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(labeled);
}

} // namespace patchforge

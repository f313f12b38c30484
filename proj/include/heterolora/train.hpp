#pragma once

#include <functional>
#include <optional>

#include "heterolora/allocator.hpp"
#include "heterolora/optimizer.hpp"
#include "heterolora/saliency.hpp"
#include "heterolora/tasks.hpp"
#include "heterolora/transformer.hpp"

namespace heterolora {

enum class AllocKind { None, Static, Dynamic };

const char* alloc_kind_name(AllocKind k);
AllocKind alloc_kind_from_name(const std::string& name);

struct AllocConfig {
    AllocKind kind = AllocKind::None;
    Proxy proxy = Proxy::GradNorm;
    Basis basis = Basis::Decomposed;
    AllocMode mode = AllocMode::Combined;
    double fraction = 0.25;
    int searches_per_epoch = 5;
    int batch_budget = 32;
};

struct TrainConfig {
    std::size_t batch_size = 16;
    int epochs = 30;
    double learning_rate = 1e-3;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    Precision precision = Precision::F64;
    AdapterConfig adapters;
    AllocConfig alloc;

    void validate() const;
};

struct EpochRecord {
    int epoch;  // 1-based
    double train_loss;
    double eval_loss;
    double eval_accuracy;
};

struct SearchRecord {
    int search_index;
    int epoch;
    std::size_t step;
    std::vector<ModuleId> enabled;
    std::size_t trainable_params;
};

struct RunMetrics {
    std::vector<EpochRecord> epochs;
    std::vector<SearchRecord> searches;
    std::size_t final_trainable = 0;
    double wall_clock_s = 0.0;  // reporting only; never persisted
    FrequencyMatrix frequency;

    double median_eval_accuracy() const;
    double mean_eval_accuracy() const;
};

// Cross-entropy over one batch, built on the active tape. Classification
// stacks the per-sample logits; copy-lm predicts the repeated half.
Tensor batch_loss(Model& model, const Batch& batch, const Dataset& data);

struct EvalResult {
    double accuracy;
    double mean_loss;
};

// Deterministic, mutation-free pass over an evaluation split.
EvalResult evaluate(Model& model, const std::vector<Sample>& eval_set, const Dataset& data);

// Invoked after each completed epoch; used by the CLI to stream metrics and
// keep a last-good checkpoint.
using EpochSink = std::function<void(const EpochRecord&)>;
using SearchSink = std::function<void(const SearchRecord&)>;

// The fine-tuning loop with the static/dynamic allocation hooks. The model
// arrives with adapters already injected. A non-finite loss aborts with a
// NumericError after the sinks have seen every completed epoch.
RunMetrics train(Model& model, const Dataset& data, const TrainConfig& cfg,
                 const EpochSink& on_epoch = {}, const SearchSink& on_search = {});

}  // namespace heterolora

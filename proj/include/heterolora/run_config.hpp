#pragma once

#include <optional>
#include <string>

#include "heterolora/saliency.hpp"
#include "heterolora/tasks.hpp"
#include "heterolora/train.hpp"

namespace heterolora {

// Which parameter groups train: adapters + head (the fine-tuning default),
// everything, or nothing (control runs).
enum class TrainScope { Adapters, All, None };

const char* train_scope_name(TrainScope s);
TrainScope train_scope_from_name(const std::string& name);

// The run configuration file: model, task, training, adapter, and allocation
// sections. Head type and class count derive from the task; one root seed
// feeds every random stream. Unknown keys are rejected with their path, and
// all defaults are materialised into the persisted effective config.
struct RunConfig {
    ModelConfig model;
    TaskSpec task;
    TrainConfig train;
    TrainScope scope = TrainScope::Adapters;
    std::string out_dir;  // empty = unset, resolved against HETEROLORA_OUT

    void set_seed(std::uint64_t seed);
    void finalize();  // derives head/vocab fields and validates consistency
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string effective_config_json(const RunConfig& cfg);

struct RunPaths {
    std::string dir;
    std::string config;
    std::string metrics;
    std::string checkpoint;
    std::string frequency_csv;
    std::string frequency_json;
    std::string scores;
};

// <out_root>/seed-<seed>: timestamp-free so reruns land on the same files.
RunPaths run_paths(const std::string& out_root, std::uint64_t seed);
std::string resolve_out_root(const RunConfig& cfg, const std::string& cli_out);

// Builds the model+dataset a config describes, with adapters injected and
// the training scope applied.
struct PreparedRun {
    Model model;
    Dataset data;
};
PreparedRun prepare_run(const RunConfig& cfg);

// Full train pipeline: runs training and writes effective config, metrics,
// checkpoint, and frequency artifacts into the run directory. On a training
// abort the partial metrics and last-good checkpoint remain on disk.
RunMetrics run_train_pipeline(const RunConfig& cfg, const std::string& out_root);

// One scoring pass; writes scores.csv. No training.
ScoreMap run_score_pipeline(const RunConfig& cfg, Proxy proxy, Basis basis, const std::string& out_root);

// Regenerates frequency.csv from the stored matrix inside a run directory.
// Returns the CSV path.
std::string run_export_frequency(const std::string& run_dir);

}  // namespace heterolora

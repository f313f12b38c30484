#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "heterolora/errors.hpp"

namespace heterolora {

// Desk-scale stand-ins for the fine-tuning datasets:
//   parity   — classify the XOR of the two marked token positions
//   copy_lm  — next-token prediction on a sequence that repeats its prefix
//   majority — classify which of the two value tokens dominates the sequence
enum class TaskKind { Parity, CopyLm, Majority };

const char* task_kind_name(TaskKind k);
TaskKind task_kind_from_name(const std::string& name);

struct TaskSpec {
    TaskKind kind = TaskKind::Parity;
    std::size_t vocab_size = 8;
    std::size_t seq_len = 8;
    int n_train = 512;
    int n_eval = 256;
    std::uint64_t seed = 0;
};

struct Sample {
    std::vector<int> tokens;
    int label = -1;  // unused for copy_lm
};

struct Batch {
    std::vector<Sample> samples;
};

// Materialised train/eval splits. Sequences are deduplicated across both
// splits, so the splits are disjoint by construction, and labels alternate,
// so classes balance within one. Batches are addressed by a global index;
// each epoch visits every training sample once in a seeded permutation.
class Dataset {
public:
    static Dataset make(const TaskSpec& spec);

    const TaskSpec& spec() const { return spec_; }
    const std::vector<Sample>& train() const { return train_; }
    const std::vector<Sample>& eval() const { return eval_; }

    std::size_t n_classes() const;
    std::size_t steps_per_epoch(std::size_t batch_size) const;
    Batch train_batch(std::size_t global_index, std::size_t batch_size) const;

private:
    TaskSpec spec_;
    std::vector<Sample> train_, eval_;
    mutable std::map<std::size_t, std::vector<std::size_t>> perm_cache_;
};

}  // namespace heterolora

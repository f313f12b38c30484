#include "heterolora/tasks.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "heterolora/rng.hpp"

namespace heterolora {

const char* task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::Parity: return "parity";
        case TaskKind::CopyLm: return "copy_lm";
        case TaskKind::Majority: return "majority";
    }
    return "?";
}

TaskKind task_kind_from_name(const std::string& name) {
    for (TaskKind k : {TaskKind::Parity, TaskKind::CopyLm, TaskKind::Majority}) {
        if (name == task_kind_name(k)) return k;
    }
    throw ConfigError("unknown task kind '" + name + "'");
}

namespace {

// Parity token alphabet: 0/1 plain bits, 2/3 marked bits.
constexpr int kMarkedBase = 2;

Sample make_parity(const TaskSpec& spec, Rng& rng, int want_label) {
    const std::size_t len = spec.seq_len;
    Sample s;
    s.tokens.resize(len);
    for (std::size_t i = 0; i < len; ++i) s.tokens[i] = static_cast<int>(rng.uniform_below(2));
    // exactly two marked positions carry the XOR content
    std::size_t p1 = static_cast<std::size_t>(rng.uniform_below(len));
    std::size_t p2 = static_cast<std::size_t>(rng.uniform_below(len - 1));
    if (p2 >= p1) ++p2;
    int b1 = static_cast<int>(rng.uniform_below(2));
    int b2 = (b1 ^ want_label);
    s.tokens[p1] = kMarkedBase + b1;
    s.tokens[p2] = kMarkedBase + b2;
    s.label = want_label;
    return s;
}

Sample make_majority(const TaskSpec& spec, Rng& rng, int want_label) {
    const std::size_t len = spec.seq_len;
    // strict majority of the label token, margin drawn uniformly
    const std::size_t min_k = len / 2 + 1;
    const std::size_t k = min_k + static_cast<std::size_t>(rng.uniform_below(len - min_k + 1));
    Sample s;
    s.tokens.assign(len, 1 - want_label);
    for (std::size_t i = 0; i < k; ++i) s.tokens[i] = want_label;
    rng.shuffle(s.tokens);
    s.label = want_label;
    return s;
}

Sample make_copy_lm(const TaskSpec& spec, Rng& rng) {
    const std::size_t half = spec.seq_len / 2;
    Sample s;
    s.tokens.resize(2 * half);
    for (std::size_t i = 0; i < half; ++i) {
        s.tokens[i] = static_cast<int>(rng.uniform_below(spec.vocab_size));
        s.tokens[half + i] = s.tokens[i];
    }
    return s;
}

}  // namespace

Dataset Dataset::make(const TaskSpec& spec) {
    if (spec.n_train <= 0 || spec.n_eval < 0) throw ConfigError("task: n_train must be positive");
    if (spec.seq_len < 2) throw ConfigError("task: seq_len must be >= 2");
    switch (spec.kind) {
        case TaskKind::Parity:
            if (spec.vocab_size < 4) throw ConfigError("parity task needs vocab_size >= 4");
            break;
        case TaskKind::Majority:
            if (spec.vocab_size < 2) throw ConfigError("majority task needs vocab_size >= 2");
            break;
        case TaskKind::CopyLm:
            if (spec.vocab_size < 2) throw ConfigError("copy_lm task needs vocab_size >= 2");
            if (spec.seq_len % 2 != 0) throw ConfigError("copy_lm task needs an even seq_len");
            break;
    }

    Dataset ds;
    ds.spec_ = spec;
    Rng rng(hash_label(spec.seed, "task." + std::string(task_kind_name(spec.kind))));

    std::set<std::vector<int>> seen;
    const int total = spec.n_train + spec.n_eval;
    int made = 0;
    long attempts = 0;
    const long max_attempts = 1000L * total + 1000;
    while (made < total) {
        if (++attempts > max_attempts) {
            throw ConfigError("task: sample space too small to draw " + std::to_string(total) +
                              " distinct sequences");
        }
        Sample s;
        switch (spec.kind) {
            case TaskKind::Parity: s = make_parity(spec, rng, made % 2); break;
            case TaskKind::Majority: s = make_majority(spec, rng, made % 2); break;
            case TaskKind::CopyLm: s = make_copy_lm(spec, rng); break;
        }
        if (!seen.insert(s.tokens).second) continue;  // dedupe keeps the splits disjoint
        if (made < spec.n_train) {
            ds.train_.push_back(std::move(s));
        } else {
            ds.eval_.push_back(std::move(s));
        }
        ++made;
    }
    return ds;
}

std::size_t Dataset::n_classes() const {
    return spec_.kind == TaskKind::CopyLm ? spec_.vocab_size : 2;
}

std::size_t Dataset::steps_per_epoch(std::size_t batch_size) const {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    const std::size_t steps = train_.size() / batch_size;
    if (steps == 0) {
        throw ConfigError("batch_size " + std::to_string(batch_size) + " exceeds training set of " +
                          std::to_string(train_.size()));
    }
    return steps;
}

Batch Dataset::train_batch(std::size_t global_index, std::size_t batch_size) const {
    const std::size_t steps = steps_per_epoch(batch_size);
    const std::size_t epoch = global_index / steps;
    const std::size_t step = global_index % steps;

    auto it = perm_cache_.find(epoch);
    if (it == perm_cache_.end()) {
        std::vector<std::size_t> perm(train_.size());
        std::iota(perm.begin(), perm.end(), 0);
        Rng perm_rng(hash_label(spec_.seed, "data.perm." + std::to_string(epoch)));
        perm_rng.shuffle(perm);
        it = perm_cache_.emplace(epoch, std::move(perm)).first;
    }
    Batch b;
    b.samples.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        b.samples.push_back(train_[it->second[step * batch_size + i]]);
    }
    return b;
}

}  // namespace heterolora

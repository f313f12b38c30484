#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "heterolora/adapters.hpp"
#include "heterolora/rng.hpp"
#include "heterolora/saliency.hpp"

namespace heterolora {

// Combined ranks LoRA and shortcut modules in one pool; separated runs an
// independent top-k inside each pool at the same fraction.
enum class AllocMode { Combined, Separated };

const char* alloc_mode_name(AllocMode m);
AllocMode alloc_mode_from_name(const std::string& name);

struct AllocationPlan {
    std::vector<ModuleId> enabled;  // sorted by ModuleId
    double budget_fraction = 0.25;
    AllocMode mode = AllocMode::Combined;
    int search_index = 0;
    std::uint64_t tie_break_draws = 0;  // rng consumption note, for reproducibility audits
};

// round-half-up(fraction * pool), at least 1 for a non-empty pool.
std::size_t budget_count(double fraction, std::size_t pool_size);

// Top-k by score. Ties are broken by a seeded uniform shuffle applied before
// the (stable) ranking, so equal-score modules are drawn uniformly.
AllocationPlan select(const ScoreMap& scores, double fraction, AllocMode mode, Rng& rng);

struct FrequencyMatrix {
    std::map<ModuleId, int> counts;
    int total_searches = 0;

    void record(const AllocationPlan& plan);
    long long total_enabled() const;  // sum of counts
};

struct FrequencyRow {
    std::size_t layer;
    Site site;
    int count;
    double frequency;
};

// One row per installed module, in ModuleId order. total_searches = 0 is a
// contract error.
std::vector<FrequencyRow> frequency_report(const FrequencyMatrix& matrix,
                                           const AdapterRegistry& registry);

// Step offsets within an epoch at which a dynamic search fires:
// floor(i * steps / searches) for i in [0, searches). Searches fire before
// the boundary step's optimizer update.
std::vector<std::size_t> search_steps(std::size_t steps_per_epoch, std::size_t searches_per_epoch);

}  // namespace heterolora

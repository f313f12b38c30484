#include "heterolora/allocator.hpp"

#include <algorithm>
#include <cmath>

namespace heterolora {

const char* alloc_mode_name(AllocMode m) { return m == AllocMode::Combined ? "combined" : "separated"; }

AllocMode alloc_mode_from_name(const std::string& name) {
    if (name == "combined") return AllocMode::Combined;
    if (name == "separated") return AllocMode::Separated;
    throw ConfigError("unknown allocation mode '" + name + "'");
}

std::size_t budget_count(double fraction, std::size_t pool_size) {
    if (pool_size == 0) return 0;
    const std::size_t k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pool_size) + 0.5));
    return std::max<std::size_t>(1, std::min(k, pool_size));
}

namespace {

struct Entry {
    ModuleId id;
    double value;
};

std::vector<ModuleId> top_k(std::vector<Entry> pool, std::size_t k, Rng& rng, std::uint64_t& draws) {
    // uniform shuffle first, then a stable sort on score: the shuffle order
    // is the tie-break among equal scores
    draws += pool.size();
    rng.shuffle(pool);
    std::stable_sort(pool.begin(), pool.end(), [](const Entry& a, const Entry& b) { return a.value > b.value; });
    std::vector<ModuleId> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k && i < pool.size(); ++i) out.push_back(pool[i].id);
    return out;
}

}  // namespace

AllocationPlan select(const ScoreMap& scores, double fraction, AllocMode mode, Rng& rng) {
    if (scores.empty()) throw ContractError("select: empty score map");
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ConfigError("select: budget fraction must lie in (0, 1], got " + std::to_string(fraction));
    }
    for (const auto& [id, sc] : scores) {
        if (!std::isfinite(sc.value)) throw NumericError("select: non-finite score for " + to_string(id));
    }

    AllocationPlan plan;
    plan.budget_fraction = fraction;
    plan.mode = mode;

    if (mode == AllocMode::Combined) {
        std::vector<Entry> pool;
        pool.reserve(scores.size());
        for (const auto& [id, sc] : scores) pool.push_back({id, sc.value});
        plan.enabled = top_k(std::move(pool), budget_count(fraction, scores.size()), rng,
                             plan.tie_break_draws);
    } else {
        std::vector<Entry> lora_pool, shortcut_pool;
        for (const auto& [id, sc] : scores) {
            (site_is_shortcut(id.site) ? shortcut_pool : lora_pool).push_back({id, sc.value});
        }
        for (auto* pool : {&lora_pool, &shortcut_pool}) {
            if (pool->empty()) continue;
            auto chosen = top_k(std::move(*pool), budget_count(fraction, pool->size()), rng,
                                plan.tie_break_draws);
            plan.enabled.insert(plan.enabled.end(), chosen.begin(), chosen.end());
        }
    }
    std::sort(plan.enabled.begin(), plan.enabled.end());
    return plan;
}

void FrequencyMatrix::record(const AllocationPlan& plan) {
    for (const ModuleId& id : plan.enabled) ++counts[id];
    ++total_searches;
}

long long FrequencyMatrix::total_enabled() const {
    long long s = 0;
    for (const auto& [id, c] : counts) s += c;
    return s;
}

std::vector<FrequencyRow> frequency_report(const FrequencyMatrix& matrix,
                                           const AdapterRegistry& registry) {
    if (matrix.total_searches == 0) {
        throw ContractError("frequency_report: no searches have been recorded");
    }
    std::vector<FrequencyRow> rows;
    rows.reserve(registry.size());
    for (const auto& [id, ad] : registry) {
        auto it = matrix.counts.find(id);
        const int c = it == matrix.counts.end() ? 0 : it->second;
        rows.push_back({id.layer, id.site, c, static_cast<double>(c) / matrix.total_searches});
    }
    return rows;
}

std::vector<std::size_t> search_steps(std::size_t steps_per_epoch, std::size_t searches_per_epoch) {
    if (searches_per_epoch == 0) throw ConfigError("searches_per_epoch must be >= 1");
    if (searches_per_epoch > steps_per_epoch) {
        throw ConfigError("searches_per_epoch " + std::to_string(searches_per_epoch) +
                          " exceeds steps per epoch " + std::to_string(steps_per_epoch));
    }
    std::vector<std::size_t> out;
    out.reserve(searches_per_epoch);
    for (std::size_t i = 0; i < searches_per_epoch; ++i) {
        out.push_back(i * steps_per_epoch / searches_per_epoch);
    }
    return out;
}

}  // namespace heterolora

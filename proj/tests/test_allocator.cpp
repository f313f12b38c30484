#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "heterolora/allocator.hpp"
#include "heterolora/transformer.hpp"

using namespace heterolora;

namespace {

ScoreMap make_scores(const std::vector<std::pair<ModuleId, double>>& entries) {
    ScoreMap out;
    for (const auto& [id, v] : entries) out[id] = SaliencyScore{id, v, Proxy::Constant, Basis::Decomposed, 0};
    return out;
}

// 8 modules, 4 LoRA + 4 shortcut, all d_model x d_model
ScoreMap uniform_pool8() {
    ScoreMap out;
    for (std::size_t l = 0; l < 2; ++l) {
        for (Site s : {Site::q_proj, Site::v_proj, Site::res1, Site::res2}) {
            ModuleId id{l, s};
            out[id] = SaliencyScore{id, 1.0, Proxy::Constant, Basis::Decomposed, 0};
        }
    }
    return out;
}

}  // namespace

TEST_CASE("budget_count rounds half up with a floor of one") {
    CHECK(budget_count(0.25, 8) == 2);
    CHECK(budget_count(0.25, 6) == 2);   // 1.5 rounds up
    CHECK(budget_count(0.25, 5) == 1);   // 1.25 rounds down
    CHECK(budget_count(0.1, 4) == 1);    // floor of one
    CHECK(budget_count(1.0, 7) == 7);
    CHECK(budget_count(0.25, 0) == 0);
}

TEST_CASE("select takes the strict top k") {
    ScoreMap scores = make_scores({{{0, Site::q_proj}, 3.0},
                                   {{0, Site::v_proj}, 2.0},
                                   {{1, Site::q_proj}, 1.0},
                                   {{1, Site::v_proj}, 0.0}});
    Rng rng(5);
    AllocationPlan plan = select(scores, 0.25, AllocMode::Combined, rng);
    REQUIRE(plan.enabled.size() == 1);
    CHECK(plan.enabled[0] == ModuleId{0, Site::q_proj});
}

TEST_CASE("select rejects bad inputs") {
    Rng rng(1);
    CHECK_THROWS_AS(select(ScoreMap{}, 0.25, AllocMode::Combined, rng), ContractError);
    ScoreMap one = make_scores({{{0, Site::q_proj}, 1.0}});
    CHECK_THROWS_AS(select(one, 0.0, AllocMode::Combined, rng), ConfigError);
    CHECK_THROWS_AS(select(one, 1.5, AllocMode::Combined, rng), ConfigError);
    ScoreMap nan = make_scores({{{0, Site::q_proj}, std::nan("")}});
    CHECK_THROWS_AS(select(nan, 1.0, AllocMode::Combined, rng), NumericError);
}

TEST_CASE("all-equal scores select a uniform random subset (chi-square)") {
    ScoreMap scores = uniform_pool8();
    Rng rng(42);
    std::map<ModuleId, int> counts;
    const int searches = 1000;
    for (int i = 0; i < searches; ++i) {
        AllocationPlan plan = select(scores, 0.25, AllocMode::Combined, rng);
        REQUIRE(plan.enabled.size() == 2);
        for (const ModuleId& id : plan.enabled) ++counts[id];
    }
    // 1000 searches x k=2 over 8 modules: expected 250 per module.
    // dof 7, p = 0.01 critical value 18.475.
    const double expected = 250.0;
    double chi2 = 0.0;
    for (const auto& [id, sc] : scores) {
        const double diff = counts[id] - expected;
        chi2 += diff * diff / expected;
    }
    CAPTURE(chi2);
    CHECK(chi2 < 18.475);
}

TEST_CASE("fraction 1.0 enables the whole pool") {
    ScoreMap scores = uniform_pool8();
    Rng rng(3);
    AllocationPlan plan = select(scores, 1.0, AllocMode::Combined, rng);
    CHECK(plan.enabled.size() == scores.size());
}

TEST_CASE("separated mode draws per pool") {
    ScoreMap scores = uniform_pool8();  // 4 LoRA, 4 shortcut
    Rng rng(7);
    AllocationPlan plan = select(scores, 0.25, AllocMode::Separated, rng);
    REQUIRE(plan.enabled.size() == 2);
    int lora = 0, shortcut = 0;
    for (const ModuleId& id : plan.enabled) (site_is_shortcut(id.site) ? shortcut : lora)++;
    CHECK(lora == 1);
    CHECK(shortcut == 1);
}

TEST_CASE("plans are deterministic in the rng seed and sorted by module id") {
    ScoreMap scores = uniform_pool8();
    Rng r1(11), r2(11), r3(13);
    AllocationPlan p1 = select(scores, 0.5, AllocMode::Combined, r1);
    AllocationPlan p2 = select(scores, 0.5, AllocMode::Combined, r2);
    CHECK(p1.enabled == p2.enabled);
    CHECK(std::is_sorted(p1.enabled.begin(), p1.enabled.end()));
    bool saw_difference = false;
    for (int i = 0; i < 20 && !saw_difference; ++i) {
        saw_difference = select(scores, 0.5, AllocMode::Combined, r3).enabled != p1.enabled;
    }
    CHECK(saw_difference);
}

TEST_CASE("selection is invariant to positive score scaling") {
    ScoreMap scores = make_scores({{{0, Site::q_proj}, 3.0},
                                   {{0, Site::v_proj}, 2.5},
                                   {{1, Site::q_proj}, 1.0},
                                   {{1, Site::res1}, 0.25}});
    ScoreMap scaled = scores;
    for (auto& [id, sc] : scaled) sc.value *= 17.0;
    Rng r1(3), r2(3);
    CHECK(select(scores, 0.5, AllocMode::Combined, r1).enabled ==
          select(scaled, 0.5, AllocMode::Combined, r2).enabled);
}

TEST_CASE("monotone consistency: adding a strictly lower-scored module changes nothing") {
    ScoreMap scores = make_scores({{{0, Site::q_proj}, 5.0},
                                   {{0, Site::v_proj}, 4.0},
                                   {{1, Site::q_proj}, 3.0},
                                   {{1, Site::v_proj}, 2.0}});
    Rng r1(9), r2(9);
    AllocationPlan before = select(scores, 0.5, AllocMode::Combined, r1);  // k = 2
    ScoreMap grown = scores;
    ModuleId extra{1, Site::res2};
    grown[extra] = SaliencyScore{extra, 1.0, Proxy::Constant, Basis::Decomposed, 0};
    AllocationPlan after = select(grown, 0.4, AllocMode::Combined, r2);  // k = round(2.0) = 2
    CHECK(before.enabled == after.enabled);
}

TEST_CASE("frequency matrix accounting and report") {
    Model model([] {
        ModelConfig c;
        c.d_model = 8;
        c.n_layers = 2;
        c.n_heads = 2;
        c.d_ff = 16;
        c.vocab_size = 16;
        c.max_seq_len = 4;
        return c;
    }());
    AdapterConfig acfg;
    acfg.lora_sites = {Site::q_proj, Site::v_proj};
    acfg.lora_rank = 2;
    inject(model, acfg);

    FrequencyMatrix m;
    CHECK_THROWS_AS(frequency_report(m, model.registry()), ContractError);

    AllocationPlan p1;
    p1.enabled = {{0, Site::q_proj}, {1, Site::v_proj}};
    AllocationPlan p2;
    p2.enabled = {{0, Site::q_proj}};
    m.record(p1);
    m.record(p2);
    CHECK(m.total_searches == 2);
    CHECK(m.total_enabled() == 3);

    auto rows = frequency_report(m, model.registry());
    REQUIRE(rows.size() == 4);
    // ModuleId order: (0,q), (0,v), (1,q), (1,v)
    CHECK(rows[0].count == 2);
    CHECK(rows[0].frequency == 1.0);
    CHECK(rows[1].count == 0);
    CHECK(rows[1].frequency == 0.0);
    CHECK(rows[3].count == 1);
    CHECK(rows[3].frequency == 0.5);
    CHECK(std::is_sorted(rows.begin(), rows.end(), [](const FrequencyRow& a, const FrequencyRow& b) {
        return ModuleId{a.layer, a.site} < ModuleId{b.layer, b.site};
    }));
}

TEST_CASE("search step boundaries") {
    CHECK(search_steps(20, 5) == std::vector<std::size_t>{0, 4, 8, 12, 16});
    CHECK(search_steps(32, 5) == std::vector<std::size_t>{0, 6, 12, 19, 25});
    CHECK(search_steps(7, 1) == std::vector<std::size_t>{0});
    CHECK_THROWS_AS(search_steps(4, 5), ConfigError);
    CHECK_THROWS_AS(search_steps(4, 0), ConfigError);
}

TEST_CASE("mode names round-trip") {
    CHECK(alloc_mode_from_name("combined") == AllocMode::Combined);
    CHECK(alloc_mode_from_name("separated") == AllocMode::Separated);
    CHECK_THROWS_AS(alloc_mode_from_name("mixed"), ConfigError);
}

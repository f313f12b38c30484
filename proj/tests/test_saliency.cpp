#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "heterolora/saliency.hpp"
#include "heterolora/transformer.hpp"

using namespace heterolora;

namespace {

struct Fixture {
    Model model;
    std::vector<std::vector<int>> batches_tokens;
    std::vector<std::vector<int>> batches_labels;

    explicit Fixture(std::uint64_t seed = 3, bool with_shortcuts = true) : model(make_config(seed)) {
        AdapterConfig acfg;
        acfg.lora_sites = {Site::q_proj, Site::v_proj};
        acfg.lora_rank = 2;
        acfg.lora_alpha = 16.0;
        if (with_shortcuts) {
            acfg.shortcut_kinds = {Site::res1, Site::in};
            acfg.shortcut_rank = 2;
            acfg.shortcut_alpha = 4.0;
        }
        inject(model, acfg);
        Rng rng(hash_label(seed, "fixture.data"));
        for (int b = 0; b < 4; ++b) {
            std::vector<int> tokens, labels;
            for (int s = 0; s < 3; ++s) {
                for (int t = 0; t < 4; ++t) tokens.push_back(static_cast<int>(rng.uniform_below(16)));
                labels.push_back(static_cast<int>(rng.uniform_below(2)));
            }
            batches_tokens.push_back(tokens);
            batches_labels.push_back(labels);
        }
    }

    static ModelConfig make_config(std::uint64_t seed) {
        ModelConfig cfg;
        cfg.d_model = 8;
        cfg.n_layers = 2;
        cfg.n_heads = 2;
        cfg.d_ff = 16;
        cfg.vocab_size = 16;
        cfg.max_seq_len = 4;
        cfg.seed = seed;
        return cfg;
    }

    BatchLossFn loss_fn() {
        return [this](int bi) {
            const auto& toks = batches_tokens[static_cast<std::size_t>(bi) % batches_tokens.size()];
            const auto& labels = batches_labels[static_cast<std::size_t>(bi) % batches_labels.size()];
            std::vector<Tensor> rows;
            for (std::size_t s = 0; s < labels.size(); ++s) {
                std::vector<int> sample(toks.begin() + 4 * s, toks.begin() + 4 * (s + 1));
                Tensor logits = model.forward(sample);
                rows.push_back(reshape(logits, {1, logits.size()}));
            }
            return cross_entropy(concat(rows, 0), labels);
        };
    }

    void scramble_adapters(std::uint64_t seed) {
        Rng rng(seed);
        for (auto& [id, ad] : model.registry()) {
            for (double& v : ad.a.values()) v = 0.1 * rng.gaussian();
            for (double& v : ad.b.values()) v = 0.1 * rng.gaussian();
        }
    }

    std::vector<std::vector<double>> snapshot_params() {
        std::vector<std::vector<double>> out;
        for (auto& [name, t] : model.named_parameters()) out.push_back(t.values());
        return out;
    }
};

}  // namespace

TEST_CASE("constant proxy scores every installed module 1") {
    Fixture f;
    ScoreMap scores = constant_scores(f.model.registry());
    CHECK(scores.size() == f.model.registry().size());
    for (const auto& [id, sc] : scores) {
        CHECK(sc.value == 1.0);
        CHECK(sc.proxy == Proxy::Constant);
    }
    AdapterRegistry empty;
    CHECK(constant_scores(empty).empty());
}

TEST_CASE("decomposed SNIP is exactly zero at init") {
    Fixture f;
    ScoreMap scores = snip_scores(f.model, f.loss_fn(), 2, Basis::Decomposed);
    for (const auto& [id, sc] : scores) CHECK(sc.value == 0.0);
}

TEST_CASE("merged SNIP at init sees the frozen base and is nonzero") {
    Fixture f;
    ScoreMap scores = snip_scores(f.model, f.loss_fn(), 2, Basis::Merged);
    double max_value = 0.0;
    for (const auto& [id, sc] : scores) {
        CHECK(sc.value >= 0.0);
        max_value = std::max(max_value, sc.value);
        CHECK(sc.basis == Basis::Merged);
    }
    CHECK(max_value > 0.0);
}

TEST_CASE("SNIP mask-gradient route equals the weight-times-gradient route") {
    Fixture f;
    f.scramble_adapters(77);
    ScoreMap direct = snip_scores(f.model, f.loss_fn(), 3, Basis::Decomposed);
    ScoreMap masked = snip_scores_mask_route(f.model, f.loss_fn(), 3);
    REQUIRE(direct.size() == masked.size());
    for (const auto& [id, sc] : direct) {
        CHECK(std::fabs(sc.value - masked.at(id).value) <= 1e-10);
        CHECK(sc.value > 0.0);  // trained adapters score nonzero
    }
}

TEST_CASE("SNIP on an empty data budget is a contract error") {
    Fixture f;
    CHECK_THROWS_AS(snip_scores(f.model, f.loss_fn(), 0, Basis::Decomposed), ContractError);
    CHECK_THROWS_AS(gradnorm_scores(f.model, f.loss_fn(), 0), ContractError);
}

TEST_CASE("SYNFLOW is data-free, restores weights, and is zero at init (decomposed)") {
    Fixture f;
    auto before = f.snapshot_params();
    ScoreMap s1 = synflow_scores(f.model, Basis::Decomposed);
    auto after = f.snapshot_params();
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);  // bit-identical

    ScoreMap s2 = synflow_scores(f.model, Basis::Decomposed);  // no data stream to vary
    REQUIRE(s1.size() == s2.size());
    for (const auto& [id, sc] : s1) {
        CHECK(sc.value == s2.at(id).value);
        CHECK(sc.value == 0.0);
    }
}

TEST_CASE("SYNFLOW merged at init is data-free and generally nonzero") {
    Fixture f;
    ScoreMap s1 = synflow_scores(f.model, Basis::Merged);
    ScoreMap s2 = synflow_scores(f.model, Basis::Merged);
    double max_abs = 0.0;
    for (const auto& [id, sc] : s1) {
        CHECK(sc.value == s2.at(id).value);
        max_abs = std::max(max_abs, std::fabs(sc.value));
    }
    CHECK(max_abs > 0.0);
}

TEST_CASE("SYNFLOW on trained adapters still restores bit-exactly") {
    Fixture f;
    f.scramble_adapters(31);
    auto before = f.snapshot_params();
    synflow_scores(f.model, Basis::Merged);
    auto after = f.snapshot_params();
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("GRAD-NORM values are nonnegative and positive at init through B") {
    Fixture f;
    ScoreMap scores = gradnorm_scores(f.model, f.loss_fn(), 3);
    double max_value = 0.0;
    for (const auto& [id, sc] : scores) {
        CHECK(sc.value >= 0.0);
        max_value = std::max(max_value, sc.value);
    }
    // dL/dB is generally nonzero even at init
    CHECK(max_value > 0.0);
}

TEST_CASE("doubling the loss doubles every GRAD-NORM score exactly") {
    Fixture f;
    f.scramble_adapters(15);
    auto fn = f.loss_fn();
    BatchLossFn doubled = [&](int bi) { return scale(fn(bi), 2.0); };
    ScoreMap s1 = gradnorm_scores(f.model, fn, 2);
    ScoreMap s2 = gradnorm_scores(f.model, doubled, 2);
    for (const auto& [id, sc] : s1) CHECK(s2.at(id).value == 2.0 * sc.value);
}

TEST_CASE("GRAD-NORM matches finite-difference gradient norms") {
    Fixture f(5, false);  // LoRA-only keeps the sweep small
    f.scramble_adapters(51);
    const int budget = 2;
    auto fn = f.loss_fn();
    ScoreMap scores = gradnorm_scores(f.model, fn, budget);

    auto mean_loss = [&]() {
        double s = 0.0;
        for (int b = 0; b < budget; ++b) s += fn(b).item();
        return s / budget;
    };
    const double h = 1e-5;
    for (auto& [id, ad] : f.model.registry()) {
        double sum_sq_a = 0.0, sum_sq_b = 0.0;
        for (Tensor* t : {&ad.a, &ad.b}) {
            for (std::size_t i = 0; i < t->size(); ++i) {
                const double orig = t->at(i);
                t->mut(i) = orig + h;
                const double fp = mean_loss();
                t->mut(i) = orig - h;
                const double fm = mean_loss();
                t->mut(i) = orig;
                const double g = (fp - fm) / (2 * h);
                (t == &ad.a ? sum_sq_a : sum_sq_b) += g * g;
            }
        }
        const double fd_score = std::sqrt(sum_sq_a) + std::sqrt(sum_sq_b);
        const double got = scores.at(id).value;
        CHECK(std::fabs(got - fd_score) / std::max({got, fd_score, 1e-8}) < 1e-4);
    }
}

TEST_CASE("scoring is side-effect free") {
    Fixture f;
    f.scramble_adapters(63);
    // non-trivial enablement to restore
    set_enabled(f.model.registry(), {{0, Site::q_proj}, {1, Site::in}});
    auto params_before = f.snapshot_params();
    auto enabled_before = f.model.registry().enabled_ids();

    auto fn = f.loss_fn();
    snip_scores(f.model, fn, 2, Basis::Decomposed);
    snip_scores(f.model, fn, 2, Basis::Merged);
    snip_scores_mask_route(f.model, fn, 2);
    synflow_scores(f.model, Basis::Decomposed);
    gradnorm_scores(f.model, fn, 2);
    constant_scores(f.model.registry());

    CHECK(f.model.registry().enabled_ids() == enabled_before);
    auto params_after = f.snapshot_params();
    for (std::size_t i = 0; i < params_before.size(); ++i) CHECK(params_before[i] == params_after[i]);
    for (auto& [name, t] : f.model.named_parameters()) CHECK(!t.has_grad());
    for (auto& [id, ad] : f.model.registry()) {
        CHECK(!ad.mask_a.defined());
        CHECK(!ad.merged_override.defined());
    }
}

TEST_CASE("scores are bit-reproducible for a fixed budget") {
    Fixture f;
    f.scramble_adapters(99);
    auto fn = f.loss_fn();
    ScoreMap a = snip_scores(f.model, fn, 3, Basis::Decomposed);
    ScoreMap b = snip_scores(f.model, fn, 3, Basis::Decomposed);
    for (const auto& [id, sc] : a) CHECK(sc.value == b.at(id).value);

    ScoreMap ga = gradnorm_scores(f.model, fn, 3);
    ScoreMap gb = gradnorm_scores(f.model, fn, 3);
    for (const auto& [id, sc] : ga) CHECK(sc.value == gb.at(id).value);
}

TEST_CASE("compute_scores dispatches and stamps metadata") {
    Fixture f;
    auto fn = f.loss_fn();
    ScoreMap s = compute_scores(f.model, Proxy::GradNorm, Basis::Decomposed, fn, 2);
    for (const auto& [id, sc] : s) {
        CHECK(sc.proxy == Proxy::GradNorm);
        CHECK(sc.batch_budget == 2);
        CHECK(std::isfinite(sc.value));
    }
    ScoreMap c = compute_scores(f.model, Proxy::Constant, Basis::Decomposed, fn, 2);
    for (const auto& [id, sc] : c) CHECK(sc.value == 1.0);
}

TEST_CASE("proxy and basis names round-trip") {
    for (Proxy p : {Proxy::Constant, Proxy::Snip, Proxy::Synflow, Proxy::GradNorm}) {
        CHECK(proxy_from_name(proxy_name(p)) == p);
    }
    CHECK_THROWS_AS(proxy_from_name("fisher"), ConfigError);
    for (Basis b : {Basis::Decomposed, Basis::Merged}) CHECK(basis_from_name(basis_name(b)) == b);
    CHECK_THROWS_AS(basis_from_name("whole"), ConfigError);
}

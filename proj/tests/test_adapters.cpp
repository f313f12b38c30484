#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "heterolora/transformer.hpp"
#include "reference_model.hpp"

using namespace heterolora;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 3) {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.vocab_size = 16;
    cfg.max_seq_len = 8;
    cfg.seed = seed;
    return cfg;
}

Tensor random_tensor(Shape shape, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.gaussian();
    return Tensor(std::move(shape), std::move(v));
}

const std::vector<int> kTokens{1, 5, 2, 7, 3};

}  // namespace

TEST_CASE("module id ordering and names") {
    CHECK(ModuleId{0, Site::v_proj} < ModuleId{0, Site::res1});
    CHECK(ModuleId{0, Site::cut} < ModuleId{1, Site::q_proj});
    CHECK(to_string(ModuleId{1, Site::ffn_w1}) == "L1.ffn_w1");
    CHECK(site_from_name("cut") == Site::cut);
    CHECK_THROWS_AS(site_from_name("w_qkv"), ConfigError);
    CHECK(site_is_shortcut(Site::in));
    CHECK(!site_is_shortcut(Site::o_proj));
}

TEST_CASE("fresh and disabled adapters reproduce the base path exactly") {
    Model m(tiny_config());
    AdapterConfig cfg;
    cfg.lora_sites = {Site::q_proj, Site::v_proj};
    cfg.lora_rank = 2;
    inject(m, cfg);

    Model baseline(tiny_config());
    Tensor base_logits = baseline.forward(kTokens);
    Tensor fresh_logits = m.forward(kTokens);
    CHECK(fresh_logits.values() == base_logits.values());  // B = 0 at construction

    // perturb B, then disable: base path again
    for (auto& [id, ad] : m.registry()) ad.b.values().assign(ad.b.size(), 0.5);
    set_enabled(m.registry(), {});
    Tensor disabled_logits = m.forward(kTokens);
    CHECK(disabled_logits.values() == base_logits.values());
}

TEST_CASE("rank-1 adapter update is a hand-computable outer product") {
    const std::size_t d = 4;
    Rng rng(9);
    Adapter ad;
    ad.id = {0, Site::q_proj};
    ad.w0 = random_tensor({d, d}, rng);
    ad.rank = 1;
    ad.alpha = 1.0;  // alpha = r
    ad.a = Tensor::zeros({d, 1});
    ad.a.mut(0, 0) = 1.0;  // picks out x_0
    const double c = 0.37;
    const std::size_t i = 2;
    ad.b = Tensor::zeros({1, d});
    ad.b.mut(0, i) = c;  // writes into coordinate i
    ad.enabled = true;

    Tensor x = random_tensor({3, d}, rng);
    Tensor base = matmul(x, ad.w0);
    Tensor out = lora_forward(x, ad);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j = 0; j < d; ++j) {
            double expect = base.at(r, j) + (j == i ? c * x.at(r, 0) : 0.0);
            CHECK(out.at(r, j) == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("lora_merge") {
    Rng rng(21);
    Adapter ad;
    ad.id = {0, Site::v_proj};
    ad.w0 = random_tensor({6, 6}, rng);
    ad.rank = 2;
    ad.alpha = 4.0;
    ad.a = random_tensor({6, 2}, rng);
    ad.b = Tensor::zeros({2, 6});
    ad.enabled = true;

    SUBCASE("B = 0 merges to W0 bit-exactly") {
        Tensor merged = lora_merge(ad);
        CHECK(merged.values() == ad.w0.values());
    }
    SUBCASE("merged forward equals dual-path forward within 1e-10") {
        ad.b = random_tensor({2, 6}, rng);
        Tensor merged = lora_merge(ad);
        for (int rep = 0; rep < 100; ++rep) {
            Tensor x = random_tensor({2, 6}, rng);
            Tensor dual = lora_forward(x, ad);
            Tensor fused = matmul(x, merged);
            for (std::size_t k = 0; k < dual.size(); ++k)
                CHECK(std::fabs(dual.at(k) - fused.at(k)) <= 1e-10);
        }
    }
    SUBCASE("alpha = 2r exactly doubles the update of alpha = r") {
        ad.b = random_tensor({2, 6}, rng);
        ad.alpha = 2.0;  // r = 2
        Tensor upd_r = lora_update(ad);
        Tensor w_r = lora_merge(ad);
        ad.alpha = 4.0;
        Tensor upd_2r = lora_update(ad);
        for (std::size_t k = 0; k < upd_r.size(); ++k) {
            CHECK(upd_2r.at(k) == 2.0 * upd_r.at(k));
            CHECK(w_r.at(k) == ad.w0.at(k) + upd_r.at(k));
        }
    }
    SUBCASE("merging a disabled adapter is a contract error") {
        ad.enabled = false;
        CHECK_THROWS_AS(lora_merge(ad), ContractError);
    }
}

TEST_CASE("inject registry layout") {
    SUBCASE("q,v on 2 layers gives 4 entries") {
        Model m(tiny_config());
        AdapterConfig cfg;
        cfg.lora_sites = {Site::q_proj, Site::v_proj};
        inject(m, cfg);
        CHECK(m.registry().size() == 4);
    }
    SUBCASE("all 4 shortcut kinds on 3 layers gives 11 entries (no cut at layer 0)") {
        ModelConfig mc = tiny_config();
        mc.n_layers = 3;
        Model m(mc);
        AdapterConfig cfg;
        cfg.shortcut_kinds = {Site::res1, Site::res2, Site::in, Site::cut};
        inject(m, cfg);
        CHECK(m.registry().size() == 11);
        CHECK(!m.registry().contains({0, Site::cut}));
        CHECK(m.registry().contains({1, Site::cut}));
        // residual shortcuts carry identity bases, cross-layer carry zeros
        const Adapter& r1 = m.registry().at({0, Site::res1});
        CHECK(r1.w0.at(0, 0) == 1.0);
        CHECK(r1.w0.at(0, 1) == 0.0);
        const Adapter& in = m.registry().at({0, Site::in});
        for (double v : in.w0.values()) CHECK(v == 0.0);
    }
    SUBCASE("duplicate and unknown sites are config errors") {
        Model m(tiny_config());
        AdapterConfig cfg;
        cfg.lora_sites = {Site::q_proj, Site::q_proj};
        CHECK_THROWS_AS(inject(m, cfg), ConfigError);
        AdapterConfig cfg2;
        cfg2.lora_sites = {Site::res1};
        CHECK_THROWS_AS(inject(m, cfg2), ConfigError);
        AdapterConfig cfg3;
        cfg3.shortcut_kinds = {Site::q_proj};
        CHECK_THROWS_AS(inject(m, cfg3), ConfigError);
    }
    SUBCASE("empty config leaves the forward bit-identical") {
        Model m(tiny_config());
        inject(m, AdapterConfig{});
        Model baseline(tiny_config());
        CHECK(m.forward(kTokens).values() == baseline.forward(kTokens).values());
    }
    SUBCASE("rank above min(d_in, d_out) is rejected") {
        Model m(tiny_config());
        AdapterConfig cfg;
        cfg.lora_sites = {Site::q_proj};
        cfg.lora_rank = 9;  // d_model = 8
        CHECK_THROWS_AS(inject(m, cfg), ConfigError);
    }
    SUBCASE("injection freezes the base and keeps the head trainable") {
        Model m(tiny_config());
        AdapterConfig cfg;
        cfg.lora_sites = {Site::q_proj};
        inject(m, cfg);
        CHECK(!m.layer(0).wq.requires_grad());
        CHECK(!m.layer(0).ln1_g.requires_grad());
        CHECK(!m.token_embedding().requires_grad());
        CHECK(m.head_weight().requires_grad());
        const Adapter& ad = m.registry().at({0, Site::q_proj});
        CHECK(ad.a.requires_grad());
        CHECK(ad.b.requires_grad());
        CHECK(!ad.w0.requires_grad());
    }
}

TEST_CASE("shortcut forwards") {
    SUBCASE("all shortcuts disabled reduces to the baseline block, bit-exact") {
        Model m(tiny_config());
        AdapterConfig cfg;
        cfg.shortcut_kinds = {Site::res1, Site::res2, Site::in, Site::cut};
        inject(m, cfg);
        set_enabled(m.registry(), {});
        Model baseline(tiny_config());
        CHECK(m.forward(kTokens).values() == baseline.forward(kTokens).values());
    }
    SUBCASE("fresh residual shortcuts reproduce the identity residual within 1e-12") {
        Model m(tiny_config());
        AdapterConfig cfg;
        cfg.shortcut_kinds = {Site::res1, Site::res2};
        inject(m, cfg);
        Model baseline(tiny_config());
        Tensor a = m.forward(kTokens);
        Tensor b = baseline.forward(kTokens);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::fabs(a.at(i) - b.at(i)) <= 1e-12);
    }
    SUBCASE("fresh cross-layer shortcuts follow the double-LN formula, not the baseline") {
        Model m(tiny_config());
        AdapterConfig cfg;
        cfg.shortcut_kinds = {Site::in, Site::cut};
        inject(m, cfg);
        Tensor got = m.forward(kTokens);
        auto ref = refmodel::forward(m, kTokens);
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::fabs(got.at(i) - ref[i]) <= 1e-12);

        // the re-applied LN with affine parameters is not the identity
        Model baseline(tiny_config());
        Tensor base = baseline.forward(kTokens);
        double diff = 0.0;
        for (std::size_t i = 0; i < got.size(); ++i) diff += std::fabs(got.at(i) - base.at(i));
        CHECK(diff > 0.0);
    }
    SUBCASE("trained shortcut state matches the reference composition") {
        Model m(tiny_config());
        AdapterConfig cfg;
        cfg.shortcut_kinds = {Site::res1, Site::res2, Site::in, Site::cut};
        cfg.lora_sites = {Site::q_proj, Site::v_proj};
        inject(m, cfg);
        Rng rng(33);
        for (auto& [id, ad] : m.registry())
            for (double& v : ad.b.values()) v = 0.1 * rng.gaussian();
        Tensor got = m.forward(kTokens);
        auto ref = refmodel::forward(m, kTokens);
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::fabs(got.at(i) - ref[i]) <= 1e-10);
    }
    SUBCASE("enabled cut at layer 0 is a configuration error") {
        Model m(tiny_config());
        Adapter rogue;
        rogue.id = {0, Site::cut};
        rogue.w0 = Tensor::zeros({8, 8});
        rogue.rank = 2;
        rogue.alpha = 4.0;
        rogue.a = Tensor::zeros({8, 2});
        rogue.b = Tensor::zeros({2, 8});
        rogue.enabled = true;
        m.registry().install(rogue);
        CHECK_THROWS_AS(m.forward(kTokens), ConfigError);
    }
}

TEST_CASE("set_enabled") {
    Model m(tiny_config());
    AdapterConfig cfg;
    cfg.lora_sites = {Site::q_proj, Site::v_proj};
    cfg.shortcut_kinds = {Site::res1, Site::in};
    inject(m, cfg);
    const auto all = m.registry().ids();
    CHECK(all.size() == 8);

    SUBCASE("empty plan disables everything") {
        set_enabled(m.registry(), {});
        CHECK(m.registry().enabled_ids().empty());
    }
    SUBCASE("full plan enables everything") {
        set_enabled(m.registry(), {});
        set_enabled(m.registry(), all);
        CHECK(m.registry().enabled_ids() == all);
    }
    SUBCASE("unknown id is rejected") {
        CHECK_THROWS_AS(set_enabled(m.registry(), {{5, Site::q_proj}}), IndexError);
    }
    SUBCASE("toggling off and on preserves adapter state bitwise") {
        Rng rng(17);
        for (auto& [id, ad] : m.registry()) {
            for (double& v : ad.a.values()) v = rng.gaussian();
            for (double& v : ad.b.values()) v = rng.gaussian();
        }
        Tensor before = m.forward(kTokens);
        set_enabled(m.registry(), {});
        set_enabled(m.registry(), all);
        Tensor after = m.forward(kTokens);
        CHECK(before.values() == after.values());
    }
}

TEST_CASE("budget law: trainable count is head plus enabled adapters") {
    Model m(tiny_config());
    AdapterConfig cfg;
    cfg.lora_sites = {Site::q_proj, Site::v_proj};
    cfg.lora_rank = 2;
    cfg.shortcut_kinds = {Site::res1, Site::res2};
    cfg.shortcut_rank = 2;
    inject(m, cfg);

    const std::size_t head = m.config().d_model * m.config().n_classes + m.config().n_classes;
    auto expected = [&](std::size_t enabled_modules) {
        return head + enabled_modules * (8 + 8) * 2;
    };
    CHECK(m.count_parameters(true) == expected(8));

    set_enabled(m.registry(), {{0, Site::q_proj}, {1, Site::res2}});
    CHECK(m.count_parameters(true) == expected(2));

    set_enabled(m.registry(), {});
    CHECK(m.count_parameters(true) == expected(0));
}

#include <doctest.h>

#include <cmath>
#include <numbers>

#include "../support/finite_difference.hpp"
#include "../support/kl_oracle.hpp"
#include "../support/model_gradcheck.hpp"
#include "lvt/objective.hpp"

using namespace lvt;
using T64 = Tensor<double>;

namespace {

GaussianParams<double> gaussian(std::vector<double> mean, std::vector<double> log_var) {
    const std::size_t n = mean.size();
    return {T64::from_vector({1, n}, std::move(mean)), T64::from_vector({1, n}, std::move(log_var))};
}

ModelConfig chain_config(int layers, KlLayers which = KlLayers::All) {
    ModelConfig c = lvt::testing::gradcheck_config();
    c.num_layers = layers;
    c.latent_end_layer = layers;
    c.kl_layers = which;
    return c;
}

/// Chain with hand-set prior/posterior per layer (p = 1).
LatentChain<double> manual_chain(const std::vector<std::pair<GaussianParams<double>, GaussianParams<double>>>& layers) {
    LatentChain<double> chain;
    chain.mode = ChainMode::Posterior;
    int l = 1;
    for (const auto& [q, p] : layers) {
        LatentLayer<double> layer;
        layer.layer = l++;
        layer.z = q.mean;
        layer.prior = p;
        layer.posterior = q;
        chain.layers.push_back(layer);
    }
    return chain;
}

AnnealSchedule cyclical(std::int64_t period) {
    AnnealSchedule s;
    s.mode = AnnealMode::Cyclical;
    s.period_steps = period;
    return s;
}

} // namespace

TEST_CASE("gaussian_kl: closed form against Monte-Carlo and exact cases") {
    const auto same = gaussian({0.3, -1.2}, {0.5, -2.0});
    CHECK(gaussian_kl(same, same).at(0) == 0.0);

    Rng rng(1);
    const double shift = gaussian_kl(gaussian({1.0}, {0.0}), gaussian({0.0}, {0.0})).at(0);
    CHECK(shift == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(std::abs(lvt::testing::monte_carlo_kl(1, 0, 0, 0, 1000000, rng) - shift) < 0.01);

    const double wide = gaussian_kl(gaussian({0.0}, {1.0}), gaussian({0.0}, {0.0})).at(0);
    CHECK(wide == doctest::Approx(std::numbers::e / 2 - 1).epsilon(1e-14));
    CHECK(wide == doctest::Approx(0.35914).epsilon(1e-5));
    CHECK(std::abs(lvt::testing::monte_carlo_kl(0, 1, 0, 0, 1000000, rng) - wide) < 0.01);

    // Random pairs: non-negative, and matches Monte-Carlo per dimension sum.
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> mq(3), lq(3), mp(3), lp(3);
        for (int k = 0; k < 3; ++k) {
            mq[k] = rng.normal();
            mp[k] = rng.normal();
            lq[k] = rng.normal();
            lp[k] = rng.normal();
        }
        const double kl = gaussian_kl(gaussian(mq, lq), gaussian(mp, lp)).at(0);
        double mc = 0;
        for (int k = 0; k < 3; ++k) mc += lvt::testing::monte_carlo_kl(mq[k], lq[k], mp[k], lp[k], 400000, rng);
        CHECK(kl >= 0.0);
        CHECK(std::abs(kl - mc) < 0.05);
    }
    CHECK_THROWS_AS(gaussian_kl(gaussian({0.0}, {0.0}), gaussian({0.0, 1.0}, {0.0, 0.0})), DimensionError);
}

TEST_CASE("gaussian_kl: non-negative on clamped extremes, zero only when equal") {
    Rng rng(2);
    for (int trial = 0; trial < 500; ++trial) {
        const double m1 = 10 * rng.normal(), m2 = 10 * rng.normal();
        const double v1 = std::clamp(6 * rng.normal(), -8.0, 8.0), v2 = std::clamp(6 * rng.normal(), -8.0, 8.0);
        const double kl = gaussian_kl(gaussian({m1}, {v1}), gaussian({m2}, {v2})).at(0);
        CHECK(std::isfinite(kl));
        CHECK(kl > 0.0);
    }
}

TEST_CASE("layerwise_kl: zero for matching distributions; selection masks the total") {
    const auto q1 = gaussian({0.5}, {0.1}), p1 = gaussian({0.0}, {0.0});
    const auto q2 = gaussian({-1.0}, {-0.5}), p2 = gaussian({0.2}, {0.3});
    const auto q3 = gaussian({2.0}, {1.0}), p3 = gaussian({0.0}, {-1.0});

    const auto equal = layerwise_kl(manual_chain({{p1, p1}, {p2, p2}, {p3, p3}}));
    for (const auto& k : equal) CHECK(k.value.item() == 0.0);

    const auto chain = manual_chain({{q1, p1}, {q2, p2}, {q3, p3}});
    const auto kl = layerwise_kl(chain);
    REQUIRE(kl.size() == 3);
    const double k1 = gaussian_kl(q1, p1).at(0), k2 = gaussian_kl(q2, p2).at(0), k3 = gaussian_kl(q3, p3).at(0);
    CHECK(kl[0].value.item() == k1);
    CHECK(kl[2].value.item() == k3);

    const T64 recon = T64::scalar(1.0);
    ObjectiveOptions o;
    const auto all = assemble_loss(chain_config(3), recon, kl, std::optional<T64>{}, o);
    CHECK(all.kl_total.item() == doctest::Approx(k1 + k2 + k3).epsilon(1e-12));
    const auto first = assemble_loss(chain_config(3, KlLayers::First), recon, kl, std::optional<T64>{}, o);
    CHECK(first.kl_total.item() == k1);
    const auto last = assemble_loss(chain_config(3, KlLayers::Last), recon, kl, std::optional<T64>{}, o);
    CHECK(last.kl_total.item() == k3);
    CHECK(last.kl_per_layer.size() == 3);
    CHECK(kl_layer_selected(chain_config(3, KlLayers::Last), 3));
    CHECK_FALSE(kl_layer_selected(chain_config(3, KlLayers::Last), 2));

    LatentChain<double> prior = chain;
    prior.mode = ChainMode::Prior;
    CHECK_THROWS_AS(layerwise_kl(prior), ContractError);
}

TEST_CASE("layerwise KL decomposition agrees with the Monte-Carlo joint KL") {
    int agree = 0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto t = lvt::testing::kl_decomposition_trial(seed, 20000);
        CAPTURE(t.layerwise);
        CAPTURE(t.joint);
        CAPTURE(t.std_error);
        CHECK(t.max_consistency_gap < 1e-9);
        CHECK(t.layerwise > 0.1);
        agree += t.agrees(3.0) ? 1 : 0;
    }
    CHECK(agree >= 3);
    const auto three = lvt::testing::kl_decomposition_trial(11, 20000, 3, 2);
    CHECK(three.agrees(4.0));
}

TEST_CASE("reconstruction_loss: uniform logits, hand case and errors") {
    const std::vector<int> targets{1, 4, 2, kIgnoreTarget};
    const T64 uniform = T64::zeros({4, 5});
    CHECK(reconstruction_loss(uniform, targets, 2).item() == doctest::Approx(3 * std::log(5.0) / 2).epsilon(1e-14));

    const T64 logits = T64::from_vector({2, 3}, {1, 2, 0, 0, 0, 3});
    const std::vector<int> t2{1, 2};
    auto lse = [](std::initializer_list<double> xs) {
        double s = 0;
        for (double x : xs) s += std::exp(x);
        return std::log(s);
    };
    const double expected = -(2 - lse({1, 2, 0})) - (3 - lse({0, 0, 3}));
    CHECK(reconstruction_loss(logits, t2, 1).item() == doctest::Approx(expected).epsilon(1e-14));

    double previous = 1e9;
    for (double margin : {1.0, 5.0, 20.0, 60.0}) {
        const T64 sharp = T64::from_vector({2, 3}, {0, margin, 0, 0, 0, margin});
        const double loss = reconstruction_loss(sharp, t2, 1).item();
        CHECK(loss < previous);
        previous = loss;
    }
    CHECK(previous < 1e-20);

    const std::vector<int> all_pad{1, 2, kIgnoreTarget, kIgnoreTarget};
    CHECK_THROWS_AS(reconstruction_loss(uniform, all_pad, 2), ContractError);
}

TEST_CASE("beta_at: cyclical schedule values, periodicity and monotone ramp") {
    const AnnealSchedule s = cyclical(1000);
    CHECK(beta_at(0, s) == 1e-5);
    CHECK(beta_at(250, s) == 1e-5);
    CHECK(beta_at(499, s) == 1e-5);
    CHECK(beta_at(625, s) == 0.500005);
    CHECK(beta_at(750, s) == 1.0);
    CHECK(beta_at(999, s) == 1.0);
    for (std::int64_t step = 0; step < 1000; ++step) {
        CHECK(beta_at(step, s) == beta_at(step + 3000, s));
        const double b = beta_at(step, s);
        CHECK(b >= 1e-5);
        CHECK(b <= 1.0);
        if (step >= 500 && step < 750) CHECK(beta_at(step + 1, s) >= b);
    }

    AnnealSchedule none;
    none.mode = AnnealMode::None;
    CHECK(beta_at(123, none) == 1.0);
    AnnealSchedule constant;
    constant.mode = AnnealMode::Constant;
    constant.constant_beta = 0.25;
    CHECK(beta_at(7, constant) == 0.25);
    CHECK_THROWS_AS(beta_at(0, cyclical(0)), ConfigError);
    CHECK_THROWS_AS(beta_at(-1, s), DomainError);
}

TEST_CASE("free bits: floor applies to the loss only and blocks the gradient below it") {
    const std::vector<T64> terms{T64::scalar(0.0), T64::scalar(0.7)};
    const auto floored = apply_free_bits(terms, 0.5);
    CHECK(floored[0].item() == 0.5);
    CHECK(floored[1].item() == 0.7);
    const auto above = apply_free_bits(std::vector<T64>{T64::scalar(0.9), T64::scalar(2.0)}, 0.5);
    CHECK(above[0].item() == 0.9);
    CHECK_THROWS_AS(apply_free_bits(terms, -0.1), DomainError);

    // Reported KL stays raw; the total sees the floor.
    const auto q = gaussian({0.1}, {0.0}), p = gaussian({0.0}, {0.0});
    const auto chain = manual_chain({{q, p}});
    ObjectiveOptions o;
    o.free_bits = 0.5;
    const auto loss = assemble_loss(chain_config(1), T64::scalar(2.0), layerwise_kl(chain), std::optional<T64>{}, o);
    CHECK(loss.kl_total.item() == doctest::Approx(0.005).epsilon(1e-12));
    CHECK(loss.total.item() == doctest::Approx(2.5).epsilon(1e-12));

    T64 mean = T64::from_vector({1, 1}, {0.1}), log_var = T64::from_vector({1, 1}, {0.05});
    const auto r = lvt::testing::check_gradients({{"mean", mean}, {"log_var", log_var}}, [&] {
        const auto floored_kl = apply_free_bits(std::vector<T64>{lvt::mean(gaussian_kl(GaussianParams<double>{mean, log_var}, p))}, 0.5);
        return floored_kl[0];
    });
    CHECK(r.max_abs_error < 1e-12);
    CHECK(mean.grad()[0] == 0.0);
    CHECK(log_var.grad()[0] == 0.0);
}

TEST_CASE("bow_loss: uniform head, single-layer reduction and gradient to z") {
    ModelConfig c = chain_config(2);
    ParameterStore<double> store;
    Rng rng(3);
    const auto heads = make_bow_heads(c, store, rng);
    REQUIRE(heads.size() == 2);
    CHECK(heads[0].weight.shape() == Shape{4, 11});

    for (const auto& e : store.entries()) {
        T64 t = e.tensor;
        for (auto& v : t.mutable_data()) v = 0;
    }
    const auto q = GaussianParams<double>{T64::randn({2, 4}, rng), T64::zeros({2, 4})};
    auto chain = manual_chain({{q, q}, {q, q}});
    chain.layers[0].z = T64::randn({2, 4}, rng);
    chain.layers[1].z = T64::randn({2, 4}, rng);
    const std::vector<int> targets{1, 2, 8, kIgnoreTarget, 3, 8};  // batch 2, seq 3
    CHECK(bow_loss(chain, heads, targets, 3).item() == doctest::Approx(5 * std::log(11.0) / 2).epsilon(1e-14));

    // Classic single-latent form on layer 1 alone.
    Rng r2(4);
    for (const auto& e : store.entries()) {
        T64 t = e.tensor;
        for (auto& v : t.mutable_data()) v = r2.normal();
    }
    LatentChain<double> single = chain;
    single.layers.resize(1);
    const T64 z = single.layers[0].z;
    double classic = 0;
    for (std::size_t b = 0; b < 2; ++b) {
        std::vector<double> logit(11);
        for (std::size_t v = 0; v < 11; ++v) {
            logit[v] = heads[0].bias.at(v);
            for (std::size_t k = 0; k < 4; ++k) logit[v] += z.at(b * 4 + k) * heads[0].weight.at(k * 11 + v);
        }
        double norm = 0;
        for (double l : logit) norm += std::exp(l);
        for (std::size_t t = 0; t < 3; ++t) {
            const int target = targets[b * 3 + t];
            if (target != kIgnoreTarget) classic -= logit[static_cast<std::size_t>(target)] - std::log(norm);
        }
    }
    CHECK(bow_loss(single, heads, targets, 3).item() == doctest::Approx(classic / 2).epsilon(1e-12));

    const auto r = lvt::testing::check_gradients({{"z1", chain.layers[0].z}, {"z2", chain.layers[1].z}},
                                                 [&] { return bow_loss(chain, heads, targets, 3); });
    CHECK(r.max_rel_error < 1e-6);

    LatentChain<double> prior = chain;
    prior.mode = ChainMode::Prior;
    CHECK_THROWS_AS(bow_loss(prior, heads, targets, 3), ContractError);
}

TEST_CASE("assemble_loss: beta zero, posterior equal to prior, and raw reporting") {
    const auto q = gaussian({0.4}, {0.2}), p = gaussian({0.0}, {0.0});
    const T64 recon = T64::scalar(3.0);
    ObjectiveOptions o;
    o.beta = 0.0;
    const auto off = assemble_loss(chain_config(1), recon, layerwise_kl(manual_chain({{q, p}})), std::optional<T64>{}, o);
    CHECK(off.total.item() == 3.0);
    CHECK(off.kl_total.item() > 0.0);

    o.beta = 1.0;
    o.bow_weight = 2.0;
    const auto eq = assemble_loss(chain_config(1), recon, layerwise_kl(manual_chain({{p, p}})), std::optional<T64>(T64::scalar(0.25)), o);
    CHECK(eq.total.item() == 3.5);

    o.beta = 0.3;
    o.bow_weight = 1.0;
    const auto kl = layerwise_kl(manual_chain({{q, p}}));
    const auto half = assemble_loss(chain_config(1), recon, kl, std::optional<T64>{}, o);
    CHECK(half.kl_total.item() == kl[0].value.item());
    CHECK(half.total.item() == doctest::Approx(3.0 + 0.3 * kl[0].value.item()).epsilon(1e-14));
    const LossValues v = loss_values(half, 2);
    CHECK(v.kl_per_layer.size() == 2);
    CHECK(v.kl_per_layer[1] == 0.0);
    CHECK(v.beta == 0.3);
    CHECK_FALSE(v.bow.has_value());
}

TEST_CASE("full loss gradient matches finite differences for every parameter") {
    const Paradigm paradigms[] = {Paradigm::Della, Paradigm::Embedding, Paradigm::Memory, Paradigm::Softmax};
    for (Paradigm p : paradigms) {
        CAPTURE(to_string(p));
        const auto r = lvt::testing::check_model_gradients(lvt::testing::gradcheck_config(p), p == Paradigm::Della);
        CAPTURE(r.overall.worst);
        CHECK(r.overall.max_rel_error < 1e-4);
        CHECK(r.overall.checked > 500);
    }
    ModelConfig cvae = lvt::testing::gradcheck_config();
    cvae.conditional = true;
    const auto r = lvt::testing::check_model_gradients(cvae, false);
    CAPTURE(r.overall.worst);
    CHECK(r.overall.max_rel_error < 1e-4);
}

#include <doctest.h>

#include <cmath>

#include "../support/metric_oracles.hpp"
#include "lvt/metrics.hpp"

using namespace lvt;
using lvt::testing::OracleCheck;

namespace {

void require_all(const std::vector<OracleCheck>& checks) {
    for (const auto& c : checks) {
        INFO(c.name << ": " << c.detail);
        CHECK(c.pass);
    }
}

} // namespace

TEST_CASE("importance-weighted likelihood and perplexity oracles") { require_all(lvt::testing::iw_oracles()); }

TEST_CASE("importance-weighted bound does not decrease with k") {
    const OracleCheck c = lvt::testing::iw_monotonicity(200);
    INFO(c.detail);
    CHECK(c.pass);
}

TEST_CASE("mutual information and active unit oracles") { require_all(lvt::testing::representation_oracles()); }

TEST_CASE("BLEU, self-BLEU, dist-n and Jaccard oracles") { require_all(lvt::testing::text_oracles()); }

TEST_CASE("iw_log_likelihood: log-sum-exp is stable and k draws are made") {
    const std::vector<double> big{-1000.0, -1000.0};
    CHECK(iw_log_likelihood(big) == doctest::Approx(-1000.0));
    const std::vector<double> mixed{0.0, std::log(3.0)};
    CHECK(iw_log_likelihood(mixed) == doctest::Approx(std::log(2.0)));
    int calls = 0;
    Rng rng(1);
    const auto out = iw_log_likelihood(
        [&](Rng&) {
            ++calls;
            return std::vector<double>{0.0, -1.0};
        },
        5, rng);
    CHECK(calls == 5);
    CHECK(out[1] == doctest::Approx(-1.0));
    const std::vector<double> bad{0.0, std::nan("")};
    CHECK_THROWS_AS(iw_log_likelihood(bad), NumericError);
    CHECK_THROWS_AS(iw_log_likelihood(std::span<const double>{}), ContractError);
    CHECK_THROWS_AS(iw_log_likelihood([](Rng&) { return std::vector<double>{}; }, 0, rng), ContractError);
}

TEST_CASE("metric contract errors") {
    Rng rng(2);
    const std::vector<double> none;
    const std::vector<std::size_t> no_counts;
    CHECK_THROWS_AS(perplexity(none, no_counts), ContractError);
    CHECK_THROWS_AS(mutual_information({lvt::testing::summary({{0.0}}, {{0.0}})}, rng), ContractError);
    CHECK_THROWS_AS(active_units({lvt::testing::summary({{0.0}}, {{0.0}})}), ContractError);
    CHECK_THROWS_AS(bleu({}, {}), ContractError);
    CHECK_THROWS_AS(self_bleu({"only one"}), ContractError);
    CHECK_THROWS_AS(dist_n({"a b"}, 3), ContractError);
    CHECK_THROWS_AS(dist_n({"a b"}, 0), DomainError);
    CHECK_THROWS_AS(jaccard_similarity({"a"}, 1), ContractError);
    // An empty n-gram pair contributes 0 rather than failing.
    CHECK(jaccard_similarity({"a", "b c", "b c"}, 2) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("posterior summaries: extraction from a chain and JSON round trip") {
    LatentChain<double> chain;
    chain.mode = ChainMode::Posterior;
    for (int l = 1; l <= 2; ++l) {
        LatentLayer<double> layer;
        layer.layer = l;
        layer.z = Tensor<double>::zeros({2, 2});
        layer.posterior = GaussianParams<double>{Tensor<double>::from_vector({2, 2}, {1.0 * l, 2, 3, 4}),
                                                 Tensor<double>::from_vector({2, 2}, {-1, -2, -3, -4.0 * l})};
        chain.layers.push_back(layer);
    }
    const auto s = summarize_posteriors(chain);
    REQUIRE(s.size() == 2);
    CHECK(s[0].layers == std::vector<int>{1, 2});
    CHECK(s[0].mean[1][0] == 2.0);
    CHECK(s[1].log_var[1][1] == -8.0);
    const nlohmann::json j = s[1];
    const PosteriorSummary back = j.get<PosteriorSummary>();
    CHECK(back.mean == s[1].mean);
    CHECK(back.log_var == s[1].log_var);
    chain.mode = ChainMode::Prior;
    CHECK_THROWS_AS(summarize_posteriors(chain), ContractError);
}

TEST_CASE("metrics report: JSON fields and matching CSV columns") {
    MetricsReport r;
    r.ppl = 12.5;
    r.kl = 3.0;
    r.dist_n = {{1, 0.5}, {2, 0.75}};
    r.sample_count = 9;
    const nlohmann::json j = r;
    CHECK(j.at("ppl") == 12.5);
    CHECK(j.at("dist_n").at("2") == 0.75);
    CHECK(j.at("sample_count") == 9);
    CHECK(j.at("mi").is_null());
    auto columns = [](const std::string& line) { return std::count(line.begin(), line.end(), ',') + 1; };
    CHECK(columns(MetricsReport::csv_header()) == columns(r.csv_row()));
    CHECK(r.csv_row().find("12.5") != std::string::npos);
}

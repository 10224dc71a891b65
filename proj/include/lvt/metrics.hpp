#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lvt/latent_chain.hpp"

namespace lvt {

// Representation metrics ---------------------------------------------------------

/// Posterior statistics of one datum: per layer, mean and log-variance.
struct PosteriorSummary {
    std::vector<int> layers;
    std::vector<std::vector<double>> mean;
    std::vector<std::vector<double>> log_var;
};

void to_json(nlohmann::json& j, const PosteriorSummary& s);
void from_json(const nlohmann::json& j, PosteriorSummary& s);

/// One summary per batch row from a posterior chain.
template <typename T>
std::vector<PosteriorSummary> summarize_posteriors(const LatentChain<T>& chain);

/// log((1/k) sum exp(w_i)) for k log importance weights.
double iw_log_likelihood(std::span<const double> log_weights);

/// L_k per example. `draw` returns one log weight per example for a fresh
/// posterior sample and is called k times.
std::vector<double> iw_log_likelihood(const std::function<std::vector<double>(Rng&)>& draw, int k, Rng& rng);

/// exp(-sum log p(x) / sum n(x)).
double perplexity(std::span<const double> log_likelihoods, std::span<const std::size_t> token_counts);

/// Monte-Carlo estimate of I(x; z) under the aggregated posterior of the
/// batch, one draw per datum, layers treated as one factorized Gaussian.
double mutual_information(const std::vector<PosteriorSummary>& summaries, Rng& rng);

/// Mean over layers of the number of dimensions whose posterior mean has
/// (unbiased) variance across data above `delta`.
double active_units(const std::vector<PosteriorSummary>& summaries, double delta = 0.2);

// Text metrics -------------------------------------------------------------------

/// Whitespace-separated words.
std::vector<std::string> split_words(const std::string& text);

struct BleuStats {
    int max_n = 4;
    std::array<std::size_t, 4> matches{};
    std::array<std::size_t, 4> totals{};
    std::size_t candidate_length = 0;
    std::size_t reference_length = 0;

    double precision(int n) const;
    double brevity_penalty() const;
    /// 0..100; zero when any used precision is zero.
    double score() const;
};

using WordSeq = std::vector<std::string>;

/// Clipped n-gram counts against the closest-length reference (ties go to the
/// shorter one), accumulated over the corpus.
BleuStats corpus_bleu_stats(const std::vector<WordSeq>& candidates, const std::vector<std::vector<WordSeq>>& references,
                            int max_n = 4);

/// Corpus BLEU; candidate i is scored against references[i].
double bleu(const std::vector<std::string>& candidates, const std::vector<std::vector<std::string>>& references,
            int max_n = 4);

/// Corpus BLEU with every candidate scored against the whole pool.
double bleu_against_pool(const std::vector<std::string>& candidates, const std::vector<std::string>& pool, int max_n = 4);

/// Mean over samples of BLEU(sample, all other samples).
double self_bleu(const std::vector<std::string>& samples, int max_n = 4);

/// Distinct n-grams over total n-grams across all samples.
double dist_n(const std::vector<std::string>& samples, int n);

/// Mean n-gram-set Jaccard similarity over unordered pairs.
double jaccard_similarity(const std::vector<std::string>& samples, int n);

// Reports ------------------------------------------------------------------------

struct MetricsReport {
    std::optional<double> ppl;
    std::optional<double> elbo;
    std::optional<double> kl;
    std::optional<double> mi;
    std::optional<double> au;
    std::optional<double> bleu;
    std::optional<double> self_bleu;
    std::map<int, double> dist_n;
    std::optional<double> jaccard;
    std::size_t sample_count = 0;

    static std::string csv_header();
    std::string csv_row() const;
};

void to_json(nlohmann::json& j, const MetricsReport& r);

} // namespace lvt

#include "lvt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

namespace lvt {

void to_json(nlohmann::json& j, const PosteriorSummary& s) {
    j = nlohmann::json{{"layers", s.layers}, {"mean", s.mean}, {"log_var", s.log_var}};
}

void from_json(const nlohmann::json& j, PosteriorSummary& s) {
    j.at("layers").get_to(s.layers);
    j.at("mean").get_to(s.mean);
    j.at("log_var").get_to(s.log_var);
    if (s.mean.size() != s.layers.size() || s.log_var.size() != s.layers.size()) {
        throw ContractError("posterior summary: layer count mismatch");
    }
}

template <typename T>
std::vector<PosteriorSummary> summarize_posteriors(const LatentChain<T>& chain) {
    if (chain.mode != ChainMode::Posterior) throw ContractError("summarize_posteriors needs a posterior chain");
    const std::size_t batch = chain.batch();
    std::vector<PosteriorSummary> out(batch);
    for (const auto& layer : chain.layers) {
        const std::size_t p = layer.z.dim(1);
        const auto mu = layer.posterior->mean.data();
        const auto lv = layer.posterior->log_var.data();
        for (std::size_t b = 0; b < batch; ++b) {
            out[b].layers.push_back(layer.layer);
            out[b].mean.emplace_back(mu.begin() + static_cast<std::ptrdiff_t>(b * p), mu.begin() + static_cast<std::ptrdiff_t>((b + 1) * p));
            out[b].log_var.emplace_back(lv.begin() + static_cast<std::ptrdiff_t>(b * p), lv.begin() + static_cast<std::ptrdiff_t>((b + 1) * p));
        }
    }
    return out;
}

namespace {

double log_sum_exp(std::span<const double> xs) {
    const double mx = *std::max_element(xs.begin(), xs.end());
    if (!std::isfinite(mx)) return mx;
    double acc = 0;
    for (double x : xs) acc += std::exp(x - mx);
    return mx + std::log(acc);
}

} // namespace

double iw_log_likelihood(std::span<const double> log_weights) {
    if (log_weights.empty()) throw ContractError("iw_log_likelihood needs k >= 1");
    for (double w : log_weights) {
        if (!std::isfinite(w)) throw NumericError("non-finite importance weight");
    }
    return log_sum_exp(log_weights) - std::log(static_cast<double>(log_weights.size()));
}

std::vector<double> iw_log_likelihood(const std::function<std::vector<double>(Rng&)>& draw, int k, Rng& rng) {
    if (k < 1) throw ContractError("iw_log_likelihood needs k >= 1");
    std::vector<std::vector<double>> weights;  // [example][sample]
    for (int i = 0; i < k; ++i) {
        const std::vector<double> w = draw(rng);
        if (weights.empty()) weights.resize(w.size());
        if (w.size() != weights.size()) throw DimensionError("iw_log_likelihood: inconsistent example count");
        for (std::size_t e = 0; e < w.size(); ++e) weights[e].push_back(w[e]);
    }
    std::vector<double> out;
    out.reserve(weights.size());
    for (const auto& w : weights) out.push_back(iw_log_likelihood(w));
    return out;
}

double perplexity(std::span<const double> log_likelihoods, std::span<const std::size_t> token_counts) {
    if (log_likelihoods.empty()) throw ContractError("perplexity of an empty dataset");
    if (log_likelihoods.size() != token_counts.size()) throw DimensionError("perplexity: one token count per example");
    double ll = 0, n = 0;
    for (std::size_t i = 0; i < log_likelihoods.size(); ++i) {
        ll += log_likelihoods[i];
        n += static_cast<double>(token_counts[i]);
    }
    if (n <= 0) throw ContractError("perplexity: zero tokens");
    return std::exp(-ll / n);
}

namespace {

std::vector<double> flatten(const std::vector<std::vector<double>>& v) {
    std::vector<double> out;
    for (const auto& row : v) out.insert(out.end(), row.begin(), row.end());
    return out;
}

} // namespace

double mutual_information(const std::vector<PosteriorSummary>& summaries, Rng& rng) {
    const std::size_t B = summaries.size();
    if (B < 2) throw ContractError("mutual_information needs at least 2 data");
    std::vector<std::vector<double>> mu(B), lv(B);
    for (std::size_t i = 0; i < B; ++i) {
        mu[i] = flatten(summaries[i].mean);
        lv[i] = flatten(summaries[i].log_var);
        if (mu[i].size() != mu[0].size() || lv[i].size() != mu[i].size()) {
            throw DimensionError("mutual_information: summaries have different latent sizes");
        }
    }
    const std::size_t D = mu[0].size();
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    auto log_q = [&](const std::vector<double>& z, std::size_t j) {
        double acc = 0;
        for (std::size_t k = 0; k < D; ++k) {
            const double diff = z[k] - mu[j][k];
            acc += -0.5 * (log_2pi + lv[j][k] + diff * diff * std::exp(-lv[j][k]));
        }
        return acc;
    };
    double total = 0;
    std::vector<double> z(D), row(B);
    for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t k = 0; k < D; ++k) z[k] = mu[i][k] + std::exp(0.5 * lv[i][k]) * rng.normal();
        for (std::size_t j = 0; j < B; ++j) row[j] = log_q(z, j);
        total += row[i] - (log_sum_exp(row) - std::log(static_cast<double>(B)));
    }
    return total / static_cast<double>(B);
}

double active_units(const std::vector<PosteriorSummary>& summaries, double delta) {
    const std::size_t N = summaries.size();
    if (N < 2) throw ContractError("active_units needs at least 2 data");
    const std::size_t layers = summaries[0].mean.size();
    if (layers == 0) throw ContractError("active_units: summaries carry no layers");
    double count_sum = 0;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t p = summaries[0].mean[l].size();
        for (std::size_t k = 0; k < p; ++k) {
            double m = 0;
            for (const auto& s : summaries) {
                if (s.mean.size() != layers || s.mean[l].size() != p) throw DimensionError("active_units: ragged summaries");
                m += s.mean[l][k];
            }
            m /= static_cast<double>(N);
            double var = 0;
            for (const auto& s : summaries) var += (s.mean[l][k] - m) * (s.mean[l][k] - m);
            var /= static_cast<double>(N - 1);
            if (var > delta) count_sum += 1;
        }
    }
    return count_sum / static_cast<double>(layers);
}

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(std::move(w));
    return out;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngram_counts(const WordSeq& words, int n) {
    NgramCounts counts;
    const auto un = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + un <= words.size(); ++i) {
        ++counts[std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(i), words.begin() + static_cast<std::ptrdiff_t>(i + un))];
    }
    return counts;
}

std::set<std::vector<std::string>> ngram_set(const WordSeq& words, int n) {
    std::set<std::vector<std::string>> out;
    for (const auto& [g, c] : ngram_counts(words, n)) out.insert(g);
    return out;
}

} // namespace

double BleuStats::precision(int n) const {
    const auto i = static_cast<std::size_t>(n - 1);
    return totals[i] == 0 ? 0.0 : static_cast<double>(matches[i]) / static_cast<double>(totals[i]);
}

double BleuStats::brevity_penalty() const {
    if (candidate_length == 0) return 0.0;
    if (candidate_length > reference_length) return 1.0;
    return std::exp(1.0 - static_cast<double>(reference_length) / static_cast<double>(candidate_length));
}

double BleuStats::score() const {
    double log_p = 0;
    for (int n = 1; n <= max_n; ++n) {
        const double p = precision(n);
        if (p <= 0) return 0.0;
        log_p += std::log(p) / static_cast<double>(max_n);
    }
    return 100.0 * brevity_penalty() * std::exp(log_p);
}

BleuStats corpus_bleu_stats(const std::vector<WordSeq>& candidates, const std::vector<std::vector<WordSeq>>& references,
                            int max_n) {
    if (max_n < 1 || max_n > 4) throw DomainError("BLEU order must be within 1..4");
    if (candidates.empty()) throw ContractError("BLEU of no candidates");
    if (candidates.size() != references.size()) throw DimensionError("BLEU: one reference set per candidate");
    BleuStats stats;
    stats.max_n = max_n;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const WordSeq& cand = candidates[c];
        const auto& refs = references[c];
        if (refs.empty()) throw ContractError("BLEU: candidate without references");
        stats.candidate_length += cand.size();
        std::size_t best = refs.front().size();
        for (const auto& r : refs) {
            const auto dist = [&](std::size_t len) { return len > cand.size() ? len - cand.size() : cand.size() - len; };
            if (dist(r.size()) < dist(best) || (dist(r.size()) == dist(best) && r.size() < best)) best = r.size();
        }
        stats.reference_length += best;
        for (int n = 1; n <= max_n; ++n) {
            const NgramCounts cc = ngram_counts(cand, n);
            NgramCounts max_ref;
            for (const auto& r : refs) {
                for (const auto& [g, k] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], k);
            }
            const auto i = static_cast<std::size_t>(n - 1);
            for (const auto& [g, k] : cc) {
                const auto it = max_ref.find(g);
                stats.matches[i] += std::min(k, it == max_ref.end() ? std::size_t{0} : it->second);
                stats.totals[i] += k;
            }
        }
    }
    return stats;
}

double bleu(const std::vector<std::string>& candidates, const std::vector<std::vector<std::string>>& references, int max_n) {
    if (candidates.empty()) throw ContractError("BLEU of no candidates");
    std::vector<WordSeq> cands;
    std::vector<std::vector<WordSeq>> refs;
    for (const auto& c : candidates) cands.push_back(split_words(c));
    for (const auto& rs : references) {
        auto& out = refs.emplace_back();
        for (const auto& r : rs) out.push_back(split_words(r));
    }
    return corpus_bleu_stats(cands, refs, max_n).score();
}

double bleu_against_pool(const std::vector<std::string>& candidates, const std::vector<std::string>& pool, int max_n) {
    return bleu(candidates, std::vector<std::vector<std::string>>(candidates.size(), pool), max_n);
}

double self_bleu(const std::vector<std::string>& samples, int max_n) {
    if (samples.size() < 2) throw ContractError("self_bleu needs at least 2 samples");
    std::vector<WordSeq> words;
    for (const auto& s : samples) words.push_back(split_words(s));
    double total = 0;
    for (std::size_t i = 0; i < words.size(); ++i) {
        std::vector<WordSeq> others;
        for (std::size_t j = 0; j < words.size(); ++j) {
            if (j != i) others.push_back(words[j]);
        }
        total += corpus_bleu_stats({words[i]}, {others}, max_n).score();
    }
    return total / static_cast<double>(words.size());
}

double dist_n(const std::vector<std::string>& samples, int n) {
    if (n < 1) throw DomainError("dist_n needs n >= 1");
    std::set<std::vector<std::string>> unique;
    std::size_t total = 0;
    for (const auto& s : samples) {
        for (const auto& [g, k] : ngram_counts(split_words(s), n)) {
            unique.insert(g);
            total += k;
        }
    }
    if (total == 0) throw ContractError("dist_n: every sample is shorter than n");
    return static_cast<double>(unique.size()) / static_cast<double>(total);
}

double jaccard_similarity(const std::vector<std::string>& samples, int n) {
    if (n < 1) throw DomainError("jaccard_similarity needs n >= 1");
    if (samples.size() < 2) throw ContractError("jaccard_similarity needs at least 2 samples");
    std::vector<std::set<std::vector<std::string>>> sets;
    for (const auto& s : samples) sets.push_back(ngram_set(split_words(s), n));
    double total = 0;
    std::size_t pairs = 0, empty = 0;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        for (std::size_t j = i + 1; j < sets.size(); ++j) {
            ++pairs;
            std::size_t inter = 0;
            for (const auto& g : sets[i]) inter += sets[j].count(g);
            const std::size_t uni = sets[i].size() + sets[j].size() - inter;
            if (uni == 0) {
                ++empty;
                continue;
            }
            total += static_cast<double>(inter) / static_cast<double>(uni);
        }
    }
    if (empty > 0) spdlog::warn("jaccard_similarity: {} pair(s) with no {}-grams counted as 0", empty, n);
    return total / static_cast<double>(pairs);
}

std::string MetricsReport::csv_header() {
    return "ppl,elbo,kl,mi,au,bleu,self_bleu,dist_1,dist_2,dist_3,dist_4,jaccard,sample_count";
}

std::string MetricsReport::csv_row() const {
    std::ostringstream out;
    out.precision(std::numeric_limits<double>::max_digits10);
    auto field = [&](const std::optional<double>& v) {
        if (v) out << *v;
        out << ',';
    };
    field(ppl);
    field(elbo);
    field(kl);
    field(mi);
    field(au);
    field(bleu);
    field(self_bleu);
    for (int n = 1; n <= 4; ++n) {
        const auto it = dist_n.find(n);
        field(it == dist_n.end() ? std::nullopt : std::optional<double>(it->second));
    }
    field(jaccard);
    out << sample_count;
    return out.str();
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json dist = nlohmann::json::object();
    for (const auto& [n, v] : r.dist_n) dist[std::to_string(n)] = v;
    j = nlohmann::json{{"ppl", opt(r.ppl)},       {"elbo", opt(r.elbo)},   {"kl", opt(r.kl)},
                       {"mi", opt(r.mi)},         {"au", opt(r.au)},       {"bleu", opt(r.bleu)},
                       {"self_bleu", opt(r.self_bleu)}, {"dist_n", dist},   {"jaccard", opt(r.jaccard)},
                       {"sample_count", r.sample_count}};
}

template std::vector<PosteriorSummary> summarize_posteriors<float>(const LatentChain<float>&);
template std::vector<PosteriorSummary> summarize_posteriors<double>(const LatentChain<double>&);

} // namespace lvt

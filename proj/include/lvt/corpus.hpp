#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lvt/model.hpp"
#include "lvt/tokenizer.hpp"

namespace lvt {

/// Tokenized samples plus their source text. Conditional corpora carry a
/// (source, target) pair per sample.
struct Corpus {
    bool conditional = false;
    std::vector<Example> examples;
    std::vector<std::string> texts;
    std::vector<std::string> conditions;

    std::size_t size() const { return examples.size(); }
};

/// Tokenizes and truncates to fit `config.max_len`, warning on truncation.
/// `conditions` must be empty or match `texts` in length.
Corpus make_corpus(const std::vector<std::string>& texts, const std::vector<std::string>& conditions,
                   const ModelConfig& config);

/// One sample per line; with `config.conditional`, lines are source<TAB>target.
/// Empty lines are skipped. Throws CorpusError.
Corpus load_corpus(const std::filesystem::path& path, const ModelConfig& config);

/// Templated sentences drawn from a topic factor (which content words appear)
/// and a style factor (framing and punctuation).
struct SyntheticSentence {
    std::string text;
    std::string plain;  // same content in the neutral style
    int topic = 0;
    int style = 0;
};

constexpr int kSyntheticTopics = 5;
constexpr int kSyntheticStyles = 3;

std::vector<SyntheticSentence> synthetic_sentences(std::size_t count, std::uint64_t seed);

/// Corpus over synthetic sentences; conditional corpora pair the neutral
/// phrasing (source) with the styled one (target).
Corpus synthetic_corpus(std::size_t count, std::uint64_t seed, const ModelConfig& config);

/// Fixed-size batches over a seeded per-epoch shuffle. Batch `step` is a pure
/// function of (seed, step), so training can resume mid-epoch.
class BatchSchedule {
public:
    BatchSchedule(std::size_t corpus_size, std::size_t batch_size, std::uint64_t seed);

    std::size_t batches_per_epoch() const { return batches_per_epoch_; }
    std::vector<std::size_t> indices(std::int64_t step) const;

private:
    std::size_t corpus_size_;
    std::size_t batch_size_;
    std::size_t batches_per_epoch_;
    std::uint64_t seed_;
};

std::vector<Example> gather_examples(const Corpus& corpus, const std::vector<std::size_t>& indices);

} // namespace lvt

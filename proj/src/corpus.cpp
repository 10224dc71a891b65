#include "lvt/corpus.hpp"

#include <array>
#include <fstream>
#include <numeric>

#include <spdlog/spdlog.h>

namespace lvt {

namespace {

void truncate_to(std::vector<int>& ids, std::size_t limit, std::size_t line, const char* what) {
    if (ids.size() <= limit) return;
    spdlog::warn("sample {}: {} truncated from {} to {} tokens", line, what, ids.size(), limit);
    ids.resize(limit);
}

} // namespace

Corpus make_corpus(const std::vector<std::string>& texts, const std::vector<std::string>& conditions,
                   const ModelConfig& config) {
    if (config.conditional != !conditions.empty() && !texts.empty()) {
        throw CorpusError(config.conditional ? "conditional model needs (source, target) pairs" : "unconditional model got conditions");
    }
    if (!conditions.empty() && conditions.size() != texts.size()) throw CorpusError("one condition per sample required");
    const ByteTokenizer tok(config.specials);
    const auto max_len = static_cast<std::size_t>(config.max_len);
    if (max_len < (config.conditional ? 4u : 3u)) throw CorpusError("max_len too small to hold any sample");
    Corpus corpus;
    corpus.conditional = config.conditional;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        Example ex;
        ex.text = tok.encode(texts[i]);
        // Encoder input adds BOS and EOS; decoder input adds BOS (and SEP).
        truncate_to(ex.text, max_len - 2, i, "text");
        if (config.conditional) {
            ex.condition = tok.encode(conditions[i]);
            truncate_to(ex.condition, max_len - 2, i, "condition");
            const std::size_t room = max_len - 2 - ex.text.size();
            truncate_to(ex.condition, room, i, "condition");
            corpus.conditions.push_back(tok.decode(ex.condition));
        }
        corpus.texts.push_back(tok.decode(ex.text));
        corpus.examples.push_back(std::move(ex));
    }
    return corpus;
}

Corpus load_corpus(const std::filesystem::path& path, const ModelConfig& config) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot open corpus " + path.string());
    std::vector<std::string> texts, conditions;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (config.conditional) {
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw CorpusError(path.string() + ":" + std::to_string(line_no) + ": expected source<TAB>target");
            conditions.push_back(line.substr(0, tab));
            texts.push_back(line.substr(tab + 1));
        } else {
            texts.push_back(line);
        }
    }
    if (texts.empty()) throw CorpusError("corpus " + path.string() + " has no samples");
    return make_corpus(texts, conditions, config);
}

namespace {

struct Topic {
    std::array<const char*, 3> subjects;
    std::array<const char*, 3> verbs;
    std::array<const char*, 3> objects;
};

constexpr std::array<Topic, kSyntheticTopics> kTopics{{
    {{"cat", "dog", "owl"}, {"eats", "hunts", "sees"}, {"fish", "mice", "moths"}},
    {{"chef", "cook", "baker"}, {"bakes", "cuts", "serves"}, {"bread", "cake", "soup"}},
    {{"rain", "wind", "snow"}, {"hits", "cools", "covers"}, {"town", "hill", "road"}},
    {{"band", "choir", "singer"}, {"plays", "sings", "hums"}, {"songs", "tunes", "jazz"}},
    {{"team", "coach", "rider"}, {"wins", "loses", "runs"}, {"games", "races", "laps"}},
}};

std::string styled(int style, const std::string& core) {
    switch (style) {
    case 0: return "the " + core + " .";
    case 1: return "wow , the " + core + " !";
    default: return "does the " + core + " ?";
    }
}

} // namespace

std::vector<SyntheticSentence> synthetic_sentences(std::size_t count, std::uint64_t seed) {
    Rng rng = Rng(seed).fork(0x5e47);
    std::vector<SyntheticSentence> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        SyntheticSentence s;
        s.topic = static_cast<int>(rng.below(kSyntheticTopics));
        s.style = static_cast<int>(rng.below(kSyntheticStyles));
        const Topic& t = kTopics[static_cast<std::size_t>(s.topic)];
        const std::string core = std::string(t.subjects[rng.below(3)]) + " " + t.verbs[rng.below(3)] + " " + t.objects[rng.below(3)];
        s.text = styled(s.style, core);
        s.plain = styled(0, core);
        out.push_back(std::move(s));
    }
    return out;
}

Corpus synthetic_corpus(std::size_t count, std::uint64_t seed, const ModelConfig& config) {
    std::vector<std::string> texts, conditions;
    for (auto& s : synthetic_sentences(count, seed)) {
        texts.push_back(std::move(s.text));
        if (config.conditional) conditions.push_back(std::move(s.plain));
    }
    return make_corpus(texts, conditions, config);
}

BatchSchedule::BatchSchedule(std::size_t corpus_size, std::size_t batch_size, std::uint64_t seed)
    : corpus_size_(corpus_size), batch_size_(batch_size), seed_(seed) {
    if (corpus_size == 0) throw CorpusError("empty corpus");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    batches_per_epoch_ = (corpus_size + batch_size - 1) / batch_size;
}

std::vector<std::size_t> BatchSchedule::indices(std::int64_t step) const {
    if (step < 0) throw DomainError("negative step");
    const auto s = static_cast<std::size_t>(step);
    const std::size_t epoch = s / batches_per_epoch_;
    const std::size_t slot = s % batches_per_epoch_;
    std::vector<std::size_t> perm(corpus_size_);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng = Rng(seed_).fork(0xba7c0000ULL + epoch);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    const std::size_t begin = slot * batch_size_;
    const std::size_t end = std::min(begin + batch_size_, corpus_size_);
    return {perm.begin() + static_cast<std::ptrdiff_t>(begin), perm.begin() + static_cast<std::ptrdiff_t>(end)};
}

std::vector<Example> gather_examples(const Corpus& corpus, const std::vector<std::size_t>& indices) {
    std::vector<Example> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(corpus.examples.at(i));
    return out;
}

} // namespace lvt

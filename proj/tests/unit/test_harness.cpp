#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "../support/utf8_fuzz.hpp"
#include "lvt/checkpoint.hpp"
#include "lvt/corpus.hpp"
#include "lvt/generation.hpp"
#include "lvt/tokenizer.hpp"
#include "lvt/trainer.hpp"

using namespace lvt;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model(Paradigm paradigm = Paradigm::Della) {
    ModelConfig c;
    c.paradigm = paradigm;
    c.num_layers = 2;
    c.hidden_dim = 16;
    c.num_heads = 2;
    c.latent_dim = 8;
    c.rank = 2;
    c.max_len = 40;
    c.latent_start_layer = 1;
    c.latent_end_layer = 2;
    return c;
}

RunConfig small_run(std::int64_t steps = 50) {
    RunConfig r;
    r.model = small_model();
    r.train.batch_size = 8;
    r.train.steps = steps;
    r.train.learning_rate = 1e-3;
    r.train.seed = 3;
    r.train.anneal.period_steps = 20;
    return r;
}

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("lvt_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

template <typename T>
bool same_logits(const VaeModel<T>& a, const VaeModel<T>& b, const TokenBatch& input) {
    const auto la = a.decode(input, nullptr).logits, lb = b.decode(input, nullptr).logits;
    for (std::size_t i = 0; i < la.numel(); ++i) {
        if (la.at(i) != lb.at(i)) return false;
    }
    return true;
}

} // namespace

TEST_CASE("tokenizer: byte identity, UTF-8 bytes, specials and round trip") {
    const ByteTokenizer tok;
    CHECK(tok.encode("A") == std::vector<int>{65});
    CHECK(tok.encode("\xC3\xA9") == std::vector<int>{0xC3, 0xA9});
    CHECK(tok.vocab_size() == 260);
    CHECK(tok.is_special(257));
    CHECK_FALSE(tok.is_special(255));
    CHECK(tok.decode({256, 104, 105, 257, 258}) == "hi");
    Rng rng(1);
    for (int i = 0; i < 2000; ++i) {
        const std::string s = lvt::testing::random_utf8(rng);
        CHECK(tok.decode(tok.encode(s)) == s);
    }
}

TEST_CASE("corpus: truncation, text and TSV loading, errors") {
    ModelConfig c = small_model();
    c.max_len = 8;
    const Corpus corpus = make_corpus({"short", "a sentence that is far too long"}, {}, c);
    REQUIRE(corpus.size() == 2);
    // Encoder input adds BOS and EOS.
    CHECK(corpus.examples[1].text.size() == 6);
    for (const auto& e : corpus.examples) {
        for (int id : e.text) CHECK(id < c.vocab_size);
    }

    const fs::path dir = scratch_dir("corpus");
    {
        std::ofstream(dir / "plain.txt") << "first line\n\nsecond line\n";
        std::ofstream(dir / "pairs.tsv") << "src one\ttgt one\nsrc two\ttgt two\n";
        std::ofstream(dir / "bad.tsv") << "no tab here\n";
    }
    const Corpus plain = load_corpus(dir / "plain.txt", small_model());
    CHECK(plain.size() == 2);
    CHECK(plain.texts[1] == "second line");
    ModelConfig cond = small_model();
    cond.conditional = true;
    const Corpus pairs = load_corpus(dir / "pairs.tsv", cond);
    CHECK(pairs.conditional);
    CHECK(pairs.conditions[0] == "src one");
    CHECK(pairs.texts[0] == "tgt one");
    CHECK_THROWS_AS(load_corpus(dir / "bad.tsv", cond), CorpusError);
    CHECK_THROWS_AS(load_corpus(dir / "missing.txt", small_model()), CorpusError);
}

TEST_CASE("synthetic corpus: deterministic, factored and paired when conditional") {
    const auto a = synthetic_sentences(50, 4), b = synthetic_sentences(50, 4);
    std::set<int> topics, styles;
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(a[i].text == b[i].text);
        topics.insert(a[i].topic);
        styles.insert(a[i].style);
    }
    CHECK(topics.size() == kSyntheticTopics);
    CHECK(styles.size() == kSyntheticStyles);
    ModelConfig cond = small_model();
    cond.conditional = true;
    cond.max_len = 96;
    const Corpus c = synthetic_corpus(10, 4, cond);
    CHECK(c.conditions[0] == a[0].plain);
    CHECK(c.texts[0] == a[0].text);
}

TEST_CASE("batch schedule: per-epoch permutations that depend only on seed and step") {
    const BatchSchedule s(10, 4, 7), same(10, 4, 7), other(10, 4, 8);
    CHECK(s.batches_per_epoch() == 3);
    std::multiset<std::size_t> seen;
    for (std::int64_t step = 0; step < 3; ++step) {
        const auto idx = s.indices(step);
        CHECK(idx == same.indices(step));
        seen.insert(idx.begin(), idx.end());
    }
    // Every datum once per epoch; the last batch is short.
    CHECK(seen.size() == 10);
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 10);
    CHECK(s.indices(2).size() == 2);
    bool differs = false;
    for (std::int64_t step = 0; step < 6; ++step) differs = differs || s.indices(step) != other.indices(step);
    CHECK(differs);
    CHECK(s.indices(3) != s.indices(0));
}

TEST_CASE("model batch layout: encoder, decoder and targets") {
    ModelConfig c = small_model();
    const ModelBatch b = make_model_batch({{{10, 11}, {}}, {{12}, {}}}, c);
    CHECK(b.encoder_input.ids == std::vector<int>{256, 10, 11, 257, 256, 12, 257, 258});
    CHECK(b.decoder_input.ids == std::vector<int>{256, 10, 11, 256, 12, 258});
    CHECK(b.targets == std::vector<int>{10, 11, 257, 12, 257, kIgnoreTarget});
    CHECK(b.target_counts == std::vector<std::size_t>{3, 2});

    c.conditional = true;
    const ModelBatch cb = make_model_batch({{{10}, {20, 21}}}, c);
    CHECK(cb.decoder_input.ids == std::vector<int>{256, 20, 21, 259, 10});
    CHECK(cb.targets == std::vector<int>{kIgnoreTarget, kIgnoreTarget, kIgnoreTarget, 10, 257});
    REQUIRE(cb.condition_input.has_value());
    CHECK(cb.condition_input->ids == std::vector<int>{256, 20, 21, 257});
    CHECK(cb.target_counts == std::vector<std::size_t>{2});
}

TEST_CASE("trainer: fixed seed gives identical loss curves and logs beta_at") {
    const RunConfig cfg = small_run(50);
    const Corpus corpus = synthetic_corpus(32, 1, cfg.model);
    std::vector<double> first, second;
    Trainer<float> a(cfg, corpus);
    a.train(-1, [&](const StepRecord& r) {
        first.push_back(r.loss.total);
        CHECK(r.loss.beta == beta_at(r.step, AnnealSchedule{AnnealMode::Cyclical, 20, 1e-5, 1.0}));
    });
    Trainer<float> b(cfg, corpus);
    b.train(-1, [&](const StepRecord& r) { second.push_back(r.loss.total); });
    REQUIRE(first.size() == 50);
    CHECK(first == second);
    CHECK(a.step() == 50);

    // The default period is two epochs.
    RunConfig d = cfg;
    d.train.anneal.period_steps = 0;
    Trainer<float> c(d, corpus);
    CHECK(c.anneal_period() == 8);
}

TEST_CASE("trainer: loss CSV has one column per layer") {
    CHECK(loss_csv_header(2) == "step,beta,loss_total,recon,kl_total,kl_layer_1,kl_layer_2,bow");
    StepRecord r;
    r.step = 4;
    r.loss.kl_per_layer = {0.5, 0.25};
    const std::string row = loss_csv_row(r);
    CHECK(std::count(row.begin(), row.end(), ',') == 7);
    CHECK(row.rfind("4,", 0) == 0);
}

TEST_CASE("trainer: a non-finite step raises and leaves parameters untouched") {
    const RunConfig cfg = small_run(10);
    Trainer<float> t(cfg, synthetic_corpus(16, 1, cfg.model));
    t.train(3);
    Tensor<float> victim = t.model().parameters().entries().front().tensor;
    victim.mutable_data()[0] = std::numeric_limits<float>::infinity();
    std::vector<float> before;
    for (const auto& e : t.model().parameters().entries()) before.insert(before.end(), e.tensor.data().begin(), e.tensor.data().end());
    CHECK_THROWS_AS(t.train_step(), TrainingDiverged);
    std::vector<float> after;
    for (const auto& e : t.model().parameters().entries()) after.insert(after.end(), e.tensor.data().begin(), e.tensor.data().end());
    CHECK(std::memcmp(before.data(), after.data(), before.size() * sizeof(float)) == 0);
    CHECK(t.step() == 3);
}

TEST_CASE("trainer: overfits eight sentences") {
    RunConfig cfg = small_run(2000);
    cfg.model.hidden_dim = 32;
    cfg.train.learning_rate = 3e-3;
    // A small constant weight lets the latent carry which sentence it is.
    cfg.train.anneal.mode = AnnealMode::Constant;
    cfg.train.anneal.constant_beta = 0.1;
    const Corpus corpus = synthetic_corpus(8, 2, cfg.model);
    Trainer<float> t(cfg, corpus);
    double recon = 1e9;
    while (t.step() < 2000 && recon >= 0.1) {
        t.train(t.step() + 100);
        Rng eval(1);
        recon = evaluate_loss(t.model(), corpus, 8, eval, {}).reconstruction;
    }
    MESSAGE("reconstruction " << recon << " after " << t.step() << " steps");
    CHECK(recon < 0.1);
}

TEST_CASE("trainer: resuming from a checkpoint continues the run") {
    const RunConfig cfg = small_run(100);
    const Corpus corpus = synthetic_corpus(40, 5, cfg.model);
    Trainer<float> straight(cfg, corpus);
    double last_straight = 0;
    straight.train(100, [&](const StepRecord& r) { last_straight = r.loss.total; });

    Trainer<float> half(cfg, corpus);
    half.train(50);
    const Checkpoint ck = parse_checkpoint(serialize_checkpoint(half.checkpoint()));
    CHECK(ck.step == 50);
    Trainer<float> resumed(ck, corpus);
    double last_resumed = 0;
    resumed.train(100, [&](const StepRecord& r) { last_resumed = r.loss.total; });
    CHECK(std::abs(last_resumed - last_straight) <= 1e-5 * std::abs(last_straight));
    const TokenBatch probe = make_token_batch({{256, 104, 105}}, 258);
    CHECK(same_logits(straight.model(), resumed.model(), probe));
}

TEST_CASE("checkpoint: bitwise round trip, size and structured errors") {
    RunConfig cfg;
    cfg.model = small_model();
    cfg.model.hidden_dim = 8;
    cfg.model.latent_dim = 4;
    VaeModel<float> model(cfg.model, 11);
    const Checkpoint ck = make_checkpoint<float>(model, cfg, 7, RngState{3, 9}, nullptr);
    const fs::path dir = scratch_dir("checkpoint");
    save_checkpoint(dir / "m.bin", ck);
    CHECK(fs::file_size(dir / "m.bin") < 1000000);
    CHECK_FALSE(fs::exists(dir / "m.bin.tmp"));
    const Checkpoint back = load_checkpoint(dir / "m.bin");
    CHECK(back.step == 7);
    CHECK(back.rng.counter == 9);
    REQUIRE(back.tensors.size() == ck.tensors.size());
    for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
        CHECK(back.tensors[i].name == ck.tensors[i].name);
        CHECK(std::memcmp(back.tensors[i].values.data(), ck.tensors[i].values.data(), ck.tensors[i].values.size() * 4) == 0);
    }
    VaeModel<float> fresh(back.config.model, 99);
    restore_parameters(fresh, back);
    CHECK(same_logits(model, fresh, make_token_batch({{256, 1, 2, 3}}, 258)));

    auto kind_of = [](const std::vector<unsigned char>& bytes) {
        try {
            parse_checkpoint(bytes);
        } catch (const CheckpointError& e) {
            return static_cast<int>(e.kind());
        }
        return -1;
    };
    const auto bytes = serialize_checkpoint(ck);
    auto corrupt = bytes;
    corrupt[8] = 'X';
    CHECK(kind_of(corrupt) == static_cast<int>(CheckpointErrorKind::Parse));
    auto truncated = bytes;
    truncated.resize(bytes.size() - 5);
    CHECK(kind_of(truncated) == static_cast<int>(CheckpointErrorKind::Truncated));
    CHECK(kind_of({1, 2, 3}) == static_cast<int>(CheckpointErrorKind::Truncated));
    Checkpoint future = ck;
    future.format_version = kCheckpointVersion + 1;
    CHECK(kind_of(serialize_checkpoint(future)) == static_cast<int>(CheckpointErrorKind::Version));
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.bin"), CheckpointError);

    ModelConfig wider = cfg.model;
    wider.hidden_dim = 16;
    VaeModel<float> other(wider, 1);
    try {
        restore_parameters(other, back);
        FAIL("expected a shape error");
    } catch (const CheckpointError& e) {
        CHECK(e.kind() == CheckpointErrorKind::Shape);
    }

    // Any single corrupted header byte yields a checkpoint or a structured error.
    std::uint64_t header_len = 0;
    for (int i = 0; i < 8; ++i) header_len |= static_cast<std::uint64_t>(bytes[static_cast<std::size_t>(i)]) << (8 * i);
    int structured = 0;
    for (std::size_t pos = 8; pos < 8 + header_len; pos += 13) {
        auto b = bytes;
        b[pos] ^= 0x5A;
        try {
            parse_checkpoint(b);
        } catch (const CheckpointError&) {
            ++structured;
        }
    }
    CHECK(structured > 0);
}

TEST_CASE("generation: greedy determinism, top-1 equals greedy, valid output") {
    const ModelConfig c = small_model();
    VaeModel<double> model(c, 21);
    Rng rng(1);
    const auto chain = model.prior_chain(3, rng);
    GenerateOptions greedy;
    greedy.max_new_tokens = 12;
    Rng r1(2), r2(3);
    const auto a = generate(model, chain, {}, greedy, r1);
    const auto b = generate(model, chain, {}, greedy, r2);
    CHECK(a == b);
    GenerateOptions top1 = greedy;
    top1.mode = DecodeMode::TopK;
    top1.top_k = 1;
    Rng r3(4);
    CHECK(generate(model, chain, {}, top1, r3) == a);
    GenerateOptions topk = greedy;
    topk.mode = DecodeMode::TopK;
    topk.top_k = 5;
    Rng r4(5);
    for (const auto& ids : sample_from_prior(model, 6, {}, topk, r4)) {
        REQUIRE_FALSE(ids.empty());
        for (int id : ids) CHECK(id < c.vocab_size);
        CHECK((ids.back() == c.specials.eos || ids.size() == 12));
    }
}

TEST_CASE("generation: conditional models consume the source") {
    ModelConfig c = small_model();
    c.conditional = true;
    VaeModel<double> model(c, 22);
    Rng rng(1);
    GenerateOptions o;
    o.max_new_tokens = 6;
    const std::vector<std::vector<int>> cond{{104, 105}};
    const auto out = sample_from_prior(model, 1, cond, o, rng);
    CHECK(out.size() == 1);
    CHECK_THROWS_AS(sample_from_prior(model, 1, {}, o, rng), ContractError);
}

TEST_CASE("interpolation: endpoints, linearity and determinism") {
    const ModelConfig c = small_model();
    VaeModel<double> model(c, 23);
    const Example x1{{116, 104, 101}, {}}, x2{{97, 32, 98, 99}, {}};
    GenerateOptions o;
    o.max_new_tokens = 10;
    const std::vector<double> taus{0.0, 0.25, 0.5, 0.75, 1.0};
    Rng rng(6);
    const auto steps = interpolate(model, x1, x2, taus, o, rng);
    REQUIRE(steps.size() == 5);
    for (std::size_t l = 0; l < steps[0].latents.size(); ++l) {
        for (std::size_t k = 0; k < steps[0].latents[l].numel(); ++k) {
            const double mid = steps[2].latents[l].at(k);
            CHECK(mid == (steps[0].latents[l].at(k) + steps[4].latents[l].at(k)) / 2);
        }
    }
    // Endpoints decode exactly as the sampled chains do.
    Rng replay(6);
    const auto chain1 = model.posterior_chain(make_model_batch({x1}, c), replay);
    const auto chain2 = model.posterior_chain(make_model_batch({x2}, c), replay);
    Rng unused(0);
    CHECK(steps[4].ids == generate(model, chain1, {}, o, unused).front());
    CHECK(steps[0].ids == generate(model, chain2, {}, o, unused).front());
    Rng again(6);
    const auto repeat = interpolate(model, x1, x2, taus, o, again);
    for (std::size_t i = 0; i < 5; ++i) CHECK(repeat[i].ids == steps[i].ids);
}

TEST_CASE("attention CSV marks the memory slot with key -1") {
    VaeModel<double> model(small_model(Paradigm::Memory), 24);
    Rng rng(1);
    const TokenBatch input = make_token_batch({{256, 104, 105}}, 258);
    const auto chain = model.prior_chain(1, rng);
    DecodeOptions o;
    o.record_attention = true;
    const auto out = model.decode(input, &chain, o);
    std::ostringstream csv;
    write_attention_csv(csv, out, input, 0);
    std::istringstream in(csv.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "layer,head,query_pos,key_pos,weight");
    int rows = 0, slot_rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        if (line.find(",-1,") != std::string::npos) ++slot_rows;
    }
    // 2 layers x 2 heads x (3 queries x (1 slot + causal keys 1..3)).
    CHECK(rows == 2 * 2 * (3 + 6));
    CHECK(slot_rows == 2 * 2 * 3);
}

TEST_CASE("evaluation helpers cover the whole corpus") {
    const RunConfig cfg = small_run(5);
    const Corpus corpus = synthetic_corpus(10, 3, cfg.model);
    Trainer<float> t(cfg, corpus);
    t.train();
    Rng rng(1);
    const auto posts = corpus_posteriors(t.model(), corpus, 4, rng);
    CHECK(posts.size() == 10);
    CHECK(posts[0].mean.size() == 2);
    const auto [ll, counts] = corpus_iw_log_likelihood(t.model(), corpus, 4, 3, rng);
    CHECK(ll.size() == 10);
    CHECK(counts[0] == corpus.examples[0].text.size() + 1);
    for (double v : ll) CHECK(v < 0.0);
    const LossValues v = evaluate_loss(t.model(), corpus, 4, rng, {});
    CHECK(v.reconstruction > 0.0);
    CHECK(v.kl_per_layer.size() == 2);
}

TEST_CASE("conditional model: aligned pairs score better than shuffled ones") {
    RunConfig cfg = small_run(1500);
    cfg.model.conditional = true;
    cfg.model.hidden_dim = 32;
    cfg.model.max_len = 96;
    cfg.train.learning_rate = 3e-3;
    cfg.train.anneal.mode = AnnealMode::Constant;
    cfg.train.anneal.constant_beta = 0.1;
    const Corpus corpus = synthetic_corpus(12, 6, cfg.model);
    Trainer<float> t(cfg, corpus);
    t.train();
    Corpus shuffled = corpus;
    std::rotate(shuffled.examples.begin(), shuffled.examples.begin() + 1, shuffled.examples.end());
    for (std::size_t i = 0; i < corpus.size(); ++i) shuffled.examples[i].text = corpus.examples[i].text;
    Rng a(1), b(1);
    const double aligned = evaluate_loss(t.model(), corpus, 12, a, {}).total;
    const double mismatched = evaluate_loss(t.model(), shuffled, 12, b, {}).total;
    MESSAGE("aligned " << aligned << ", shuffled " << mismatched);
    CHECK(mismatched > aligned);
}

#ifdef LVT_CLI_PATH
TEST_CASE("command line: train, evaluate, sample and export with a manifest") {
    const fs::path dir = scratch_dir("cli");
    const std::string cli = LVT_CLI_PATH;
    auto run = [&](const std::string& args) {
        const std::string cmd = "LVT_LOG_LEVEL=warn \"" + cli + "\" " + args + " > \"" + (dir / "log.txt").string() + "\" 2>&1";
        return std::system(cmd.c_str());
    };
    const std::string model = "--layers 2 --hidden 16 --heads 2 --latent-dim 4 --max-len 40 --latent-end 2";
    REQUIRE(run("train " + model + " --synthetic 24 --steps 6 --batch-size 8 --out \"" + (dir / "run").string() + "\"") == 0);
    for (const char* f : {"manifest.json", "train_log.csv", "checkpoint.bin"}) CHECK(fs::exists(dir / "run" / f));
    std::ifstream manifest(dir / "run" / "manifest.json");
    const auto m = nlohmann::json::parse(manifest);
    CHECK(m.at("command") == "train");
    CHECK(m.contains("config"));
    CHECK(m.contains("build_id"));
    CHECK(m.at("config").at("model").at("num_layers") == 2);

    const std::string ck = "--checkpoint \"" + (dir / "run" / "checkpoint.bin").string() + "\"";
    CHECK(run("eval " + ck + " --synthetic 12 --generate 4 --iw-samples 2 --out \"" + (dir / "eval").string() + "\"") == 0);
    CHECK(fs::exists(dir / "eval" / "metrics.json"));
    CHECK(fs::exists(dir / "eval" / "metrics.csv"));
    CHECK(run("sample " + ck + " --count 3 --max-tokens 8 --out \"" + (dir / "sample").string() + "\"") == 0);
    std::ifstream samples(dir / "sample" / "samples.jsonl");
    int lines = 0;
    for (std::string line; std::getline(samples, line); ++lines) CHECK(nlohmann::json::parse(line).contains("text"));
    CHECK(lines == 3);
    CHECK(run("interpolate " + ck + " --from \"the cat\" --to \"a dog\" --grid 3 --out \"" + (dir / "interp").string() + "\"") == 0);
    CHECK(fs::exists(dir / "interp" / "interpolation.jsonl"));
    CHECK(run("analyze-attention " + ck + " --text \"the cat\" --out \"" + (dir / "attn").string() + "\"") == 0);
    CHECK(fs::exists(dir / "attn" / "attention.csv"));
    CHECK(run("export-posteriors " + ck + " --synthetic 5 --out \"" + (dir / "post").string() + "\"") == 0);
    CHECK(fs::exists(dir / "post" / "posteriors.jsonl"));
    CHECK(run("train --paradigm nonsense --synthetic 4 --out \"" + (dir / "bad").string() + "\"") != 0);
}
#endif

// Command-line driver: train, eval, sample, interpolate, analyze-attention,
// export-posteriors. Every run writes manifest.json next to its outputs.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "lvt/checkpoint.hpp"
#include "lvt/corpus.hpp"
#include "lvt/generation.hpp"
#include "lvt/metrics.hpp"
#include "lvt/trainer.hpp"

#ifndef LVT_BUILD_ID
#define LVT_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lvt;

namespace {

using Model = VaeModel<float>;

/// Flags that override fields of the loaded config when given.
struct Overrides {
    std::optional<std::string> paradigm, kl_layers, encoder_attention, anneal;
    std::optional<int> layers, hidden, heads, latent_dim, rank, max_len, latent_start, latent_end, batch_size, iw_samples;
    std::optional<bool> separate_latents, conditional, share_encoder, bow;
    std::optional<std::int64_t> steps, anneal_period, log_every, checkpoint_every;
    std::optional<double> lr, free_bits, bow_weight;
    std::optional<std::uint64_t> seed;

    void add_to(CLI::App& app) {
        app.add_option("--paradigm", paradigm, "embedding|memory|softmax|della");
        app.add_option("--layers", layers, "decoder layers");
        app.add_option("--hidden", hidden, "hidden width");
        app.add_option("--heads", heads, "attention heads");
        app.add_option("--latent-dim", latent_dim, "latent size per layer");
        app.add_option("--rank", rank, "low-rank fusion rank");
        app.add_option("--max-len", max_len, "maximum sequence length");
        app.add_option("--latent-start", latent_start, "first layer with a latent");
        app.add_option("--latent-end", latent_end, "last layer with a latent");
        app.add_option("--separate-latents", separate_latents, "disable the latent recurrence");
        app.add_option("--kl-layers", kl_layers, "all|first|last");
        app.add_option("--conditional", conditional, "train a conditional model on source<TAB>target data");
        app.add_option("--share-encoder", share_encoder, "share encoder and decoder weights");
        app.add_option("--encoder-attention", encoder_attention, "bidirectional|causal");
        app.add_option("--steps", steps, "training steps");
        app.add_option("--batch-size", batch_size, "batch size");
        app.add_option("--lr", lr, "learning rate");
        app.add_option("--seed", seed, "run seed");
        app.add_option("--anneal", anneal, "cyclical|constant|none");
        app.add_option("--anneal-period", anneal_period, "steps per annealing cycle (0: two epochs)");
        app.add_option("--free-bits", free_bits, "per-layer KL floor");
        app.add_option("--bow", bow, "add the bag-of-words loss");
        app.add_option("--bow-weight", bow_weight, "bag-of-words loss weight");
        app.add_option("--log-every", log_every, "steps between log lines");
        app.add_option("--checkpoint-every", checkpoint_every, "steps between checkpoints (0: final only)");
        app.add_option("--iw-samples", iw_samples, "importance samples for perplexity");
    }

    void apply(RunConfig& c) const {
        auto& m = c.model;
        auto& t = c.train;
        if (paradigm) m.paradigm = parse_paradigm(*paradigm);
        if (layers) m.num_layers = *layers;
        if (hidden) m.hidden_dim = *hidden;
        if (heads) m.num_heads = *heads;
        if (latent_dim) m.latent_dim = *latent_dim;
        if (rank) m.rank = *rank;
        if (max_len) m.max_len = *max_len;
        if (latent_start) m.latent_start_layer = *latent_start;
        if (latent_end) m.latent_end_layer = *latent_end;
        if (layers && !latent_end) m.latent_end_layer = std::min(m.latent_end_layer, m.num_layers);
        if (separate_latents) m.separate_latents = *separate_latents;
        if (kl_layers) m.kl_layers = parse_kl_layers(*kl_layers);
        if (conditional) m.conditional = *conditional;
        if (share_encoder) m.share_encoder_decoder = *share_encoder;
        if (encoder_attention) m.encoder_attention = parse_encoder_attention(*encoder_attention);
        if (steps) t.steps = *steps;
        if (batch_size) t.batch_size = *batch_size;
        if (lr) t.learning_rate = *lr;
        if (seed) t.seed = *seed;
        if (anneal) t.anneal.mode = parse_anneal_mode(*anneal);
        if (anneal_period) t.anneal.period_steps = *anneal_period;
        if (free_bits) t.free_bits = *free_bits;
        if (bow) t.use_bow = *bow;
        if (bow_weight) t.bow_weight = *bow_weight;
        if (log_every) t.log_every = *log_every;
        if (checkpoint_every) t.checkpoint_every = *checkpoint_every;
        if (iw_samples) t.iw_samples = *iw_samples;
    }
};

struct DataArgs {
    std::string corpus;
    std::size_t synthetic = 0;
    std::uint64_t synthetic_seed = 0;

    void add_to(CLI::App& app) {
        app.add_option("--corpus", corpus, "text corpus (one sample per line, or source<TAB>target)");
        app.add_option("--synthetic", synthetic, "use N bundled synthetic sentences instead of a file");
        app.add_option("--synthetic-seed", synthetic_seed, "seed of the synthetic corpus");
    }

    Corpus load(const ModelConfig& config) const {
        if (!corpus.empty()) return load_corpus(corpus, config);
        if (synthetic > 0) return synthetic_corpus(synthetic, synthetic_seed, config);
        throw ConfigError("pass --corpus or --synthetic");
    }
};

std::vector<std::string> g_argv;

// Generated bytes need not be valid UTF-8.
std::string dump(const json& j, int indent = -1) {
    return j.dump(indent, ' ', false, json::error_handler_t::replace);
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& config, const json& extra) {
    fs::create_directories(dir);
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    json m{{"command", command},
           {"argv", g_argv},
           {"config", config},
           {"seed", config.train.seed},
           {"build_id", LVT_BUILD_ID},
           {"unix_time", std::chrono::duration_cast<std::chrono::seconds>(now).count()},
           {"details", extra}};
    std::ofstream(dir / "manifest.json") << dump(m, 2) << '\n';
}

RunConfig load_run_config(const std::string& path) {
    RunConfig c;
    c.model = desk_scale_config();
    if (path.empty()) return c;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    try {
        json j = json::parse(in);
        if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
        if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
        if (!j.contains("model") && !j.contains("train")) c.model = j.get<ModelConfig>();
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return c;
}

std::unique_ptr<Model> load_model(const std::string& path, Checkpoint& ck) {
    ck = load_checkpoint(path);
    auto model = std::make_unique<Model>(ck.config.model, ck.config.train.seed);
    restore_parameters(*model, ck);
    return model;
}

std::string detok(const std::vector<int>& ids) { return ByteTokenizer().decode(ids); }

GenerateOptions generate_options(const std::string& mode, int top_k, int max_tokens) {
    GenerateOptions o;
    o.mode = mode == "greedy" ? DecodeMode::Greedy : DecodeMode::TopK;
    if (mode != "greedy" && mode != "topk") throw ConfigError("decode mode must be greedy or topk");
    o.top_k = top_k;
    o.max_new_tokens = max_tokens;
    return o;
}

} // namespace

int main(int argc, char** argv) {
    g_argv.assign(argv, argv + argc);
    if (const char* lvl = std::getenv("LVT_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(lvl));

    CLI::App app{"Layer-wise latent variable transformer VAE"};
    app.require_subcommand(1);

    // train ---------------------------------------------------------------------
    auto* train = app.add_subcommand("train", "train a model");
    std::string config_path, out_dir = "run", resume;
    Overrides ov;
    DataArgs data;
    train->add_option("--config", config_path, "JSON config ({model, train} or a bare model config)");
    train->add_option("--out", out_dir, "output directory");
    train->add_option("--resume", resume, "checkpoint to continue from");
    ov.add_to(*train);
    data.add_to(*train);

    // eval ----------------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "representation and generation metrics");
    std::string ckpt_path;
    DataArgs eval_data;
    int iw_k = 0, gen_count = 100, ref_pool = 500, top_k = 10, max_tokens = 64;
    std::uint64_t eval_seed = 0;
    std::string mode = "greedy";
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--out", out_dir, "output directory");
    eval->add_option("--iw-samples", iw_k, "importance samples (default: from the checkpoint config)");
    eval->add_option("--generate", gen_count, "prior samples for generation metrics");
    eval->add_option("--ref-pool", ref_pool, "reference pool size for unconditional BLEU");
    eval->add_option("--mode", mode, "greedy|topk");
    eval->add_option("--top-k", top_k, "k for top-k sampling");
    eval->add_option("--seed", eval_seed, "evaluation seed");
    eval_data.add_to(*eval);

    // sample --------------------------------------------------------------------
    auto* sample = app.add_subcommand("sample", "decode from the prior");
    std::size_t count = 10;
    std::string conditions_path;
    sample->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    sample->add_option("--out", out_dir, "output directory");
    sample->add_option("--count", count, "number of samples (unconditional)");
    sample->add_option("--conditions", conditions_path, "one source per line (conditional models)");
    sample->add_option("--mode", mode, "greedy|topk");
    sample->add_option("--top-k", top_k, "k for top-k sampling");
    sample->add_option("--max-tokens", max_tokens, "cap on generated tokens");
    sample->add_option("--seed", eval_seed, "sampling seed");

    // interpolate ---------------------------------------------------------------
    auto* interp = app.add_subcommand("interpolate", "decode along a line between two posterior chains");
    std::string from_text, to_text, condition_text;
    int grid = 5;
    interp->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    interp->add_option("--out", out_dir, "output directory");
    interp->add_option("--from", from_text, "first sentence")->required();
    interp->add_option("--to", to_text, "second sentence")->required();
    interp->add_option("--condition", condition_text, "shared source (conditional models)");
    interp->add_option("--grid", grid, "number of tau values in [0, 1]");
    interp->add_option("--seed", eval_seed, "posterior sampling seed");

    // analyze-attention ---------------------------------------------------------
    auto* attn = app.add_subcommand("analyze-attention", "export decoder attention weights as CSV");
    std::string text;
    bool mask_slot = false;
    attn->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    attn->add_option("--out", out_dir, "output directory");
    attn->add_option("--text", text, "sentence to analyze")->required();
    attn->add_option("--condition", condition_text, "source (conditional models)");
    attn->add_flag("--mask-memory", mask_slot, "exclude the memory slot from attention");
    attn->add_option("--seed", eval_seed, "posterior sampling seed");

    // export-posteriors ---------------------------------------------------------
    auto* post = app.add_subcommand("export-posteriors", "write per-datum posterior statistics as JSON lines");
    DataArgs post_data;
    post->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    post->add_option("--out", out_dir, "output directory");
    post->add_option("--seed", eval_seed, "posterior sampling seed");
    post_data.add_to(*post);

    CLI11_PARSE(app, argc, argv);

    try {
        const fs::path out(out_dir);
        if (train->parsed()) {
            RunConfig cfg = load_run_config(config_path);
            std::optional<Checkpoint> ck;
            if (!resume.empty()) {
                ck = load_checkpoint(resume);
                cfg = ck->config;
            }
            ov.apply(cfg);
            cfg.model.validate();
            Corpus corpus = data.load(cfg.model);
            std::unique_ptr<Trainer<float>> trainer;
            if (ck) {
                ck->config = cfg;
                trainer = std::make_unique<Trainer<float>>(*ck, std::move(corpus));
            } else {
                trainer = std::make_unique<Trainer<float>>(cfg, std::move(corpus));
            }
            write_manifest(out, "train", cfg, {{"corpus", data.corpus}, {"synthetic", data.synthetic},
                                               {"synthetic_seed", data.synthetic_seed}, {"resume", resume}});
            std::ofstream log(out / "train_log.csv", ck ? std::ios::app : std::ios::trunc);
            if (!ck) log << loss_csv_header(cfg.model.num_layers) << '\n';
            const auto every = cfg.train.checkpoint_every;
            try {
                trainer->train(-1, [&](const StepRecord& rec) {
                    if (cfg.train.log_every <= 0 || rec.step % cfg.train.log_every == 0) log << loss_csv_row(rec) << '\n';
                    if (every > 0 && trainer->step() % every == 0) save_checkpoint(out / "checkpoint.bin", trainer->checkpoint());
                });
            } catch (const TrainingDiverged& e) {
                spdlog::error("{}; the last saved checkpoint is kept", e.what());
                return 2;
            }
            save_checkpoint(out / "checkpoint.bin", trainer->checkpoint());
            spdlog::info("wrote {}", (out / "checkpoint.bin").string());
        } else if (eval->parsed()) {
            Checkpoint ck;
            auto model = load_model(ckpt_path, ck);
            const Corpus corpus = eval_data.load(model->config());
            const auto bs = static_cast<std::size_t>(ck.config.train.batch_size);
            Rng rng(eval_seed);
            MetricsReport report;
            typename Model::LossOptions lo;
            const LossValues lv = evaluate_loss(*model, corpus, bs, rng, lo);
            report.elbo = -(lv.reconstruction + lv.kl_total);
            report.kl = lv.kl_total;
            const int k = iw_k > 0 ? iw_k : ck.config.train.iw_samples;
            const auto [ll, counts] = corpus_iw_log_likelihood(*model, corpus, bs, k, rng);
            report.ppl = perplexity(ll, counts);
            const auto summaries = corpus_posteriors(*model, corpus, bs, rng);
            if (summaries.size() >= 2) {
                report.mi = mutual_information(summaries, rng);
                report.au = active_units(summaries);
            }
            if (gen_count > 0) {
                std::vector<std::vector<int>> conds;
                std::vector<std::string> samples, refs;
                std::vector<std::vector<std::string>> cond_refs;
                const auto opts = generate_options(mode, top_k, max_tokens);
                if (model->config().conditional) {
                    for (std::size_t i = 0; i < corpus.size() && static_cast<int>(conds.size()) < gen_count; ++i) {
                        conds.push_back(corpus.examples[i].condition);
                        cond_refs.push_back({corpus.texts[i]});
                    }
                }
                for (const auto& ids : sample_from_prior(*model, model->config().conditional ? conds.size() : static_cast<std::size_t>(gen_count), conds, opts, rng)) {
                    samples.push_back(detok(ids));
                }
                for (std::size_t i = 0; i < corpus.size() && static_cast<int>(refs.size()) < ref_pool; ++i) refs.push_back(corpus.texts[i]);
                report.bleu = model->config().conditional ? bleu(samples, cond_refs) : bleu_against_pool(samples, refs);
                if (samples.size() >= 2) {
                    report.self_bleu = self_bleu(samples);
                    report.jaccard = jaccard_similarity(samples, 2);
                }
                for (int n = 1; n <= 4; ++n) {
                    try {
                        report.dist_n[n] = dist_n(samples, n);
                    } catch (const ContractError&) {
                    }
                }
                report.sample_count = samples.size();
            }
            write_manifest(out, "eval", ck.config, {{"checkpoint", ckpt_path}, {"iw_samples", k}, {"eval_seed", eval_seed}});
            std::ofstream(out / "metrics.json") << dump(json(report), 2) << '\n';
            std::ofstream(out / "metrics.csv") << MetricsReport::csv_header() << '\n' << report.csv_row() << '\n';
            std::cout << dump(json(report), 2) << '\n';
        } else if (sample->parsed()) {
            Checkpoint ck;
            auto model = load_model(ckpt_path, ck);
            std::vector<std::vector<int>> conds;
            std::vector<std::string> cond_text;
            if (model->config().conditional) {
                if (conditions_path.empty()) throw ConfigError("conditional models need --conditions");
                std::ifstream in(conditions_path);
                const ByteTokenizer tok;
                for (std::string line; std::getline(in, line);) {
                    if (line.empty()) continue;
                    cond_text.push_back(line);
                    conds.push_back(tok.encode(line));
                }
            }
            Rng rng(eval_seed);
            const auto ids = sample_from_prior(*model, model->config().conditional ? conds.size() : count, conds,
                                               generate_options(mode, top_k, max_tokens), rng);
            write_manifest(out, "sample", ck.config, {{"checkpoint", ckpt_path}, {"sample_seed", eval_seed}, {"mode", mode}});
            std::ofstream jl(out / "samples.jsonl");
            for (std::size_t i = 0; i < ids.size(); ++i) {
                json row{{"id", i}, {"text", detok(ids[i])}, {"condition", cond_text.empty() ? json(nullptr) : json(cond_text[i])}};
                jl << dump(row) << '\n';
                std::cout << dump(row) << '\n';
            }
        } else if (interp->parsed()) {
            Checkpoint ck;
            auto model = load_model(ckpt_path, ck);
            const ByteTokenizer tok;
            const Example a{tok.encode(from_text), tok.encode(condition_text)};
            const Example b{tok.encode(to_text), tok.encode(condition_text)};
            std::vector<double> taus;
            for (int i = 0; i < grid; ++i) taus.push_back(grid == 1 ? 1.0 : static_cast<double>(i) / (grid - 1));
            Rng rng(eval_seed);
            const auto steps = interpolate(*model, a, b, taus, GenerateOptions{}, rng);
            write_manifest(out, "interpolate", ck.config, {{"checkpoint", ckpt_path}, {"from", from_text}, {"to", to_text}});
            std::ofstream jl(out / "interpolation.jsonl");
            for (const auto& s : steps) {
                json row{{"tau", s.tau}, {"text", detok(s.ids)}};
                jl << dump(row) << '\n';
                std::cout << dump(row) << '\n';
            }
        } else if (attn->parsed()) {
            Checkpoint ck;
            auto model = load_model(ckpt_path, ck);
            const ByteTokenizer tok;
            const ModelBatch batch = make_model_batch({Example{tok.encode(text), tok.encode(condition_text)}}, model->config());
            Rng rng(eval_seed);
            NoGradGuard no_grad;
            const LatentChain<float> chain = model->posterior_chain(batch, rng);
            DecodeOptions dopts;
            dopts.record_attention = true;
            dopts.mask_memory_slot = mask_slot;
            const auto dec = model->decode(batch.decoder_input, &chain, dopts);
            write_manifest(out, "analyze-attention", ck.config, {{"checkpoint", ckpt_path}, {"text", text}});
            std::ofstream csv(out / "attention.csv");
            write_attention_csv(csv, dec, batch.decoder_input, 0);
        } else if (post->parsed()) {
            Checkpoint ck;
            auto model = load_model(ckpt_path, ck);
            const Corpus corpus = post_data.load(model->config());
            Rng rng(eval_seed);
            const auto summaries = corpus_posteriors(*model, corpus, static_cast<std::size_t>(ck.config.train.batch_size), rng);
            write_manifest(out, "export-posteriors", ck.config, {{"checkpoint", ckpt_path}, {"eval_seed", eval_seed}});
            std::ofstream jl(out / "posteriors.jsonl");
            for (const auto& s : summaries) jl << dump(json(s)) << '\n';
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}

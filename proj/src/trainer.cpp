#include "lvt/trainer.hpp"

#include <sstream>

#include <spdlog/spdlog.h>

namespace lvt {

namespace {

constexpr std::uint64_t kSampleStream = 0x1a7e47;

Rng sample_stream(std::uint64_t seed) { return Rng(seed).fork(kSampleStream); }

} // namespace

std::string loss_csv_header(int num_layers) {
    std::string h = "step,beta,loss_total,recon,kl_total";
    for (int l = 1; l <= num_layers; ++l) h += ",kl_layer_" + std::to_string(l);
    return h + ",bow";
}

std::string loss_csv_row(const StepRecord& r) {
    std::ostringstream out;
    out.precision(9);
    out << r.step << ',' << r.loss.beta << ',' << r.loss.total << ',' << r.loss.reconstruction << ',' << r.loss.kl_total;
    for (double k : r.loss.kl_per_layer) out << ',' << k;
    out << ',';
    if (r.loss.bow) out << *r.loss.bow;
    return out.str();
}

template <typename T>
Trainer<T>::Trainer(const RunConfig& config, Corpus corpus)
    : config_(config),
      corpus_(std::move(corpus)),
      schedule_(corpus_.size(), static_cast<std::size_t>(config.train.batch_size), config.train.seed),
      model_(std::make_unique<VaeModel<T>>(config.model, config.train.seed)),
      optimizer_(model_->parameters(), config.train),
      sample_rng_(sample_stream(config.train.seed)) {
    if (corpus_.conditional != config.model.conditional) throw ConfigError("corpus and model disagree on conditioning");
}

template <typename T>
Trainer<T>::Trainer(const Checkpoint& ck, Corpus corpus) : Trainer(ck.config, std::move(corpus)) {
    restore_parameters(*model_, ck);
    if (ck.optimizer) optimizer_.set_state(restore_optimizer_state<T>(ck));
    sample_rng_ = Rng(ck.rng);
    step_ = ck.step;
}

template <typename T>
std::int64_t Trainer<T>::anneal_period() const {
    const auto& a = config_.train.anneal;
    return a.period_steps > 0 ? a.period_steps : 2 * static_cast<std::int64_t>(schedule_.batches_per_epoch());
}

template <typename T>
double Trainer<T>::current_beta() const {
    AnnealSchedule s = config_.train.anneal;
    s.period_steps = anneal_period();
    return beta_at(step_, s);
}

template <typename T>
StepRecord Trainer<T>::train_step() {
    const ModelBatch batch = make_model_batch(gather_examples(corpus_, schedule_.indices(step_)), config_.model);
    typename VaeModel<T>::LossOptions opts;
    opts.objective.beta = current_beta();
    opts.objective.free_bits = config_.train.free_bits;
    opts.objective.bow_weight = config_.train.bow_weight;
    opts.use_bow = config_.train.use_bow;

    model_->parameters().zero_grad();
    StepRecord rec;
    rec.step = step_;
    try {
        const LossBreakdown<T> loss = model_->loss(batch, sample_rng_, opts);
        rec.loss = loss_values(loss, config_.model.num_layers);
        backward(loss.total);
        optimizer_.step();
    } catch (const NumericError& e) {
        throw TrainingDiverged("training diverged at step " + std::to_string(step_) + ": " + e.what());
    }
    ++step_;
    return rec;
}

template <typename T>
void Trainer<T>::train(std::int64_t until, const std::function<void(const StepRecord&)>& on_step) {
    if (until < 0) until = config_.train.steps;
    while (step_ < until) {
        const StepRecord rec = train_step();
        if (config_.train.log_every > 0 && rec.step % config_.train.log_every == 0) {
            spdlog::info("step {} beta {:.6g} loss {:.4f} recon {:.4f} kl {:.4f}", rec.step, rec.loss.beta, rec.loss.total,
                         rec.loss.reconstruction, rec.loss.kl_total);
        }
        if (on_step) on_step(rec);
    }
}

template <typename T>
Checkpoint Trainer<T>::checkpoint() const {
    return make_checkpoint(*model_, config_, step_, sample_rng_.state(), &optimizer_);
}

template <typename T>
LossValues evaluate_loss(const VaeModel<T>& model, const Corpus& corpus, std::size_t batch_size, Rng& rng,
                         const typename VaeModel<T>::LossOptions& options) {
    NoGradGuard no_grad;
    if (corpus.size() == 0) throw CorpusError("evaluate_loss on an empty corpus");
    LossValues acc;
    acc.kl_per_layer.assign(static_cast<std::size_t>(model.config().num_layers), 0.0);
    double weight_sum = 0;
    for (std::size_t begin = 0; begin < corpus.size(); begin += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = begin; i < std::min(begin + batch_size, corpus.size()); ++i) idx.push_back(i);
        const ModelBatch batch = make_model_batch(gather_examples(corpus, idx), model.config());
        const LossValues v = loss_values(model.loss(batch, rng, options), model.config().num_layers);
        const double w = static_cast<double>(idx.size());
        weight_sum += w;
        acc.beta = v.beta;
        acc.total += w * v.total;
        acc.reconstruction += w * v.reconstruction;
        acc.kl_total += w * v.kl_total;
        for (std::size_t l = 0; l < acc.kl_per_layer.size(); ++l) acc.kl_per_layer[l] += w * v.kl_per_layer[l];
        if (v.bow) acc.bow = acc.bow.value_or(0.0) + w * *v.bow;
    }
    acc.total /= weight_sum;
    acc.reconstruction /= weight_sum;
    acc.kl_total /= weight_sum;
    for (double& k : acc.kl_per_layer) k /= weight_sum;
    if (acc.bow) *acc.bow /= weight_sum;
    return acc;
}

template <typename T>
std::vector<PosteriorSummary> corpus_posteriors(const VaeModel<T>& model, const Corpus& corpus, std::size_t batch_size,
                                                Rng& rng) {
    NoGradGuard no_grad;
    std::vector<PosteriorSummary> out;
    for (std::size_t begin = 0; begin < corpus.size(); begin += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = begin; i < std::min(begin + batch_size, corpus.size()); ++i) idx.push_back(i);
        const ModelBatch batch = make_model_batch(gather_examples(corpus, idx), model.config());
        for (auto& s : summarize_posteriors(model.posterior_chain(batch, rng))) out.push_back(std::move(s));
    }
    return out;
}

template <typename T>
std::pair<std::vector<double>, std::vector<std::size_t>> corpus_iw_log_likelihood(const VaeModel<T>& model,
                                                                                  const Corpus& corpus,
                                                                                  std::size_t batch_size, int k, Rng& rng) {
    std::vector<double> ll;
    std::vector<std::size_t> counts;
    for (std::size_t begin = 0; begin < corpus.size(); begin += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = begin; i < std::min(begin + batch_size, corpus.size()); ++i) idx.push_back(i);
        const ModelBatch batch = make_model_batch(gather_examples(corpus, idx), model.config());
        const auto draw = [&](Rng& r) { return model.log_importance_weights(batch, r); };
        for (double v : iw_log_likelihood(draw, k, rng)) ll.push_back(v);
        counts.insert(counts.end(), batch.target_counts.begin(), batch.target_counts.end());
    }
    return {std::move(ll), std::move(counts)};
}

#define LVT_INSTANTIATE_TRAINER(T)                                                                                   \
    template class Trainer<T>;                                                                                       \
    template LossValues evaluate_loss<T>(const VaeModel<T>&, const Corpus&, std::size_t, Rng&,                       \
                                         const typename VaeModel<T>::LossOptions&);                                  \
    template std::vector<PosteriorSummary> corpus_posteriors<T>(const VaeModel<T>&, const Corpus&, std::size_t, Rng&); \
    template std::pair<std::vector<double>, std::vector<std::size_t>> corpus_iw_log_likelihood<T>(                   \
        const VaeModel<T>&, const Corpus&, std::size_t, int, Rng&);

LVT_INSTANTIATE_TRAINER(float)
LVT_INSTANTIATE_TRAINER(double)

} // namespace lvt

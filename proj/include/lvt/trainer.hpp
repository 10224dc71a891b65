#pragma once

#include <functional>
#include <memory>
#include <ostream>

#include "lvt/checkpoint.hpp"
#include "lvt/corpus.hpp"
#include "lvt/metrics.hpp"
#include "lvt/optimizer.hpp"

namespace lvt {

/// Raised when a step produces a non-finite loss or gradient. Parameters are
/// left as they were before the failing step.
class TrainingDiverged : public Error {
public:
    using Error::Error;
};

struct StepRecord {
    std::int64_t step = 0;
    LossValues loss;
};

std::string loss_csv_header(int num_layers);
std::string loss_csv_row(const StepRecord& record);

/// Single-threaded training loop over a fixed corpus. Data order depends only
/// on (seed, step) and the latent sampling stream is part of the saved state,
/// so a resumed run continues the original one.
template <typename T>
class Trainer {
public:
    Trainer(const RunConfig& config, Corpus corpus);
    /// Continues from `checkpoint`; its config replaces `config`'s model part.
    Trainer(const Checkpoint& checkpoint, Corpus corpus);

    /// One optimizer step; returns the loss measured before the update.
    StepRecord train_step();
    /// Steps until `until` (default: config.train.steps). Calls `on_step`
    /// after each one.
    void train(std::int64_t until = -1, const std::function<void(const StepRecord&)>& on_step = {});

    std::int64_t step() const { return step_; }
    double current_beta() const;
    /// Annealing period with the "two epochs" default resolved.
    std::int64_t anneal_period() const;

    VaeModel<T>& model() { return *model_; }
    const VaeModel<T>& model() const { return *model_; }
    const RunConfig& config() const { return config_; }
    const Corpus& corpus() const { return corpus_; }
    const BatchSchedule& schedule() const { return schedule_; }

    Checkpoint checkpoint() const;

private:
    RunConfig config_;
    Corpus corpus_;
    BatchSchedule schedule_;
    std::unique_ptr<VaeModel<T>> model_;
    Adam<T> optimizer_;
    Rng sample_rng_;
    std::int64_t step_ = 0;
};

/// Loss averaged over the whole corpus in batches, without gradients.
template <typename T>
LossValues evaluate_loss(const VaeModel<T>& model, const Corpus& corpus, std::size_t batch_size, Rng& rng,
                         const typename VaeModel<T>::LossOptions& options);

/// Posterior summaries for every datum of the corpus.
template <typename T>
std::vector<PosteriorSummary> corpus_posteriors(const VaeModel<T>& model, const Corpus& corpus, std::size_t batch_size,
                                                Rng& rng);

/// L_k per datum together with its predicted-token count.
template <typename T>
std::pair<std::vector<double>, std::vector<std::size_t>> corpus_iw_log_likelihood(const VaeModel<T>& model,
                                                                                  const Corpus& corpus,
                                                                                  std::size_t batch_size, int k, Rng& rng);

} // namespace lvt

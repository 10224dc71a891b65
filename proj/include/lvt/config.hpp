#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace lvt {

/// Where the latent enters the decoder.
enum class Paradigm { Embedding, Memory, Softmax, Della };
/// Which layer-KL terms enter the loss.
enum class KlLayers { All, First, Last };
enum class AnnealMode { Cyclical, Constant, None };
enum class EncoderAttention { Bidirectional, Causal };

std::string_view to_string(Paradigm p);
std::string_view to_string(KlLayers k);
std::string_view to_string(AnnealMode m);
std::string_view to_string(EncoderAttention e);
Paradigm parse_paradigm(std::string_view s);
KlLayers parse_kl_layers(std::string_view s);
AnnealMode parse_anneal_mode(std::string_view s);
EncoderAttention parse_encoder_attention(std::string_view s);

struct SpecialTokens {
    int bos = 256;
    int eos = 257;
    int pad = 258;
    int sep = 259;
};

/// Architecture and latent-variable settings. Layer indices are 1-based.
struct ModelConfig {
    int num_layers = 4;
    int hidden_dim = 128;
    int num_heads = 4;
    int latent_dim = 32;
    int rank = 2;
    int vocab_size = 260;
    int max_len = 128;
    Paradigm paradigm = Paradigm::Della;
    int latent_start_layer = 1;
    int latent_end_layer = 4;
    bool separate_latents = false;
    KlLayers kl_layers = KlLayers::All;
    bool share_encoder_decoder = true;
    bool conditional = false;
    EncoderAttention encoder_attention = EncoderAttention::Bidirectional;
    SpecialTokens specials{};

    /// Throws ConfigError on any violated invariant.
    void validate() const;

    /// First/last decoder layer that receives a latent. Single-latent
    /// paradigms use one latent inferred at the top layer.
    int active_start() const { return paradigm == Paradigm::Della ? latent_start_layer : num_layers; }
    int active_end() const { return paradigm == Paradigm::Della ? latent_end_layer : num_layers; }
    int active_count() const { return active_end() - active_start() + 1; }
    bool is_active(int layer) const { return layer >= active_start() && layer <= active_end(); }
    int head_dim() const { return hidden_dim / num_heads; }
};

struct AnnealSchedule {
    AnnealMode mode = AnnealMode::Cyclical;
    /// Steps per cycle; 0 means "two epochs", resolved against the corpus.
    std::int64_t period_steps = 0;
    double beta_floor = 1e-5;
    /// Weight used by AnnealMode::Constant.
    double constant_beta = 1.0;
};

struct TrainConfig {
    int batch_size = 16;
    std::int64_t steps = 1000;
    double learning_rate = 5e-5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    std::uint64_t seed = 0;
    AnnealSchedule anneal{};
    /// Free-bits threshold applied per layer; unset disables it.
    std::optional<double> free_bits;
    bool use_bow = false;
    double bow_weight = 1.0;
    std::int64_t log_every = 10;
    std::int64_t checkpoint_every = 0;
    int iw_samples = 10;
};

struct RunConfig {
    ModelConfig model{};
    TrainConfig train{};
};

/// Preset for laptop-scale experiments: L=4, d=128, heads=4, p=16, r=2, max_len=128.
ModelConfig desk_scale_config();

void to_json(nlohmann::json& j, const SpecialTokens& s);
void from_json(const nlohmann::json& j, SpecialTokens& s);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const AnnealSchedule& a);
void from_json(const nlohmann::json& j, AnnealSchedule& a);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

} // namespace lvt

#include "lvt/config.hpp"

#include <array>
#include <utility>

#include "lvt/errors.hpp"

namespace lvt {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::pair<std::string_view, E>, N>& table, const char* what) {
    for (const auto& [name, value] : table) {
        if (name == s) return value;
    }
    throw ConfigError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

template <typename E, std::size_t N>
std::string_view enum_name(E e, const std::array<std::pair<std::string_view, E>, N>& table) {
    for (const auto& [name, value] : table) {
        if (value == e) return name;
    }
    return "?";
}

constexpr std::array<std::pair<std::string_view, Paradigm>, 4> kParadigms{{
    {"embedding", Paradigm::Embedding},
    {"memory", Paradigm::Memory},
    {"softmax", Paradigm::Softmax},
    {"della", Paradigm::Della},
}};
constexpr std::array<std::pair<std::string_view, KlLayers>, 3> kKlLayers{{
    {"all", KlLayers::All},
    {"first", KlLayers::First},
    {"last", KlLayers::Last},
}};
constexpr std::array<std::pair<std::string_view, AnnealMode>, 3> kAnneal{{
    {"cyclical", AnnealMode::Cyclical},
    {"constant", AnnealMode::Constant},
    {"none", AnnealMode::None},
}};
constexpr std::array<std::pair<std::string_view, EncoderAttention>, 2> kEncoder{{
    {"bidirectional", EncoderAttention::Bidirectional},
    {"causal", EncoderAttention::Causal},
}};

template <typename V>
void read_opt(const nlohmann::json& j, const char* key, V& out) {
    if (auto it = j.find(key); it != j.end()) it->get_to(out);
}

} // namespace

std::string_view to_string(Paradigm p) { return enum_name(p, kParadigms); }
std::string_view to_string(KlLayers k) { return enum_name(k, kKlLayers); }
std::string_view to_string(AnnealMode m) { return enum_name(m, kAnneal); }
std::string_view to_string(EncoderAttention e) { return enum_name(e, kEncoder); }
Paradigm parse_paradigm(std::string_view s) { return parse_enum(s, kParadigms, "paradigm"); }
KlLayers parse_kl_layers(std::string_view s) { return parse_enum(s, kKlLayers, "kl_layers"); }
AnnealMode parse_anneal_mode(std::string_view s) { return parse_enum(s, kAnneal, "anneal mode"); }
EncoderAttention parse_encoder_attention(std::string_view s) { return parse_enum(s, kEncoder, "encoder attention"); }

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("invalid model config: " + msg); };
    if (num_layers < 1) fail("num_layers must be >= 1");
    if (hidden_dim < 1 || num_heads < 1) fail("hidden_dim and num_heads must be positive");
    if (hidden_dim % num_heads != 0) fail("hidden_dim must be divisible by num_heads");
    if (latent_dim < 1) fail("latent_dim must be >= 1");
    if (rank < 1) fail("rank must be >= 1");
    if (max_len < 2) fail("max_len must be >= 2");
    if (!(1 <= latent_start_layer && latent_start_layer <= latent_end_layer && latent_end_layer <= num_layers)) {
        fail("need 1 <= latent_start_layer <= latent_end_layer <= num_layers");
    }
    for (int id : {specials.bos, specials.eos, specials.pad, specials.sep}) {
        if (id < 0 || id >= vocab_size) fail("special token id " + std::to_string(id) + " outside vocabulary");
    }
}

ModelConfig desk_scale_config() {
    ModelConfig c;
    c.num_layers = 4;
    c.hidden_dim = 128;
    c.num_heads = 4;
    c.latent_dim = 16;
    c.rank = 2;
    c.max_len = 128;
    c.latent_start_layer = 1;
    c.latent_end_layer = 4;
    return c;
}

void to_json(nlohmann::json& j, const SpecialTokens& s) {
    j = {{"bos", s.bos}, {"eos", s.eos}, {"pad", s.pad}, {"sep", s.sep}};
}

void from_json(const nlohmann::json& j, SpecialTokens& s) {
    read_opt(j, "bos", s.bos);
    read_opt(j, "eos", s.eos);
    read_opt(j, "pad", s.pad);
    read_opt(j, "sep", s.sep);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {
        {"num_layers", c.num_layers},
        {"hidden_dim", c.hidden_dim},
        {"num_heads", c.num_heads},
        {"latent_dim", c.latent_dim},
        {"rank", c.rank},
        {"vocab_size", c.vocab_size},
        {"max_len", c.max_len},
        {"paradigm", to_string(c.paradigm)},
        {"latent_start_layer", c.latent_start_layer},
        {"latent_end_layer", c.latent_end_layer},
        {"separate_latents", c.separate_latents},
        {"kl_layers", to_string(c.kl_layers)},
        {"share_encoder_decoder", c.share_encoder_decoder},
        {"conditional", c.conditional},
        {"encoder_attention", to_string(c.encoder_attention)},
        {"specials", c.specials},
    };
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    read_opt(j, "num_layers", c.num_layers);
    read_opt(j, "hidden_dim", c.hidden_dim);
    read_opt(j, "num_heads", c.num_heads);
    read_opt(j, "latent_dim", c.latent_dim);
    read_opt(j, "rank", c.rank);
    read_opt(j, "vocab_size", c.vocab_size);
    read_opt(j, "max_len", c.max_len);
    if (j.contains("paradigm")) c.paradigm = parse_paradigm(j.at("paradigm").get<std::string>());
    read_opt(j, "latent_start_layer", c.latent_start_layer);
    read_opt(j, "latent_end_layer", c.latent_end_layer);
    read_opt(j, "separate_latents", c.separate_latents);
    if (j.contains("kl_layers")) c.kl_layers = parse_kl_layers(j.at("kl_layers").get<std::string>());
    read_opt(j, "share_encoder_decoder", c.share_encoder_decoder);
    read_opt(j, "conditional", c.conditional);
    if (j.contains("encoder_attention")) {
        c.encoder_attention = parse_encoder_attention(j.at("encoder_attention").get<std::string>());
    }
    read_opt(j, "specials", c.specials);
}

void to_json(nlohmann::json& j, const AnnealSchedule& a) {
    j = {{"mode", to_string(a.mode)},
         {"period_steps", a.period_steps},
         {"beta_floor", a.beta_floor},
         {"constant_beta", a.constant_beta}};
}

void from_json(const nlohmann::json& j, AnnealSchedule& a) {
    if (j.contains("mode")) a.mode = parse_anneal_mode(j.at("mode").get<std::string>());
    read_opt(j, "period_steps", a.period_steps);
    read_opt(j, "beta_floor", a.beta_floor);
    read_opt(j, "constant_beta", a.constant_beta);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {
        {"batch_size", c.batch_size},
        {"steps", c.steps},
        {"learning_rate", c.learning_rate},
        {"adam_beta1", c.adam_beta1},
        {"adam_beta2", c.adam_beta2},
        {"adam_eps", c.adam_eps},
        {"grad_clip", c.grad_clip},
        {"seed", c.seed},
        {"anneal", c.anneal},
        {"free_bits", c.free_bits ? nlohmann::json(*c.free_bits) : nlohmann::json(nullptr)},
        {"use_bow", c.use_bow},
        {"bow_weight", c.bow_weight},
        {"log_every", c.log_every},
        {"checkpoint_every", c.checkpoint_every},
        {"iw_samples", c.iw_samples},
    };
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    read_opt(j, "batch_size", c.batch_size);
    read_opt(j, "steps", c.steps);
    read_opt(j, "learning_rate", c.learning_rate);
    read_opt(j, "adam_beta1", c.adam_beta1);
    read_opt(j, "adam_beta2", c.adam_beta2);
    read_opt(j, "adam_eps", c.adam_eps);
    read_opt(j, "grad_clip", c.grad_clip);
    read_opt(j, "seed", c.seed);
    read_opt(j, "anneal", c.anneal);
    if (auto it = j.find("free_bits"); it != j.end()) {
        if (it->is_null()) c.free_bits.reset();
        else c.free_bits = it->get<double>();
    }
    read_opt(j, "use_bow", c.use_bow);
    read_opt(j, "bow_weight", c.bow_weight);
    read_opt(j, "log_every", c.log_every);
    read_opt(j, "checkpoint_every", c.checkpoint_every);
    read_opt(j, "iw_samples", c.iw_samples);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"model", c.model}, {"train", c.train}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    read_opt(j, "model", c.model);
    read_opt(j, "train", c.train);
}

} // namespace lvt

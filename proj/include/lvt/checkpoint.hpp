#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lvt/config.hpp"
#include "lvt/model.hpp"
#include "lvt/optimizer.hpp"

namespace lvt {

constexpr int kCheckpointVersion = 1;

enum class CheckpointErrorKind { Io, Parse, Version, Shape, Truncated };

class CheckpointError : public Error {
public:
    CheckpointError(CheckpointErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
    CheckpointErrorKind kind() const { return kind_; }

private:
    CheckpointErrorKind kind_;
};

struct CheckpointTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

/// Everything needed to rebuild a model and continue its training run.
struct Checkpoint {
    int format_version = kCheckpointVersion;
    RunConfig config{};
    std::int64_t step = 0;
    RngState rng{};
    std::vector<CheckpointTensor> tensors;
    /// Optimizer moments aligned with `tensors`.
    std::optional<AdamState<float>> optimizer;
};

template <typename T>
Checkpoint make_checkpoint(const VaeModel<T>& model, const RunConfig& config, std::int64_t step, RngState rng,
                           const Adam<T>* optimizer);

/// Layout: u64 little-endian header length, JSON header, little-endian f32
/// blob. The header lists every tensor's name, shape and element offset.
/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
std::vector<unsigned char> serialize_checkpoint(const Checkpoint& checkpoint);

/// Throws CheckpointError with the matching kind.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(const std::vector<unsigned char>& bytes);

/// Copies parameters into `model`, validating names and shapes.
template <typename T>
void restore_parameters(VaeModel<T>& model, const Checkpoint& checkpoint);

template <typename T>
AdamState<T> restore_optimizer_state(const Checkpoint& checkpoint);

} // namespace lvt

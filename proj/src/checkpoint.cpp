#include "lvt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace lvt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
Checkpoint make_checkpoint(const VaeModel<T>& model, const RunConfig& config, std::int64_t step, RngState rng,
                           const Adam<T>* optimizer) {
    Checkpoint ck;
    ck.config = config;
    ck.config.model = model.config();
    ck.step = step;
    ck.rng = rng;
    for (const auto& e : model.parameters().entries()) {
        const auto d = e.tensor.data();
        ck.tensors.push_back({e.name, e.tensor.shape(), std::vector<float>(d.begin(), d.end())});
    }
    if (optimizer) {
        AdamState<float> st;
        st.t = optimizer->state().t;
        for (const auto& m : optimizer->state().m) st.m.emplace_back(m.begin(), m.end());
        for (const auto& v : optimizer->state().v) st.v.emplace_back(v.begin(), v.end());
        ck.optimizer = std::move(st);
    }
    return ck;
}

namespace {

void append_floats(std::vector<unsigned char>& blob, const std::vector<float>& v) {
    const std::size_t at = blob.size();
    blob.resize(at + v.size() * sizeof(float));
    if (!v.empty()) std::memcpy(blob.data() + at, v.data(), v.size() * sizeof(float));
}

} // namespace

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ck) {
    using nlohmann::json;
    std::vector<unsigned char> blob;
    json tensors = json::array();
    json moments = json::array();
    for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
        const auto& t = ck.tensors[i];
        tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", blob.size() / sizeof(float)}});
        append_floats(blob, t.values);
    }
    json header{{"format_version", ck.format_version},
                {"config", ck.config},
                {"step", ck.step},
                {"rng", {{"seed", ck.rng.seed}, {"counter", ck.rng.counter}}},
                {"tensors", tensors}};
    if (ck.optimizer) {
        if (ck.optimizer->m.size() != ck.tensors.size() || ck.optimizer->v.size() != ck.tensors.size()) {
            throw CheckpointError(CheckpointErrorKind::Shape, "optimizer moments do not match tensors");
        }
        for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
            moments.push_back({{"m_offset", blob.size() / sizeof(float)}});
            append_floats(blob, ck.optimizer->m[i]);
            moments.back()["v_offset"] = blob.size() / sizeof(float);
            append_floats(blob, ck.optimizer->v[i]);
        }
        header["optimizer"] = {{"t", ck.optimizer->t}, {"moments", moments}};
    }
    header["blob_floats"] = blob.size() / sizeof(float);
    const std::string text = header.dump();
    std::vector<unsigned char> out(8);
    const std::uint64_t len = text.size();
    std::memcpy(out.data(), &len, 8);
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), blob.begin(), blob.end());
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    const std::vector<unsigned char> bytes = serialize_checkpoint(ck);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError(CheckpointErrorKind::Io, "cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError(CheckpointErrorKind::Io, "short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw CheckpointError(CheckpointErrorKind::Io, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointErrorKind::Io, "cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes);
}

namespace {

std::vector<float> read_floats(const std::vector<unsigned char>& bytes, std::size_t blob_start, std::size_t offset,
                               std::size_t count, const std::string& what) {
    const std::size_t begin = blob_start + offset * sizeof(float);
    if (offset > bytes.size() || count > bytes.size() || begin + count * sizeof(float) > bytes.size()) {
        throw CheckpointError(CheckpointErrorKind::Truncated, "blob ends before " + what);
    }
    std::vector<float> out(count);
    if (count) std::memcpy(out.data(), bytes.data() + begin, count * sizeof(float));
    return out;
}

} // namespace

Checkpoint parse_checkpoint(const std::vector<unsigned char>& bytes) {
    using nlohmann::json;
    if (bytes.size() < 8) throw CheckpointError(CheckpointErrorKind::Truncated, "checkpoint shorter than its length prefix");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data(), 8);
    if (len > bytes.size() - 8) throw CheckpointError(CheckpointErrorKind::Truncated, "checkpoint header is truncated");
    const std::size_t blob_start = 8 + static_cast<std::size_t>(len);

    json header;
    try {
        header = json::parse(bytes.begin() + 8, bytes.begin() + static_cast<std::ptrdiff_t>(blob_start));
    } catch (const json::exception& e) {
        throw CheckpointError(CheckpointErrorKind::Parse, std::string("checkpoint header: ") + e.what());
    }

    Checkpoint ck;
    try {
        ck.format_version = header.at("format_version").get<int>();
    } catch (const json::exception& e) {
        throw CheckpointError(CheckpointErrorKind::Parse, std::string("checkpoint header: ") + e.what());
    }
    if (ck.format_version != kCheckpointVersion) {
        throw CheckpointError(CheckpointErrorKind::Version, "checkpoint format version " + std::to_string(ck.format_version) +
                                                                " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    try {
        ck.config = header.at("config").get<RunConfig>();
        ck.config.model.validate();
        ck.step = header.at("step").get<std::int64_t>();
        ck.rng.seed = header.at("rng").at("seed").get<std::uint64_t>();
        ck.rng.counter = header.at("rng").at("counter").get<std::uint64_t>();
        for (const auto& t : header.at("tensors")) {
            CheckpointTensor ct;
            ct.name = t.at("name").get<std::string>();
            ct.shape = t.at("shape").get<Shape>();
            ct.values = read_floats(bytes, blob_start, t.at("offset").get<std::size_t>(), shape_numel(ct.shape), ct.name);
            ck.tensors.push_back(std::move(ct));
        }
        if (header.contains("optimizer")) {
            const json& o = header.at("optimizer");
            AdamState<float> st;
            st.t = o.at("t").get<std::int64_t>();
            const json& moments = o.at("moments");
            if (moments.size() != ck.tensors.size()) throw CheckpointError(CheckpointErrorKind::Shape, "optimizer moments do not match tensors");
            for (std::size_t i = 0; i < moments.size(); ++i) {
                const std::size_t n = ck.tensors[i].values.size();
                st.m.push_back(read_floats(bytes, blob_start, moments[i].at("m_offset").get<std::size_t>(), n, ck.tensors[i].name + " moments"));
                st.v.push_back(read_floats(bytes, blob_start, moments[i].at("v_offset").get<std::size_t>(), n, ck.tensors[i].name + " moments"));
            }
            ck.optimizer = std::move(st);
        }
        const auto blob_floats = header.at("blob_floats").get<std::size_t>();
        if (blob_start + blob_floats * sizeof(float) > bytes.size()) {
            throw CheckpointError(CheckpointErrorKind::Truncated, "checkpoint blob is truncated");
        }
    } catch (const json::exception& e) {
        throw CheckpointError(CheckpointErrorKind::Parse, std::string("checkpoint header: ") + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(CheckpointErrorKind::Parse, std::string("checkpoint config: ") + e.what());
    }
    return ck;
}

template <typename T>
void restore_parameters(VaeModel<T>& model, const Checkpoint& ck) {
    auto& entries = model.parameters().entries();
    if (entries.size() != ck.tensors.size()) {
        throw CheckpointError(CheckpointErrorKind::Shape, "checkpoint has " + std::to_string(ck.tensors.size()) +
                                                              " tensors, model expects " + std::to_string(entries.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& src = ck.tensors[i];
        if (src.name != entries[i].name || src.shape != entries[i].tensor.shape()) {
            throw CheckpointError(CheckpointErrorKind::Shape, "checkpoint tensor " + src.name + " " + shape_to_string(src.shape) +
                                                                  " does not match " + entries[i].name + " " +
                                                                  shape_to_string(entries[i].tensor.shape()));
        }
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Tensor<T> p = entries[i].tensor;
        auto dst = p.mutable_data();
        const auto& src = ck.tensors[i].values;
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(src[k]);
    }
}

template <typename T>
AdamState<T> restore_optimizer_state(const Checkpoint& ck) {
    if (!ck.optimizer) throw ContractError("checkpoint carries no optimizer state");
    AdamState<T> st;
    st.t = ck.optimizer->t;
    for (const auto& m : ck.optimizer->m) st.m.emplace_back(m.begin(), m.end());
    for (const auto& v : ck.optimizer->v) st.v.emplace_back(v.begin(), v.end());
    return st;
}

#define LVT_INSTANTIATE_CHECKPOINT(T)                                                                                  \
    template Checkpoint make_checkpoint<T>(const VaeModel<T>&, const RunConfig&, std::int64_t, RngState, const Adam<T>*); \
    template void restore_parameters<T>(VaeModel<T>&, const Checkpoint&);                                              \
    template AdamState<T> restore_optimizer_state<T>(const Checkpoint&);

LVT_INSTANTIATE_CHECKPOINT(float)
LVT_INSTANTIATE_CHECKPOINT(double)

} // namespace lvt

#ifndef MLDR_CHECKPOINT_HPP
#define MLDR_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mldr/model.hpp"
#include "mldr/optim.hpp"

// Checkpoint file layout (all integers little-endian):
//   magic "MLDR"
//   u32 format_version
//   u32 config length, then that many bytes of UTF-8 JSON (model config,
//       epoch, rng state)
//   u32 tensor count, then per tensor:
//       u32 name length, name bytes, u32 rank, u64 extents..., f64 data...
// Parameters come first, then optimizer velocities under "velocity/<name>".

namespace mldr {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointFormatError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct CheckpointVersionError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct CheckpointTruncatedError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct CheckpointShapeError : CheckpointError {
    using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// ---------------------------------------------------------------------------

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return nlohmann::json{{"arch", to_string(c.arch)},
                          {"depth", c.depth},
                          {"fusion", to_string(c.fusion)},
                          {"n_classes", c.n_classes},
                          {"input_size", c.input_size},
                          {"trunk_channels", c.trunk_channels},
                          {"branch_hidden", c.branch_hidden},
                          {"reduce_channels", c.reduce_channels},
                          {"dropout_rate", c.dropout_rate},
                          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.arch = arch_from_string(j.at("arch").get<std::string>());
    c.depth = j.at("depth").get<int>();
    c.fusion = fusion_from_string(j.at("fusion").get<std::string>());
    c.n_classes = j.at("n_classes").get<int>();
    c.input_size = j.at("input_size").get<int>();
    c.trunk_channels = j.at("trunk_channels").get<std::vector<int>>();
    c.branch_hidden = j.at("branch_hidden").get<int>();
    c.reduce_channels = j.at("reduce_channels").get<int>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

// --------------------------------------------------------------------------- binary helpers

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(os, bits);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw CheckpointTruncatedError("checkpoint: truncated file (u32)");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw CheckpointTruncatedError("checkpoint: truncated file (u64)");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is) {
    std::uint64_t bits = get_u64(is);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

inline void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_u64(os, e);
    for (std::size_t i = 0; i < t.size(); ++i) put_f64(os, t[i]);
}

inline std::pair<std::string, Tensor> get_tensor(std::istream& is) {
    const std::uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw CheckpointTruncatedError("checkpoint: truncated tensor name");
    const std::uint32_t rank = get_u32(is);
    if (rank == 0 || rank > 8) throw CheckpointFormatError("checkpoint: bad tensor rank");
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get_u64(is));
    std::vector<double> data(Tensor::numel(shape));
    for (auto& d : data) d = get_f64(is);
    return {std::move(name), Tensor::from(std::move(shape), std::move(data))};
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Serializes model parameters, optimizer velocities, the epoch counter and
/// an opaque rng blob. Round trips are bit exact.
inline void save_checkpoint(const std::string& path, Model& model, const Sgd* sgd, int epoch,
                            const std::string& rng_state_hex) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("checkpoint: cannot open '" + path + "' for writing");

    os.write("MLDR", 4);
    detail::put_u32(os, kCheckpointVersion);

    nlohmann::json j;
    j["config"] = model_config_to_json(model.config());
    j["epoch"] = epoch;
    j["rng_state"] = rng_state_hex;
    const std::string config_text = j.dump();
    detail::put_u32(os, static_cast<std::uint32_t>(config_text.size()));
    os.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));

    auto params = model.params();
    std::size_t count = params.size() + (sgd ? sgd->velocity().size() : 0);
    detail::put_u32(os, static_cast<std::uint32_t>(count));
    for (const auto& p : params) detail::put_tensor(os, p.name, *p.value);
    if (sgd)
        for (const auto& [name, v] : sgd->velocity())
            detail::put_tensor(os, "velocity/" + name, v);
    if (!os) throw CheckpointError("checkpoint: write failure on '" + path + "'");
}

struct LoadedCheckpoint {
    std::unique_ptr<Model> model;
    std::map<std::string, Tensor> velocity;
    int epoch = 0;
    std::string rng_state_hex;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open '" + path + "'");

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MLDR", 4) != 0)
        throw CheckpointFormatError("checkpoint: bad magic in '" + path + "'");
    const std::uint32_t version = detail::get_u32(is);
    if (version != kCheckpointVersion)
        throw CheckpointVersionError("checkpoint: unsupported format version " +
                                     std::to_string(version) + " (expected " +
                                     std::to_string(kCheckpointVersion) + ")");

    const std::uint32_t config_len = detail::get_u32(is);
    std::string config_text(config_len, '\0');
    is.read(config_text.data(), config_len);
    if (!is) throw CheckpointTruncatedError("checkpoint: truncated config block");

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(config_text);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointFormatError(std::string("checkpoint: bad config json: ") + e.what());
    }

    LoadedCheckpoint out;
    out.epoch = j.at("epoch").get<int>();
    out.rng_state_hex = j.at("rng_state").get<std::string>();
    const ModelConfig config = model_config_from_json(j.at("config"));
    out.model = std::make_unique<Model>(config);

    std::map<std::string, Tensor> tensors;
    const std::uint32_t count = detail::get_u32(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        auto [name, t] = detail::get_tensor(is);
        tensors.emplace(std::move(name), std::move(t));
    }

    for (auto& p : out.model->params()) {
        auto it = tensors.find(p.name);
        if (it == tensors.end())
            throw CheckpointShapeError("checkpoint: missing tensor '" + p.name + "'");
        if (it->second.shape() != p.value->shape())
            throw CheckpointShapeError("checkpoint: tensor '" + p.name + "' has shape " +
                                       it->second.shape_str() + ", model expects " +
                                       p.value->shape_str());
        *p.value = it->second;
        tensors.erase(it);
    }
    for (auto& [name, t] : tensors) {
        if (name.rfind("velocity/", 0) == 0) {
            out.velocity.emplace(name.substr(9), std::move(t));
        } else {
            throw CheckpointShapeError("checkpoint: unexpected tensor '" + name + "'");
        }
    }
    return out;
}

}  // namespace mldr

#endif  // MLDR_CHECKPOINT_HPP

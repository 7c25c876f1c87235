#pragma once

// Binary checkpoint, little-endian:
//   "GOCK" | u32 version | u64 entry count |
//   entries: u16 name length, name bytes, u8 dtype tag, u8 rank,
//            u64 extent × rank, raw element data.
// Entry "config" holds the network description as UTF-8 JSON (dtype u8).
// Optional training state: "state.step", "state.epoch", "state.rng" (u64)
// and "opt.first.<param>" / "opt.second.<param>" buffers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "goconv/network.hpp"
#include "goconv/train.hpp"
#include "json.hpp"

namespace goconv {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[4] = {'G', 'O', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { U8 = 0, F32 = 1, F64 = 2, U64 = 3 };

inline std::size_t dtype_width(DType t) {
    switch (t) {
        case DType::U8: return 1;
        case DType::F32: return 4;
        case DType::F64: return 8;
        case DType::U64: return 8;
    }
    return 0;
}

template <typename T>
constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, float>) {
        return DType::F32;
    } else if constexpr (std::is_same_v<T, double>) {
        return DType::F64;
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        return DType::U64;
    } else {
        static_assert(std::is_same_v<T, std::uint8_t>);
        return DType::U8;
    }
}

struct CheckpointEntry {
    std::string name;
    DType dtype = DType::U8;
    std::vector<std::uint64_t> extents;
    std::vector<std::uint8_t> bytes;

    template <typename T>
    std::vector<T> as() const {
        if (dtype != dtype_of<T>()) {
            throw CheckpointError("entry '" + name + "' has dtype tag " + std::to_string(int(dtype)) +
                                  ", requested " + std::to_string(int(dtype_of<T>())));
        }
        std::vector<T> out(bytes.size() / sizeof(T));
        std::memcpy(out.data(), bytes.data(), bytes.size());
        return out;
    }
};

template <typename T>
CheckpointEntry make_entry(std::string name, std::vector<std::uint64_t> extents, std::span<const T> values) {
    CheckpointEntry e{std::move(name), dtype_of<T>(), std::move(extents), {}};
    e.bytes.resize(values.size_bytes());
    std::memcpy(e.bytes.data(), values.data(), values.size_bytes());
    return e;
}

inline void write_entries(const std::vector<CheckpointEntry>& entries, const std::filesystem::path& path) {
    std::string buf(kCheckpointMagic, 4);
    auto put = [&buf](const auto& v) { buf.append(reinterpret_cast<const char*>(&v), sizeof(v)); };
    put(kCheckpointVersion);
    put(static_cast<std::uint64_t>(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > 0xFFFF || e.extents.size() > 255) {
            throw CheckpointError("entry '" + e.name + "' cannot be encoded");
        }
        put(static_cast<std::uint16_t>(e.name.size()));
        buf += e.name;
        put(static_cast<std::uint8_t>(e.dtype));
        put(static_cast<std::uint8_t>(e.extents.size()));
        for (auto x : e.extents) {
            put(x);
        }
        buf.append(reinterpret_cast<const char*>(e.bytes.data()), e.bytes.size());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw CheckpointError("cannot open '" + path.string() + "' for writing");
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) {
        throw CheckpointError("write to '" + path.string() + "' failed");
    }
}

inline std::vector<CheckpointEntry> read_entries(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    }
    const std::vector<std::uint8_t> buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    std::size_t pos = 0;
    auto need = [&](std::size_t n, const char* what) {
        if (buf.size() - pos < n) {
            throw CheckpointError(path.string() + ": truncated while reading " + what + " at byte " +
                                  std::to_string(pos));
        }
    };
    auto get = [&]<typename V>(V& v, const char* what) {
        need(sizeof(V), what);
        std::memcpy(&v, buf.data() + pos, sizeof(V));
        pos += sizeof(V);
    };
    need(4, "magic");
    if (std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
        throw CheckpointError(path.string() + ": bad magic, not a GOCK checkpoint");
    }
    pos = 4;
    std::uint32_t version = 0;
    get(version, "version");
    if (version != kCheckpointVersion) {
        throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    std::uint64_t count = 0;
    get(count, "entry count");
    std::vector<CheckpointEntry> entries;
    for (std::uint64_t k = 0; k < count; ++k) {
        CheckpointEntry e;
        std::uint16_t name_len = 0;
        get(name_len, "entry name length");
        need(name_len, "entry name");
        e.name.assign(reinterpret_cast<const char*>(buf.data() + pos), name_len);
        pos += name_len;
        std::uint8_t tag = 0, rank = 0;
        get(tag, "dtype tag");
        if (tag > static_cast<std::uint8_t>(DType::U64)) {
            throw CheckpointError(path.string() + ": entry '" + e.name + "' has unknown dtype tag " +
                                  std::to_string(tag));
        }
        e.dtype = static_cast<DType>(tag);
        get(rank, "rank");
        std::uint64_t numel = 1;
        e.extents.resize(rank);
        for (auto& x : e.extents) {
            get(x, "extent");
            numel *= x;
        }
        const std::uint64_t nbytes = numel * dtype_width(e.dtype);
        need(nbytes, "entry data");
        e.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                       buf.begin() + static_cast<std::ptrdiff_t>(pos + nbytes));
        pos += nbytes;
        entries.push_back(std::move(e));
    }
    if (pos != buf.size()) {
        throw CheckpointError(path.string() + ": " + std::to_string(buf.size() - pos) + " trailing bytes");
    }
    return entries;
}

inline std::vector<std::uint64_t> rng_to_words(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    std::istringstream is(os.str());
    return {std::istream_iterator<std::uint64_t>(is), std::istream_iterator<std::uint64_t>()};
}

inline std::mt19937_64 rng_from_words(const std::vector<std::uint64_t>& words) {
    std::ostringstream os;
    for (std::size_t i = 0; i < words.size(); ++i) {
        os << (i ? " " : "") << words[i];
    }
    std::istringstream is(os.str());
    std::mt19937_64 rng;
    is >> rng;
    if (!is) {
        throw CheckpointError("corrupt rng state");
    }
    return rng;
}

template <typename T>
struct Checkpoint {
    Model<T> model;
    std::optional<TrainState<T>> state;
};

template <typename T>
void save_checkpoint(Model<T>& model, const TrainState<T>* state, const std::filesystem::path& path) {
    std::vector<CheckpointEntry> entries;
    const std::string cfg = nlohmann::json(model.config()).dump();
    entries.push_back(make_entry<std::uint8_t>(
        "config", {cfg.size()},
        std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(cfg.data()), cfg.size())));
    auto params = model.params();
    auto dims = [](const Shape& s) {
        return std::vector<std::uint64_t>(s.dims().begin(), s.dims().end());
    };
    for (const auto& p : params) {
        entries.push_back(make_entry<T>(p.name, dims(p.shape), p.value));
    }
    if (state) {
        const std::uint64_t step = state->opt.step, epoch = state->epoch;
        entries.push_back(make_entry<std::uint64_t>("state.step", {1}, std::span<const std::uint64_t>(&step, 1)));
        entries.push_back(make_entry<std::uint64_t>("state.epoch", {1}, std::span<const std::uint64_t>(&epoch, 1)));
        const auto words = rng_to_words(state->rng);
        entries.push_back(make_entry<std::uint64_t>("state.rng", {words.size()}, words));
        for (const auto& [prefix, buffers] : {std::pair{"opt.first.", &state->opt.first},
                                              std::pair{"opt.second.", &state->opt.second}}) {
            for (const auto& [name, values] : *buffers) {
                entries.push_back(make_entry<T>(prefix + name, {values.size()}, std::span<const T>(values)));
            }
        }
    }
    write_entries(entries, path);
}

template <typename T>
void save_checkpoint(Model<T>& model, const std::filesystem::path& path) {
    save_checkpoint<T>(model, nullptr, path);
}

/// Element type of the parameters stored in a checkpoint.
inline DType checkpoint_dtype(const std::filesystem::path& path) {
    for (const auto& e : read_entries(path)) {
        if (e.dtype == DType::F32 || e.dtype == DType::F64) {
            return e.dtype;
        }
    }
    throw CheckpointError(path.string() + ": no parameter entries");
}

/// Rebuilds the model from the stored config and restores every parameter
/// (and training state, if present). Nothing is returned on any mismatch.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    const auto entries = read_entries(path);
    std::map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : entries) {
        if (!by_name.emplace(e.name, &e).second) {
            throw CheckpointError(path.string() + ": duplicate entry '" + e.name + "'");
        }
    }
    const auto cfg_it = by_name.find("config");
    if (cfg_it == by_name.end()) {
        throw CheckpointError(path.string() + ": missing config entry");
    }
    const auto cfg_bytes = cfg_it->second->as<std::uint8_t>();
    NetworkConfig cfg;
    try {
        cfg = nlohmann::json::parse(std::string(cfg_bytes.begin(), cfg_bytes.end())).get<NetworkConfig>();
    } catch (const std::exception& ex) {
        throw CheckpointError(path.string() + ": unreadable config: " + ex.what());
    }
    Checkpoint<T> ck{build<T>(cfg), std::nullopt};
    for (auto& p : ck.model.params()) {
        const auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            throw CheckpointError(path.string() + ": missing parameter '" + p.name + "'");
        }
        const auto& e = *it->second;
        const std::vector<std::uint64_t> want(p.shape.dims().begin(), p.shape.dims().end());
        if (e.extents != want) {
            throw CheckpointError(path.string() + ": parameter '" + p.name + "' has mismatched extents");
        }
        const auto values = e.template as<T>();
        std::copy(values.begin(), values.end(), p.value.begin());
    }
    if (by_name.count("state.step")) {
        TrainState<T> st;
        st.opt.step = by_name.at("state.step")->as<std::uint64_t>().at(0);
        st.epoch = by_name.count("state.epoch") ? by_name.at("state.epoch")->as<std::uint64_t>().at(0) : 0;
        if (by_name.count("state.rng")) {
            st.rng = rng_from_words(by_name.at("state.rng")->as<std::uint64_t>());
        }
        for (const auto& e : entries) {
            if (e.name.rfind("opt.first.", 0) == 0) {
                st.opt.first[e.name.substr(10)] = e.template as<T>();
            } else if (e.name.rfind("opt.second.", 0) == 0) {
                st.opt.second[e.name.substr(11)] = e.template as<T>();
            }
        }
        ck.state = std::move(st);
    }
    return ck;
}

}  // namespace goconv

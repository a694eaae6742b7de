#ifndef MMFV_NN_CHECKPOINT_HPP
#define MMFV_NN_CHECKPOINT_HPP

// Binary parameter container, little-endian throughout (layout in
// docs/formats.md):
//
//   "MMFVCKPT"                 8-byte magic
//   u32 version (= 1)
//   u32 n_meta, then n_meta x { u32 len, key bytes, u32 len, value bytes }
//   u32 n_tensors, then n_tensors x {
//       u32 len, name bytes, u8 trainable, u32 rank, rank x u64 dim,
//       prod(dims) x f64 values (row-major)
//   }

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "mmfv/nn/core.hpp"

namespace mmfv::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'M', 'M', 'F', 'V', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using Metadata = std::map<std::string, std::string>;

struct StoredTensor {
    std::string name;
    bool trainable = true;
    std::vector<Index> shape;
    std::vector<double> values;
};

struct Checkpoint {
    Metadata meta;
    std::vector<StoredTensor> tensors;
};

namespace detail {

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void put_string(std::ostream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T get(std::istream& in) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("checkpoint: truncated file");
    return v;
}

inline std::string get_string(std::istream& in) {
    const auto n = get<std::uint32_t>(in);
    if (n > (1u << 26)) throw DataError("checkpoint: implausible string length");
    std::string s(n, '\0');
    if (n && !in.read(s.data(), n)) throw DataError("checkpoint: truncated file");
    return s;
}

} // namespace detail

inline void write_checkpoint(std::ostream& out, const Metadata& meta, const ParamList& params) {
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put<std::uint32_t>(out, kCheckpointVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        detail::put_string(out, k);
        detail::put_string(out, v);
    }
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        detail::put_string(out, p.name);
        detail::put<std::uint8_t>(out, p.trainable ? 1 : 0);
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape.size()));
        for (Index d : p.shape) detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
        out.write(reinterpret_cast<const char*>(p.data), static_cast<std::streamsize>(p.size * sizeof(double)));
    }
}

inline Checkpoint read_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw DataError("not a model checkpoint (bad magic)");
    if (detail::get<std::uint32_t>(in) != kCheckpointVersion) throw DataError("unsupported checkpoint version");
    Checkpoint ck;
    const auto n_meta = detail::get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string k = detail::get_string(in);
        ck.meta[k] = detail::get_string(in);
    }
    const auto n = detail::get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n; ++i) {
        StoredTensor t;
        t.name = detail::get_string(in);
        t.trainable = detail::get<std::uint8_t>(in) != 0;
        const auto rank = detail::get<std::uint32_t>(in);
        std::uint64_t count = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto d = detail::get<std::uint64_t>(in);
            t.shape.push_back(static_cast<Index>(d));
            count *= d;
        }
        if (count > (1ull << 32)) throw DataError("checkpoint: implausible tensor size");
        t.values.resize(count);
        if (count && !in.read(reinterpret_cast<char*>(t.values.data()),
                              static_cast<std::streamsize>(count * sizeof(double))))
            throw DataError("checkpoint: truncated tensor '" + t.name + "'");
        ck.tensors.push_back(std::move(t));
    }
    return ck;
}

/// Copies stored values into `params`, matching by name and shape.
inline void assign(const Checkpoint& ck, const ParamList& params) {
    std::map<std::string, const StoredTensor*> by_name;
    for (const auto& t : ck.tensors) by_name[t.name] = &t;
    if (by_name.size() != params.size())
        throw DataError("checkpoint has " + std::to_string(by_name.size()) + " tensors, model expects " +
                        std::to_string(params.size()));
    for (const auto& p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) throw DataError("checkpoint is missing tensor '" + p.name + "'");
        if (it->second->shape != p.shape) throw DataError("checkpoint tensor '" + p.name + "' has the wrong shape");
        std::copy(it->second->values.begin(), it->second->values.end(), p.data);
    }
}

inline void save_checkpoint(const std::string& path, const Metadata& meta, const ParamList& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    write_checkpoint(out, meta, params);
    if (!out) throw DataError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    try {
        return read_checkpoint(in);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

/// Flat key=value encoding used for configs stored in checkpoint metadata.
inline std::string encode_config(const Metadata& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

inline Metadata decode_config(const std::string& text) {
    Metadata kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

} // namespace mmfv::nn

#endif

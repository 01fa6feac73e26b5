#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "msq/common.hpp"
#include "msq/tensor.hpp"

namespace msq {

// Little-endian length-prefixed named sections, each guarded by a CRC32.
// Layout:
//   "MSQCKPT\0"  magic, 8 bytes
//   u32 version
//   u32 section count
//   per section: u32 name length, name bytes, u64 payload length,
//                u32 crc32(payload), payload bytes
// The writer is deterministic, so save -> load -> save is byte-identical.

constexpr uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[8] = {'M', 'S', 'Q', 'C', 'K', 'P', 'T', '\0'};

namespace detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

struct ByteReader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size()) throw LoadError(std::string("checkpoint truncated in ") + what);
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::vector<uint8_t> bytes(size_t n, const char* what) {
        need(n, what);
        std::vector<uint8_t> out(buf.begin() + static_cast<long>(pos),
                                 buf.begin() + static_cast<long>(pos + n));
        pos += n;
        return out;
    }
};

inline uint32_t crc_of(const std::vector<uint8_t>& payload) {
    return static_cast<uint32_t>(
        ::crc32(0L, payload.empty() ? Z_NULL : payload.data(),
                static_cast<uInt>(payload.size())));
}

}  // namespace detail

struct CheckpointSection {
    std::string name;
    std::vector<uint8_t> bytes;
};

struct CheckpointFile {
    uint32_t version = kCheckpointVersion;
    std::vector<CheckpointSection> sections;  // ordered

    const CheckpointSection* find(const std::string& name) const {
        for (const auto& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }

    const CheckpointSection& require(const std::string& name) const {
        const auto* s = find(name);
        if (!s) throw LoadError("checkpoint missing section " + name);
        return *s;
    }

    std::vector<uint8_t> serialize() const {
        std::vector<uint8_t> out;
        out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);
        detail::put_u32(out, version);
        detail::put_u32(out, static_cast<uint32_t>(sections.size()));
        for (const auto& s : sections) {
            detail::put_u32(out, static_cast<uint32_t>(s.name.size()));
            out.insert(out.end(), s.name.begin(), s.name.end());
            detail::put_u64(out, s.bytes.size());
            detail::put_u32(out, detail::crc_of(s.bytes));
            out.insert(out.end(), s.bytes.begin(), s.bytes.end());
        }
        return out;
    }

    static CheckpointFile deserialize(const std::vector<uint8_t>& buf) {
        detail::ByteReader r{buf};
        auto magic = r.bytes(8, "magic");
        if (std::memcmp(magic.data(), kCheckpointMagic, 8) != 0)
            throw LoadError("not a checkpoint file (bad magic)");
        CheckpointFile ck;
        ck.version = r.u32("version");
        if (ck.version != kCheckpointVersion)
            throw LoadError("unsupported checkpoint version " + std::to_string(ck.version));
        const uint32_t count = r.u32("section count");
        for (uint32_t i = 0; i < count; ++i) {
            CheckpointSection s;
            const uint32_t name_len = r.u32("section name length");
            auto name = r.bytes(name_len, "section name");
            s.name.assign(name.begin(), name.end());
            const uint64_t payload_len = r.u64(s.name.c_str());
            const uint32_t crc = r.u32(s.name.c_str());
            s.bytes = r.bytes(static_cast<size_t>(payload_len), s.name.c_str());
            if (detail::crc_of(s.bytes) != crc)
                throw LoadError("checksum failure in section " + s.name);
            ck.sections.push_back(std::move(s));
        }
        if (r.pos != buf.size()) throw LoadError("trailing bytes after last section");
        return ck;
    }

    void save(const std::string& path) const {
        auto bytes = serialize();
        std::ofstream f(path, std::ios::binary);
        if (!f) throw LoadError("cannot open for writing: " + path);
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
        if (!f) throw LoadError("write failed: " + path);
    }

    static CheckpointFile load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw LoadError("cannot open: " + path);
        std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
        return deserialize(buf);
    }
};

// ---------------------------------------------------------------------------
// payload codecs
// ---------------------------------------------------------------------------

inline std::vector<uint8_t> encode_f64(const std::vector<double>& values) {
    std::vector<uint8_t> out;
    out.reserve(values.size() * 8);
    for (double v : values) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        detail::put_u64(out, bits);
    }
    return out;
}

inline std::vector<double> decode_f64(const std::vector<uint8_t>& bytes) {
    if (bytes.size() % 8 != 0) throw LoadError("f64 payload length not a multiple of 8");
    std::vector<double> out(bytes.size() / 8);
    for (size_t i = 0; i < out.size(); ++i) {
        uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<uint64_t>(bytes[i * 8 + b]) << (8 * b);
        std::memcpy(&out[i], &bits, 8);
    }
    return out;
}

// Named tensor group: u32 count, then per tensor name, u32 ndim, u32 dims,
// f64 data.
inline std::vector<uint8_t> encode_param_group(
    const std::vector<std::pair<std::string, TensorPtr>>& params) {
    std::vector<uint8_t> out;
    detail::put_u32(out, static_cast<uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        detail::put_u32(out, static_cast<uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        detail::put_u32(out, static_cast<uint32_t>(t->shape.size()));
        for (int e : t->shape) detail::put_u32(out, static_cast<uint32_t>(e));
        auto data = encode_f64(t->data);
        out.insert(out.end(), data.begin(), data.end());
    }
    return out;
}

// Loads a param group into existing tensors; any name/shape disagreement is
// a schema error, never a silent truncation.
inline void decode_param_group(const std::vector<uint8_t>& bytes,
                               const std::vector<std::pair<std::string, TensorPtr>>& params,
                               const std::string& group) {
    detail::ByteReader r{bytes};
    const uint32_t count = r.u32("param count");
    if (count != params.size())
        throw SchemaError("group " + group + ": expected " + std::to_string(params.size()) +
                          " tensors, file has " + std::to_string(count));
    for (const auto& [name, t] : params) {
        const uint32_t name_len = r.u32("param name length");
        auto name_bytes = r.bytes(name_len, "param name");
        const std::string file_name(name_bytes.begin(), name_bytes.end());
        if (file_name != name)
            throw SchemaError("group " + group + ": expected tensor " + name + ", file has " +
                              file_name);
        const uint32_t ndim = r.u32("ndim");
        std::vector<int> shape;
        for (uint32_t i = 0; i < ndim; ++i) shape.push_back(static_cast<int>(r.u32("dim")));
        if (shape != t->shape)
            throw SchemaError("group " + group + ": shape mismatch for tensor " + name);
        auto data = decode_f64(r.bytes(t->data.size() * 8, name.c_str()));
        t->data = std::move(data);
    }
    if (r.pos != bytes.size()) throw SchemaError("group " + group + ": trailing bytes");
}

}  // namespace msq

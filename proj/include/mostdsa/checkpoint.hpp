#pragma once

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mostdsa/config.hpp"
#include "mostdsa/param_store.hpp"

// Checkpoint container: magic "MOSTDSA1", format version, config snapshot,
// named float32 parameter arrays (little endian), trailing CRC32 over all
// preceding bytes. Load verifies magic, version, and checksum; round trips
// are bit-identical.

namespace mostdsa {
namespace checkpoint {

constexpr char kMagic[9] = "MOSTDSA1";
constexpr std::uint32_t kVersion = 1;

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}
inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xff);
}
inline void put_f32(std::vector<unsigned char>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const unsigned char* p;
    std::size_t len, pos = 0;

    void need(std::size_t n) const {
        if (pos + n > len) throw RuntimeFailure("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline std::vector<unsigned char> serialize(const ParamStore<float>& store, const Config& cfg) {
    std::vector<unsigned char> out(kMagic, kMagic + 8);
    detail::put_u32(out, kVersion);
    const std::string cfg_text = cfg.serialize();
    detail::put_u32(out, std::uint32_t(cfg_text.size()));
    out.insert(out.end(), cfg_text.begin(), cfg_text.end());
    detail::put_u64(out, std::uint64_t(store.step()));
    detail::put_u32(out, std::uint32_t(store.size()));
    for (const auto& [name, p] : store) {
        detail::put_u32(out, std::uint32_t(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        const Shape& s = p.value.shape();
        detail::put_u32(out, std::uint32_t(s.n));
        detail::put_u32(out, std::uint32_t(s.c));
        detail::put_u32(out, std::uint32_t(s.h));
        detail::put_u32(out, std::uint32_t(s.w));
        detail::put_u64(out, std::uint64_t(p.value.numel()));
        for (std::int64_t i = 0; i < p.value.numel(); ++i)
            detail::put_f32(out, p.value.data()[i]);
    }
    detail::put_u32(out, std::uint32_t(::crc32(0, out.data(), uInt(out.size()))));
    return out;
}

inline std::pair<ParamStore<float>, Config> deserialize(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw RuntimeFailure("not a checkpoint (bad magic)");

    detail::Reader tail{bytes.data() + bytes.size() - 4, 4};
    const std::uint32_t want_crc = tail.u32();
    const std::uint32_t got_crc = std::uint32_t(::crc32(0, bytes.data(), uInt(bytes.size() - 4)));
    if (want_crc != got_crc)
        throw RuntimeFailure("checkpoint checksum mismatch (corrupted file)");

    detail::Reader r{bytes.data(), bytes.size() - 4};
    r.pos = 8;
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw RuntimeFailure("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t cfg_len = r.u32();
    Config cfg = Config::parse(r.str(cfg_len));
    const std::uint64_t step = r.u64();
    const std::uint32_t count = r.u32();

    ParamStore<float> store;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.str(name_len);
        const int sn = int(r.u32()), sc = int(r.u32()), sh = int(r.u32()), sw = int(r.u32());
        Shape s(sn, sc, sh, sw);
        const std::uint64_t n = r.u64();
        if (std::int64_t(n) != s.numel())
            throw RuntimeFailure("checkpoint parameter '" + name + "' has inconsistent size");
        Tensor<float> t(s);
        for (std::uint64_t j = 0; j < n; ++j) t.data()[j] = r.f32();
        store.create(name, std::move(t));
    }
    store.set_step(std::int64_t(step));
    return {std::move(store), cfg};
}

inline void save(const std::string& path, const ParamStore<float>& store, const Config& cfg) {
    auto bytes = serialize(store, cfg);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw RuntimeFailure("short write to '" + path + "'");
}

inline std::pair<ParamStore<float>, Config> load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot open checkpoint '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace checkpoint
}  // namespace mostdsa

#pragma once

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mostdsa/tensor.hpp"

// Minimal 8-bit grayscale PNG codec (zlib-backed). The writer emits
// filter-0 scanlines; the reader handles all five standard filters but only
// non-interlaced 8-bit grayscale images.

namespace mostdsa {
namespace image_io {

namespace detail {

inline void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back((v >> 24) & 0xff);
    out.push_back((v >> 16) & 0xff);
    out.push_back((v >> 8) & 0xff);
    out.push_back(v & 0xff);
}

inline std::uint32_t get_u32_be(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void put_chunk(std::vector<unsigned char>& out, const char type[4],
                      const std::vector<unsigned char>& payload) {
    put_u32_be(out, std::uint32_t(payload.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const std::uint32_t crc =
        ::crc32(0, out.data() + start, uInt(out.size() - start));
    put_u32_be(out, crc);
}

}  // namespace detail

inline unsigned char quantize8(float v) {
    const float c = std::min(1.0f, std::max(0.0f, v));
    return static_cast<unsigned char>(std::lround(c * 255.0f));
}

inline std::vector<unsigned char> encode_png_gray8(const Tensor<float>& img) {
    const Shape& s = img.shape();
    if (s.n != 1 || s.c != 1)
        throw ConfigError("encode_png_gray8 expects shape (1,1,H,W), got " + s.str());

    std::vector<unsigned char> raw((std::size_t(s.w) + 1) * s.h);
    for (int y = 0; y < s.h; ++y) {
        unsigned char* row = raw.data() + std::size_t(y) * (s.w + 1);
        row[0] = 0;  // filter: none
        for (int x = 0; x < s.w; ++x) row[1 + x] = quantize8(img.at(0, 0, y, x));
    }

    uLongf comp_len = compressBound(uLong(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw RuntimeFailure("PNG deflate failed");
    comp.resize(comp_len);

    std::vector<unsigned char> out = {137, 80, 78, 71, 13, 10, 26, 10};
    std::vector<unsigned char> ihdr;
    detail::put_u32_be(ihdr, std::uint32_t(s.w));
    detail::put_u32_be(ihdr, std::uint32_t(s.h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // color type: grayscale
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace
    detail::put_chunk(out, "IHDR", ihdr);
    detail::put_chunk(out, "IDAT", comp);
    detail::put_chunk(out, "IEND", {});
    return out;
}

inline void write_png_gray8(const std::string& path, const Tensor<float>& img) {
    auto bytes = encode_png_gray8(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw RuntimeFailure("short write to '" + path + "'");
}

inline Tensor<float> decode_png_gray8(const std::vector<unsigned char>& bytes) {
    static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw RuntimeFailure("not a PNG file");

    int w = 0, h = 0;
    std::vector<unsigned char> idat;
    std::size_t pos = 8;
    bool saw_ihdr = false;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t len = detail::get_u32_be(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw RuntimeFailure("truncated PNG chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const unsigned char* payload = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw RuntimeFailure("bad IHDR");
            w = int(detail::get_u32_be(payload));
            h = int(detail::get_u32_be(payload + 4));
            if (payload[8] != 8 || payload[9] != 0)
                throw RuntimeFailure("only 8-bit grayscale PNG is supported");
            if (payload[12] != 0) throw RuntimeFailure("interlaced PNG is not supported");
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || w <= 0 || h <= 0) throw RuntimeFailure("PNG missing IHDR");

    std::vector<unsigned char> raw((std::size_t(w) + 1) * h);
    uLongf raw_len = uLongf(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw RuntimeFailure("PNG inflate failed");

    Tensor<float> img(Shape(1, 1, h, w));
    std::vector<unsigned char> prev(std::size_t(w), 0), cur(std::size_t(w), 0);
    for (int y = 0; y < h; ++y) {
        const unsigned char* row = raw.data() + std::size_t(y) * (w + 1);
        const unsigned char filter = row[0];
        for (int x = 0; x < w; ++x) {
            const int rawv = row[1 + x];
            const int a = x > 0 ? cur[x - 1] : 0;   // left
            const int b = prev[x];                  // up
            const int c = x > 0 ? prev[x - 1] : 0;  // up-left
            int v = 0;
            switch (filter) {
                case 0: v = rawv; break;
                case 1: v = rawv + a; break;
                case 2: v = rawv + b; break;
                case 3: v = rawv + (a + b) / 2; break;
                case 4: {
                    const int p = a + b - c;
                    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
                    v = rawv + (pa <= pb && pa <= pc ? a : (pb <= pc ? b : c));
                    break;
                }
                default: throw RuntimeFailure("unknown PNG filter type");
            }
            cur[x] = static_cast<unsigned char>(v & 0xff);
            img.at(0, 0, y, x) = float(cur[x]) / 255.0f;
        }
        std::swap(prev, cur);
    }
    return img;
}

inline Tensor<float> read_png_gray8(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    return decode_png_gray8(bytes);
}

}  // namespace image_io
}  // namespace mostdsa

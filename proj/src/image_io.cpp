#include "promptloop/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include "json.hpp"
#include <zlib.h>

namespace promptloop::image_io {

namespace {

constexpr std::string_view kAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
constexpr std::array<std::uint8_t, 8> kSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
constexpr std::string_view kLatentChunk = "emBd";
constexpr std::uint32_t kImageHeight = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

void put_chunk(std::vector<std::uint8_t>& out, std::string_view type, std::span<const std::uint8_t> data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const auto type_at = out.size();
    out.insert(out.end(), type.begin(), type.end());
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0L, out.data() + type_at, static_cast<uInt>(out.size() - type_at));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

[[noreturn]] void corrupt(const std::string& why) {
    throw Error(ErrorCode::SchemaMismatch, fmt::format("corrupt PNG: {}", why));
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kAlphabet[(n >> 18) & 63];
        out += kAlphabet[(n >> 12) & 63];
        out += kAlphabet[(n >> 6) & 63];
        out += kAlphabet[n & 63];
    }
    if (const auto rest = bytes.size() - i; rest > 0) {
        std::uint32_t n = bytes[i] << 16;
        if (rest == 2) n |= bytes[i + 1] << 8;
        out += kAlphabet[(n >> 18) & 63];
        out += kAlphabet[(n >> 12) & 63];
        out += rest == 2 ? kAlphabet[(n >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    std::uint32_t acc = 0;
    int bits = 0;
    bool padding = false;
    for (char c : text) {
        if (c == '\n' || c == '\r' || c == ' ') continue;
        if (c == '=') {
            padding = true;
            continue;
        }
        const auto idx = kAlphabet.find(c);
        if (idx == std::string_view::npos || padding) {
            throw Error(ErrorCode::SchemaMismatch, "invalid base64 payload");
        }
        acc = (acc << 6) | static_cast<std::uint32_t>(idx);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

bool has_png_signature(std::span<const std::uint8_t> bytes) noexcept {
    return bytes.size() >= kSignature.size() && std::equal(kSignature.begin(), kSignature.end(), bytes.begin());
}

std::vector<std::uint8_t> encode_latent_png(const LatentPayload& payload) {
    const auto width = static_cast<std::uint32_t>(payload.latent.dim());
    std::vector<std::uint8_t> raw;
    raw.reserve((width + 1) * kImageHeight);
    for (std::uint32_t y = 0; y < kImageHeight; ++y) {
        raw.push_back(0);  // filter: none
        for (double v : payload.latent.values()) {
            raw.push_back(static_cast<std::uint8_t>(std::lround(std::clamp((v + 1.0) * 127.5, 0.0, 255.0))));
        }
    }
    uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> packed(packed_size);
    if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
        throw Error(ErrorCode::IoError, "zlib compression failed");
    }
    packed.resize(packed_size);

    std::vector<std::uint8_t> out(kSignature.begin(), kSignature.end());
    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, width);
    put_u32(ihdr, kImageHeight);
    ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // 8-bit grayscale, no interlace
    put_chunk(out, "IHDR", ihdr);

    const nlohmann::json meta = {{"dim", payload.latent.dim()},
                                 {"vocabulary", payload.vocabulary},
                                 {"latent", payload.latent.values()}};
    const auto text = meta.dump();
    put_chunk(out, kLatentChunk, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    put_chunk(out, "IDAT", packed);
    put_chunk(out, "IEND", {});
    return out;
}

std::optional<LatentPayload> decode_latent_png(std::span<const std::uint8_t> png) {
    if (!has_png_signature(png)) corrupt("bad signature");
    std::size_t at = kSignature.size();
    while (at + 12 <= png.size()) {
        const auto len = get_u32(png, at);
        if (at + 12 + std::size_t{len} > png.size()) corrupt("truncated chunk");
        const std::string_view type(reinterpret_cast<const char*>(png.data() + at + 4), 4);
        if (type == kLatentChunk) {
            const std::string_view body(reinterpret_cast<const char*>(png.data() + at + 8), len);
            const auto meta = nlohmann::json::parse(body, nullptr, false);
            if (meta.is_discarded() || !meta.contains("latent") || !meta.contains("vocabulary")) {
                corrupt("unreadable latent chunk");
            }
            try {
                return LatentPayload{Embedding(meta.at("latent").get<std::vector<double>>()),
                                     meta.at("vocabulary").get<std::vector<std::string>>()};
            } catch (const nlohmann::json::exception& e) {
                corrupt(e.what());
            }
        }
        if (type == "IEND") break;
        at += 12 + std::size_t{len};
    }
    return std::nullopt;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot read {}", path.string()));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, fmt::format("short write to {}", path.string()));
}

}  // namespace promptloop::image_io

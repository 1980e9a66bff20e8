#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptloop/core_model.hpp"

namespace promptloop::image_io {

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws Error{SchemaMismatch} on characters outside the standard alphabet.
std::vector<std::uint8_t> base64_decode(std::string_view text);

bool has_png_signature(std::span<const std::uint8_t> bytes) noexcept;

/// A simulated image's latent vector together with the phrase vocabulary (in
/// basis-index order) of the world that produced it.
struct LatentPayload {
    Embedding latent;
    std::vector<std::string> vocabulary;
};

/// Grayscale PNG visualising the latent, carrying the payload in a private
/// ancillary "emBd" chunk so the image can be re-scored offline.
std::vector<std::uint8_t> encode_latent_png(const LatentPayload& payload);

/// Reads the "emBd" chunk if present. Throws Error{SchemaMismatch} on a corrupt PNG.
std::optional<LatentPayload> decode_latent_png(std::span<const std::uint8_t> png);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace promptloop::image_io

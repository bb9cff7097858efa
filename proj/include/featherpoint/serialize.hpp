#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "featherpoint/model.hpp"

namespace featherpoint {

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kModelFileExtension = ".fpt.json";

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
/// Throws FormatError on characters outside the alphabet or bad padding.
std::vector<std::uint8_t> base64_decode(const std::string& text);
std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes);

/// ArchSpec as a JSON document (text). Unknown keys are rejected on read.
std::string arch_spec_to_json(const ArchSpec& spec, int indent = 2);
ArchSpec arch_spec_from_json(const std::string& text);

/// JSON envelope {format, format_version, spec, param_count, param_manifest,
/// payload_bytes, checksum, payload}. The payload is base64 of the
/// little-endian float64 values of every parameter, then every normalization
/// buffer, in visit order; the checksum is the CRC-32 of the raw payload.
std::string serialize(ModelGraph& model);
/// Inverse of serialize. Version mismatch, truncation and checksum failure
/// raise VersionMismatchError, TruncatedPayloadError and ChecksumError.
ModelGraph deserialize(const std::string& text);

void save_model(const std::filesystem::path& path, ModelGraph& model);
ModelGraph load_model(const std::filesystem::path& path);

}  // namespace featherpoint

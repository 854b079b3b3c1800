#pragma once

// Shared on-disk layout for datasets, checkpoints and trial dumps:
//
//   <one line of compact JSON manifest>\n
//   <payload: concatenated little-endian binary blocks>
//
// The manifest lists every block with its offset (relative to the first
// payload byte), byte length, element type and shape, plus the total payload
// length and an FNV-1a checksum over the payload.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace flysnn::container {

enum class DType { f32, u32, u8 };

struct Block {
    std::string name;
    DType dtype = DType::f32;
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::vector<unsigned char> bytes;  // already little-endian encoded
};

struct BlockInfo {
    std::string name;
    DType dtype = DType::f32;
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
};

struct Contents {
    nlohmann::json manifest;  // full manifest including the "blocks" table
    std::map<std::string, Block> blocks;
};

std::vector<unsigned char> encode_f32(const std::vector<float>& values);
std::vector<unsigned char> encode_u32(const std::vector<std::uint32_t>& values);
std::vector<float> decode_f32(const Block& block);
std::vector<std::uint32_t> decode_u32(const Block& block);

// `header` carries the caller's keys ("format", "version", config, ...);
// the block table, payload length and checksum are appended here.
// Returns the manifest as written.
nlohmann::json write(const std::filesystem::path& path, nlohmann::json header,
                     const std::vector<Block>& blocks);

// Validates format tag and version, block bounds, payload length and
// checksum. Throws FormatError on any inconsistency.
Contents read(const std::filesystem::path& path, const std::string& expected_format,
              int expected_version);

std::uint64_t manifest_line_length(const std::filesystem::path& path);

std::string to_string(DType t);

}  // namespace flysnn::container

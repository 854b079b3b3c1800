#include "flysnn/container.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "flysnn/errors.hpp"
#include "flysnn/rng.hpp"

namespace flysnn::container {

namespace {

std::size_t element_size(DType t) {
    switch (t) {
        case DType::f32:
        case DType::u32:
            return 4;
        case DType::u8:
            return 1;
    }
    return 1;
}

DType dtype_from_string(const std::string& s) {
    if (s == "f32le") return DType::f32;
    if (s == "u32le") return DType::u32;
    if (s == "u8") return DType::u8;
    throw FormatError("unknown block dtype '" + s + "'");
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 24));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::string to_string(DType t) {
    switch (t) {
        case DType::f32:
            return "f32le";
        case DType::u32:
            return "u32le";
        case DType::u8:
            return "u8";
    }
    return "?";
}

std::vector<unsigned char> encode_f32(const std::vector<float>& values) {
    std::vector<unsigned char> out;
    out.reserve(values.size() * 4);
    for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

std::vector<unsigned char> encode_u32(const std::vector<std::uint32_t>& values) {
    std::vector<unsigned char> out;
    out.reserve(values.size() * 4);
    for (std::uint32_t v : values) put_u32(out, v);
    return out;
}

std::vector<float> decode_f32(const Block& block) {
    if (block.dtype != DType::f32) throw FormatError("block '" + block.name + "' is not f32");
    std::vector<float> out(block.bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::bit_cast<float>(get_u32(block.bytes.data() + 4 * i));
    }
    return out;
}

std::vector<std::uint32_t> decode_u32(const Block& block) {
    if (block.dtype != DType::u32) throw FormatError("block '" + block.name + "' is not u32");
    std::vector<std::uint32_t> out(block.bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_u32(block.bytes.data() + 4 * i);
    return out;
}

nlohmann::json write(const std::filesystem::path& path, nlohmann::json header,
                     const std::vector<Block>& blocks) {
    std::vector<unsigned char> payload;
    nlohmann::json table = nlohmann::json::array();
    for (const Block& b : blocks) {
        if (b.bytes.size() != b.rows * b.cols * element_size(b.dtype)) {
            throw FormatError("block '" + b.name + "' length does not match its shape");
        }
        table.push_back({{"name", b.name},
                         {"dtype", to_string(b.dtype)},
                         {"rows", b.rows},
                         {"cols", b.cols},
                         {"offset", payload.size()},
                         {"length", b.bytes.size()}});
        payload.insert(payload.end(), b.bytes.begin(), b.bytes.end());
    }
    header["blocks"] = std::move(table);
    header["payload_bytes"] = payload.size();
    header["checksum_fnv1a64"] = hex64(rng::fnv1a64(payload));

    const std::string line = header.dump() + "\n";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) throw FormatError("write to '" + path.string() + "' failed");
    return header;
}

std::uint64_t manifest_line_length(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || in.eof()) throw FormatError("missing manifest line");
    return line.size() + 1;
}

Contents read(const std::filesystem::path& path, const std::string& expected_format,
              int expected_version) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || in.eof()) {
        throw FormatError("'" + path.string() + "': missing manifest line");
    }

    Contents c;
    try {
        c.manifest = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + path.string() + "': manifest is not valid JSON: " + e.what());
    }
    try {
        if (c.manifest.at("format").get<std::string>() != expected_format) {
            throw FormatError("'" + path.string() + "': expected format '" + expected_format +
                              "', found '" + c.manifest.at("format").get<std::string>() + "'");
        }
        const int version = c.manifest.at("version").get<int>();
        if (version != expected_version) {
            throw FormatError("'" + path.string() + "': unsupported version " +
                              std::to_string(version));
        }

        std::vector<unsigned char> payload{std::istreambuf_iterator<char>(in),
                                           std::istreambuf_iterator<char>()};
        const auto declared = c.manifest.at("payload_bytes").get<std::uint64_t>();
        if (payload.size() != declared) {
            throw FormatError("'" + path.string() + "': payload is " +
                              std::to_string(payload.size()) + " bytes, manifest declares " +
                              std::to_string(declared) + " (truncated or padded file)");
        }
        if (hex64(rng::fnv1a64(payload)) != c.manifest.at("checksum_fnv1a64").get<std::string>()) {
            throw FormatError("'" + path.string() + "': checksum mismatch");
        }
        for (const auto& entry : c.manifest.at("blocks")) {
            Block b;
            b.name = entry.at("name").get<std::string>();
            b.dtype = dtype_from_string(entry.at("dtype").get<std::string>());
            b.rows = entry.at("rows").get<std::uint64_t>();
            b.cols = entry.at("cols").get<std::uint64_t>();
            const auto offset = entry.at("offset").get<std::uint64_t>();
            const auto length = entry.at("length").get<std::uint64_t>();
            if (length != b.rows * b.cols * element_size(b.dtype) || offset > payload.size() ||
                length > payload.size() - offset) {
                throw FormatError("'" + path.string() + "': block '" + b.name +
                                  "' is inconsistent with the payload");
            }
            b.bytes.assign(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                           payload.begin() + static_cast<std::ptrdiff_t>(offset + length));
            c.blocks.emplace(b.name, std::move(b));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + path.string() + "': malformed manifest: " + e.what());
    }
    return c;
}

}  // namespace flysnn::container

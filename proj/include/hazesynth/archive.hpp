#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace hazesynth {

// Single-file container of named tensors plus a JSON metadata block.
//
// Layout (little-endian):
//   8 bytes   magic "HZSARCH\0"
//   u32       format version
//   u32       reserved (0)
//   u64       header length in bytes
//   header    UTF-8 JSON: {"kind", "meta", "arrays": [{name, dtype, shape, offset, nbytes}]}
//   data      raw tensor bytes, offsets relative to the start of this block
//   u32       CRC-32 of header + data
//
// Loading validates the magic, version, exact file size and checksum before
// any tensor is materialized, so a truncated or corrupt file never yields a
// partially filled archive.
class Archive {
public:
    static constexpr uint32_t kFormatVersion = 1;

    Archive() = default;
    explicit Archive(std::string kind) : kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

    // Stores a contiguous CPU copy. Supported dtypes: float32, float64, int64, uint8.
    void put(const std::string& name, const torch::Tensor& t);
    const torch::Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return arrays_.count(name) != 0; }
    const std::map<std::string, torch::Tensor>& arrays() const noexcept { return arrays_; }

    nlohmann::json& meta() noexcept { return meta_; }
    const nlohmann::json& meta() const noexcept { return meta_; }

    // Writes to a sibling temporary file and renames it into place.
    void save(const std::filesystem::path& path) const;

    // `expected_kind` empty accepts any kind.
    static Archive load(const std::filesystem::path& path, std::string_view expected_kind = {});

private:
    std::string kind_;
    nlohmann::json meta_ = nlohmann::json::object();
    std::map<std::string, torch::Tensor> arrays_;
};

// Copies every parameter and buffer of `module` into `ar` under `prefix`.
void store_module(Archive& ar, const std::string& prefix, const torch::nn::Module& module);
// Inverse of store_module; every parameter must be present with a matching shape.
void restore_module(const Archive& ar, const std::string& prefix, torch::nn::Module& module);

} // namespace hazesynth

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ztbe/codec.hpp"
#include "ztbe/fused_exec.hpp"

namespace ztbe {

std::vector<std::uint8_t> read_file(const std::filesystem::path &path);
void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes);

// Raw tensor: u32 rows, u32 cols, then rows * cols little-endian u16 words.
WeightMatrix parse_raw_tensor(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_raw_tensor(const WeightMatrix &w);

// Raw files double as K x N activation inputs.
ActivationMatrix to_activations(WeightMatrix w);

struct SafetensorsEntry {
  std::string name;
  std::string dtype;
  std::vector<std::uint64_t> shape;
  std::uint64_t begin = 0; // offsets relative to the data region
  std::uint64_t end = 0;
};

// Read-only view of a safetensors file. `__metadata__` is ignored; entries are
// sorted by name.
class SafetensorsFile {
public:
  explicit SafetensorsFile(std::vector<std::uint8_t> bytes);

  const std::vector<SafetensorsEntry> &entries() const noexcept { return entries_; }
  const SafetensorsEntry &entry(const std::string &name) const;

  // BF16 tensors only (DtypeError otherwise). Rank-1 tensors load as 1 x n;
  // higher ranks fold the leading dimensions into rows.
  WeightMatrix load_bf16(const std::string &name) const;

private:
  std::vector<std::uint8_t> bytes_;
  std::size_t data_start_ = 0;
  std::vector<SafetensorsEntry> entries_;
};

struct SafetensorsTensor {
  std::string name;
  std::string dtype;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> data;
};

std::vector<std::uint8_t> encode_safetensors(std::span<const SafetensorsTensor> tensors);

enum class FileFormat { Raw, Safetensors, Ztbe };

FileFormat parse_format(const std::string &name);

// ZTBE by magic, safetensors by extension, raw otherwise.
FileFormat detect_format(const std::filesystem::path &path,
                         std::span<const std::uint8_t> bytes);

} // namespace ztbe

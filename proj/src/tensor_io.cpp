#include "ztbe/tensor_io.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "ztbe/error.hpp"

namespace ztbe {

namespace {

std::uint64_t load_le(std::span<const std::uint8_t> bytes, std::size_t at, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width; ++i) {
    v |= std::uint64_t{bytes[at + i]} << (8 * i);
  }
  return v;
}

void store_le(std::vector<std::uint8_t> &out, std::uint64_t v, std::size_t width) {
  for (std::size_t i = 0; i < width; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

[[noreturn]] void malformed(const std::string &what) {
  throw IoError("malformed safetensors file: " + what);
}

} // namespace

std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) {
    throw IoError("read error on " + path.string());
  }
  return bytes;
}

void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot create " + path.string());
  }
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write error on " + path.string());
  }
}

WeightMatrix parse_raw_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) {
    throw IoError("raw tensor shorter than its 8-byte header");
  }
  const auto rows = static_cast<std::uint32_t>(load_le(bytes, 0, 4));
  const auto cols = static_cast<std::uint32_t>(load_le(bytes, 4, 4));
  const std::uint64_t expected = 8 + 2 * std::uint64_t{rows} * cols;
  if (bytes.size() != expected) {
    throw IoError("raw tensor is " + std::to_string(bytes.size()) + " bytes, expected " +
                  std::to_string(expected) + " for " + std::to_string(rows) + "x" +
                  std::to_string(cols));
  }
  std::vector<BF16Word> data(std::size_t{rows} * cols);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i].bits = static_cast<std::uint16_t>(load_le(bytes, 8 + 2 * i, 2));
  }
  return WeightMatrix(rows, cols, std::move(data));
}

std::vector<std::uint8_t> encode_raw_tensor(const WeightMatrix &w) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 2 * w.data.size());
  store_le(out, w.rows, 4);
  store_le(out, w.cols, 4);
  for (const BF16Word word : w.data) {
    store_le(out, word.bits, 2);
  }
  return out;
}

ActivationMatrix to_activations(WeightMatrix w) {
  return ActivationMatrix(w.rows, w.cols, std::move(w.data));
}

SafetensorsFile::SafetensorsFile(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {
  if (bytes_.size() < 8) {
    malformed("shorter than the header length field");
  }
  const std::uint64_t header_len = load_le(bytes_, 0, 8);
  if (header_len > bytes_.size() - 8) {
    malformed("header length exceeds file size");
  }
  data_start_ = 8 + static_cast<std::size_t>(header_len);
  const std::uint64_t data_len = bytes_.size() - data_start_;

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes_.begin() + 8, bytes_.begin() + data_start_);
  } catch (const nlohmann::json::exception &e) {
    malformed(std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) {
    malformed("header is not a JSON object");
  }
  for (const auto &[name, info] : header.items()) {
    if (name == "__metadata__") {
      continue;
    }
    try {
      SafetensorsEntry e;
      e.name = name;
      e.dtype = info.at("dtype").get<std::string>();
      e.shape = info.at("shape").get<std::vector<std::uint64_t>>();
      const auto offsets = info.at("data_offsets").get<std::vector<std::uint64_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > data_len) {
        malformed("tensor '" + name + "' has data_offsets outside the data region");
      }
      e.begin = offsets[0];
      e.end = offsets[1];
      entries_.push_back(std::move(e));
    } catch (const nlohmann::json::exception &ex) {
      malformed("tensor '" + name + "': " + ex.what());
    }
  }
  std::sort(entries_.begin(), entries_.end(),
            [](const auto &a, const auto &b) { return a.name < b.name; });
}

const SafetensorsEntry &SafetensorsFile::entry(const std::string &name) const {
  const auto it = std::find_if(entries_.begin(), entries_.end(),
                               [&](const auto &e) { return e.name == name; });
  if (it == entries_.end()) {
    throw IoError("no tensor named '" + name + "'");
  }
  return *it;
}

WeightMatrix SafetensorsFile::load_bf16(const std::string &name) const {
  const SafetensorsEntry &e = entry(name);
  if (e.dtype != "BF16") {
    throw DtypeError("tensor '" + name + "' has dtype " + e.dtype + ", only BF16 is supported");
  }
  if (e.shape.empty()) {
    throw IoError("tensor '" + name + "' is a scalar");
  }
  const std::uint64_t cols = e.shape.back();
  std::uint64_t rows = 1;
  std::uint64_t bytes = 0;
  bool overflow = false;
  for (auto it = e.shape.begin(); it != e.shape.end() - 1; ++it) {
    overflow |= __builtin_mul_overflow(rows, *it, &rows);
  }
  overflow |= __builtin_mul_overflow(rows, cols, &bytes);
  overflow |= __builtin_mul_overflow(bytes, std::uint64_t{2}, &bytes);
  if (overflow || bytes != e.end - e.begin) {
    malformed("tensor '" + name + "' shape does not match its byte span");
  }
  if (rows == 0 || cols == 0 || rows > UINT32_MAX || cols > UINT32_MAX) {
    throw IoError("tensor '" + name + "' has unsupported dimensions");
  }
  std::vector<BF16Word> data(rows * cols);
  const std::size_t base = data_start_ + e.begin;
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i].bits = static_cast<std::uint16_t>(load_le(bytes_, base + 2 * i, 2));
  }
  return WeightMatrix(static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols),
                      std::move(data));
}

std::vector<std::uint8_t> encode_safetensors(std::span<const SafetensorsTensor> tensors) {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const SafetensorsTensor &t : tensors) {
    header[t.name] = {{"dtype", t.dtype},
                      {"shape", t.shape},
                      {"data_offsets", {offset, offset + t.data.size()}}};
    offset += t.data.size();
  }
  std::string text = header.dump();
  text.append((8 - text.size() % 8) % 8, ' ');
  std::vector<std::uint8_t> out;
  store_le(out, text.size(), 8);
  out.insert(out.end(), text.begin(), text.end());
  for (const SafetensorsTensor &t : tensors) {
    out.insert(out.end(), t.data.begin(), t.data.end());
  }
  return out;
}

FileFormat parse_format(const std::string &name) {
  if (name == "raw") return FileFormat::Raw;
  if (name == "safetensors") return FileFormat::Safetensors;
  if (name == "ztbe") return FileFormat::Ztbe;
  throw InvalidArgument("unknown format '" + name + "'");
}

FileFormat detect_format(const std::filesystem::path &path,
                         std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 4 && bytes[0] == 'Z' && bytes[1] == 'T' && bytes[2] == 'B' &&
      bytes[3] == 'E') {
    return FileFormat::Ztbe;
  }
  if (path.extension() == ".safetensors") {
    return FileFormat::Safetensors;
  }
  return FileFormat::Raw;
}

} // namespace ztbe

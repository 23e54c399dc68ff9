#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "ztbe/tensor_io.hpp"

using namespace ztbe;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> bf16_bytes(const WeightMatrix &w) {
  std::vector<std::uint8_t> out;
  for (const BF16Word word : w.data) {
    out.push_back(static_cast<std::uint8_t>(word.bits));
    out.push_back(static_cast<std::uint8_t>(word.bits >> 8));
  }
  return out;
}

} // namespace

TEST(RawTensor, RoundTrip) {
  std::mt19937_64 rng(1);
  const auto w = ztbe::testing::mixed_matrix(7, 9, rng);
  const auto bytes = encode_raw_tensor(w);
  ASSERT_EQ(bytes.size(), 8u + 2 * 63);
  EXPECT_EQ(bytes[0], 7);
  EXPECT_EQ(bytes[4], 9);
  EXPECT_EQ(parse_raw_tensor(bytes), w);
}

TEST(RawTensor, LengthMismatch) {
  auto bytes = encode_raw_tensor(ztbe::testing::filled(2, 2, 1));
  bytes.pop_back();
  EXPECT_THROW(parse_raw_tensor(bytes), IoError);
  EXPECT_THROW(parse_raw_tensor(std::vector<std::uint8_t>(5)), IoError);
}

TEST(Files, ReadWrite) {
  const fs::path p = fs::temp_directory_path() / "ztbe_test_files.bin";
  const std::vector<std::uint8_t> data{1, 2, 3, 0, 255};
  write_file(p, data);
  EXPECT_EQ(read_file(p), data);
  fs::remove(p);
  EXPECT_THROW(read_file(p), IoError);
  EXPECT_THROW(write_file("/nonexistent-dir/x", data), IoError);
}

TEST(Safetensors, LoadsBf16Tensors) {
  std::mt19937_64 rng(2);
  const auto a = ztbe::testing::mixed_matrix(3, 4, rng);
  const auto b = ztbe::testing::mixed_matrix(1, 6, rng);
  const std::vector<SafetensorsTensor> tensors{
      {"z.weight", "BF16", {3, 4}, bf16_bytes(a)},
      {"a.bias", "BF16", {6}, bf16_bytes(b)},
      {"f32", "F32", {2}, std::vector<std::uint8_t>(8)},
  };
  const SafetensorsFile file(encode_safetensors(tensors));
  ASSERT_EQ(file.entries().size(), 3u);
  EXPECT_EQ(file.entries()[0].name, "a.bias");
  EXPECT_EQ(file.load_bf16("z.weight"), a);
  const auto bias = file.load_bf16("a.bias");
  EXPECT_EQ(bias.rows, 1u);
  EXPECT_EQ(bias.cols, 6u);
  EXPECT_EQ(bias.data, b.data);
  EXPECT_THROW(file.load_bf16("f32"), DtypeError);
  EXPECT_THROW(file.load_bf16("missing"), IoError);
}

TEST(Safetensors, FoldsLeadingDimensions) {
  const auto w = ztbe::testing::filled(6, 5, 0x3F80);
  const std::vector<SafetensorsTensor> tensors{{"t", "BF16", {2, 3, 5}, bf16_bytes(w)}};
  const auto m = SafetensorsFile(encode_safetensors(tensors)).load_bf16("t");
  EXPECT_EQ(m.rows, 6u);
  EXPECT_EQ(m.cols, 5u);
}

TEST(Safetensors, IgnoresMetadata) {
  const std::string header =
      R"({"__metadata__":{"format":"pt"},"t":{"dtype":"BF16","shape":[1],"data_offsets":[0,2]}})";
  std::vector<std::uint8_t> bytes(8);
  bytes[0] = static_cast<std::uint8_t>(header.size());
  bytes.insert(bytes.end(), header.begin(), header.end());
  bytes.push_back(0x80);
  bytes.push_back(0x3F);
  const SafetensorsFile file(bytes);
  ASSERT_EQ(file.entries().size(), 1u);
  EXPECT_EQ(file.load_bf16("t").data[0].bits, 0x3F80);
}

TEST(Safetensors, MalformedInputs) {
  EXPECT_THROW(SafetensorsFile(std::vector<std::uint8_t>(4)), IoError);
  std::vector<std::uint8_t> huge(16, 0);
  huge[0] = 100;
  EXPECT_THROW(SafetensorsFile{huge}, IoError);

  const std::string bad_json = "{nope";
  std::vector<std::uint8_t> bytes(8);
  bytes[0] = static_cast<std::uint8_t>(bad_json.size());
  bytes.insert(bytes.end(), bad_json.begin(), bad_json.end());
  EXPECT_THROW(SafetensorsFile{bytes}, IoError);

  const std::vector<SafetensorsTensor> wrong_shape{
      {"t", "BF16", {3, 3}, std::vector<std::uint8_t>(16)}};
  EXPECT_THROW(SafetensorsFile(encode_safetensors(wrong_shape)).load_bf16("t"), IoError);
}

TEST(Formats, ParseAndDetect) {
  EXPECT_EQ(parse_format("raw"), FileFormat::Raw);
  EXPECT_EQ(parse_format("safetensors"), FileFormat::Safetensors);
  EXPECT_EQ(parse_format("ztbe"), FileFormat::Ztbe);
  EXPECT_THROW(parse_format("npy"), InvalidArgument);
  const std::vector<std::uint8_t> magic{'Z', 'T', 'B', 'E', 1};
  EXPECT_EQ(detect_format("x.safetensors", magic), FileFormat::Ztbe);
  EXPECT_EQ(detect_format("x.safetensors", {}), FileFormat::Safetensors);
  EXPECT_EQ(detect_format("x.bin", {}), FileFormat::Raw);
}

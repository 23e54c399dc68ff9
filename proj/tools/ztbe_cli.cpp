#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ztbe/codec.hpp"
#include "ztbe/error.hpp"
#include "ztbe/exponent_analysis.hpp"
#include "ztbe/format.hpp"
#include "ztbe/fused_exec.hpp"
#include "ztbe/perf_model.hpp"
#include "ztbe/synthetic.hpp"
#include "ztbe/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitMismatch = 2;

struct NamedMatrix {
  std::string name;
  ztbe::WeightMatrix matrix;
};

struct InputSpec {
  std::string path;
  std::string format = "auto";
  std::string tensor;
};

ztbe::FileFormat resolve_format(const InputSpec &in, std::span<const std::uint8_t> bytes) {
  return in.format == "auto" ? ztbe::detect_format(in.path, bytes)
                             : ztbe::parse_format(in.format);
}

// Every selected tensor of an input file, decoded if the file is a container.
std::vector<NamedMatrix> load_matrices(const InputSpec &in) {
  auto bytes = ztbe::read_file(in.path);
  switch (resolve_format(in, bytes)) {
  case ztbe::FileFormat::Raw:
    return {{fs::path(in.path).stem().string(), ztbe::parse_raw_tensor(bytes)}};
  case ztbe::FileFormat::Ztbe:
    return {{fs::path(in.path).stem().string(),
             ztbe::decompress_reference(ztbe::deserialize(bytes))}};
  case ztbe::FileFormat::Safetensors: {
    const ztbe::SafetensorsFile file(std::move(bytes));
    std::vector<NamedMatrix> out;
    if (!in.tensor.empty()) {
      out.push_back({in.tensor, file.load_bf16(in.tensor)});
      return out;
    }
    for (const auto &e : file.entries()) {
      out.push_back({e.name, file.load_bf16(e.name)});
    }
    if (out.empty()) {
      throw ztbe::IoError("safetensors file holds no tensors");
    }
    return out;
  }
  }
  return {};
}

std::string sanitize(std::string name) {
  for (char &c : name) {
    if (c == '/' || c == '\\' || c == ':') {
      c = '_';
    }
  }
  return name;
}

json window_json(const ztbe::ExponentWindow &w, double coverage) {
  return {{"base_exp", w.base_exp},
          {"first", w.first()},
          {"last", w.last()},
          {"coverage", coverage}};
}

json compression_summary(const std::string &name, const ztbe::WeightMatrix &w,
                         const ztbe::CompressedMatrix &cm, std::size_t bytes) {
  const auto hist = ztbe::compute_histogram(w.data);
  const auto window = ztbe::select_window(hist);
  return {{"tensor", name},
          {"rows", w.rows},
          {"cols", w.cols},
          {"window", window_json(window, ztbe::window_coverage(hist, window))},
          {"r3", ztbe::coverage_ratio_topk(hist, 3)},
          {"entropy_bits", ztbe::shannon_entropy(hist)},
          {"payload_bits_per_element", ztbe::bits_per_element(cm)},
          {"compression_ratio", ztbe::compression_ratio(cm)},
          {"container_bytes", bytes},
          {"raw_bytes", 2 * w.data.size()}};
}

json analysis(const std::string &name, const ztbe::WeightMatrix &w) {
  const auto hist = ztbe::compute_histogram(w.data);
  const auto window = ztbe::select_window(hist);
  json histogram = json::array();
  for (unsigned e = 0; e < ztbe::kExponentCount; ++e) {
    if (hist.counts[e] != 0) {
      histogram.push_back({e, hist.counts[e]});
    }
  }
  json topk = json::array();
  json avg_bits = json::array();
  for (int n = 1; n <= 8; ++n) {
    const double r = ztbe::coverage_ratio_topk(hist, n);
    topk.push_back({{"n", n}, {"r", r}});
    avg_bits.push_back({{"n", n}, {"average_bits", ztbe::average_bits(n, r)}});
  }
  return {{"tensor", name},
          {"elements", hist.total},
          {"histogram", histogram},
          {"entropy_bits", ztbe::shannon_entropy(hist)},
          {"top_k_coverage", topk},
          {"top7_contiguous", ztbe::top_k_contiguous(hist, 7)},
          {"window", window_json(window, ztbe::window_coverage(hist, window))},
          {"average_bits", avg_bits}};
}

void print_json(const json &j) { std::cout << j.dump(2) << '\n'; }

void add_input(CLI::App *cmd, InputSpec &in) {
  cmd->add_option("--input", in.path, "Input file")->required();
  cmd->add_option("--format", in.format, "Input format")
      ->check(CLI::IsMember({"auto", "raw", "safetensors", "ztbe"}));
  cmd->add_option("--tensor", in.tensor, "Safetensors tensor name");
}

int cmd_compress(const InputSpec &in, const std::string &output, unsigned workers) {
  const auto matrices = load_matrices(in);
  const bool to_directory = matrices.size() > 1 ||
                            (resolve_format(in, ztbe::read_file(in.path)) ==
                                 ztbe::FileFormat::Safetensors &&
                             in.tensor.empty());
  if (to_directory) {
    fs::create_directories(output);
  }
  json report = json::array();
  for (const auto &[name, w] : matrices) {
    const auto cm = ztbe::compress(w, {workers});
    const auto bytes = ztbe::serialize(cm);
    const fs::path target =
        to_directory ? fs::path(output) / (sanitize(name) + ".ztbe") : fs::path(output);
    ztbe::write_file(target, bytes);
    json summary = compression_summary(name, w, cm, bytes.size());
    summary["output"] = target.string();
    report.push_back(summary);
  }
  print_json(report.size() == 1 ? report[0] : report);
  return 0;
}

int cmd_decompress(const InputSpec &in, const std::string &output) {
  const auto cm = ztbe::deserialize(ztbe::read_file(in.path));
  ztbe::write_file(output, ztbe::encode_raw_tensor(ztbe::decompress_reference(cm)));
  return 0;
}

int cmd_verify(const InputSpec &in, unsigned workers) {
  const auto bytes = ztbe::read_file(in.path);
  json report = json::array();
  bool ok = true;
  if (resolve_format(in, bytes) == ztbe::FileFormat::Ztbe) {
    json entry{{"input", in.path}};
    try {
      const auto cm = ztbe::deserialize(bytes);
      const auto reference = ztbe::decompress_reference(cm);
      const auto warp = ztbe::decompress_warp(cm);
      const auto diff = ztbe::first_difference(reference, warp);
      const auto again = ztbe::verify_roundtrip(reference, {workers});
      entry["decoders_agree"] = !diff.has_value();
      entry["decoded_roundtrip"] = again.ok;
      entry["compression_ratio"] = ztbe::compression_ratio(cm);
      if (diff) {
        entry["first_mismatch"] = {diff->first, diff->second};
      }
      ok = !diff && again.ok;
    } catch (const ztbe::Error &e) {
      entry["error"] = e.what();
      ok = false;
    }
    entry["ok"] = ok;
    report.push_back(entry);
  } else {
    for (const auto &[name, w] : load_matrices(in)) {
      const auto r = ztbe::verify_roundtrip(w, {workers});
      json entry{{"tensor", name},
                 {"ok", r.ok},
                 {"compression_ratio", r.ratio},
                 {"r3", r.r3},
                 {"window", window_json(r.window, r.window_coverage)}};
      if (!r.ok) {
        entry["failed_stage"] = r.stage;
      }
      if (r.first_mismatch) {
        entry["first_mismatch"] = {r.first_mismatch->first, r.first_mismatch->second};
      }
      ok = ok && r.ok;
      report.push_back(entry);
    }
  }
  print_json(report.size() == 1 ? report[0] : report);
  return ok ? 0 : kExitMismatch;
}

int cmd_analyze(const InputSpec &in) {
  json report = json::array();
  for (const auto &[name, w] : load_matrices(in)) {
    report.push_back(analysis(name, w));
  }
  print_json(report.size() == 1 ? report[0] : report);
  return 0;
}

int cmd_gemm_check(const InputSpec &weights, const std::string &activations,
                   const std::string &mode, std::uint32_t threshold_n) {
  const auto wbytes = ztbe::read_file(weights.path);
  ztbe::CompressedMatrix cm;
  if (resolve_format(weights, wbytes) == ztbe::FileFormat::Ztbe) {
    cm = ztbe::deserialize(wbytes);
  } else {
    cm = ztbe::compress(load_matrices(weights).front().matrix);
  }
  const auto x = ztbe::to_activations(ztbe::parse_raw_tensor(ztbe::read_file(activations)));
  const ztbe::StageDecision decision{threshold_n};
  const auto selected = ztbe::stage_select(x.n_dim, decision);

  const auto dense = ztbe::dense_gemm_ref(ztbe::decompress_reference(cm), x);
  json report{{"m", cm.header.logical_rows},
              {"k", cm.header.logical_cols},
              {"n", x.n_dim},
              {"threshold_n", threshold_n},
              {"stage_decision", ztbe::to_string(selected)}};
  bool ok = true;
  const bool run_fused = mode == "all" || mode == "fused" ||
                         (mode == "auto" && selected == ztbe::ExecutionMode::Fused);
  const bool run_decoupled = mode == "all" || mode == "decoupled" ||
                             (mode == "auto" && selected == ztbe::ExecutionMode::Decoupled);
  if (run_fused) {
    ztbe::FusedStats stats;
    const auto y = ztbe::fused_gemm(cm, x, &stats);
    const bool equal = ztbe::bitwise_equal(dense, y);
    report["fused_equals_dense"] = equal;
    report["fused_peak_working_set"] = stats.peak_live_elements;
    report["fused_fragments_decoded"] = stats.fragments_decoded;
    ok = ok && equal && stats.peak_live_elements <= ztbe::kBlockElements;
  }
  if (run_decoupled) {
    ztbe::DecoupledStats stats;
    const auto y = ztbe::decoupled_pipeline(cm, x, &stats);
    const bool equal = ztbe::bitwise_equal(dense, y);
    report["decoupled_equals_dense"] = equal;
    report["decoupled_weight_traffic_bytes"] = stats.traffic.weight_bytes();
    report["decoupled_decode_to_gemm_ratio"] = stats.decode_to_gemm_ratio();
    ok = ok && equal;
  }
  report["ok"] = ok;
  print_json(report);
  return ok ? 0 : kExitMismatch;
}

int cmd_roofline(std::uint64_t m, std::uint64_t k, const std::vector<std::uint64_t> &n_values,
                 double cr, double peak_flops, double bandwidth, const std::string &output) {
  std::optional<ztbe::HardwareProfile> hw;
  if (peak_flops > 0 || bandwidth > 0) {
    hw = ztbe::HardwareProfile{peak_flops, bandwidth};
  }
  const auto rows = ztbe::degradation_report(m, k, n_values, {cr}, hw);
  const std::string csv = ztbe::to_csv(rows);
  if (output.empty()) {
    std::cout << csv;
  } else {
    ztbe::write_file(output, std::span(reinterpret_cast<const std::uint8_t *>(csv.data()),
                                       csv.size()));
  }
  return 0;
}

int cmd_warp_trace(const InputSpec &in, std::uint32_t block_row, std::uint32_t block_col,
                   std::uint32_t tct, std::uint32_t frag, bool csv) {
  const auto cm = ztbe::deserialize(ztbe::read_file(in.path));
  if (block_row >= cm.block_rows() || block_col >= cm.block_cols() ||
      tct >= ztbe::kTensorCoreTilesPerBlock || frag >= ztbe::kFragsPerTensorCoreTile) {
    throw ztbe::RangeError("warp-trace: tile indices out of range");
  }
  const std::size_t block = std::size_t{block_row} * cm.block_cols() + block_col;
  const auto input =
      ztbe::fragment_input(cm, block, tct * ztbe::kFragsPerTensorCoreTile + frag);
  const auto trace = ztbe::trace_fragment_warp(input);
  char line[256];
  if (csv) {
    std::cout << "lane,k,p,bit,path,index,codeword,exponent,word\n";
    for (const auto &s : trace) {
      std::snprintf(line, sizeof line, "%u,%u,%u,%d,%s,%u,%u,%d,0x%04X\n", s.lane, s.slot,
                    s.pos, s.high ? 1 : 0, s.high ? "H" : "L", s.high ? s.idx_h : s.idx_l,
                    s.codeword, s.exponent, static_cast<unsigned>(s.word.bits));
      std::cout << line;
    }
    return 0;
  }
  std::snprintf(line, sizeof line,
                "fragment block=(%u,%u) tct=%u frag=%u  M=0x%016llX  base_exp=%d  "
                "h_start=%u l_start=%u\n",
                block_row, block_col, tct, frag,
                static_cast<unsigned long long>(input.code.indicator()), input.base_exp,
                input.h_start, input.l_start);
  std::cout << line;
  for (const auto &s : trace) {
    if (s.high) {
      std::snprintf(line, sizeof line,
                    "thread %2u a%u: bit %2u set, idx_H = popc(M & mask) = %2u, c = %u%u%u "
                    "(%u), e = %d + %u = %d -> 0x%04X\n",
                    s.lane, s.slot, s.pos, s.idx_h, (s.codeword >> 2) & 1u,
                    (s.codeword >> 1) & 1u, s.codeword & 1u, s.codeword, input.base_exp,
                    s.codeword, s.exponent, static_cast<unsigned>(s.word.bits));
    } else {
      std::snprintf(line, sizeof line,
                    "thread %2u a%u: bit %2u unset, idx_L = %u - %u = %2u, fallback "
                    "-> 0x%04X\n",
                    s.lane, s.slot, s.pos, s.pos, s.idx_h, s.idx_l,
                    static_cast<unsigned>(s.word.bits));
    }
    std::cout << line;
  }
  return 0;
}

int cmd_synth(std::uint32_t rows, std::uint32_t cols, double sigma, std::uint64_t seed,
              double specials, const std::string &output) {
  std::mt19937_64 rng(seed);
  auto w = ztbe::gaussian_matrix(rows, cols, sigma, rng);
  if (specials > 0) {
    ztbe::inject_specials(w, specials, rng);
  }
  ztbe::write_file(output, ztbe::encode_raw_tensor(w));
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Lossless BF16 weight codec with triple-bitmap exponent encoding"};
  app.require_subcommand(1);

  InputSpec in;
  std::string output;
  unsigned workers = 1;
  auto add_workers = [&](CLI::App *cmd) {
    cmd->add_option("--workers", workers, "Worker threads")
        ->envname("ZTBE_WORKERS")
        ->check(CLI::PositiveNumber);
  };

  auto *compress = app.add_subcommand("compress", "Compress a raw or safetensors tensor");
  add_input(compress, in);
  compress->add_option("--output", output, "Output file (or directory for safetensors)")
      ->required();
  add_workers(compress);

  auto *decompress = app.add_subcommand("decompress", "Decode a ZTBE container to raw");
  add_input(decompress, in);
  decompress->add_option("--output", output, "Raw output file")->required();

  auto *verify = app.add_subcommand("verify", "Round trip through both decoders");
  add_input(verify, in);
  add_workers(verify);

  auto *analyze = app.add_subcommand("analyze", "Exponent distribution statistics");
  add_input(analyze, in);

  std::string activations;
  std::string mode = "all";
  std::uint32_t threshold_n = 128;
  auto *gemm = app.add_subcommand("gemm-check", "Dense vs fused vs decoupled GEMM");
  gemm->add_option("--weights,--input", in.path, "Weights (raw, safetensors or ztbe)")
      ->required();
  gemm->add_option("--format", in.format, "Weights format")
      ->check(CLI::IsMember({"auto", "raw", "safetensors", "ztbe"}));
  gemm->add_option("--tensor", in.tensor, "Safetensors tensor name");
  gemm->add_option("--activations", activations, "Raw K x N activation tensor")->required();
  gemm->add_option("--mode", mode, "Paths to run")
      ->check(CLI::IsMember({"all", "auto", "fused", "decoupled"}));
  gemm->add_option("--threshold-n", threshold_n, "Stage threshold on N")
      ->check(CLI::PositiveNumber);

  std::uint64_t m_dim = 4096;
  std::uint64_t k_dim = 4096;
  std::vector<std::uint64_t> n_values{8, 16, 32, 64};
  double cr = 1.51;
  double peak_flops = 0;
  double bandwidth = 0;
  auto *roofline = app.add_subcommand("roofline", "Compute-intensity degradation table");
  roofline->add_option("--m", m_dim, "Output rows M")->check(CLI::PositiveNumber);
  roofline->add_option("--k", k_dim, "Hidden dim K")->check(CLI::PositiveNumber);
  roofline->add_option("--n", n_values, "Token counts N")->delimiter(',');
  roofline->add_option("--cr", cr, "Compression ratio")->check(CLI::PositiveNumber);
  roofline->add_option("--peak-flops", peak_flops, "Peak FLOP/s");
  roofline->add_option("--mem-bandwidth", bandwidth, "Memory bandwidth in bytes/s");
  roofline->add_option("--output", output, "CSV output file (default stdout)");

  std::uint32_t block_row = 0, block_col = 0, tct = 0, frag = 0;
  bool trace_csv = false;
  auto *trace = app.add_subcommand("warp-trace", "Per-lane decode trace of one FragTile");
  add_input(trace, in);
  trace->add_option("--block-row", block_row);
  trace->add_option("--block-col", block_col);
  trace->add_option("--tct", tct, "TensorCoreTile index within the BlockTile (0..15)");
  trace->add_option("--frag", frag, "FragTile index within the TensorCoreTile (0..3)");
  trace->add_flag("--csv", trace_csv, "CSV output");

  std::uint32_t rows = 1024, cols = 1024;
  double sigma = 0.02, specials = 0.0;
  std::uint64_t seed = 1;
  auto *synth = app.add_subcommand("synth", "Write a Gaussian BF16 raw tensor");
  synth->add_option("--rows", rows)->check(CLI::PositiveNumber);
  synth->add_option("--cols", cols)->check(CLI::PositiveNumber);
  synth->add_option("--sigma", sigma)->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed);
  synth->add_option("--specials", specials, "Fraction of special patterns")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--output", output)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*compress) return cmd_compress(in, output, workers);
    if (*decompress) return cmd_decompress(in, output);
    if (*verify) return cmd_verify(in, workers);
    if (*analyze) return cmd_analyze(in);
    if (*gemm) return cmd_gemm_check(in, activations, mode, threshold_n);
    if (*roofline) {
      return cmd_roofline(m_dim, k_dim, n_values, cr, peak_flops, bandwidth, output);
    }
    if (*trace) return cmd_warp_trace(in, block_row, block_col, tct, frag, trace_csv);
    if (*synth) return cmd_synth(rows, cols, sigma, seed, specials, output);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

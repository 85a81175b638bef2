#pragma once

// CWRS v1: frozen per-layer, per-token f32 vectors for a corpus.
//
//   "CWRSTOR1"                      8 bytes
//   header length                   u32 LE
//   header                          UTF-8 JSON object
//   per sentence:
//     T_s                           u32 LE
//     L * T_s * d values            f32 LE, layer-major
//
// The payload size is fully determined by the header and the T_s prefixes;
// readers reject trailing or missing bytes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "probekit/error.hpp"
#include "probekit/tensor.hpp"

namespace probekit::store {

inline constexpr char kMagic[8] = {'C', 'W', 'R', 'S', 'T', 'O', 'R', '1'};
inline constexpr int kVersion = 1;

struct StoreHeader {
  int version = kVersion;
  std::string model_name;
  std::size_t num_layers = 0;
  std::size_t dim = 0;
  std::size_t num_sentences = 0;
  std::string dtype = "f32";
  std::string byte_order = "LE";
};

/// Canonical header encoding (sorted keys, no whitespace).
std::string encode_header(const StoreHeader& header);

/// One sentence: `num_tokens` rows per layer, `values` laid out [layer][token][dim].
struct SentenceBlock {
  std::size_t num_tokens = 0;
  std::vector<float> values;
};

enum class StoreErrc { bad_magic, truncated, inconsistent, unsupported };

class StoreError : public DataError {
 public:
  StoreError(StoreErrc code, const std::string& what) : DataError(what), code_(code) {}
  StoreErrc code() const noexcept { return code_; }

 private:
  StoreErrc code_;
};

/// Serializes a full store. All blocks are validated before any byte is produced.
std::vector<std::byte> write_store(const StoreHeader& header, std::span<const SentenceBlock> sentences);

void write_store_file(const std::filesystem::path& path, const StoreHeader& header,
                      std::span<const SentenceBlock> sentences);

class ReprStore {
 public:
  static ReprStore read(std::vector<std::byte> bytes);
  static ReprStore open(const std::filesystem::path& path);

  const StoreHeader& header() const noexcept { return header_; }
  const std::string& raw_header() const noexcept { return raw_header_; }
  std::size_t num_sentences() const noexcept { return token_counts_.size(); }
  std::size_t num_layers() const noexcept { return header_.num_layers; }
  std::size_t dim() const noexcept { return header_.dim; }

  std::span<const std::size_t> token_counts() const noexcept { return token_counts_; }
  /// Byte offset of each sentence's first f32 value.
  std::span<const std::size_t> sentence_offsets() const noexcept { return offsets_; }

  /// T_s × d copy of one layer of one sentence.
  tensor::Tensor2D get_layer(std::size_t sent, std::size_t layer) const;
  void copy_layer(std::size_t sent, std::size_t layer, std::span<float> out) const;
  SentenceBlock sentence(std::size_t sent) const;

 private:
  void check_index(std::size_t sent, std::size_t layer) const;

  std::vector<std::byte> bytes_;
  StoreHeader header_;
  std::string raw_header_;
  std::vector<std::size_t> token_counts_;
  std::vector<std::size_t> offsets_;
};

/// Re-serializes a store, keeping its original header bytes verbatim.
std::vector<std::byte> write_store(const ReprStore& store);

}  // namespace probekit::store

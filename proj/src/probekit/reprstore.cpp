#include "probekit/reprstore.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <nlohmann/json.hpp>

namespace probekit::store {
namespace {

using json = nlohmann::json;

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::byte* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::to_integer<std::uint8_t>(p[i])) << (8 * i);
  return v;
}

void put_f32(std::vector<std::byte>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

float get_f32(const std::byte* p) { return std::bit_cast<float>(get_u32(p)); }

void encode(std::vector<std::byte>& out, const std::string& header, std::span<const SentenceBlock> sentences) {
  out.insert(out.end(), reinterpret_cast<const std::byte*>(kMagic), reinterpret_cast<const std::byte*>(kMagic) + 8);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), reinterpret_cast<const std::byte*>(header.data()),
             reinterpret_cast<const std::byte*>(header.data()) + header.size());
  for (const auto& s : sentences) {
    put_u32(out, static_cast<std::uint32_t>(s.num_tokens));
    for (float f : s.values) put_f32(out, f);
  }
}

void validate(const StoreHeader& header, std::span<const SentenceBlock> sentences) {
  if (header.version != kVersion) throw DataError("unsupported CWRS version " + std::to_string(header.version));
  if (header.num_layers < 1) throw DataError("store needs at least one layer");
  if (header.dim < 1) throw DataError("store dimension must be positive");
  if (header.dtype != "f32" || header.byte_order != "LE") throw DataError("only f32 little-endian stores are supported");
  if (header.num_sentences != sentences.size())
    throw DataError("header declares " + std::to_string(header.num_sentences) + " sentences but " +
                    std::to_string(sentences.size()) + " blocks were given");
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto& s = sentences[i];
    if (s.num_tokens > std::numeric_limits<std::uint32_t>::max())
      throw DataError("sentence " + std::to_string(i) + " is too long");
    const std::size_t want = header.num_layers * s.num_tokens * header.dim;
    if (s.values.size() != want)
      throw DataError("sentence " + std::to_string(i) + ": expected " + std::to_string(want) +
                      " values (L x T x d), got " + std::to_string(s.values.size()));
  }
}

StoreHeader parse_header(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw StoreError(StoreErrc::inconsistent, std::string("CWRS header is not valid JSON: ") + e.what());
  }
  StoreHeader h;
  try {
    h.version = j.at("version").get<int>();
    h.model_name = j.value("model_name", std::string{});
    h.num_layers = j.at("num_layers").get<std::size_t>();
    h.dim = j.at("dim").get<std::size_t>();
    h.num_sentences = j.at("num_sentences").get<std::size_t>();
    h.dtype = j.value("dtype", std::string("f32"));
    h.byte_order = j.value("byte_order", std::string("LE"));
  } catch (const json::exception& e) {
    throw StoreError(StoreErrc::inconsistent, std::string("CWRS header missing or malformed field: ") + e.what());
  }
  if (h.version != kVersion)
    throw StoreError(StoreErrc::unsupported, "unsupported CWRS version " + std::to_string(h.version));
  if (h.dtype != "f32" || h.byte_order != "LE")
    throw StoreError(StoreErrc::unsupported, "unsupported CWRS encoding " + h.dtype + "/" + h.byte_order);
  if (h.num_layers < 1 || h.dim < 1)
    throw StoreError(StoreErrc::inconsistent, "CWRS header needs num_layers >= 1 and dim >= 1");
  return h;
}

}  // namespace

std::string encode_header(const StoreHeader& header) {
  json j;
  j["version"] = header.version;
  j["model_name"] = header.model_name;
  j["num_layers"] = header.num_layers;
  j["dim"] = header.dim;
  j["num_sentences"] = header.num_sentences;
  j["dtype"] = header.dtype;
  j["byte_order"] = header.byte_order;
  return j.dump();
}

std::vector<std::byte> write_store(const StoreHeader& header, std::span<const SentenceBlock> sentences) {
  validate(header, sentences);
  std::vector<std::byte> out;
  encode(out, encode_header(header), sentences);
  return out;
}

std::vector<std::byte> write_store(const ReprStore& store) {
  std::vector<SentenceBlock> blocks;
  blocks.reserve(store.num_sentences());
  for (std::size_t s = 0; s < store.num_sentences(); ++s) blocks.push_back(store.sentence(s));
  validate(store.header(), blocks);
  std::vector<std::byte> out;
  encode(out, store.raw_header(), blocks);
  return out;
}

void write_store_file(const std::filesystem::path& path, const StoreHeader& header,
                      std::span<const SentenceBlock> sentences) {
  const auto bytes = write_store(header, sentences);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

ReprStore ReprStore::open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open store '" + path.string() + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> bytes(raw.size());
  if (!raw.empty()) std::memcpy(bytes.data(), raw.data(), raw.size());
  return read(std::move(bytes));
}

ReprStore ReprStore::read(std::vector<std::byte> bytes) {
  const std::size_t size = bytes.size();
  auto truncated = [size](std::size_t expected, const std::string& what) {
    return StoreError(StoreErrc::truncated, "truncated CWRS payload (" + what + "): expected at least " +
                                                std::to_string(expected) + " bytes, got " + std::to_string(size));
  };
  if (size < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw StoreError(StoreErrc::bad_magic, "not a CWRS file");
  if (size < 12) throw truncated(12, "header length");
  const std::size_t header_len = get_u32(bytes.data() + 8);
  if (size < 12 + header_len) throw truncated(12 + header_len, "header");

  ReprStore store;
  store.raw_header_.assign(reinterpret_cast<const char*>(bytes.data() + 12), header_len);
  store.header_ = parse_header(store.raw_header_);
  const auto& h = store.header_;

  std::size_t pos = 12 + header_len;
  store.token_counts_.reserve(h.num_sentences);
  store.offsets_.reserve(h.num_sentences);
  for (std::size_t s = 0; s < h.num_sentences; ++s) {
    if (size < pos + 4) throw truncated(pos + 4, "token count of sentence " + std::to_string(s));
    const std::size_t tokens = get_u32(bytes.data() + pos);
    pos += 4;
    const std::size_t block = h.num_layers * tokens * h.dim * sizeof(float);
    if (size < pos + block) {
      // Report the full expected file size when the remaining sentences could not be sized.
      throw truncated(pos + block, "sentence " + std::to_string(s) + " values");
    }
    store.token_counts_.push_back(tokens);
    store.offsets_.push_back(pos);
    pos += block;
  }
  if (pos != size)
    throw StoreError(StoreErrc::inconsistent, "header declares " + std::to_string(h.num_sentences) +
                                                  " sentences ending at byte " + std::to_string(pos) +
                                                  " but file has " + std::to_string(size) + " bytes");
  store.bytes_ = std::move(bytes);
  return store;
}

void ReprStore::check_index(std::size_t sent, std::size_t layer) const {
  if (sent >= num_sentences())
    throw IndexError("sentence index " + std::to_string(sent) + " out of range [0, " +
                     std::to_string(num_sentences()) + ")");
  if (layer >= header_.num_layers)
    throw IndexError("layer index " + std::to_string(layer) + " out of range [0, " +
                     std::to_string(header_.num_layers) + ")");
}

void ReprStore::copy_layer(std::size_t sent, std::size_t layer, std::span<float> out) const {
  check_index(sent, layer);
  const std::size_t n = token_counts_[sent] * header_.dim;
  if (out.size() != n) throw DataError("copy_layer: output buffer has wrong size");
  const std::byte* p = bytes_.data() + offsets_[sent] + layer * n * sizeof(float);
  if constexpr (std::endian::native == std::endian::little) {
    if (n) std::memcpy(out.data(), p, n * sizeof(float));
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = get_f32(p + 4 * i);
  }
}

tensor::Tensor2D ReprStore::get_layer(std::size_t sent, std::size_t layer) const {
  check_index(sent, layer);
  tensor::Tensor2D m(static_cast<Eigen::Index>(token_counts_[sent]), static_cast<Eigen::Index>(header_.dim));
  copy_layer(sent, layer, std::span<float>(m.data(), static_cast<std::size_t>(m.size())));
  return m;
}

SentenceBlock ReprStore::sentence(std::size_t sent) const {
  check_index(sent, 0);
  SentenceBlock b;
  b.num_tokens = token_counts_[sent];
  b.values.resize(header_.num_layers * b.num_tokens * header_.dim);
  const std::size_t per_layer = b.num_tokens * header_.dim;
  for (std::size_t l = 0; l < header_.num_layers; ++l)
    copy_layer(sent, l, std::span<float>(b.values.data() + l * per_layer, per_layer));
  return b;
}

}  // namespace probekit::store

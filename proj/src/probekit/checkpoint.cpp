#include "probekit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace probekit::checkpoint {
namespace {

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::byte* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::to_integer<std::uint8_t>(p[i])) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::byte> encode(nlohmann::json header, std::span<const Parameter> params) {
  auto list = nlohmann::json::array();
  for (const auto& p : params) list.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  header["params"] = std::move(list);
  const std::string text = header.dump();
  std::vector<std::byte> out;
  out.insert(out.end(), reinterpret_cast<const std::byte*>(kMagic), reinterpret_cast<const std::byte*>(kMagic) + 8);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), reinterpret_cast<const std::byte*>(text.data()),
             reinterpret_cast<const std::byte*>(text.data()) + text.size());
  for (const auto& p : params)
    for (Eigen::Index i = 0; i < p.value.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(p.value.data()[i]));
  return out;
}

void save(const std::filesystem::path& path, const nlohmann::json& header, std::span<const Parameter> params) {
  const auto bytes = encode(header, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Loaded decode(std::span<const std::byte> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw DataError("not a parameter checkpoint");
  const std::size_t len = get_u32(bytes.data() + 8);
  if (bytes.size() < 12 + len) throw DataError("truncated checkpoint header");
  Loaded out;
  try {
    out.header = nlohmann::json::parse(std::string(reinterpret_cast<const char*>(bytes.data() + 12), len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  std::size_t pos = 12 + len;
  for (const auto& entry : out.header.at("params")) {
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    tensor::Tensor2D v(rows, cols);
    const std::size_t n = static_cast<std::size_t>(rows * cols);
    if (bytes.size() < pos + 4 * n) throw DataError("truncated checkpoint payload");
    for (std::size_t i = 0; i < n; ++i) v.data()[i] = std::bit_cast<float>(get_u32(bytes.data() + pos + 4 * i));
    pos += 4 * n;
    out.params.emplace_back(entry.at("name").get<std::string>(), std::move(v));
  }
  if (pos != bytes.size()) throw DataError("trailing bytes after checkpoint payload");
  return out;
}

Loaded load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> bytes(raw.size());
  if (!raw.empty()) std::memcpy(bytes.data(), raw.data(), raw.size());
  return decode(bytes);
}

void assign(std::span<Parameter> target, const std::vector<Parameter>& loaded) {
  if (target.size() != loaded.size()) throw DataError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].name != loaded[i].name || target[i].value.rows() != loaded[i].value.rows() ||
        target[i].value.cols() != loaded[i].value.cols())
      throw DataError("checkpoint parameter '" + loaded[i].name + "' does not match '" + target[i].name + "'");
    target[i].value = loaded[i].value;
  }
}

}  // namespace probekit::checkpoint

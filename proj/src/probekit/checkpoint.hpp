#pragma once

// Parameter checkpoints: 8-byte magic, u32-LE header length, JSON header,
// then every parameter's values as f32-LE in header order (row-major).

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "probekit/optim.hpp"

namespace probekit::checkpoint {

inline constexpr char kMagic[8] = {'P', 'K', 'P', 'A', 'R', 'A', 'M', '1'};

/// `header` is extended with a "params" list of {name, rows, cols}.
std::vector<std::byte> encode(nlohmann::json header, std::span<const Parameter> params);
void save(const std::filesystem::path& path, const nlohmann::json& header, std::span<const Parameter> params);

struct Loaded {
  nlohmann::json header;
  std::vector<Parameter> params;
};

Loaded decode(std::span<const std::byte> bytes);
Loaded load(const std::filesystem::path& path);

/// Copies loaded values into `target` by position, checking names and shapes.
void assign(std::span<Parameter> target, const std::vector<Parameter>& loaded);

}  // namespace probekit::checkpoint

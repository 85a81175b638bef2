#pragma once

// Config-driven orchestration behind every CLI subcommand. Each run_* reads a
// JSON config, writes its outputs under cfg["out"] and returns a summary.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace probekit::pipeline {

using Sentences = std::vector<std::vector<std::string>>;

nlohmann::json run_compile(const nlohmann::json& cfg);
nlohmann::json run_train(const nlohmann::json& cfg);
nlohmann::json run_sweep(const nlohmann::json& cfg);
nlohmann::json run_bilm_probe(const nlohmann::json& cfg);
nlohmann::json run_pretrain(const nlohmann::json& cfg);
nlohmann::json run_transfer(const nlohmann::json& cfg);
nlohmann::json run_report(const nlohmann::json& cfg);

/// Dispatches on a subcommand name (compile, train, sweep, bilm-probe,
/// pretrain, transfer, report).
nlohmann::json run(std::string_view command, const nlohmann::json& cfg);

/// cfg["seed"], else $PROBEKIT_SEED, else 1.
std::uint64_t resolve_seed(const nlohmann::json& cfg);

/// Reads a JSON config file; throws IoError / DataError.
nlohmann::json load_config(const std::filesystem::path& path);

/// One sentence per non-blank line, whitespace-tokenized; `.jsonl` paths are
/// read as compiled datasets and their sentences returned.
Sentences load_sentences(const std::filesystem::path& path);

}  // namespace probekit::pipeline

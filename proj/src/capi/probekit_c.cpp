#include "probekit/probekit.h"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "probekit/error.hpp"
#include "probekit/pipeline.hpp"
#include "probekit/reprstore.hpp"

struct pk_store {
  probekit::store::ReprStore impl;
};

namespace {

thread_local std::string g_last_error;

pk_status fail(pk_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs `f`, translating exceptions into status codes and the error message.
template <class F>
pk_status guarded(F&& f) noexcept {
  try {
    g_last_error.clear();
    f();
    return PK_OK;
  } catch (const probekit::Error& e) {
    return fail(static_cast<pk_status>(static_cast<int>(e.kind())), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(PK_ERR_DATA, e.what());
  } catch (const std::bad_alloc&) {
    return fail(PK_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(PK_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(PK_ERR_INTERNAL, "unknown error");
  }
}

pk_status null_arg(const char* name) { return fail(PK_ERR_USAGE, std::string(name) + " must not be null"); }

}  // namespace

extern "C" {

const char* pk_version(void) { return "1.0.0"; }

const char* pk_status_name(pk_status status) {
  switch (status) {
    case PK_OK: return "ok";
    case PK_ERR_INTERNAL: return "internal";
    case PK_ERR_USAGE: return "usage";
    case PK_ERR_IO: return "io";
    case PK_ERR_DATA: return "data";
    case PK_ERR_NUMERIC: return "numeric";
  }
  return "unknown";
}

const char* pk_last_error(void) { return g_last_error.c_str(); }

pk_status pk_store_open(const char* path, pk_store** out) {
  if (!path) return null_arg("path");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] { *out = new pk_store{probekit::store::ReprStore::open(path)}; });
}

pk_status pk_store_open_memory(const void* data, size_t size, pk_store** out) {
  if (!data && size) return null_arg("data");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    std::vector<std::byte> bytes(size);
    if (size) std::memcpy(bytes.data(), data, size);
    *out = new pk_store{probekit::store::ReprStore::read(std::move(bytes))};
  });
}

void pk_store_close(pk_store* store) { delete store; }

pk_status pk_store_info(const pk_store* store, size_t* num_sentences, size_t* num_layers, size_t* dim) {
  if (!store) return null_arg("store");
  if (num_sentences) *num_sentences = store->impl.num_sentences();
  if (num_layers) *num_layers = store->impl.num_layers();
  if (dim) *dim = store->impl.dim();
  g_last_error.clear();
  return PK_OK;
}

pk_status pk_store_model_name(const pk_store* store, const char** name) {
  if (!store) return null_arg("store");
  if (!name) return null_arg("name");
  *name = store->impl.header().model_name.c_str();
  g_last_error.clear();
  return PK_OK;
}

pk_status pk_store_num_tokens(const pk_store* store, size_t sentence, size_t* num_tokens) {
  if (!store) return null_arg("store");
  if (!num_tokens) return null_arg("num_tokens");
  if (sentence >= store->impl.num_sentences())
    return fail(PK_ERR_USAGE, "sentence " + std::to_string(sentence) + " out of range (store has " +
                                  std::to_string(store->impl.num_sentences()) + ")");
  *num_tokens = store->impl.token_counts()[sentence];
  g_last_error.clear();
  return PK_OK;
}

pk_status pk_store_get_layer(const pk_store* store, size_t sentence, size_t layer, float* out, size_t capacity) {
  if (!store) return null_arg("store");
  if (!out && capacity) return null_arg("out");
  return guarded([&] {
    const auto& s = store->impl;
    if (sentence >= s.num_sentences()) throw probekit::IndexError("sentence " + std::to_string(sentence) + " out of range");
    const std::size_t need = s.token_counts()[sentence] * s.dim();
    if (capacity < need)
      throw probekit::UsageError("output buffer holds " + std::to_string(capacity) + " floats, need " +
                                 std::to_string(need));
    s.copy_layer(sentence, layer, std::span<float>(out, need));
  });
}

pk_status pk_store_write(const pk_store* store, const char* path) {
  if (!store) return null_arg("store");
  if (!path) return null_arg("path");
  return guarded([&] {
    const auto bytes = probekit::store::write_store(store->impl);
    FILE* f = std::fopen(path, "wb");
    if (!f) throw probekit::IoError(std::string("cannot open '") + path + "' for writing");
    const bool ok = std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size();
    if (std::fclose(f) != 0 || !ok) throw probekit::IoError(std::string("write failed for '") + path + "'");
  });
}

pk_status pk_run(const char* command, const char* config_json, char** summary_json) {
  if (!command) return null_arg("command");
  if (!config_json) return null_arg("config_json");
  if (summary_json) *summary_json = nullptr;
  return guarded([&] {
    nlohmann::json cfg;
    try {
      cfg = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::parse_error& e) {
      throw probekit::UsageError(std::string("config is not valid JSON: ") + e.what());
    }
    const std::string summary = probekit::pipeline::run(command, cfg).dump();
    if (summary_json) {
      char* buf = static_cast<char*>(std::malloc(summary.size() + 1));
      if (!buf) throw std::bad_alloc();
      std::memcpy(buf, summary.c_str(), summary.size() + 1);
      *summary_json = buf;
    }
  });
}

void pk_free(void* ptr) { std::free(ptr); }

}  // extern "C"

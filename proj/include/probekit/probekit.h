#ifndef PROBEKIT_PROBEKIT_H
#define PROBEKIT_PROBEKIT_H

/*
 * C interface to the probekit shared library.
 *
 * Every fallible call returns a pk_status. On failure a one-line message is
 * available from pk_last_error() on the same thread until the next call.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(PROBEKIT_BUILDING)
#    define PK_API __declspec(dllexport)
#  else
#    define PK_API __declspec(dllimport)
#  endif
#else
#  define PK_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values match the CLI exit codes. */
typedef enum pk_status {
  PK_OK = 0,
  PK_ERR_INTERNAL = 1,
  PK_ERR_USAGE = 2,
  PK_ERR_IO = 3,
  PK_ERR_DATA = 4,
  PK_ERR_NUMERIC = 5
} pk_status;

typedef struct pk_store pk_store;

PK_API const char* pk_version(void);
PK_API const char* pk_status_name(pk_status status);
/* Message of the last failed call on this thread, or "" if none. */
PK_API const char* pk_last_error(void);

/* Representation stores (CWRS v1). */
PK_API pk_status pk_store_open(const char* path, pk_store** out);
PK_API pk_status pk_store_open_memory(const void* data, size_t size, pk_store** out);
PK_API void pk_store_close(pk_store* store);
PK_API pk_status pk_store_info(const pk_store* store, size_t* num_sentences, size_t* num_layers, size_t* dim);
/* The returned string lives as long as the store. */
PK_API pk_status pk_store_model_name(const pk_store* store, const char** name);
PK_API pk_status pk_store_num_tokens(const pk_store* store, size_t sentence, size_t* num_tokens);
/* Copies the T x d layer matrix (row-major) into out; capacity counts floats. */
PK_API pk_status pk_store_get_layer(const pk_store* store, size_t sentence, size_t layer, float* out,
                                    size_t capacity);
/* Re-serializes the store; the output is byte-identical to the input file. */
PK_API pk_status pk_store_write(const pk_store* store, const char* path);

/*
 * Runs a pipeline subcommand ("compile", "train", "sweep", "bilm-probe",
 * "pretrain", "transfer", "report") with a JSON object config. On success,
 * *summary_json (if non-null) receives a malloc'd JSON summary to release
 * with pk_free.
 */
PK_API pk_status pk_run(const char* command, const char* config_json, char** summary_json);
PK_API void pk_free(void* ptr);

#ifdef __cplusplus
}
#endif

#endif /* PROBEKIT_PROBEKIT_H */

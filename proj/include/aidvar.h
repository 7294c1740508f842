/* C interface to the multi-scale generation pipeline.
 *
 * All entry points are thread-compatible (distinct handles may be used from
 * distinct threads). Functions that can fail return an aid_status code and,
 * when a buffer is provided, write a NUL-terminated diagnostic into it.
 */
#ifndef AIDVAR_C_API_H
#define AIDVAR_C_API_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum aid_status {
  AID_OK = 0,
  AID_ERR_CONFIG = 1,     /* bad key, bad value, malformed config file */
  AID_ERR_DEPENDENCY = 2, /* missing prerequisite artifact or bad state */
  AID_ERR_TRAINING = 3,   /* divergence or quality-floor failure */
  AID_ERR_FORMAT = 4,     /* corrupt, mismatched, or unsupported file */
  AID_ERR_IO = 5,         /* filesystem failure */
  AID_ERR_INTERNAL = 6    /* anything else; indicates a bug */
} aid_status;

/* Opaque resolved run configuration (all sections, defaults applied). */
typedef struct aid_config aid_config;

/* Library version string, static storage. */
const char* aid_version(void);

/* Human-readable name of a status code, static storage. */
const char* aid_status_name(int status);

/* Fresh configuration holding every default. Never fails (aborts on OOM). */
aid_config* aid_config_new(void);
void aid_config_free(aid_config* cfg);

/* Applies a `section.key = value` config file over the current state. */
aid_status aid_config_load_file(aid_config* cfg, const char* path,
                                char* err, size_t err_cap);

/* Sets one value by dotted key, e.g. "trainer.steps". */
aid_status aid_config_set(aid_config* cfg, const char* dotted_key,
                          const char* value, char* err, size_t err_cap);

/* Reads one value by dotted key into `out`. Fails on unknown keys and on
 * truncation. */
aid_status aid_config_get(const aid_config* cfg, const char* dotted_key,
                          char* out, size_t out_cap);

/* Runs one pipeline subcommand:
 *   data-gen | tokenizer-train | var-pretrain | aid-train | var-generate |
 *   iscs-compute | sim-run | sim-inject | ablate-sweep | report
 * On success writes the created run directory into run_dir_out.
 * RUNS_DIR / DATA_DIR environment variables override the configured paths.
 */
aid_status aid_run(const aid_config* cfg, const char* subcommand,
                   char* run_dir_out, size_t run_dir_cap,
                   char* err, size_t err_cap);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* AIDVAR_C_API_H */

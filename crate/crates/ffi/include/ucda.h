#ifndef UCDA_H
#define UCDA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UcdaStatus {
  UCDA_STATUS_OK = 0,
  UCDA_STATUS_NULL_POINTER = 1,
  UCDA_STATUS_PARSE = 2,
  UCDA_STATUS_INFEASIBLE = 3,
  UCDA_STATUS_RUNTIME = 4,
  UCDA_STATUS_INVALID_ARGUMENT = 5,
  UCDA_STATUS_PANIC = 6,
} UcdaStatus;

/**
 * A compiled program together with the network it came from.
 */
typedef struct UcdaProgram UcdaProgram;

typedef struct UcdaTensor UcdaTensor;

typedef struct UcdaWeights UcdaWeights;

typedef struct UcdaHwConfig {
  uint32_t tn;
  uint32_t tm;
  uint32_t arrays;
  uint64_t stream_bits;
  uint64_t clock_hz;
  uint64_t if_bank_bits;
  uint64_t of_bits;
  uint64_t weight_bits;
} UcdaHwConfig;

typedef struct UcdaCycleReport {
  uint64_t weight_cycles;
  uint64_t priming_cycles;
  uint64_t compute_cycles;
  uint64_t drain_cycles;
  uint64_t transfer_cycles;
  uint64_t total_cycles;
  uint64_t multiplications;
  uint64_t additions;
  uint64_t buffer_reads;
  uint64_t buffer_writes;
} UcdaCycleReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after success.
 * Valid until the next call on the same thread.
 */
const char *ucda_last_error(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void ucda_string_free(char *s);

/**
 * Fills `out` with the default hardware configuration.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum UcdaStatus ucda_hw_config_default(struct UcdaHwConfig *out);

/**
 * # Safety
 * `cfg` must be null (defaults) or valid; `out` valid for writes.
 */
enum UcdaStatus ucda_peak_gops(const struct UcdaHwConfig *cfg, double *out);

/**
 * # Safety
 * `cfg` must be null (defaults) or valid; `out` valid for writes.
 */
enum UcdaStatus ucda_dsp_equiv(const struct UcdaHwConfig *cfg, uint64_t *out);

/**
 * One 2x2 output patch from a 2x2 window `{IF11, IF12, IF21, IF22}` and a
 * rotated 3x3 kernel in row-major order.
 *
 * # Safety
 * `window` must hold 4 values, `rotated_kernel` 9 and `out` room for 4.
 */
enum UcdaStatus ucda_deconv_patch(const int8_t *window, const int8_t *rotated_kernel, int32_t *out);

/**
 * Compiles a network description (UTF-8 JSON).
 *
 * # Safety
 * `json` must be a NUL-terminated string; `cfg` null or valid; `out`
 * valid for writes.
 */
enum UcdaStatus ucda_program_compile_json(const char *json,
                                          const struct UcdaHwConfig *cfg,
                                          struct UcdaProgram **out);

/**
 * Compiles the built-in SegNet-Basic network.
 *
 * # Safety
 * `cfg` null or valid; `out` valid for writes.
 */
enum UcdaStatus ucda_program_segnet_basic(const struct UcdaHwConfig *cfg, struct UcdaProgram **out);

/**
 * # Safety
 * `p` must be a live program; `out` valid for writes.
 */
enum UcdaStatus ucda_program_len(const struct UcdaProgram *p, size_t *out);

/**
 * The program's text dump; free with [`ucda_string_free`].
 *
 * # Safety
 * `p` must be a live program; `out` valid for writes.
 */
enum UcdaStatus ucda_program_dump(const struct UcdaProgram *p, char **out);

/**
 * # Safety
 * `p` must be null or a program not yet freed.
 */
void ucda_program_free(struct UcdaProgram *p);

/**
 * Copies `len` int8 values into a new `h x w x c` tensor.
 *
 * # Safety
 * `data` must hold `len` values; `out` valid for writes.
 */
enum UcdaStatus ucda_tensor_new(uint32_t h,
                                uint32_t w,
                                uint32_t c,
                                int32_t scale_exp,
                                const int8_t *data,
                                size_t len,
                                struct UcdaTensor **out);

/**
 * A seeded random tensor shaped like the program's input.
 *
 * # Safety
 * `p` must be a live program; `out` valid for writes.
 */
enum UcdaStatus ucda_tensor_random_input(const struct UcdaProgram *p,
                                         uint64_t seed,
                                         struct UcdaTensor **out);

/**
 * # Safety
 * `t` must be a live tensor; each output pointer null or valid.
 */
enum UcdaStatus ucda_tensor_shape(const struct UcdaTensor *t,
                                  uint32_t *h,
                                  uint32_t *w,
                                  uint32_t *c,
                                  int32_t *scale_exp);

/**
 * Borrows the tensor payload; valid while the tensor lives.
 *
 * # Safety
 * `t` must be a live tensor; `data` and `len` valid for writes.
 */
enum UcdaStatus ucda_tensor_data(const struct UcdaTensor *t, const int8_t **data, size_t *len);

/**
 * # Safety
 * `t` must be null or a tensor not yet freed.
 */
void ucda_tensor_free(struct UcdaTensor *t);

/**
 * Parses a weight image.
 *
 * # Safety
 * `bytes` must hold `len` bytes; `out` valid for writes.
 */
enum UcdaStatus ucda_weights_load(const uint8_t *bytes, size_t len, struct UcdaWeights **out);

/**
 * Seeded random weights for the program's network.
 *
 * # Safety
 * `p` must be a live program; `out` valid for writes.
 */
enum UcdaStatus ucda_weights_random(const struct UcdaProgram *p,
                                    uint64_t seed,
                                    struct UcdaWeights **out);

/**
 * Serializes weights; the caller frees the buffer with
 * [`ucda_bytes_free`].
 *
 * # Safety
 * `wts` must be live; `bytes` and `len` valid for writes.
 */
enum UcdaStatus ucda_weights_encode(const struct UcdaWeights *wts, uint8_t **bytes, size_t *len);

/**
 * # Safety
 * `bytes`/`len` must come from [`ucda_weights_encode`].
 */
void ucda_bytes_free(uint8_t *bytes, size_t len);

/**
 * # Safety
 * `w` must be null or weights not yet freed.
 */
void ucda_weights_free(struct UcdaWeights *w);

/**
 * Runs the program; `report` (optional) receives the summed counters.
 *
 * # Safety
 * Handles must be live; `out` valid for writes; `report` null or valid.
 */
enum UcdaStatus ucda_execute(const struct UcdaProgram *p,
                             const struct UcdaWeights *wts,
                             const struct UcdaTensor *input,
                             struct UcdaTensor **out,
                             struct UcdaCycleReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UCDA_H */

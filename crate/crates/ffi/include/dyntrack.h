#ifndef DYNTRACK_H
#define DYNTRACK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Status codes returned by every entry point.
typedef enum DtStatus {
  DT_STATUS_OK = 0,
  DT_STATUS_INVALID_INPUT = 1,
  DT_STATUS_LENGTH_MISMATCH = 2,
  DT_STATUS_FUTURE_TIME = 3,
  DT_STATUS_NULL_POINTER = 4,
  DT_STATUS_IO = 5,
  DT_STATUS_BUFFER_TOO_SMALL = 6,
  DT_STATUS_PANIC = 7,
} DtStatus;

// A Moving Hamming Ball instance with its own evaluation clock.
typedef struct DtMhb DtMhb;

// The trace of one algorithm run.
typedef struct DtTrace DtTrace;

typedef struct DtGeneration {
  uint64_t generation;
  uint64_t clock;
  uint64_t in_opt_count;
  uint64_t population;
} DtGeneration;

typedef struct DtTracking {
  uint64_t windows;
  double min;
  double mean;
  double max;
  bool tracks;
} DtTracking;

typedef struct DtStability {
  double kappa;
  double rho;
  double epsilon;
  double multi_change_bound;
} DtStability;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`) and returns the full message length in bytes.
size_t dt_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *dt_version(void);

// Creates an instance with radius `r`, `l`-bit moves and mean change
// interval `theta` (infinite for a frozen target). `seed`/`stream` select
// the change schedule.
enum DtStatus dt_mhb_new(size_t n,
                         size_t r,
                         size_t l,
                         double theta,
                         uint64_t seed,
                         uint64_t stream,
                         struct DtMhb **out_mhb);

void dt_mhb_free(struct DtMhb *mhb);

enum DtStatus dt_mhb_dimension(const struct DtMhb *mhb, size_t *out_n);

enum DtStatus dt_mhb_clock(const struct DtMhb *mhb, uint64_t *out_clock);

// Evaluates `bits` with the function as of time `at <= clock` and advances
// the clock by one.
enum DtStatus dt_mhb_evaluate(struct DtMhb *mhb,
                              const uint8_t *bits,
                              size_t len,
                              uint64_t at,
                              double *out_value);

enum DtStatus dt_mhb_is_optimal_at(const struct DtMhb *mhb,
                                   const uint8_t *bits,
                                   size_t len,
                                   uint64_t t,
                                   bool *out_optimal);

// Writes the target in force at time `t <= clock` into `out_bits`.
enum DtStatus dt_mhb_target_at(const struct DtMhb *mhb, uint64_t t, uint8_t *out_bits, size_t len);

// Runs the (1+1) EA for `budget` evaluations from the initial target.
enum DtStatus dt_run_single(struct DtMhb *mhb,
                            const char *mutation_spec,
                            uint64_t budget,
                            uint64_t seed,
                            uint64_t stream,
                            struct DtTrace **out_trace);

// Runs the population EA with `lambda` members, all starting at the
// initial target.
enum DtStatus dt_run_population(struct DtMhb *mhb,
                                const char *selection_spec,
                                const char *mutation_spec,
                                size_t lambda,
                                uint64_t budget,
                                uint64_t seed,
                                uint64_t stream,
                                struct DtTrace **out_trace);

void dt_trace_free(struct DtTrace *trace);

// Number of evaluations in the trace.
enum DtStatus dt_trace_len(const struct DtTrace *trace, uint64_t *out_len);

// Copies the per-evaluation optimality flags (0/1) into `out_hits`.
enum DtStatus dt_trace_hits(const struct DtTrace *trace, uint8_t *out_hits, size_t len);

enum DtStatus dt_trace_generation_count(const struct DtTrace *trace, uint64_t *out_count);

enum DtStatus dt_trace_generation(const struct DtTrace *trace,
                                  uint64_t index,
                                  struct DtGeneration *out_gen);

// Sliding-window optimal-hit fractions of a trace, reported as tracking at
// level `threshold` when the minimum reaches it.
enum DtStatus dt_tracking_score(const struct DtTrace *trace,
                                size_t window,
                                size_t t0,
                                double threshold,
                                struct DtTracking *out_report);

enum DtStatus dt_beta_closed_form(const char *selection_spec,
                                  double gamma,
                                  size_t lambda,
                                  double *out_beta);

// Stability constants for bitwise mutation with rate `chi / n`. A
// non-positive `epsilon` selects the default.
enum DtStatus dt_stability_bound(size_t n,
                                 size_t r,
                                 size_t l,
                                 double theta,
                                 double chi,
                                 double epsilon,
                                 double d,
                                 struct DtStability *out_bound);

enum DtStatus dt_ruin_closed(size_t r, size_t d, size_t n, size_t x, double *out_p);

enum DtStatus dt_ruin_exact(size_t r, size_t d, size_t n, size_t x, double *out_p);

enum DtStatus dt_poisson_tail_bound(double theta, double x, double *out_bound);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DYNTRACK_H */

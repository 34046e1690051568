#ifndef DISCHARGEKIT_H
#define DISCHARGEKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DkStatus {
  DK_STATUS_OK = 0,
  DK_STATUS_NULL_POINTER = 1,
  DK_STATUS_INVALID_UTF8 = 2,
  DK_STATUS_INVALID_ARGUMENT = 3,
  DK_STATUS_PARSE_ERROR = 4,
  DK_STATUS_DECODE_ERROR = 5,
  DK_STATUS_MERGE_ERROR = 6,
  DK_STATUS_IO_ERROR = 7,
  DK_STATUS_OUT_OF_RANGE = 8,
  DK_STATUS_PANIC = 9,
} DkStatus;

typedef enum DkSectionKind {
  DK_SECTION_KIND_PART1 = 0,
  DK_SECTION_KIND_BRIEF_HOSPITAL_COURSE = 1,
  DK_SECTION_KIND_PART2 = 2,
  DK_SECTION_KIND_DISCHARGE_INSTRUCTIONS = 3,
  DK_SECTION_KIND_OTHER = 4,
} DkSectionKind;

/*
 Metric ids, in leaderboard column order.
 */
typedef enum DkMetric {
  DK_METRIC_BLEU4 = 0,
  DK_METRIC_ROUGE1 = 1,
  DK_METRIC_ROUGE2 = 2,
  DK_METRIC_ROUGE_L = 3,
  DK_METRIC_BERT_SCORE = 4,
  DK_METRIC_METEOR = 5,
  DK_METRIC_ALIGN_SCORE = 6,
  DK_METRIC_MEDCON = 7,
} DkMetric;

typedef enum DkAlgorithm {
  DK_ALGORITHM_GREEDY = 0,
  DK_ALGORITHM_BEAM = 1,
  DK_ALGORITHM_NUCLEUS = 2,
  DK_ALGORITHM_CONTRASTIVE = 3,
  DK_ALGORITHM_ENSEMBLE = 4,
} DkAlgorithm;

typedef enum DkStopReason {
  DK_STOP_REASON_EOS = 0,
  DK_STOP_REASON_MAX_LEN = 1,
} DkStopReason;

typedef struct DkDecodeTrace DkDecodeTrace;

typedef struct DkNote DkNote;

typedef struct DkTensorMap DkTensorMap;

typedef struct DkToyLm DkToyLm;

typedef struct DkDecodeConfig {
  size_t max_new_tokens;
  size_t beam_width;
  double nucleus_p;
  size_t contrastive_k;
  double contrastive_alpha;
  uint64_t seed;
  double length_penalty;
} DkDecodeConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. The pointer is
 valid until the next `dk_` call on the same thread.
 */
const char *dk_last_error(void);

/*
 # Safety
 `s` must be null or a string returned by this library, not yet freed.
 */
void dk_string_free(char *s);

/*
 Parses a note. `lexicon` is the text of a header lexicon file, or null
 for the default lexicon.

 # Safety
 String arguments must be NUL-terminated; `out` must be writable.
 */
enum DkStatus dk_note_parse(const char *note_id,
                            const char *text,
                            const char *lexicon,
                            struct DkNote **out);

/*
 # Safety
 `note` must be null or a handle from [`dk_note_parse`], not yet freed.
 */
void dk_note_free(struct DkNote *note);

/*
 # Safety
 `note` must be a live handle.
 */
size_t dk_note_section_count(const struct DkNote *note);

/*
 Kind and byte range `[start, end)` of section `index`.

 # Safety
 `note` must be a live handle; output pointers must be writable.
 */
enum DkStatus dk_note_section(const struct DkNote *note,
                              size_t index,
                              enum DkSectionKind *kind,
                              size_t *start,
                              size_t *end);

/*
 The concatenated section bodies; free with [`dk_string_free`].

 # Safety
 `note` must be a live handle; `out` must be writable.
 */
enum DkStatus dk_note_reconstruct(const struct DkNote *note, char **out);

/*
 Nearest-rank percentile of `counts`, rounded up to a multiple.

 # Safety
 `counts` must be valid for `len` reads; `out` must be writable.
 */
enum DkStatus dk_percentile_budget(const size_t *counts,
                                   size_t len,
                                   double percentile,
                                   size_t multiple,
                                   size_t *out);

/*
 Scores one pair on a lexical metric, in [0, 1]. Model-based metrics
 return `DK_STATUS_INVALID_ARGUMENT`.

 # Safety
 Strings must be NUL-terminated; `out` must be writable.
 */
enum DkStatus dk_metric_score(enum DkMetric metric,
                              const char *hypothesis,
                              const char *reference,
                              double *out);

/*
 Mean of eight combined metric values given in leaderboard column order.

 # Safety
 `values` must be valid for 8 reads; `out` must be writable.
 */
enum DkStatus dk_aggregate_overall(const double *values, double *out);

struct DkDecodeConfig dk_decode_config_default(void);

/*
 Loads a table model from `{"logits": [[..]], "embeddings": [[..]], "eos": id}`.

 # Safety
 `json` must be NUL-terminated; `out` must be writable.
 */
enum DkStatus dk_toy_lm_from_json(const char *json, struct DkToyLm **out);

/*
 # Safety
 `lm` must be null or a live handle.
 */
void dk_toy_lm_free(struct DkToyLm *lm);

/*
 Decodes from `prefix`. `lm_b` is the second model for ensemble decoding
 and is ignored (may be null) otherwise.

 # Safety
 Handles must be live; `prefix` valid for `prefix_len` reads; `config`
 readable; `out` writable.
 */
enum DkStatus dk_decode(const struct DkToyLm *lm,
                        const struct DkToyLm *lm_b,
                        enum DkAlgorithm algorithm,
                        const uint32_t *prefix,
                        size_t prefix_len,
                        const struct DkDecodeConfig *config,
                        struct DkDecodeTrace **out);

/*
 # Safety
 `trace` must be a live handle.
 */
size_t dk_trace_len(const struct DkDecodeTrace *trace);

/*
 Emitted tokens; valid while the trace lives.

 # Safety
 `trace` must be a live handle.
 */
const uint32_t *dk_trace_tokens(const struct DkDecodeTrace *trace);

/*
 # Safety
 `trace` must be a live handle.
 */
enum DkStopReason dk_trace_stop_reason(const struct DkDecodeTrace *trace);

/*
 # Safety
 `trace` must be null or a live handle.
 */
void dk_trace_free(struct DkDecodeTrace *trace);

struct DkTensorMap *dk_tensor_map_new(void);

/*
 # Safety
 `map` must be null or a live handle.
 */
void dk_tensor_map_free(struct DkTensorMap *map);

/*
 Inserts (or replaces) a row-major f32 tensor.

 # Safety
 `map` must be live; `shape` valid for `ndim` reads; `data` valid for the
 product of `shape` reads.
 */
enum DkStatus dk_tensor_map_insert(struct DkTensorMap *map,
                                   const char *name,
                                   const size_t *shape,
                                   size_t ndim,
                                   const float *data);

/*
 Borrows the data of tensor `name`; valid until the map is modified or
 freed.

 # Safety
 `map` must be live; outputs writable.
 */
enum DkStatus dk_tensor_map_get(const struct DkTensorMap *map,
                                const char *name,
                                const float **data,
                                size_t *numel);

/*
 # Safety
 `path` must be NUL-terminated; `out` writable.
 */
enum DkStatus dk_tensor_map_load(const char *path, struct DkTensorMap **out);

/*
 # Safety
 `map` must be live; `path` NUL-terminated.
 */
enum DkStatus dk_tensor_map_save(const struct DkTensorMap *map, const char *path);

/*
 TIES-merges `count` task-vector maps. `weights` may be null for equal
 weights, else it holds `count` entries.

 # Safety
 `maps` must hold `count` live handles; `weights` null or valid for
 `count` reads; `out` writable.
 */
enum DkStatus dk_ties_merge(const struct DkTensorMap *const *maps,
                            size_t count,
                            double density,
                            const double *weights,
                            double lambda,
                            struct DkTensorMap **out);

/*
 Merges a LoRA adapter map (`<name>.lora_A` / `<name>.lora_B` tensors)
 into `base`.

 # Safety
 Handles must be live; `out` writable.
 */
enum DkStatus dk_lora_merge(const struct DkTensorMap *base,
                            const struct DkTensorMap *adapter,
                            uint32_t alpha,
                            struct DkTensorMap **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISCHARGEKIT_H */

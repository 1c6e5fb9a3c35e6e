#ifndef TALE_H
#define TALE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum TaleStatus {
  TALE_STATUS_OK = 0,
  TALE_STATUS_NULL_POINTER = 1,
  TALE_STATUS_INVALID_ARGUMENT = 2,
  TALE_STATUS_IO = 3,
  TALE_STATUS_FORMAT = 4,
  TALE_STATUS_CONFIG = 5,
  TALE_STATUS_NUMERICAL = 6,
  TALE_STATUS_VOCABULARY = 7,
  TALE_STATUS_NOT_FOUND = 8,
  TALE_STATUS_PANIC = 9,
} TaleStatus;

// A prepared leave-one-out split.
typedef struct TaleDataset TaleDataset;

// A trained item-to-item model.
typedef struct TaleModel TaleModel;

// Full-catalogue metrics over all evaluated users.
typedef struct TaleMetrics {
  uint64_t users;
  double hr_at_1;
  double hr_at_5;
  double hr_at_10;
  double ndcg_at_1;
  double ndcg_at_5;
  double ndcg_at_10;
} TaleMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or an empty string.
// The pointer stays valid until the next call on this thread.
const char *tale_last_error(void);

// Library version as a static NUL-terminated string.
const char *tale_version(void);

// Loads a split file written by `tale prepare`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum TaleStatus tale_dataset_load(const char *path, struct TaleDataset **out);

// Reads, filters and splits the raw file named by `input_path` in the
// TOML configuration.
//
// # Safety
// `config_toml` must be a NUL-terminated string; `out` must be writable.
enum TaleStatus tale_dataset_prepare(const char *config_toml, struct TaleDataset **out);

// # Safety
// `dataset` must be a live handle.
size_t tale_dataset_num_items(const struct TaleDataset *dataset);

// # Safety
// `dataset` must be a live handle.
size_t tale_dataset_num_users(const struct TaleDataset *dataset);

// # Safety
// `dataset` must be null or a handle not yet freed.
void tale_dataset_free(struct TaleDataset *dataset);

// Trains on the dataset's training part. `config_toml` may be null for
// the default configuration; only training keys are used.
//
// # Safety
// `dataset` must be a live handle, `config_toml` null or NUL-terminated,
// `out` writable.
enum TaleStatus tale_train(const struct TaleDataset *dataset,
                           const char *config_toml,
                           struct TaleModel **out);

// # Safety
// `path` must be NUL-terminated; `out` writable.
enum TaleStatus tale_model_load(const char *path, struct TaleModel **out);

// Writes the model; `single_precision` stores the weights as f32.
//
// # Safety
// `model` must be a live handle and `path` NUL-terminated.
enum TaleStatus tale_model_save(const struct TaleModel *model,
                                const char *path,
                                bool single_precision);

// # Safety
// `model` must be null or a handle not yet freed.
void tale_model_free(struct TaleModel *model);

// # Safety
// `model` must be a live handle.
size_t tale_model_num_items(const struct TaleModel *model);

// Looks up the index of an external item id.
//
// # Safety
// `model` must be a live handle, `item_id` NUL-terminated, `out` writable.
enum TaleStatus tale_model_item_index(const struct TaleModel *model,
                                      const char *item_id,
                                      uint32_t *out);

// Copies the external id of `index` into `buf` (NUL-terminated). Fails
// with `TALE_STATUS_INVALID_ARGUMENT` if `buf_len` is too small.
//
// # Safety
// `model` must be a live handle and `buf` writable for `buf_len` bytes.
enum TaleStatus tale_model_item_id(const struct TaleModel *model,
                                   uint32_t index,
                                   char *buf,
                                   size_t buf_len);

// Top-`k` items for a history of item indices, oldest first. Writes up
// to `k` indices and scores and stores the count in `out_len`.
//
// # Safety
// `history` must hold `history_len` values; `out_items` and `out_scores`
// must be writable for `k` values; `out_len` writable.
enum TaleStatus tale_recommend(const struct TaleModel *model,
                               const uint32_t *history,
                               size_t history_len,
                               size_t k,
                               bool exclude_seen,
                               uint32_t *out_items,
                               double *out_scores,
                               size_t *out_len);

// Test-set HR and NDCG at 1, 5 and 10.
//
// # Safety
// `model` and `dataset` must be live handles; `out` writable.
enum TaleStatus tale_evaluate(const struct TaleModel *model,
                              const struct TaleDataset *dataset,
                              bool exclude_seen,
                              struct TaleMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TALE_H */

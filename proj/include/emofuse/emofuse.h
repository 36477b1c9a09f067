/* SPDX-License-Identifier: Apache-2.0 */
#ifndef EMOFUSE_H
#define EMOFUSE_H

#include <stddef.h>
#include <stdint.h>

#if defined(EMOFUSE_BUILDING_LIBRARY)
#define EF_API __attribute__((visibility("default")))
#else
#define EF_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every entry point returns EF_OK or an error code. On error the message is
 * available from ef_last_error() on the calling thread until its next call
 * into the library. Output handles are written only on success. */
typedef enum ef_status {
  EF_OK = 0,
  EF_ERR_SHAPE = 1,
  EF_ERR_VALIDATION = 2,
  EF_ERR_CONTRACT = 3,
  EF_ERR_CONFIG = 4,
  EF_ERR_IO = 5,
  EF_ERR_FORMAT = 6,
  EF_ERR_COVERAGE = 7,
  EF_ERR_ALIGNMENT = 8,
  EF_ERR_NUMERIC = 9,
  EF_ERR_INVALID_ARGUMENT = 10, /* null handle or out-of-range index */
  EF_ERR_INTERNAL = 11
} ef_status;

#define EF_NUM_CLASSES 7
#define EF_NO_LABEL (-1)

EF_API const char *ef_version(void);
EF_API const char *ef_status_name(ef_status status);
EF_API const char *ef_last_error(void);
/* Class word for index 0..6, NULL otherwise. */
EF_API const char *ef_class_name(int index);

/* Strings returned through char** outputs are freed with ef_string_free. */
EF_API void ef_string_free(char *s);

/* ---- run configuration ------------------------------------------------ */

typedef struct ef_config ef_config;

/* Relative paths inside the file resolve against the file's directory. */
EF_API ef_status ef_config_load(const char *path, ef_config **out);
EF_API ef_status ef_config_parse(const char *text, const char *origin,
                                 const char *base_dir, ef_config **out);
EF_API void ef_config_free(ef_config *cfg);
/* Static text listing every key with its default. */
EF_API const char *ef_config_help(void);

/* ---- data preparation ------------------------------------------------- */

typedef struct ef_prep_summary {
  size_t videos;
  size_t frames;
  size_t discarded_clips;
  size_t warnings;
} ef_prep_summary;

/* Validates a manifest (feature files must be readable) and, when clip_table
 * is non-NULL, aligns its audio clips to the surviving frames. Writes the
 * normalised manifest to <out_dir>/manifest.txt. Warnings are returned one per
 * line through *warnings when it is non-NULL. */
EF_API ef_status ef_prep(const char *manifest, const char *clip_table,
                         const char *out_dir, ef_prep_summary *summary,
                         char **warnings);

/* Class counts and the length histogram of a manifest. Feature files are not
 * opened. Any output may be NULL. */
EF_API ef_status ef_stats(const char *manifest, size_t bucket_width,
                          size_t class_counts[EF_NUM_CLASSES],
                          size_t *unlabelled, char **report);

/* ---- training and evaluation ------------------------------------------ */

typedef struct ef_metrics {
  size_t count;
  double accuracy;
  double macro_f1;
  size_t confusion[EF_NUM_CLASSES][EF_NUM_CLASSES]; /* rows true, cols predicted */
} ef_metrics;

/* seed == NULL uses the config's seed key (default 0). Writes
 * checkpoint.txt, history.csv and metrics.csv into out_dir. */
EF_API ef_status ef_train(const ef_config *cfg, const uint64_t *seed,
                          const char *out_dir);

/* Writes predictions.log (and metrics.txt when every video is labelled).
 * *has_metrics is set to 0 for unlabelled splits; either may be NULL. */
EF_API ef_status ef_evaluate(const char *checkpoint, const char *manifest,
                             const char *out_dir, ef_metrics *metrics,
                             int *has_metrics);

/* ---- prediction records ----------------------------------------------- */

typedef struct ef_records ef_records;

EF_API ef_status ef_records_read(const char *path, ef_records **out);
EF_API ef_status ef_records_write(const ef_records *recs, const char *path);
EF_API ef_status ef_records_format(const ef_records *recs, char **text);
EF_API void ef_records_free(ef_records *recs);
EF_API size_t ef_records_count(const ef_records *recs);
/* Any output may be NULL. *video_id stays owned by recs. */
EF_API ef_status ef_records_get(const ef_records *recs, size_t index,
                                const char **video_id,
                                double logits[EF_NUM_CLASSES], int *predicted,
                                int *label);
EF_API ef_status ef_records_metrics(const ef_records *recs, ef_metrics *out,
                                    char **report);
/* One <video_id>.txt per record holding the predicted class word. */
EF_API ef_status ef_records_submit(const ef_records *recs, const char *out_dir);

/* ---- late fusion ------------------------------------------------------ */

typedef struct ef_log_table ef_log_table;

/* All logs must cover the same video ids. */
EF_API ef_status ef_logs_load(const char *const *paths, size_t count,
                              ef_log_table **out);
EF_API void ef_logs_free(ef_log_table *table);
EF_API size_t ef_logs_model_count(const ef_log_table *table);
EF_API size_t ef_logs_video_count(const ef_log_table *table);
/* EF_ERR_CONTRACT when the model's log is unlabelled. */
EF_API ef_status ef_logs_accuracy(const ef_log_table *table, size_t model,
                                  double *accuracy);

EF_API ef_status ef_class_weights(const size_t counts[EF_NUM_CLASSES],
                                  double weights[EF_NUM_CLASSES]);

typedef struct ef_fusion_spec {
  int method;                   /* 1..5 */
  const double *model_weights;  /* NULL: accuracies of the weight source */
  size_t model_weight_count;
  const double *class_weights;  /* 7 values; required by method 4 */
  int rescale;
  int count_votes;              /* method 3 only */
  size_t folds;                 /* method 5; 0 means 5 */
} ef_fusion_spec;

/* Fuses `table`. Model accuracies and method 5's regression come from
 * `weight_source`, which must list the same models in the same order; NULL
 * uses `table` itself. *cv_accuracy receives method 5's cross-validated
 * accuracy when non-NULL. */
EF_API ef_status ef_fuse(const ef_log_table *table,
                         const ef_log_table *weight_source,
                         const ef_fusion_spec *spec, ef_records **out,
                         double *cv_accuracy);

#ifdef __cplusplus
}
#endif

#endif /* EMOFUSE_H */

/*
 * C API for the audiovisual blendshape fitting library.
 *
 * All functions return avbf_status; anything but AVBF_OK means failure and
 * avbf_last_error() describes it (thread-local storage). Handles are opaque
 * and must be released with their matching *_free function.
 */
#ifndef AVBF_H
#define AVBF_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum avbf_status {
    AVBF_OK = 0,
    AVBF_ERROR = 1,
    AVBF_INVALID_ARGUMENT = 2,
    AVBF_IO_ERROR = 3,
    AVBF_BEHIND_CAMERA = 4,
    AVBF_SINGULAR = 5,
    AVBF_BAD_FORMAT = 6,
    AVBF_UNDEFINED_RATIO = 7,
    AVBF_NON_FINITE = 8
} avbf_status;

const char* avbf_version(void);
const char* avbf_last_error(void);

/* ---- blendshape model handle ---- */

typedef struct avbf_model avbf_model;

avbf_status avbf_model_load(const char* path, avbf_model** out);
void avbf_model_free(avbf_model* model);

int32_t avbf_model_vertex_count(const avbf_model* model);
int32_t avbf_model_coefficient_count(const avbf_model* model);
int32_t avbf_model_landmark_count(const avbf_model* model);

/* Evaluates the posed mesh. coefficients has coefficient_count entries in
 * [0,1], pose6 is axis-angle xyz + translation xyz (may be NULL for the
 * identity), out_vertices receives 3 * vertex_count doubles (xyz rows). */
avbf_status avbf_model_evaluate(const avbf_model* model, const double* coefficients,
                                int32_t coefficient_count, const double* pose6,
                                double* out_vertices);

/* ---- pipeline commands (what the CLI runs) ---- */

/* config_path may be NULL/empty for defaults; has_seed selects the override. */
avbf_status avbf_cmd_synth(const char* config_path, int has_seed, uint64_t seed,
                           const char* out_dir);

/* data_path: dataset directory, or observations JSON (then model_path is
 * required). weights_path may be NULL/empty for default fit weights. */
avbf_status avbf_cmd_fit(const char* data_path, int32_t sequence, const char* weights_path,
                         const char* model_path, const char* out_csv);

/* causal_override: -1 keep config, 0 non-causal, 1 causal. */
avbf_status avbf_cmd_train(const char* config_path, const char* data_dir, int has_seed,
                           uint64_t seed, int causal_override, const char* out_dir);

/* mode: "av" | "video" | "audio". */
avbf_status avbf_cmd_infer(const char* checkpoint_path, const char* data_dir, int32_t sequence,
                           const char* mode, const char* out_csv);

avbf_status avbf_cmd_eval(const char* const* checkpoint_paths, int32_t n_checkpoints,
                          const char* data_dir, const char* const* modes, int32_t n_modes,
                          int32_t holdout, const char* out_dir);

avbf_status avbf_cmd_export(const char* model_path, const char* curves_csv, const char* out_dir);

/* ---- evaluation metrics ---- */

avbf_status avbf_energy_ratio(const double* prediction, const double* ground_truth, int32_t length,
                              double* out_ratio);

avbf_status avbf_closure_metrics(const double* prediction, const double* ground_truth,
                                 int32_t length, double tau, int32_t min_run, double* out_recall,
                                 double* out_precision);

#ifdef __cplusplus
}
#endif

#endif /* AVBF_H */

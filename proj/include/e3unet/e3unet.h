// Copyright 2026 The e3unet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/* C interface to the e3unet library. Every call returns an e3u_status;
 * on failure e3u_last_error() describes the problem for the calling thread.
 * Strings returned through char** are owned by the caller and released with
 * e3u_string_free. */

#ifndef E3UNET_E3UNET_H_
#define E3UNET_E3UNET_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define E3U_API __declspec(dllexport)
#else
#define E3U_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum e3u_status {
  E3U_OK = 0,
  E3U_ERR_INVALID_ARGUMENT = 1,
  E3U_ERR_SHAPE_MISMATCH = 2,
  E3U_ERR_IO = 3,
  E3U_ERR_FORMAT = 4,
  E3U_ERR_CONFIG = 5,
  E3U_ERR_INTERNAL = 6
} e3u_status;

/* A network together with its parameters. */
typedef struct e3u_model e3u_model;

E3U_API const char* e3u_version(void);
/* Message of the last failed call on this thread; empty after success. */
E3U_API const char* e3u_last_error(void);
E3U_API void e3u_string_free(char* s);
/* Caps worker threads for numerical kernels; 0 restores the default. */
E3U_API e3u_status e3u_set_threads(int threads);

/* Builds a fresh network from config text (key = value lines); the
 * config's seed draws the initial parameters. NULL text gives the defaults. */
E3U_API e3u_status e3u_model_create(const char* config_text, e3u_model** out);
E3U_API e3u_status e3u_model_load(const char* checkpoint_path, e3u_model** out);
E3U_API e3u_status e3u_model_save(const e3u_model* model, const char* checkpoint_path);
E3U_API void e3u_model_free(e3u_model* model);

/* JSON object: config, mode, exported, parameter_count, layers. */
E3U_API e3u_status e3u_model_info(const e3u_model* model, char** json);

/* Dense ordinary-CNN form; a plain model is copied unchanged. */
E3U_API e3u_status e3u_model_export(const e3u_model* model, e3u_model** out);

/* Single forward of a channel-major float volume with dims x, y, z. `output`
 * receives n_classes * x * y * z logits. */
E3U_API e3u_status e3u_model_forward(const e3u_model* model, const float* input, size_t input_len, int x,
                                     int y, int z, float* output, size_t output_len);

/* Reads a volume file, z-scores it, predicts with overlapping Gaussian-
 * weighted patches and writes a label file. */
E3U_API e3u_status e3u_model_predict_file(const e3u_model* model, const char* volume_path,
                                          const char* labels_path, int patch_size, int stride);

/* Runs all 24 cube rotations through the network on a seeded random cube of
 * side `size`. `report_json` gets {passed, tolerance, rows:[{rotation_index,
 * max_rel_dev}]}; *passed is 1 iff every deviation is <= tolerance. */
E3U_API e3u_status e3u_model_equivariance_check(const e3u_model* model, int size, uint64_t seed, int border,
                                                double tolerance, int* passed, char** report_json);

/* Dice versus rotation angle over every case in `data_dir`. `plane` is
 * axial, sagittal or coronal. `csv` has columns angle_deg,class_id,dice; the
 * JSON report adds the mean foreground Dice per angle. Either output may be
 * NULL. */
E3U_API e3u_status e3u_model_rotation_sweep(const e3u_model* model, const char* data_dir, const double* angles_deg,
                                            size_t angle_count, const char* plane, int patch_size, int stride,
                                            char** csv, char** report_json);

/* Writes `count` synthetic cases (image and label files) of side `size`.
 * The report lists the files and a warning when size is not divisible by 8. */
E3U_API e3u_status e3u_generate_dataset(const char* dir, int count, int size, uint64_t seed, char** report_json);

/* Called after every epoch with a JSON epoch record. */
typedef void (*e3u_epoch_callback)(const char* epoch_json, void* user);

/* Trains on the cases in `data_dir`; the trailing val_count cases validate.
 * Writes the best-validation checkpoint to `checkpoint_path` and the history
 * CSV to `history_path` (NULL skips it). */
E3U_API e3u_status e3u_train(const char* config_path, const char* data_dir, const char* checkpoint_path,
                             const char* history_path, e3u_epoch_callback on_epoch, void* user,
                             char** report_json);

#ifdef __cplusplus
}
#endif

#endif  /* E3UNET_E3UNET_H_ */

/* Copyright 2026 The scaprune Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/* C interface of the channel-pruning library. Every function returns a
 * scap_status; on failure scap_last_error() carries a human-readable
 * diagnostic for the calling thread. Out-parameters are written only on
 * SCAP_OK. Handles are opaque and freed with their matching *_free call;
 * freeing NULL is a no-op. Handles are not thread-safe; confine each one to a
 * single thread at a time.
 */

#ifndef SCAPRUNE_SCAPRUNE_H_
#define SCAPRUNE_SCAPRUNE_H_

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum scap_status {
  SCAP_OK = 0,
  SCAP_ERR_CONFIG = 1,  /* invalid argument, config or structure */
  SCAP_ERR_IO = 2,      /* file system problem */
  SCAP_ERR_NUMERIC = 3, /* non-finite values or divergence */
  SCAP_ERR_STATE = 4,   /* operation out of order (missing stage, handle state) */
  SCAP_ERR_UNKNOWN = 5
} scap_status;

const char* scap_version(void);

/* Message of the most recent failing call on this thread; empty after a
 * success. The pointer stays valid until the next library call on the same
 * thread. */
const char* scap_last_error(void);

typedef struct scap_model scap_model;
typedef struct scap_dataset scap_dataset;
typedef struct scap_table scap_table;
typedef struct scap_plan scap_plan;

/* ---- models ---------------------------------------------------------- */

/* arch: "vgg" (depth 16/19) or "resnet" (depth 6n+2); attention: "none",
 * "sca" or "se". */
scap_status scap_model_build(const char* arch, int depth, int num_classes, const char* attention,
                             uint64_t seed, scap_model** out);
scap_status scap_model_load(const char* checkpoint_dir, scap_model** out);
scap_status scap_model_save(const scap_model* model, const char* checkpoint_dir);
scap_status scap_model_param_count(const scap_model* model, int64_t* out);
/* Forward cost for 3 x hw x hw inputs. */
scap_status scap_model_flops(const scap_model* model, int64_t hw, int64_t* out);
scap_status scap_model_remove_attention(scap_model* model, int* removed);
void scap_model_free(scap_model* model);

/* ---- datasets -------------------------------------------------------- */

scap_status scap_dataset_load_cifar(const char* root, const char* name, scap_dataset** out);
scap_status scap_dataset_synthetic(int classes, int64_t train_per_class, int64_t test_per_class,
                                   uint64_t seed, int64_t image_hw, scap_dataset** out);
/* First-n-per-class slice of the train split; the test split is kept. */
scap_status scap_dataset_subset(const scap_dataset* dataset, int64_t per_class,
                                scap_dataset** out);
scap_status scap_dataset_sizes(const scap_dataset* dataset, int64_t* train_size,
                               int64_t* test_size, int* num_classes);
void scap_dataset_free(scap_dataset* dataset);

/* Top-1 accuracy on the test (or train) split with per-channel
 * normalization. */
scap_status scap_eval_accuracy(scap_model* model, const scap_dataset* dataset,
                               int use_train_split, double* out);

/* ---- score tables and plans ------------------------------------------ */

scap_status scap_table_load(const char* path, scap_table** out);
scap_status scap_table_save(const scap_table* table, const char* path);
void scap_table_free(scap_table* table);

/* Uniform ratio in [0,1) over every layer of the table. */
scap_status scap_plan_uniform(const scap_table* table, double ratio, scap_plan** out);
scap_status scap_plan_load(const char* path, scap_plan** out);
scap_status scap_plan_save(const scap_plan* plan, const char* path);
/* Structural application; the model must have its attention removed first.
 * Produces a new model handle, the input is untouched. */
scap_status scap_plan_apply(const scap_model* model, const scap_plan* plan, scap_model** out);
void scap_plan_free(scap_plan* plan);

/* ---- pipeline -------------------------------------------------------- */

/* Runs one pipeline verb: "train", "collect", "prune", "finetune", "eval",
 * "report" or "sweep". config_path may be NULL or empty to start from the
 * default config. overrides_json may be NULL or a JSON object with optional
 * keys: "out" (string), "seed" (integer), "subset" (integer), "ratio"
 * (number), "ratios_file" (string), "scorer" (string), "runs" (array of run
 * directories, for report). On success *artifact_path_out receives the
 * primary artifact path; free it with scap_string_free. */
scap_status scap_run(const char* verb, const char* config_path, const char* overrides_json,
                     char** artifact_path_out);
void scap_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* SCAPRUNE_SCAPRUNE_H_ */

#ifndef FMBA_FMBA_H
#define FMBA_FMBA_H

/*
 * C interface to the feature-metric bundle adjustment library.
 *
 * Every object is an opaque handle released by its matching *_free function
 * (passing NULL is allowed). Every fallible call returns an fmba_status; on
 * failure, fmba_last_error() describes the problem for the calling thread
 * and output handles are left untouched. Strings returned through char**
 * are owned by the caller and released with fmba_string_free.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FMBA_API __declspec(dllexport)
#else
#define FMBA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fmba_status {
  FMBA_OK = 0,
  FMBA_ERR_INVALID_ARGUMENT = 1,
  FMBA_ERR_BEHIND_CAMERA = 2,
  FMBA_ERR_TOO_MANY_LEVELS = 3,
  FMBA_ERR_DIMENSION_MISMATCH = 4,
  FMBA_ERR_INDEX_OUT_OF_RANGE = 5,
  FMBA_ERR_SINGULAR_SYSTEM = 6,
  FMBA_ERR_TAPE_MISSING = 7,
  FMBA_ERR_DIVERGED_LOSS = 8,
  FMBA_ERR_EMPTY_MASK = 9,
  FMBA_ERR_LENGTH_MISMATCH = 10,
  FMBA_ERR_INFEASIBLE_SPEC = 11,
  FMBA_ERR_IO = 12,
  FMBA_ERR_INTERNAL = 100
} fmba_status;

typedef struct fmba_config fmba_config;
typedef struct fmba_scene fmba_scene;
typedef struct fmba_params fmba_params;
typedef struct fmba_result fmba_result;

FMBA_API const char* fmba_version(void);
FMBA_API const char* fmba_status_name(fmba_status status);
/* Message of the last failed call on this thread; "" after a success. */
FMBA_API const char* fmba_last_error(void);
FMBA_API void fmba_string_free(char* text);

/* ---- configuration ---------------------------------------------------- */

FMBA_API fmba_status fmba_config_default(fmba_config** out);
FMBA_API fmba_status fmba_config_parse(const char* json_text, fmba_config** out);
FMBA_API fmba_status fmba_config_load(const char* path, fmba_config** out);
FMBA_API fmba_status fmba_config_to_json(const fmba_config* config, char** out);
/* Seed of the scene section and of training. */
FMBA_API fmba_status fmba_config_set_seed(fmba_config* config, uint64_t seed);
/* Solver mode by name (predicted_lambda, constant_lambda, gauss_newton,
 * classic_lm, pose_only); lambda is used by constant_lambda. */
FMBA_API fmba_status fmba_config_set_mode(fmba_config* config, const char* mode, double lambda);
FMBA_API void fmba_config_free(fmba_config* config);

/* ---- scenes ----------------------------------------------------------- */

/* Scene from the config's scene section with its seed replaced by `seed`. */
FMBA_API fmba_status fmba_scene_generate(const fmba_config* config, uint64_t seed, fmba_scene** out);
FMBA_API fmba_status fmba_scene_load(const char* dir, fmba_scene** out);
FMBA_API fmba_status fmba_scene_save(const fmba_scene* scene, const char* dir);
FMBA_API fmba_status fmba_scene_view_count(const fmba_scene* scene, int* out);
FMBA_API void fmba_scene_free(fmba_scene* scene);

/* ---- trainable parameters ---------------------------------------------- */

/* Untrained parameters: identity feature layers, pass-through basis
 * generator, damping MLP with a near-constant output. */
FMBA_API fmba_status fmba_params_init(const fmba_config* config, uint64_t seed, fmba_params** out);
FMBA_API fmba_status fmba_params_load(const char* path, fmba_params** out);
FMBA_API fmba_status fmba_params_save(const fmba_params* params, const char* path);
FMBA_API fmba_status fmba_params_count(const fmba_params* params, size_t* out);
FMBA_API void fmba_params_free(fmba_params* params);

/* ---- solving ---------------------------------------------------------- */

FMBA_API fmba_status fmba_solve(const fmba_params* params, const fmba_scene* scene, const fmba_config* config,
                                fmba_result** out);
/* Pose and depth metrics against the scene's ground truth, as JSON. */
FMBA_API fmba_status fmba_result_metrics_json(const fmba_result* result, char** out);
/* `level,iter,lambda,objective,step_norm,active_pixels` */
FMBA_API fmba_status fmba_result_trace_csv(const fmba_result* result, char** out);
/* Writes poses.txt and depth.fgrid under dir. */
FMBA_API fmba_status fmba_result_save(const fmba_result* result, const char* dir);
FMBA_API fmba_status fmba_result_view_count(const fmba_result* result, int* out);
/* qw qx qy qz tx ty tz of one estimated view. */
FMBA_API fmba_status fmba_result_pose(const fmba_result* result, int view, double out[7]);
FMBA_API void fmba_result_free(fmba_result* result);

/* ---- training, ablations, evaluation ------------------------------------ */

/* Trains from `init` on the scenes described by the config's train section.
 * loss_csv (`step,rot,trans,depth,total,lr`) and skipped may be NULL. */
FMBA_API fmba_status fmba_train(const fmba_config* config, const fmba_params* init, fmba_params** out,
                                char** loss_csv, int* skipped);
/* Suite by name: gn_vs_lm, constant_lambda_sweep, pose_only_vs_joint,
 * raw_vs_trained_features, multiview_2_3_5. Scenes come from the scene
 * section with the seeds of the ablation section. */
FMBA_API fmba_status fmba_ablate(const fmba_config* config, const char* suite, const fmba_params* params,
                                 char** csv);
/* Metrics from files: poses in the 7-number text format, depth as .fgrid.
 * The depth paths may be NULL; ATE is reported when the pose files hold at
 * least two frames. */
FMBA_API fmba_status fmba_eval_files(const char* pred_poses, const char* gt_poses, const char* pred_depth,
                                     const char* gt_depth, char** json);

#ifdef __cplusplus
}
#endif

#endif

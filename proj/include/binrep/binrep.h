/* C interface to the binrep library. Every fallible call returns a
 * br_status; on failure br_last_error() holds a message for the calling
 * thread until its next failing call. Handles are opaque and owned by the
 * caller, who releases them with the matching *_free function (NULL is
 * accepted). */
#ifndef BINREP_BINREP_H
#define BINREP_BINREP_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(BINREP_BUILDING_LIBRARY)
#define BR_API __attribute__((visibility("default")))
#else
#define BR_API
#endif

typedef enum br_status {
  BR_OK = 0,
  BR_ERR_DIMENSION = 1,
  BR_ERR_CONFIG = 2,
  BR_ERR_INPUT = 3,
  BR_ERR_STATE = 4,
  BR_ERR_TRANSFORM = 5,
  BR_ERR_FORMAT = 6,
  BR_ERR_IO = 7,
  BR_ERR_PRECONDITION = 8,
  BR_ERR_TRAINING = 9,
  BR_ERR_SINGULARITY = 10,
  BR_ERR_DEGENERATE_LAYER = 11,
  BR_ERR_EXPORT = 12,
  BR_ERR_INVALID_ARGUMENT = 13,
  BR_ERR_INTERNAL = 14
} br_status;

typedef enum br_mode {
  BR_MODE_AS_CONFIGURED = -1, /* each rectifier keeps its own mode */
  BR_MODE_LINEAR = 0,
  BR_MODE_STEP = 1
} br_mode;

typedef struct br_dataset br_dataset;
typedef struct br_network br_network;
typedef struct br_packed_model br_packed_model;

BR_API const char* br_version(void);
BR_API const char* br_status_name(br_status status);
BR_API const char* br_last_error(void);

/* ---- datasets ---------------------------------------------------------- */

/* kind is "mnist" or "cifar10". Either output pointer may be NULL. */
BR_API br_status br_dataset_load(const char* kind, const char* dir, br_dataset** train,
                                 br_dataset** test);
/* Moves the last `count` samples of train into *validation. */
BR_API br_status br_dataset_split_validation(br_dataset* train, size_t count,
                                             br_dataset** validation);
/* Keeps only the first max_samples samples (no-op when already smaller). */
BR_API br_status br_dataset_truncate(br_dataset* ds, size_t max_samples);
BR_API size_t br_dataset_size(const br_dataset* ds);
BR_API void br_dataset_free(br_dataset* ds);

/* ---- networks ---------------------------------------------------------- */

/* Builds a preset ("lenet-small", "mnist-mlp", "cifar-quick") and
 * initializes it from `seed`. binarize_mask: "last", "all", "none" or one
 * 0/1 character per activation slot; NULL means "last". */
BR_API br_status br_network_create(const char* preset, double width_mult,
                                   const char* binarize_mask, uint64_t seed, br_network** out);
BR_API void br_network_free(br_network* net);
BR_API br_status br_network_save(const br_network* net, const char* path);
/* Loads parameters into a network built with the same preset options. */
BR_API br_status br_network_load(br_network* net, const char* path);
BR_API br_status br_network_set_mode(br_network* net, br_mode mode);
BR_API br_status br_network_mean_abs_slope(const br_network* net, double* out);
BR_API br_status br_network_num_rectifiers(const br_network* net, size_t* out);

/* ---- training ---------------------------------------------------------- */

typedef struct br_train_config {
  double phase1_lambda;
  double phase2_lambda;
  int phase1_epochs;
  int phase2_epochs;
  double growth_cap;
  double learning_rate;
  double momentum;
  double weight_decay;
  size_t batch_size;
  int lr_step_epochs;
  double lr_gamma;
  uint64_t seed;
  size_t telemetry_samples;     /* 0 = whole evaluation set */
  const char* epoch_csv;        /* per-epoch metrics; NULL to skip */
  const char* binarization_csv; /* per-epoch binarization curve; NULL to skip */
  int verbose;                  /* one progress line per epoch on stderr */
} br_train_config;

BR_API void br_train_config_defaults(br_train_config* config);
BR_API br_status br_train(br_network* net, const br_dataset* train, const br_dataset* eval,
                          const br_train_config* config);
/* Head-only training with every rectifier in Step mode. */
BR_API br_status br_finetune_head(br_network* net, const br_dataset* train,
                                  const br_train_config* config, int epochs);
/* sign() thresholding of all affine weights but the first layer, then bias
 * and slope finetuning; leaves the network in Step mode. */
BR_API br_status br_ternarize(br_network* net, const br_dataset* train,
                              const br_train_config* config, int epochs);

/* ---- evaluation and analysis ------------------------------------------ */

typedef struct br_eval_result {
  double accuracy; /* top-1 in [0, 1] */
  double loss;     /* mean cross-entropy; 0 for packed models */
  size_t samples;
} br_eval_result;

/* predictions (nullable) must hold br_dataset_size(ds) ints. */
BR_API br_status br_evaluate(const br_network* net, const br_dataset* ds, br_mode mode,
                             br_eval_result* out, int* predictions);
/* Binarization curve (epoch column 0) of every bounded layer. */
BR_API br_status br_binarization_csv(const br_network* net, const br_dataset* ds,
                                     const char* path);
/* Firing matrix of bounded layer `rectifier` (ordinal) plus split report.
 * Fails with BR_ERR_PRECONDITION when the layer is not binary on at least
 * min_binary of the samples for every unit. */
BR_API br_status br_analyze(const br_network* net, const br_dataset* ds, size_t rectifier,
                            double min_binary, double tau_pos, double tau_neg,
                            const char* firing_csv, const char* split_report,
                            size_t* split_units);

/* ---- packed inference -------------------------------------------------- */

/* Exports the network in Step mode. */
BR_API br_status br_export_packed(const br_network* net, const char* path);
BR_API br_status br_packed_load(const char* path, br_packed_model** out);
BR_API void br_packed_free(br_packed_model* model);
/* timing_csv (nullable) gets one row per layer: layer,kind,calls,seconds. */
BR_API br_status br_packed_evaluate(const br_packed_model* model, const br_dataset* ds,
                                    br_eval_result* out, int* predictions,
                                    const char* timing_csv);

#ifdef __cplusplus
}
#endif

#endif /* BINREP_BINREP_H */

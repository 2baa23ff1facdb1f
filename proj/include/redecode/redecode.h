/* Stable C interface to the redecode library.
 *
 * Every function returns an rd_status; on failure rd_last_error() gives a
 * message for the calling thread. Strings handed out by the library are
 * released with rd_string_free. */

#ifndef REDECODE_REDECODE_H
#define REDECODE_REDECODE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(REDECODE_BUILDING_LIBRARY)
#define RD_API __declspec(dllexport)
#else
#define RD_API __declspec(dllimport)
#endif
#else
#define RD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values double as process exit codes for the command-line tool. */
typedef enum rd_status {
  RD_OK = 0,
  RD_ERR_USAGE = 1, /* bad arguments or configuration */
  RD_ERR_DATA = 2,  /* missing or malformed input data */
  RD_ERR_MODEL = 3  /* checkpoint, shape or numerical failure */
} rd_status;

typedef struct rd_model rd_model;
typedef struct rd_train_result rd_train_result;

RD_API const char* rd_version(void);
RD_API const char* rd_last_error(void);
RD_API void rd_string_free(char* text);

/* Parses a decimal seed as used by the REDECODE_SEED variable. */
RD_API rd_status rd_parse_seed(const char* text, uint64_t* seed);

/* Trains from a key=value config file into out_dir. When has_seed is
 * nonzero, seed replaces the config's seed. result may be NULL. */
RD_API rd_status rd_train(const char* config_path, const char* out_dir, int has_seed, uint64_t seed,
                          rd_train_result** result);
RD_API uint64_t rd_train_result_steps(const rd_train_result* result);
RD_API size_t rd_train_result_num_decoders(const rd_train_result* result);
RD_API double rd_train_result_ce(const rd_train_result* result, size_t decoder);
RD_API double rd_train_result_kl(const rd_train_result* result);
RD_API size_t rd_train_result_pairs(const rd_train_result* result);
RD_API size_t rd_train_result_vocab_size(const rd_train_result* result);
RD_API const char* rd_train_result_checkpoint(const rd_train_result* result);
RD_API void rd_train_result_free(rd_train_result* result);

RD_API rd_status rd_model_load(const char* checkpoint_path, rd_model** model);
RD_API void rd_model_free(rd_model* model);
RD_API size_t rd_model_num_decoders(const rd_model* model);
RD_API size_t rd_model_vocab_size(const rd_model* model);
/* Seed stored in the checkpoint's training configuration. */
RD_API uint64_t rd_model_train_seed(const rd_model* model);

/* One "decoder_index<TAB>text" line per decoder for each input line. */
RD_API rd_status rd_generate_file(const rd_model* model, const char* input_path, uint64_t seed, char** output);
RD_API rd_status rd_generate(const rd_model* model, const char* const* sentences, size_t count, uint64_t seed,
                             char** output);

/* Writes reports/scores.csv and reports/scores.txt under out_dir; table
 * (optional) receives the plain-text report. */
RD_API rd_status rd_eval(const rd_model* model, const char* pairs_path, const char* out_dir, uint64_t seed,
                         char** table);

/* Writes out_dir/decoder<i>.csv, one attention matrix per decoder. */
RD_API rd_status rd_attn_dump(const rd_model* model, const char* sentence, const char* out_dir, uint64_t seed);

#ifdef __cplusplus
}
#endif

#endif /* REDECODE_REDECODE_H */

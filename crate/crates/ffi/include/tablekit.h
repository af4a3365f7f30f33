#ifndef TABLEKIT_H
#define TABLEKIT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Result codes.
 */
typedef enum TkStatus {
  TK_STATUS_OK = 0,
  TK_STATUS_NULL_ARGUMENT = 1,
  TK_STATUS_INVALID_UTF8 = 2,
  TK_STATUS_INVALID_ARGUMENT = 3,
  TK_STATUS_PARSE = 4,
  TK_STATUS_IO = 5,
  TK_STATUS_CONFIG = 6,
  TK_STATUS_RETRIEVAL = 7,
  TK_STATUS_IMAGING = 8,
  TK_STATUS_PIPELINE = 9,
  TK_STATUS_PANIC = 10,
} TkStatus;

/*
 A parsed table markup tree.
 */
typedef struct TkMarkup TkMarkup;

/*
 A configured recognition pipeline together with its neighbor store.
 */
typedef struct TkRunner TkRunner;

/*
 An opened neighbor store.
 */
typedef struct TkStore TkStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. Owned by the
 library.
 */
const char *tk_last_error(void);

/*
 Library version as a static string.
 */
const char *tk_version(void);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must come from this library and not be freed twice.
 */
void tk_string_free(char *s);

/*
 Parses table markup. `lenient` accepts unclosed tags and stray text.

 # Safety
 `text` must be a NUL-terminated string; `out` must be writable.
 */
enum TkStatus tk_markup_parse(const char *text, bool lenient, struct TkMarkup **out);

/*
 # Safety
 `markup` must come from [`tk_markup_parse`] and not be freed twice.
 */
void tk_markup_free(struct TkMarkup *markup);

/*
 Number of nodes in the tree (table, rows and cells).

 # Safety
 `markup` must be a live handle.
 */
enum TkStatus tk_markup_node_count(const struct TkMarkup *markup, size_t *out);

/*
 Normalized markup text of a parsed tree.

 # Safety
 `markup` must be a live handle; free the result with [`tk_string_free`].
 */
enum TkStatus tk_markup_to_string(const struct TkMarkup *markup, char **out);

/*
 TEDS similarity in [0, 1]. `structure_only` ignores cell content.

 # Safety
 Both handles must be live; `out` must be writable.
 */
enum TkStatus tk_teds(const struct TkMarkup *pred,
                      const struct TkMarkup *gold,
                      bool structure_only,
                      double *out);

/*
 Micro-F1 between two JSON arrays of strings.

 # Safety
 Both arguments must be NUL-terminated strings.
 */
enum TkStatus tk_micro_f1(const char *pred_json, const char *gold_json, double *out);

/*
 Markup for one ground-truth record given as JSON (`id`, `image_path`,
 `cells`).

 # Safety
 `record_json` must be a NUL-terminated string; free the result with
 [`tk_string_free`].
 */
enum TkStatus tk_cells_to_markup(const char *record_json, char **out);

/*
 Writes `input` degraded by the scenario with the given code (BL, UE, OE,
 UB, MB, TB, T20, T40) to `output` as PNG.

 # Safety
 All strings must be NUL-terminated.
 */
enum TkStatus tk_degrade(const char *input,
                         const char *scenario,
                         uint64_t seed,
                         const char *output);

/*
 # Safety
 `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum TkStatus tk_store_open(const char *dir, struct TkStore **out);

/*
 # Safety
 `store` must come from [`tk_store_open`] and not be freed twice.
 */
void tk_store_free(struct TkStore *store);

/*
 # Safety
 `store` must be a live handle.
 */
enum TkStatus tk_store_len(const struct TkStore *store, size_t *out);

/*
 Most similar stored image to the image at `image_path`.

 # Safety
 `store` must be a live handle; free `out_id` with [`tk_string_free`].
 */
enum TkStatus tk_store_nearest(const struct TkStore *store,
                               const char *image_path,
                               char **out_id,
                               double *out_similarity);

/*
 Builds a runner from a TOML run configuration and a store directory.

 # Safety
 Strings must be NUL-terminated; `out` must be writable.
 */
enum TkStatus tk_runner_open(const char *config_path, const char *store_dir, struct TkRunner **out);

/*
 # Safety
 `runner` must come from [`tk_runner_open`] and not be freed twice.
 */
void tk_runner_free(struct TkRunner *runner);

/*
 Recognizes one image and returns its run report as JSON. Per-sample
 failures are reported inside the JSON, not as a status. `gold_markup`
 may be null.

 # Safety
 `runner` must be a live handle; free the result with [`tk_string_free`].
 */
enum TkStatus tk_runner_run(const struct TkRunner *runner,
                            const char *sample_id,
                            const char *image_path,
                            const char *gold_markup,
                            char **out_report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TABLEKIT_H */

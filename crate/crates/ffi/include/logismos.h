#ifndef LOGISMOS_H
#define LOGISMOS_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LgsStatus {
  LGS_STATUS_OK = 0,
  LGS_STATUS_NULL_POINTER = 1,
  LGS_STATUS_INVALID_INPUT = 2,
  LGS_STATUS_IO = 3,
  LGS_STATUS_FORMAT = 4,
  LGS_STATUS_INFEASIBLE = 5,
  LGS_STATUS_GEOMETRY = 6,
  LGS_STATUS_OUT_OF_RANGE = 7,
  LGS_STATUS_PANIC = 8,
  LGS_STATUS_OTHER = 9,
} LgsStatus;

typedef struct LgsGraph LgsGraph;

typedef struct LgsSolution LgsSolution;

typedef struct LgsVolume LgsVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *lgs_version(void);

/**
 * Copies the last error of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t lgs_last_error_message(char *buf, size_t len);

/**
 * Builds a volume from `nx*ny*nz` samples in x-fastest order.
 *
 * # Safety
 * `dims`, `spacing` and `origin` point to three values each; `data` to
 * `len` floats; `out` is writable.
 */
enum LgsStatus lgs_volume_new(const size_t *dims,
                              const double *spacing,
                              const double *origin,
                              const float *data,
                              size_t len,
                              struct LgsVolume **out);

/**
 * Reads a volume written by the toolkit (`.vol` payload with its `.json`
 * header next to it).
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum LgsStatus lgs_volume_read(const char *path, struct LgsVolume **out);

/**
 * # Safety
 * `vol` is a live handle; `dims` points to three writable values.
 */
enum LgsStatus lgs_volume_dims(const struct LgsVolume *vol, size_t *dims);

/**
 * Trilinear sample at a world position in mm.
 *
 * # Safety
 * `vol` is a live handle; `out` is writable.
 */
enum LgsStatus lgs_volume_sample(const struct LgsVolume *vol,
                                 double x,
                                 double y,
                                 double z,
                                 double *out);

/**
 * # Safety
 * `vol` is null or a handle from this library, freed once.
 */
void lgs_volume_free(struct LgsVolume *vol);

/**
 * Loads a graph file (`graph.lgsg` from a segmentation run).
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum LgsStatus lgs_graph_read(const char *path, struct LgsGraph **out);

/**
 * # Safety
 * `bytes` points to `len` readable bytes; `out` is writable.
 */
enum LgsStatus lgs_graph_from_bytes(const uint8_t *bytes, size_t len, struct LgsGraph **out);

/**
 * Number of columns and nodes per column of time-point `t`, object `o`.
 *
 * # Safety
 * `g` is a live handle; `n_columns` and `n_nodes` are writable.
 */
enum LgsStatus lgs_graph_shape(const struct LgsGraph *g,
                               size_t t,
                               size_t o,
                               size_t *n_columns,
                               size_t *n_nodes);

/**
 * Replaces the node costs of one column with `n_nodes` values. The next
 * solve reuses the previous flow.
 *
 * # Safety
 * `g` is a live handle; `costs` points to `len` doubles.
 */
enum LgsStatus lgs_graph_set_column_costs(struct LgsGraph *g,
                                          size_t t,
                                          size_t o,
                                          size_t s,
                                          size_t column,
                                          const double *costs,
                                          size_t len);

/**
 * Solves for the minimum-cost surfaces.
 *
 * # Safety
 * `g` is a live handle; `out` is writable.
 */
enum LgsStatus lgs_graph_solve(struct LgsGraph *g, struct LgsSolution **out);

/**
 * # Safety
 * `g` is null or a handle from this library, freed once.
 */
void lgs_graph_free(struct LgsGraph *g);

/**
 * Copies the chosen node index of every column of surface `(t, o, s)` into
 * `buf`. `len_out` receives the column count; with a null `buf` only the
 * count is reported.
 *
 * # Safety
 * `sol` is a live handle; `buf` is null or holds `cap` writable values.
 */
enum LgsStatus lgs_solution_surface(const struct LgsSolution *sol,
                                    size_t t,
                                    size_t o,
                                    size_t s,
                                    uint32_t *buf,
                                    size_t cap,
                                    size_t *len_out);

/**
 * Number of hard constraints the solution breaks; zero for solver output.
 *
 * # Safety
 * Both handles are live; `out` is writable.
 */
enum LgsStatus lgs_solution_violations(const struct LgsGraph *g,
                                       const struct LgsSolution *sol,
                                       size_t *out);

/**
 * Writes surface `(t, o, s)` as a JSON mesh.
 *
 * # Safety
 * Both handles are live; `path` is a NUL-terminated string.
 */
enum LgsStatus lgs_solution_write_mesh(const struct LgsGraph *g,
                                       const struct LgsSolution *sol,
                                       size_t t,
                                       size_t o,
                                       size_t s,
                                       const char *path);

/**
 * # Safety
 * `sol` is null or a handle from this library, freed once.
 */
void lgs_solution_free(struct LgsSolution *sol);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOGISMOS_H */

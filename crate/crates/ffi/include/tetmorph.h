#ifndef TETMORPH_H
#define TETMORPH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum TmStatus {
  TM_STATUS_OK = 0,
  TM_STATUS_INVALID_ARGUMENT = 1,
  TM_STATUS_NUMERIC = 2,
  TM_STATUS_CONTRACT_VIOLATION = 3,
  TM_STATUS_FIT_DIVERGED = 4,
  TM_STATUS_FORMAT = 5,
  TM_STATUS_IO = 6,
  TM_STATUS_NULL_POINTER = 7,
  TM_STATUS_PANIC = 8,
} TmStatus;

// Opaque tetrahedral grid.
typedef struct TmGrid TmGrid;

// Opaque triangle mesh.
typedef struct TmMesh TmMesh;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty when none.
// Valid until the next failing call on the same thread.
const char *tm_last_error(void);

// Library version as a static string.
const char *tm_version(void);

// Builds an R×R×R grid over `[-1, 1]^3` with zero SDF and offsets.
//
// # Safety
// `out` must be a valid pointer to writable storage for a handle.
enum TmStatus tm_grid_new(size_t resolution, struct TmGrid **out);

// # Safety
// `path_utf8` must be a NUL-terminated string and `out` writable.
enum TmStatus tm_grid_load(const char *path_utf8, struct TmGrid **out);

// # Safety
// `grid` must come from this library; `path_utf8` must be NUL-terminated.
enum TmStatus tm_grid_save(const struct TmGrid *grid, const char *path_utf8);

// Releases a grid; null is ignored.
//
// # Safety
// `grid` must come from this library and not be used afterwards.
void tm_grid_free(struct TmGrid *grid);

// Vertex count, or 0 for a null handle.
//
// # Safety
// `grid` must be null or come from this library.
size_t tm_grid_vertex_count(const struct TmGrid *grid);

// # Safety
// `grid` must be null or come from this library.
size_t tm_grid_tet_count(const struct TmGrid *grid);

// Copies the deformed vertex positions (3 per vertex).
//
// # Safety
// `out` must hold `capacity` doubles.
enum TmStatus tm_grid_vertices(const struct TmGrid *grid, double *out, size_t capacity);

// Replaces the SDF; `len` must equal the vertex count.
//
// # Safety
// `values` must hold `len` doubles.
enum TmStatus tm_grid_set_sdf(struct TmGrid *grid, const double *values, size_t len);

// Sets the SDF to the signed distance of a sphere centred at the origin.
//
// # Safety
// `grid` must come from this library.
enum TmStatus tm_grid_set_sdf_sphere(struct TmGrid *grid, double radius);

// Replaces the vertex offsets (3 per vertex). Offsets are clamped to the
// grid's bound and masked on the domain boundary.
//
// # Safety
// `offsets` must hold `len` doubles.
enum TmStatus tm_grid_apply_offsets(struct TmGrid *grid, const double *offsets, size_t len);

// Extracts the zero level set of the grid.
//
// # Safety
// `grid` must come from this library; `out` must be writable.
enum TmStatus tm_march(const struct TmGrid *grid, struct TmMesh **out);

// # Safety
// `path_utf8` must be NUL-terminated and `out` writable.
enum TmStatus tm_mesh_load_obj(const char *path_utf8, struct TmMesh **out);

// # Safety
// `mesh` must come from this library; `path_utf8` must be NUL-terminated.
enum TmStatus tm_mesh_save_obj(const struct TmMesh *mesh, const char *path_utf8);

// Releases a mesh; null is ignored.
//
// # Safety
// `mesh` must come from this library and not be used afterwards.
void tm_mesh_free(struct TmMesh *mesh);

// # Safety
// `mesh` must be null or come from this library.
size_t tm_mesh_vertex_count(const struct TmMesh *mesh);

// # Safety
// `mesh` must be null or come from this library.
size_t tm_mesh_triangle_count(const struct TmMesh *mesh);

// Copies vertex positions (3 doubles per vertex).
//
// # Safety
// `out` must hold `capacity` doubles.
enum TmStatus tm_mesh_positions(const struct TmMesh *mesh, double *out, size_t capacity);

// Copies triangle indices (3 per triangle, counter-clockwise from outside).
//
// # Safety
// `out` must hold `capacity` values.
enum TmStatus tm_mesh_triangles(const struct TmMesh *mesh, uint32_t *out, size_t capacity);

// Enclosed volume of a closed mesh.
//
// # Safety
// `mesh` must come from this library; `out` must be writable.
enum TmStatus tm_mesh_volume(const struct TmMesh *mesh, double *out);

// 1 when every edge is shared by exactly two triangles, else 0.
//
// # Safety
// `mesh` must be null or come from this library.
int32_t tm_mesh_is_watertight(const struct TmMesh *mesh);

// Squared chamfer distance between two point sets of `na` and `nb` points.
//
// # Safety
// `a` and `b` must hold `3 * na` and `3 * nb` doubles.
enum TmStatus tm_chamfer(const double *a, size_t na, const double *b, size_t nb, double *out);

// Mean endpoint error between corresponding points.
//
// # Safety
// `pred` and `gt` must each hold `3 * n` doubles.
enum TmStatus tm_epe(const double *pred, const double *gt, size_t n, double *out);

// Fraction of correspondences closer than `threshold`.
//
// # Safety
// `pred` and `gt` must each hold `3 * n` doubles.
enum TmStatus tm_accuracy(const double *pred,
                          const double *gt,
                          size_t n,
                          double threshold,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TETMORPH_H */

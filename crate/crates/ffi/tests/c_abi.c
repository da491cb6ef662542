#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "tetmorph.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        TmStatus s_ = (call);                                              \
        if (s_ != TM_STATUS_OK) {                                          \
            fprintf(stderr, "%s -> %d: %s\n", #call, s_, tm_last_error()); \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    TmGrid *grid = NULL;
    CHECK(tm_grid_new(16, &grid));
    CHECK(tm_grid_set_sdf_sphere(grid, 0.8));
    TmMesh *mesh = NULL;
    CHECK(tm_march(grid, &mesh));
    if (!tm_mesh_is_watertight(mesh)) {
        fprintf(stderr, "not watertight\n");
        return 1;
    }
    double vol = 0.0;
    CHECK(tm_mesh_volume(mesh, &vol));
    double exact = 4.0 / 3.0 * M_PI * 0.512;
    if (fabs(vol - exact) / exact > 0.02) {
        fprintf(stderr, "volume %f vs %f\n", vol, exact);
        return 1;
    }
    size_t n = tm_mesh_vertex_count(mesh);
    double *pos = malloc(3 * n * sizeof(double));
    CHECK(tm_mesh_positions(mesh, pos, 3 * n));
    double cd = -1.0;
    CHECK(tm_chamfer(pos, n, pos, n, &cd));
    if (cd != 0.0) {
        return 1;
    }
    if (tm_grid_new(0, &grid) != TM_STATUS_INVALID_ARGUMENT || tm_last_error()[0] == '\0') {
        fprintf(stderr, "expected invalid argument\n");
        return 1;
    }
    free(pos);
    tm_mesh_free(mesh);
    tm_grid_free(grid);
    printf("ok %s\n", tm_version());
    return 0;
}

/* Iterative complex fixture: each pass multiplies two matrices and solves
 * the product against a fixed triangular factor, reusing every buffer.
 *
 * Usage: fixture_iterative [dim] [iters] */

#include "common.h"

#include <stdio.h>
#include <stdlib.h>

int main(int argc, char **argv) {
    int d = argc > 1 ? atoi(argv[1]) : 320;
    int iters = argc > 2 ? atoi(argv[2]) : 3;
    if (d < 1 || iters < 1) {
        fprintf(stderr, "usage: %s [dim] [iters]\n", argv[0]);
        return 1;
    }

    size_t nn = (size_t)d * d;
    size_t zz = 2 * nn;  /* interleaved re/im */
    double *A = xalloc(zz);
    double *B = xalloc(zz);
    double *C = xalloc(zz);
    double *T = xalloc(zz);
    lcg_fill(A, zz, 31);
    lcg_fill(B, zz, 32);
    lcg_fill(T, zz, 33);
    /* diagonally dominant factor keeps the solve well conditioned */
    for (int j = 0; j < d; j++)
        T[2 * ((size_t)j * d + j)] += 2.0 * d;

    double one[2] = {1.0, 0.0}, zero[2] = {0.0, 0.0};
    for (int it = 0; it < iters; it++) {
        long t0 = now_ns();
        zgemm_("N", "N", &d, &d, &d, one, A, &d, B, &d, zero, C, &d);
        print_call("zgemm", d, d, d, now_ns() - t0, cksum(C, zz));
        t0 = now_ns();
        ztrsm_("L", "L", "N", "N", &d, &d, one, T, &d, C, &d);
        print_call("ztrsm", d, d, 0, now_ns() - t0, cksum(C, zz));
        /* feed the solve result back into the next multiply */
        double *swap = B;
        B = C;
        C = swap;
    }

    free(A);
    free(B);
    free(C);
    free(T);
    return 0;
}

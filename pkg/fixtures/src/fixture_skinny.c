/* Tall-skinny projection: C(m x n) = A(k x m)^T B(k x n). The default is
 * the full reference shape and needs about 1.9 GB; pass smaller dims on
 * small hosts.
 *
 * Usage: fixture_skinny [m] [n] [k] */

#include "common.h"

#include <stdio.h>
#include <stdlib.h>

int main(int argc, char **argv) {
    int m = argc > 1 ? atoi(argv[1]) : 32;
    int n = argc > 2 ? atoi(argv[2]) : 2400;
    int k = argc > 3 ? atoi(argv[3]) : 93536;
    if (m < 1 || n < 1 || k < 1) {
        fprintf(stderr, "usage: %s [m] [n] [k]\n", argv[0]);
        return 1;
    }

    double *A = xalloc((size_t)k * m);
    double *B = xalloc((size_t)k * n);
    double *C = xalloc((size_t)m * n);
    lcg_fill(A, (size_t)k * m, 51);
    lcg_fill(B, (size_t)k * n, 52);

    double one = 1.0, zero = 0.0;
    long t0 = now_ns();
    dgemm_("T", "N", &m, &n, &k, &one, A, &k, B, &k, &zero, C, &m);
    print_call("dgemm", m, n, k, now_ns() - t0, cksum(C, (size_t)m * n));

    free(A);
    free(B);
    free(C);
    return 0;
}

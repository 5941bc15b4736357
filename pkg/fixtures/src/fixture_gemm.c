/* Square dgemm fixture.
 *
 * Usage: fixture_gemm [dim] [iters] [identity]
 *
 * identity mode sets A to the identity, so the product must reproduce B
 * exactly; the reference checksum is printed first as a REF line. */

#include "common.h"

#include <stdio.h>
#include <stdlib.h>
#include <string.h>

int main(int argc, char **argv) {
    int d = argc > 1 ? atoi(argv[1]) : 512;
    int iters = argc > 2 ? atoi(argv[2]) : 1;
    int identity = argc > 3 && strcmp(argv[3], "identity") == 0;
    if (d < 1 || iters < 1) {
        fprintf(stderr, "usage: %s [dim] [iters] [identity]\n", argv[0]);
        return 1;
    }

    size_t nn = (size_t)d * d;
    double *A = xalloc(nn);
    double *B = xalloc(nn);
    double *C = xalloc(nn);
    if (identity) {
        memset(A, 0, nn * sizeof(double));
        for (int i = 0; i < d; i++)
            A[(size_t)i * d + i] = 1.0;
    } else {
        lcg_fill(A, nn, 11);
    }
    lcg_fill(B, nn, 22);
    if (identity)
        print_ref(cksum(B, nn));

    double one = 1.0, zero = 0.0;
    for (int it = 0; it < iters; it++) {
        long t0 = now_ns();
        dgemm_("N", "N", &d, &d, &d, &one, A, &d, B, &d, &zero, C, &d);
        print_call("dgemm", d, d, d, now_ns() - t0, cksum(C, nn));
    }

    free(A);
    free(B);
    free(C);
    return 0;
}

#define _POSIX_C_SOURCE 200809L

#include "common.h"

#include <inttypes.h>
#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <time.h>

/* Knuth MMIX linear congruential generator. Only the top 53 bits feed the
 * double, so fills are identical on every platform. */
#define LCG_MUL 6364136223846793005ULL
#define LCG_INC 1442695040888963407ULL

double *xalloc(size_t doubles) {
    double *p = malloc(doubles * sizeof(double));
    if (p == NULL) {
        fprintf(stderr, "fixture: allocation of %zu doubles failed\n", doubles);
        exit(1);
    }
    return p;
}

void lcg_fill(double *dst, size_t n, uint64_t seed) {
    uint64_t s = seed * LCG_MUL + LCG_INC;
    for (size_t i = 0; i < n; i++) {
        s = s * LCG_MUL + LCG_INC;
        dst[i] = (double)(s >> 11) * (1.0 / 9007199254740992.0) - 0.5;
    }
}

double cksum(const double *x, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; i++)
        s += fabs(x[i]);
    return s;
}

long now_ns(void) {
    struct timespec ts;
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return ts.tv_sec * 1000000000L + ts.tv_nsec;
}

static uint64_t bits(double v) {
    uint64_t u;
    memcpy(&u, &v, sizeof u);
    return u;
}

void print_call(const char *routine, int m, int n, int k, long ns, double sum) {
    printf("CALL %s m=%d n=%d k=%d ns=%ld cksum=%016" PRIx64 "\n",
           routine, m, n, k, ns, bits(sum));
}

void print_ref(double sum) {
    printf("REF cksum=%016" PRIx64 "\n", bits(sum));
}

#ifndef FIXTURE_COMMON_H
#define FIXTURE_COMMON_H

#include <stddef.h>
#include <stdint.h>

/* Fortran ABI entry points, resolved at link time or through a preload. */
void dgemm_(const char *transa, const char *transb, const int *m, const int *n,
            const int *k, const double *alpha, const double *a, const int *lda,
            const double *b, const int *ldb, const double *beta, double *c,
            const int *ldc);
void zgemm_(const char *transa, const char *transb, const int *m, const int *n,
            const int *k, const double *alpha, const double *a, const int *lda,
            const double *b, const int *ldb, const double *beta, double *c,
            const int *ldc);
void ztrsm_(const char *side, const char *uplo, const char *transa,
            const char *diag, const int *m, const int *n, const double *alpha,
            const double *a, const int *lda, double *b, const int *ldb);

/* Exits nonzero with a message on allocation failure. */
double *xalloc(size_t doubles);

/* Deterministic fill in [-0.5, 0.5). */
void lcg_fill(double *dst, size_t n, uint64_t seed);

/* Serial absolute-value sum; the order is part of the contract. */
double cksum(const double *x, size_t n);

long now_ns(void);

/* Line protocol: CALL <routine> m=<m> n=<n> k=<k> ns=<wall> cksum=<hex>.
 * The checksum is the IEEE-754 bit pattern of the double, so equal strings
 * mean bit-identical results and parsed values support tolerance checks. */
void print_call(const char *routine, int m, int n, int k, long ns, double sum);
void print_ref(double sum);

#endif

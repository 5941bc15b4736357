/* Concurrency fixture: several threads issue gemm calls at once to stress
 * the interposer's locking. Each thread's data depends only on its id, so
 * the multiset of CALL lines is deterministic even though their order is
 * not.
 *
 * Usage: fixture_threads [threads] [calls_per_thread] [small_dim] [big_dim]
 *                        [big_every]
 * Every big_every-th call uses big_dim; big_every <= 0 disables big calls. */

#include "common.h"

#include <pthread.h>
#include <stdio.h>
#include <stdlib.h>

typedef struct {
    int tid;
    int calls;
    int small;
    int big;
    int every;
} job;

static void *run(void *arg) {
    job *j = arg;
    int dmax = j->big > j->small ? j->big : j->small;
    size_t nn = (size_t)dmax * dmax;
    double *A = xalloc(nn);
    double *B = xalloc(nn);
    double *C = xalloc(nn);
    lcg_fill(A, nn, 100 + (uint64_t)j->tid);
    lcg_fill(B, nn, 200 + (uint64_t)j->tid);

    double one = 1.0, zero = 0.0;
    for (int c = 0; c < j->calls; c++) {
        int d = (j->every > 0 && c % j->every == 0) ? j->big : j->small;
        long t0 = now_ns();
        dgemm_("N", "N", &d, &d, &d, &one, A, &d, B, &d, &zero, C, &d);
        print_call("dgemm", d, d, d, now_ns() - t0, cksum(C, (size_t)d * d));
    }

    free(A);
    free(B);
    free(C);
    return NULL;
}

int main(int argc, char **argv) {
    int threads = argc > 1 ? atoi(argv[1]) : 8;
    int calls = argc > 2 ? atoi(argv[2]) : 1250;
    int small = argc > 3 ? atoi(argv[3]) : 48;
    int big = argc > 4 ? atoi(argv[4]) : 72;
    int every = argc > 5 ? atoi(argv[5]) : 4;
    if (threads < 1 || calls < 1 || small < 1 || big < 1) {
        fprintf(stderr,
                "usage: %s [threads] [calls_per_thread] [small_dim] [big_dim] "
                "[big_every]\n",
                argv[0]);
        return 1;
    }

    pthread_t *ids = malloc((size_t)threads * sizeof(pthread_t));
    job *jobs = malloc((size_t)threads * sizeof(job));
    if (ids == NULL || jobs == NULL) {
        fprintf(stderr, "fixture: thread table allocation failed\n");
        return 1;
    }
    for (int t = 0; t < threads; t++) {
        jobs[t] = (job){t, calls, small, big, every};
        if (pthread_create(&ids[t], NULL, run, &jobs[t]) != 0) {
            fprintf(stderr, "fixture: pthread_create failed\n");
            return 1;
        }
    }
    for (int t = 0; t < threads; t++)
        pthread_join(ids[t], NULL);

    printf("DONE calls=%d\n", threads * calls);
    free(ids);
    free(jobs);
    return 0;
}

/* Preload shim: intercepts Fortran level-3 BLAS symbols, applies the
 * size gate, accounts data movement under the active policy, and forwards
 * every call to the next BLAS in link order via dlsym(RTLD_NEXT).
 *
 * The "device" here is the mock backend: kernels run on the CPU library
 * but calls that pass the gate are accounted as device executions, with
 * first-use page residency tracked in process.  Migration is simulated
 * (bookkeeping only); numerical results are bit-identical to the
 * uninterposed run by construction.
 *
 * Configuration (environment, parsed once at load):
 *   SCILIB_MODE       off | memcopy | counter | first_use   (first_use)
 *   SCILIB_THRESHOLD  offload gate                           (500)
 *   SCILIB_TRACE      trace file path                        (unset)
 *   SCILIB_DEBUG      0-3                                    (0)
 *   SCILIB_CAPACITY   device pool bytes, K/M/G/T suffix ok   (unset)
 *
 * Trace lines and the stats file use the C locale's decimal point; the
 * shim never calls setlocale.
 */

#define _GNU_SOURCE
#include <ctype.h>
#include <dlfcn.h>
#include <math.h>
#include <pthread.h>
#include <stdatomic.h>
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <time.h>
#include <unistd.h>

enum mode { MODE_OFF, MODE_MEMCOPY, MODE_COUNTER, MODE_FIRST_USE };
enum family { FAM_GEMM, FAM_SYMM, FAM_HEMM, FAM_SYRK, FAM_HERK,
              FAM_SYR2K, FAM_HER2K, FAM_TRMM, FAM_TRSM };

static const char *FAM_NAME[] = { "gemm", "symm", "hemm", "syrk", "herk",
                                  "syr2k", "her2k", "trmm", "trsm" };

/* routine ids: 4 precisions x 6 families + 2 x 3 hermitian */
enum {
  R_SGEMM, R_DGEMM, R_CGEMM, R_ZGEMM,
  R_SSYMM, R_DSYMM, R_CSYMM, R_ZSYMM,
  R_SSYRK, R_DSYRK, R_CSYRK, R_ZSYRK,
  R_SSYR2K, R_DSYR2K, R_CSYR2K, R_ZSYR2K,
  R_STRMM, R_DTRMM, R_CTRMM, R_ZTRMM,
  R_STRSM, R_DTRSM, R_CTRSM, R_ZTRSM,
  R_CHEMM, R_ZHEMM, R_CHERK, R_ZHERK, R_CHER2K, R_ZHER2K,
  N_ROUTINES
};

typedef struct {
  const char *name;     /* base symbol, e.g. "dgemm" */
  int family;
  char prec;            /* 's' 'd' 'c' 'z' */
  int elem_bytes;
  int cplx;             /* complex element type */
  int alpha_cplx;       /* alpha passed as complex pair */
  int beta_cplx;        /* beta passed as complex pair */
} routine_desc;

#define RD(nm, fam, pr, eb, cx, ac, bc) { nm, fam, pr, eb, cx, ac, bc }
static const routine_desc RT[N_ROUTINES] = {
  RD("sgemm", FAM_GEMM, 's', 4, 0, 0, 0),  RD("dgemm", FAM_GEMM, 'd', 8, 0, 0, 0),
  RD("cgemm", FAM_GEMM, 'c', 8, 1, 1, 1),  RD("zgemm", FAM_GEMM, 'z', 16, 1, 1, 1),
  RD("ssymm", FAM_SYMM, 's', 4, 0, 0, 0),  RD("dsymm", FAM_SYMM, 'd', 8, 0, 0, 0),
  RD("csymm", FAM_SYMM, 'c', 8, 1, 1, 1),  RD("zsymm", FAM_SYMM, 'z', 16, 1, 1, 1),
  RD("ssyrk", FAM_SYRK, 's', 4, 0, 0, 0),  RD("dsyrk", FAM_SYRK, 'd', 8, 0, 0, 0),
  RD("csyrk", FAM_SYRK, 'c', 8, 1, 1, 1),  RD("zsyrk", FAM_SYRK, 'z', 16, 1, 1, 1),
  RD("ssyr2k", FAM_SYR2K, 's', 4, 0, 0, 0), RD("dsyr2k", FAM_SYR2K, 'd', 8, 0, 0, 0),
  RD("csyr2k", FAM_SYR2K, 'c', 8, 1, 1, 1), RD("zsyr2k", FAM_SYR2K, 'z', 16, 1, 1, 1),
  RD("strmm", FAM_TRMM, 's', 4, 0, 0, 0),  RD("dtrmm", FAM_TRMM, 'd', 8, 0, 0, 0),
  RD("ctrmm", FAM_TRMM, 'c', 8, 1, 1, 1),  RD("ztrmm", FAM_TRMM, 'z', 16, 1, 1, 1),
  RD("strsm", FAM_TRSM, 's', 4, 0, 0, 0),  RD("dtrsm", FAM_TRSM, 'd', 8, 0, 0, 0),
  RD("ctrsm", FAM_TRSM, 'c', 8, 1, 1, 1),  RD("ztrsm", FAM_TRSM, 'z', 16, 1, 1, 1),
  RD("chemm", FAM_HEMM, 'c', 8, 1, 1, 1),  RD("zhemm", FAM_HEMM, 'z', 16, 1, 1, 1),
  RD("cherk", FAM_HERK, 'c', 8, 1, 0, 0),  RD("zherk", FAM_HERK, 'z', 16, 1, 0, 0),
  RD("cher2k", FAM_HER2K, 'c', 8, 1, 1, 0), RD("zher2k", FAM_HER2K, 'z', 16, 1, 1, 0),
};

/* ------------------------------------------------------------------ */
/* global state                                                        */
/* ------------------------------------------------------------------ */

static struct {
  int mode;
  double threshold;
  long page_size;
  int debug;
  const char *trace_path;
  long long capacity;          /* <0: unlimited */
} g_cfg;

static void *g_real[N_ROUTINES];
static atomic_ulong g_intercepted[N_ROUTINES];
static atomic_ulong g_forwarded[N_ROUTINES];
static atomic_ulong g_offloaded[N_ROUTINES];
static atomic_ullong g_bytes_moved;
static atomic_ulong g_seq;
static atomic_int g_next_tid;
static _Thread_local int t_tid = -1;

static pthread_mutex_t g_lock = PTHREAD_MUTEX_INITIALIZER;
static FILE *g_trace;

/* page set: open addressing, key = page number + 1 (0 = empty slot) */
typedef struct { uintptr_t key; uint32_t reuse; } page_ent;
static page_ent *g_pages;
static size_t g_pages_cap, g_pages_n;

/* buffer reuse map, keyed by (base, bytes) */
typedef struct { uintptr_t base; uint64_t bytes; uint64_t count; int used, resident; } buf_ent;
static buf_ent *g_bufs;
static size_t g_bufs_cap, g_bufs_n;

static int thread_index(void) {
  if (t_tid < 0)
    t_tid = atomic_fetch_add(&g_next_tid, 1);
  return t_tid;
}

static uint64_t now_ns(void) {
  struct timespec ts;
  clock_gettime(CLOCK_MONOTONIC, &ts);
  return (uint64_t)ts.tv_sec * 1000000000ull + (uint64_t)ts.tv_nsec;
}

/* ------------------------------------------------------------------ */
/* hash tables (caller holds g_lock)                                   */
/* ------------------------------------------------------------------ */

static size_t hash_u64(uint64_t x) {
  x ^= x >> 33; x *= 0xff51afd7ed558ccdull;
  x ^= x >> 33; x *= 0xc4ceb9fe1a85ec53ull;
  x ^= x >> 33;
  return (size_t)x;
}

static void pages_grow(void) {
  size_t ncap = g_pages_cap ? g_pages_cap * 2 : (1u << 16);
  page_ent *nt = calloc(ncap, sizeof *nt);
  if (!nt) { perror("blasoffload shim: calloc"); abort(); }
  for (size_t i = 0; i < g_pages_cap; i++) {
    if (!g_pages[i].key) continue;
    size_t j = hash_u64(g_pages[i].key) & (ncap - 1);
    while (nt[j].key) j = (j + 1) & (ncap - 1);
    nt[j] = g_pages[i];
  }
  free(g_pages);
  g_pages = nt;
  g_pages_cap = ncap;
}

/* returns 1 when the page was already present (reuse bumped), 0 when new */
static int page_touch(uintptr_t page, int insert) {
  if (g_pages_n * 10 >= g_pages_cap * 7) pages_grow();
  uintptr_t key = page + 1;
  size_t i = hash_u64(key) & (g_pages_cap - 1);
  while (g_pages[i].key) {
    if (g_pages[i].key == key) {
      if (insert) g_pages[i].reuse++;
      return 1;
    }
    i = (i + 1) & (g_pages_cap - 1);
  }
  if (insert) {
    g_pages[i].key = key;
    g_pages[i].reuse = 0;
    g_pages_n++;
  }
  return 0;
}

static void bufs_grow(void) {
  size_t ncap = g_bufs_cap ? g_bufs_cap * 2 : (1u << 10);
  buf_ent *nt = calloc(ncap, sizeof *nt);
  if (!nt) { perror("blasoffload shim: calloc"); abort(); }
  for (size_t i = 0; i < g_bufs_cap; i++) {
    if (!g_bufs[i].used) continue;
    size_t j = hash_u64(g_bufs[i].base ^ (g_bufs[i].bytes * 0x9e3779b97f4a7c15ull)) & (ncap - 1);
    while (nt[j].used) j = (j + 1) & (ncap - 1);
    nt[j] = g_bufs[i];
  }
  free(g_bufs);
  g_bufs = nt;
  g_bufs_cap = ncap;
}

static buf_ent *buf_slot(uintptr_t base, uint64_t bytes) {
  if (g_bufs_n * 10 >= g_bufs_cap * 7) bufs_grow();
  size_t i = hash_u64(base ^ (bytes * 0x9e3779b97f4a7c15ull)) & (g_bufs_cap - 1);
  while (g_bufs[i].used) {
    if (g_bufs[i].base == base && g_bufs[i].bytes == bytes) return &g_bufs[i];
    i = (i + 1) & (g_bufs_cap - 1);
  }
  g_bufs[i].used = 1;
  g_bufs[i].base = base;
  g_bufs[i].bytes = bytes;
  g_bufs[i].count = 0;
  g_bufs[i].resident = 0;
  g_bufs_n++;
  return &g_bufs[i];
}

/* ------------------------------------------------------------------ */
/* call description                                                    */
/* ------------------------------------------------------------------ */

typedef struct {
  const void *base;
  long long rows, cols, ld;
  const char *role;
} opspan;

typedef struct {
  int rid;
  char transa, transb, side, uplo;   /* 0 where not applicable */
  long long m, n, k;                 /* k = 0 where not applicable */
  double are, aim, bre, bim;
  opspan ops[3];
  int nops;
} callinfo;

static long long op_bytes(const opspan *o, int eb) {
  return ((o->cols - 1) * o->ld + o->rows) * (long long)eb;
}

static char flag_of(const char *p) { return (char)toupper((unsigned char)*p); }

static void read_scalar(int cplx_pair, char prec, const void *p, double *re, double *im) {
  *im = 0.0;
  if (prec == 's' || prec == 'c') {
    const float *f = p;
    *re = f[0];
    if (cplx_pair) *im = f[1];
  } else {
    const double *d = p;
    *re = d[0];
    if (cplx_pair) *im = d[1];
  }
}

/* stored operand shapes and roles, mirroring the simulator's model */
static void build_ops(callinfo *ci) {
  const routine_desc *rd = &RT[ci->rid];
  int out_is_inout = (ci->bre != 0.0 || ci->bim != 0.0);
  const char *outrole = out_is_inout ? "inout" : "out";
  long long m = ci->m, n = ci->n, k = ci->k;
  switch (rd->family) {
  case FAM_GEMM:
    ci->ops[0].rows = (ci->transa == 'N') ? m : k;
    ci->ops[0].cols = (ci->transa == 'N') ? k : m;
    ci->ops[0].role = "in";
    ci->ops[1].rows = (ci->transb == 'N') ? k : n;
    ci->ops[1].cols = (ci->transb == 'N') ? n : k;
    ci->ops[1].role = "in";
    ci->ops[2].rows = m; ci->ops[2].cols = n; ci->ops[2].role = outrole;
    ci->nops = 3;
    break;
  case FAM_SYMM: case FAM_HEMM: {
    long long ad = (ci->side == 'L') ? m : n;
    ci->ops[0].rows = ad; ci->ops[0].cols = ad; ci->ops[0].role = "in";
    ci->ops[1].rows = m; ci->ops[1].cols = n; ci->ops[1].role = "in";
    ci->ops[2].rows = m; ci->ops[2].cols = n; ci->ops[2].role = outrole;
    ci->nops = 3;
    break;
  }
  case FAM_SYRK: case FAM_HERK:
    ci->ops[0].rows = (ci->transa == 'N') ? n : k;
    ci->ops[0].cols = (ci->transa == 'N') ? k : n;
    ci->ops[0].role = "in";
    ci->ops[1].rows = n; ci->ops[1].cols = n; ci->ops[1].role = outrole;
    ci->nops = 2;
    break;
  case FAM_SYR2K: case FAM_HER2K:
    ci->ops[0].rows = (ci->transa == 'N') ? n : k;
    ci->ops[0].cols = (ci->transa == 'N') ? k : n;
    ci->ops[0].role = "in";
    ci->ops[1] = ci->ops[0];
    ci->ops[2].rows = n; ci->ops[2].cols = n; ci->ops[2].role = outrole;
    ci->nops = 3;
    break;
  case FAM_TRMM: case FAM_TRSM: {
    long long ad = (ci->side == 'L') ? m : n;
    ci->ops[0].rows = ad; ci->ops[0].cols = ad; ci->ops[0].role = "in";
    ci->ops[1].rows = m; ci->ops[1].cols = n; ci->ops[1].role = "inout";
    ci->nops = 2;
    break;
  }
  }
}

static double navg_of(const callinfo *ci) {
  const routine_desc *rd = &RT[ci->rid];
  double d1, d2, d3;
  switch (rd->family) {
  case FAM_GEMM:  d1 = ci->m; d2 = ci->n; d3 = ci->k; break;
  case FAM_SYRK: case FAM_HERK: case FAM_SYR2K: case FAM_HER2K:
    d1 = ci->n; d2 = ci->n; d3 = ci->k; break;
  default: /* side-flagged families */
    if (ci->side == 'L') { d1 = ci->m; d2 = ci->m; d3 = ci->n; }
    else { d1 = ci->m; d2 = ci->n; d3 = ci->n; }
    break;
  }
  /* pow, not cbrt: keeps boundary decisions identical to the simulator,
   * which computes product ** (1.0 / 3.0) */
  return pow(d1 * d2 * d3, 1.0 / 3.0);
}

/* ------------------------------------------------------------------ */
/* policy bookkeeping (g_lock held)                                    */
/* ------------------------------------------------------------------ */

static long long first_use_span(uintptr_t base, long long bytes, int insert) {
  uintptr_t first = base / (uintptr_t)g_cfg.page_size;
  uintptr_t stop = (base + (uintptr_t)bytes - 1) / (uintptr_t)g_cfg.page_size + 1;
  long long moved = 0;
  for (uintptr_t p = first; p < stop; p++)
    if (!page_touch(p, insert))
      moved += g_cfg.page_size;
  return moved;
}

static long long book_movement(callinfo *ci) {
  const routine_desc *rd = &RT[ci->rid];
  long long moved = 0;
  if (g_cfg.mode == MODE_MEMCOPY) {
    for (int i = 0; i < ci->nops; i++) {
      const opspan *o = &ci->ops[i];
      long long b = op_bytes(o, rd->elem_bytes);
      if (strcmp(o->role, "in") == 0 || strcmp(o->role, "inout") == 0) moved += b;
      if (strcmp(o->role, "out") == 0 || strcmp(o->role, "inout") == 0) moved += b;
    }
    return moved;
  }
  if (g_cfg.mode != MODE_FIRST_USE)
    return 0;  /* counter mode: the memory system migrates, nothing to book */
  for (int i = 0; i < ci->nops; i++) {
    const opspan *o = &ci->ops[i];
    long long b = op_bytes(o, rd->elem_bytes);
    buf_ent *be = buf_slot((uintptr_t)o->base, (uint64_t)b);
    if (be->resident) be->count++;
    moved += first_use_span((uintptr_t)o->base, b, 1);
    be->resident = 1;
  }
  return moved;
}

static int over_capacity(callinfo *ci) {
  if (g_cfg.capacity < 0) return 0;
  const routine_desc *rd = &RT[ci->rid];
  long long need = 0;
  if (g_cfg.mode == MODE_MEMCOPY) {
    for (int i = 0; i < ci->nops; i++)
      need += op_bytes(&ci->ops[i], rd->elem_bytes);
    return need > g_cfg.capacity;
  }
  if (g_cfg.mode != MODE_FIRST_USE) return 0;
  pthread_mutex_lock(&g_lock);
  for (int i = 0; i < ci->nops; i++)
    need += first_use_span((uintptr_t)ci->ops[i].base,
                           op_bytes(&ci->ops[i], rd->elem_bytes), 0);
  long long have = (long long)g_pages_n * g_cfg.page_size;
  pthread_mutex_unlock(&g_lock);
  return have + need > g_cfg.capacity;
}

static void trace_line(const callinfo *ci, int offload, long long moved, uint64_t wall) {
  const routine_desc *rd = &RT[ci->rid];
  char tA = ci->transa ? ci->transa : 'N';
  fprintf(g_trace,
          "{\"seq\":%lu,\"routine\":\"%s\",\"precision\":\"%c\",\"transA\":\"%c\",",
          atomic_load(&g_seq), FAM_NAME[rd->family], rd->prec, tA);
  if (ci->transb) fprintf(g_trace, "\"transB\":\"%c\",", ci->transb);
  else fputs("\"transB\":\"-\",", g_trace);
  if (ci->side) fprintf(g_trace, "\"side\":\"%c\",", ci->side);
  else fputs("\"side\":\"-\",", g_trace);
  if (ci->uplo) fprintf(g_trace, "\"uplo\":\"%c\",", ci->uplo);
  else fputs("\"uplo\":\"-\",", g_trace);
  fprintf(g_trace, "\"m\":%lld,\"n\":%lld,\"k\":%lld,", ci->m, ci->n, ci->k);
  fprintf(g_trace,
          "\"alpha_re\":%.17g,\"alpha_im\":%.17g,\"beta_re\":%.17g,\"beta_im\":%.17g,",
          ci->are, ci->aim, ci->bre, ci->bim);
  fputs("\"operands\":[", g_trace);
  for (int i = 0; i < ci->nops; i++) {
    const opspan *o = &ci->ops[i];
    fprintf(g_trace,
            "%s{\"base\":\"0x%llx\",\"rows\":%lld,\"cols\":%lld,\"ld\":%lld,"
            "\"elem_bytes\":%d,\"role\":\"%s\"}",
            i ? "," : "", (unsigned long long)(uintptr_t)o->base,
            o->rows, o->cols, o->ld, rd->elem_bytes, o->role);
  }
  fprintf(g_trace, "],\"thread\":%d,\"decision\":\"%s\",\"bytes_moved\":%lld,\"wall_ns\":%llu}\n",
          thread_index(), offload ? "offload" : "cpu", moved,
          (unsigned long long)wall);
}

static void fatal_unresolved(int rid) {
  fprintf(stderr, "blasoffload shim: no next definition of %s_ / %s; "
                  "is a CPU BLAS linked or preloaded after the shim?\n",
          RT[rid].name, RT[rid].name);
  abort();
}

static int decide(callinfo *ci) {
  if (!g_real[ci->rid]) fatal_unresolved(ci->rid);
  build_ops(ci);
  if (g_cfg.mode == MODE_OFF) return 0;
  if (!(navg_of(ci) > g_cfg.threshold)) return 0;
  if (over_capacity(ci)) {
    if (g_cfg.debug >= 1)
      fprintf(stderr, "blasoffload shim: capacity limit keeps %s on the CPU\n",
              RT[ci->rid].name);
    return 0;
  }
  return 1;
}

static void book(callinfo *ci, int offload, uint64_t wall) {
  atomic_fetch_add(&g_intercepted[ci->rid], 1);
  if (offload) atomic_fetch_add(&g_offloaded[ci->rid], 1);
  else atomic_fetch_add(&g_forwarded[ci->rid], 1);
  if (!offload && !g_trace) return;
  pthread_mutex_lock(&g_lock);
  long long moved = offload ? book_movement(ci) : 0;
  if (moved) atomic_fetch_add(&g_bytes_moved, (unsigned long long)moved);
  if (g_trace) trace_line(ci, offload, moved, wall);
  atomic_fetch_add(&g_seq, 1);
  pthread_mutex_unlock(&g_lock);
}

/* ------------------------------------------------------------------ */
/* env parsing, load and unload                                        */
/* ------------------------------------------------------------------ */

static long long parse_capacity(const char *s) {
  char *end;
  long long v = strtoll(s, &end, 10);
  if (end == s || v <= 0) return -2;
  long long mult = 1;
  if (*end) {
    switch (tolower((unsigned char)*end)) {
    case 'k': mult = 1ll << 10; break;
    case 'm': mult = 1ll << 20; break;
    case 'g': mult = 1ll << 30; break;
    case 't': mult = 1ll << 40; break;
    default: return -2;
    }
    if (end[1]) return -2;
  }
  return v * mult;
}

static void parse_env(void) {
  g_cfg.mode = MODE_FIRST_USE;
  g_cfg.threshold = 500.0;
  g_cfg.page_size = sysconf(_SC_PAGESIZE);
  if (g_cfg.page_size != 4096 && g_cfg.page_size != 65536)
    g_cfg.page_size = 4096;
  g_cfg.debug = 0;
  g_cfg.trace_path = NULL;
  g_cfg.capacity = -1;

  const char *s = getenv("SCILIB_DEBUG");
  if (s && *s) {
    char *end;
    long v = strtol(s, &end, 10);
    if (*end || end == s)
      fprintf(stderr, "blasoffload: ignoring SCILIB_DEBUG='%s', using 0\n", s);
    else
      g_cfg.debug = v < 0 ? 0 : (v > 3 ? 3 : (int)v);
  }
  s = getenv("SCILIB_MODE");
  if (s && *s) {
    char buf[32];
    size_t i;
    for (i = 0; i + 1 < sizeof buf && s[i]; i++)
      buf[i] = (char)(s[i] == '-' ? '_' : tolower((unsigned char)s[i]));
    buf[i] = 0;
    if (!strcmp(buf, "off")) g_cfg.mode = MODE_OFF;
    else if (!strcmp(buf, "memcopy")) g_cfg.mode = MODE_MEMCOPY;
    else if (!strcmp(buf, "counter")) g_cfg.mode = MODE_COUNTER;
    else if (!strcmp(buf, "first_use")) g_cfg.mode = MODE_FIRST_USE;
    else fprintf(stderr, "blasoffload: ignoring SCILIB_MODE='%s', using first_use\n", s);
  }
  s = getenv("SCILIB_THRESHOLD");
  if (s && *s) {
    char *end;
    double v = strtod(s, &end);
    if (*end || end == s)
      fprintf(stderr, "blasoffload: ignoring SCILIB_THRESHOLD='%s', using 500\n", s);
    else
      g_cfg.threshold = v;
  }
  s = getenv("SCILIB_CAPACITY");
  if (s && *s) {
    long long v = parse_capacity(s);
    if (v == -2)
      fprintf(stderr, "blasoffload: ignoring SCILIB_CAPACITY='%s', using no limit\n", s);
    else
      g_cfg.capacity = v;
  }
  s = getenv("SCILIB_TRACE");
  if (s && *s) g_cfg.trace_path = s;
}

static const char *mode_name(void) {
  switch (g_cfg.mode) {
  case MODE_OFF: return "off";
  case MODE_MEMCOPY: return "memcopy";
  case MODE_COUNTER: return "counter";
  default: return "first_use";
  }
}

__attribute__((constructor))
static void shim_load(void) {
  parse_env();
  for (int i = 0; i < N_ROUTINES; i++) {
    char sym[16];
    snprintf(sym, sizeof sym, "%s_", RT[i].name);
    g_real[i] = dlsym(RTLD_NEXT, sym);
    if (!g_real[i]) g_real[i] = dlsym(RTLD_NEXT, RT[i].name);
    if (!g_real[i] && g_cfg.debug >= 2)
      fprintf(stderr, "blasoffload shim: %s not resolvable yet\n", sym);
  }
  if (g_cfg.trace_path) {
    g_trace = fopen(g_cfg.trace_path, "w");
    if (!g_trace)
      fprintf(stderr, "blasoffload: cannot open trace '%s'\n", g_cfg.trace_path);
  }
  if (g_cfg.debug >= 1)
    fprintf(stderr, "blasoffload shim: mode=%s threshold=%g page_size=%ld\n",
            mode_name(), g_cfg.threshold, g_cfg.page_size);
}

__attribute__((destructor))
static void shim_unload(void) {
  unsigned long ti = 0, tf = 0, to = 0;
  for (int i = 0; i < N_ROUTINES; i++) {
    ti += atomic_load(&g_intercepted[i]);
    tf += atomic_load(&g_forwarded[i]);
    to += atomic_load(&g_offloaded[i]);
  }
  if (!ti && !g_trace) return;
  double mean = 0.0;
  size_t nbuf = 0;
  uint64_t creuse = 0;
  for (size_t i = 0; i < g_bufs_cap; i++)
    if (g_bufs[i].used) { nbuf++; creuse += g_bufs[i].count; }
  if (nbuf) mean = (double)creuse / (double)nbuf;

  fprintf(stderr, "blasoffload interposer: mode=%s threshold=%g page_size=%ld\n",
          mode_name(), g_cfg.threshold, g_cfg.page_size);
  fprintf(stderr, "%-10s %11s %9s %9s\n", "routine", "intercepted", "forwarded", "offloaded");
  for (int i = 0; i < N_ROUTINES; i++) {
    unsigned long n = atomic_load(&g_intercepted[i]);
    if (!n) continue;
    fprintf(stderr, "%-10s %11lu %9lu %9lu\n", RT[i].name, n,
            atomic_load(&g_forwarded[i]), atomic_load(&g_offloaded[i]));
  }
  fprintf(stderr, "%-10s %11lu %9lu %9lu\n", "total", ti, tf, to);
  fprintf(stderr, "bytes_moved=%llu mean_reuse=%.2f\n",
          (unsigned long long)atomic_load(&g_bytes_moved), mean);

  if (g_trace) {
    char path[4096];
    snprintf(path, sizeof path, "%s.stats.json", g_cfg.trace_path);
    FILE *f = fopen(path, "w");
    if (f) {
      fprintf(f, "{\"mode\":\"%s\",\"threshold\":%.17g,\"page_size\":%ld,\"routines\":{",
              mode_name(), g_cfg.threshold, g_cfg.page_size);
      int first = 1;
      for (int i = 0; i < N_ROUTINES; i++) {
        unsigned long n = atomic_load(&g_intercepted[i]);
        if (!n) continue;
        fprintf(f, "%s\"%s\":{\"intercepted\":%lu,\"forwarded\":%lu,\"offloaded\":%lu}",
                first ? "" : ",", RT[i].name, n,
                atomic_load(&g_forwarded[i]), atomic_load(&g_offloaded[i]));
        first = 0;
      }
      fprintf(f, "},\"totals\":{\"intercepted\":%lu,\"forwarded\":%lu,\"offloaded\":%lu,"
                 "\"bytes_moved\":%llu},\"mean_reuse\":%.17g}\n",
              ti, tf, to, (unsigned long long)atomic_load(&g_bytes_moved), mean);
      fclose(f);
    }
    fclose(g_trace);
    g_trace = NULL;
  }
}

/* ------------------------------------------------------------------ */
/* exported wrappers                                                   */
/* ------------------------------------------------------------------ */

#define SET_SCALARS(rid, alpha, beta)                                        \
  read_scalar(RT[rid].alpha_cplx, RT[rid].prec, alpha, &ci.are, &ci.aim);    \
  if (beta) read_scalar(RT[rid].beta_cplx, RT[rid].prec, beta, &ci.bre, &ci.bim);

#define GEMM_BODY(RID, ta, tb)                                               \
  callinfo ci; memset(&ci, 0, sizeof ci);                                    \
  ci.rid = RID; ci.transa = flag_of(ta); ci.transb = flag_of(tb);            \
  ci.m = *m; ci.n = *n; ci.k = *k;                                           \
  SET_SCALARS(RID, alpha, beta)                                              \
  ci.ops[0].base = A; ci.ops[0].ld = *lda;                                   \
  ci.ops[1].base = B; ci.ops[1].ld = *ldb;                                   \
  ci.ops[2].base = C; ci.ops[2].ld = *ldc;                                   \
  int off = decide(&ci);                                                     \
  uint64_t t0 = now_ns();

#define GEMM_WRAP(pfx, RID)                                                  \
  typedef void (*pfx##gemm_fn)(const char *, const char *, const int *,      \
      const int *, const int *, const void *, const void *, const int *,    \
      const void *, const int *, const void *, void *, const int *);        \
  void pfx##gemm_(const char *ta, const char *tb, const int *m,              \
      const int *n, const int *k, const void *alpha, const void *A,         \
      const int *lda, const void *B, const int *ldb, const void *beta,      \
      void *C, const int *ldc) {                                            \
    GEMM_BODY(RID, ta, tb)                                                   \
    ((pfx##gemm_fn)g_real[RID])(ta, tb, m, n, k, alpha, A, lda, B, ldb,      \
                                beta, C, ldc);                               \
    book(&ci, off, now_ns() - t0);                                           \
  }                                                                          \
  void pfx##gemm(const char *, const char *, const int *, const int *,       \
      const int *, const void *, const void *, const int *, const void *,   \
      const int *, const void *, void *, const int *)                       \
      __attribute__((alias(#pfx "gemm_")));

GEMM_WRAP(s, R_SGEMM)
GEMM_WRAP(d, R_DGEMM)
GEMM_WRAP(c, R_CGEMM)
GEMM_WRAP(z, R_ZGEMM)

#define MM_WRAP(pfx, nm, RID)                                                \
  typedef void (*pfx##nm##_fn)(const char *, const char *, const int *,      \
      const int *, const void *, const void *, const int *, const void *,   \
      const int *, const void *, void *, const int *);                      \
  void pfx##nm##_(const char *side, const char *uplo, const int *m,          \
      const int *n, const void *alpha, const void *A, const int *lda,       \
      const void *B, const int *ldb, const void *beta, void *C,             \
      const int *ldc) {                                                     \
    callinfo ci; memset(&ci, 0, sizeof ci);                                  \
    ci.rid = RID; ci.side = flag_of(side); ci.uplo = flag_of(uplo);          \
    ci.m = *m; ci.n = *n;                                                    \
    SET_SCALARS(RID, alpha, beta)                                            \
    ci.ops[0].base = A; ci.ops[0].ld = *lda;                                 \
    ci.ops[1].base = B; ci.ops[1].ld = *ldb;                                 \
    ci.ops[2].base = C; ci.ops[2].ld = *ldc;                                 \
    int off = decide(&ci);                                                   \
    uint64_t t0 = now_ns();                                                  \
    ((pfx##nm##_fn)g_real[RID])(side, uplo, m, n, alpha, A, lda, B, ldb,     \
                                beta, C, ldc);                               \
    book(&ci, off, now_ns() - t0);                                           \
  }                                                                          \
  void pfx##nm(const char *, const char *, const int *, const int *,         \
      const void *, const void *, const int *, const void *, const int *,   \
      const void *, void *, const int *)                                    \
      __attribute__((alias(#pfx #nm "_")));

MM_WRAP(s, symm, R_SSYMM)
MM_WRAP(d, symm, R_DSYMM)
MM_WRAP(c, symm, R_CSYMM)
MM_WRAP(z, symm, R_ZSYMM)
MM_WRAP(c, hemm, R_CHEMM)
MM_WRAP(z, hemm, R_ZHEMM)

#define RK_WRAP(pfx, nm, RID)                                                \
  typedef void (*pfx##nm##_fn)(const char *, const char *, const int *,      \
      const int *, const void *, const void *, const int *, const void *,   \
      void *, const int *);                                                 \
  void pfx##nm##_(const char *uplo, const char *trans, const int *n,         \
      const int *k, const void *alpha, const void *A, const int *lda,       \
      const void *beta, void *C, const int *ldc) {                          \
    callinfo ci; memset(&ci, 0, sizeof ci);                                  \
    ci.rid = RID; ci.uplo = flag_of(uplo); ci.transa = flag_of(trans);       \
    ci.m = *n; ci.n = *n; ci.k = *k;                                         \
    SET_SCALARS(RID, alpha, beta)                                            \
    ci.ops[0].base = A; ci.ops[0].ld = *lda;                                 \
    ci.ops[1].base = C; ci.ops[1].ld = *ldc;                                 \
    int off = decide(&ci);                                                   \
    uint64_t t0 = now_ns();                                                  \
    ((pfx##nm##_fn)g_real[RID])(uplo, trans, n, k, alpha, A, lda, beta, C,   \
                                ldc);                                        \
    book(&ci, off, now_ns() - t0);                                           \
  }                                                                          \
  void pfx##nm(const char *, const char *, const int *, const int *,         \
      const void *, const void *, const int *, const void *, void *,        \
      const int *) __attribute__((alias(#pfx #nm "_")));

RK_WRAP(s, syrk, R_SSYRK)
RK_WRAP(d, syrk, R_DSYRK)
RK_WRAP(c, syrk, R_CSYRK)
RK_WRAP(z, syrk, R_ZSYRK)
RK_WRAP(c, herk, R_CHERK)
RK_WRAP(z, herk, R_ZHERK)

#define R2K_WRAP(pfx, nm, RID)                                               \
  typedef void (*pfx##nm##_fn)(const char *, const char *, const int *,      \
      const int *, const void *, const void *, const int *, const void *,   \
      const int *, const void *, void *, const int *);                      \
  void pfx##nm##_(const char *uplo, const char *trans, const int *n,         \
      const int *k, const void *alpha, const void *A, const int *lda,       \
      const void *B, const int *ldb, const void *beta, void *C,             \
      const int *ldc) {                                                     \
    callinfo ci; memset(&ci, 0, sizeof ci);                                  \
    ci.rid = RID; ci.uplo = flag_of(uplo); ci.transa = flag_of(trans);       \
    ci.m = *n; ci.n = *n; ci.k = *k;                                         \
    SET_SCALARS(RID, alpha, beta)                                            \
    ci.ops[0].base = A; ci.ops[0].ld = *lda;                                 \
    ci.ops[1].base = B; ci.ops[1].ld = *ldb;                                 \
    ci.ops[2].base = C; ci.ops[2].ld = *ldc;                                 \
    int off = decide(&ci);                                                   \
    uint64_t t0 = now_ns();                                                  \
    ((pfx##nm##_fn)g_real[RID])(uplo, trans, n, k, alpha, A, lda, B, ldb,    \
                                beta, C, ldc);                               \
    book(&ci, off, now_ns() - t0);                                           \
  }                                                                          \
  void pfx##nm(const char *, const char *, const int *, const int *,         \
      const void *, const void *, const int *, const void *, const int *,   \
      const void *, void *, const int *)                                    \
      __attribute__((alias(#pfx #nm "_")));

R2K_WRAP(s, syr2k, R_SSYR2K)
R2K_WRAP(d, syr2k, R_DSYR2K)
R2K_WRAP(c, syr2k, R_CSYR2K)
R2K_WRAP(z, syr2k, R_ZSYR2K)
R2K_WRAP(c, her2k, R_CHER2K)
R2K_WRAP(z, her2k, R_ZHER2K)

#define TR_WRAP(pfx, nm, RID)                                                \
  typedef void (*pfx##nm##_fn)(const char *, const char *, const char *,     \
      const char *, const int *, const int *, const void *, const void *,   \
      const int *, void *, const int *);                                    \
  void pfx##nm##_(const char *side, const char *uplo, const char *ta,        \
      const char *diag, const int *m, const int *n, const void *alpha,      \
      const void *A, const int *lda, void *B, const int *ldb) {             \
    callinfo ci; memset(&ci, 0, sizeof ci);                                  \
    ci.rid = RID; ci.side = flag_of(side); ci.uplo = flag_of(uplo);          \
    ci.transa = flag_of(ta);                                                 \
    ci.m = *m; ci.n = *n;                                                    \
    read_scalar(RT[RID].alpha_cplx, RT[RID].prec, alpha, &ci.are, &ci.aim);  \
    ci.ops[0].base = A; ci.ops[0].ld = *lda;                                 \
    ci.ops[1].base = B; ci.ops[1].ld = *ldb;                                 \
    int off = decide(&ci);                                                   \
    uint64_t t0 = now_ns();                                                  \
    ((pfx##nm##_fn)g_real[RID])(side, uplo, ta, diag, m, n, alpha, A, lda,   \
                                B, ldb);                                     \
    book(&ci, off, now_ns() - t0);                                           \
  }                                                                          \
  void pfx##nm(const char *, const char *, const char *, const char *,       \
      const int *, const int *, const void *, const void *, const int *,    \
      void *, const int *) __attribute__((alias(#pfx #nm "_")));

TR_WRAP(s, trmm, R_STRMM)
TR_WRAP(d, trmm, R_DTRMM)
TR_WRAP(c, trmm, R_CTRMM)
TR_WRAP(z, trmm, R_ZTRMM)
TR_WRAP(s, trsm, R_STRSM)
TR_WRAP(d, trsm, R_DTRSM)
TR_WRAP(c, trsm, R_CTRSM)
TR_WRAP(z, trsm, R_ZTRSM)

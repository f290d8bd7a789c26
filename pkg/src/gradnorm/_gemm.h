/* Dense double-precision matrix product without BLAS.
 *
 * Operands are addressed through (row, column) strides, so transposed
 * products need no copies: A(i, p) = a[i*ars + p*acs], B(p, j) = b[p*brs + j*bcs].
 * Both operands are packed (A into 8-row strips, B into 16-column panels,
 * zero padded) and every 8x16 tile of C is accumulated in vector registers.
 * Each output entry is summed over p = 0..k-1 in order, independent of the
 * tile it falls in.
 */
#ifndef GRADNORM_GEMM_H
#define GRADNORM_GEMM_H

#include <stdlib.h>
#include <string.h>

#define GN_MR 8
#define GN_VW 8
#define GN_NR (2 * GN_VW)

typedef double gn_vd __attribute__((vector_size(GN_VW * sizeof(double))));

static inline gn_vd gn_load(const double *p) { gn_vd v; memcpy(&v, p, sizeof v); return v; }
static inline void gn_store(double *p, gn_vd v) { memcpy(p, &v, sizeof v); }

static void gn_pack_b(const double *b, long brs, long bcs, double *restrict packed, long k, long n) {
    long panels = (n + GN_NR - 1) / GN_NR;
    for (long jp = 0; jp < panels; jp++) {
        long j0 = jp * GN_NR;
        long w = n - j0 < GN_NR ? n - j0 : GN_NR;
        double *dst = packed + jp * k * GN_NR;
        for (long p = 0; p < k; p++) {
            const double *src = b + p * brs + j0 * bcs;
            long q = 0;
            for (; q < w; q++) dst[p * GN_NR + q] = src[q * bcs];
            for (; q < GN_NR; q++) dst[p * GN_NR + q] = 0.0;
        }
    }
}

static void gn_pack_a(const double *a, long ars, long acs, double *restrict strip, long i0, long h, long k) {
    for (long r = 0; r < GN_MR; r++) {
        if (r < h) {
            const double *src = a + (i0 + r) * ars;
            for (long p = 0; p < k; p++) strip[p * GN_MR + r] = src[p * acs];
        } else {
            for (long p = 0; p < k; p++) strip[p * GN_MR + r] = 0.0;
        }
    }
}

static inline void gn_tile(const double *restrict strip, const double *restrict panel, long k,
                           double *restrict tile) {
    gn_vd acc0[GN_MR], acc1[GN_MR];
#pragma GCC unroll 8
    for (int r = 0; r < GN_MR; r++) {
        acc0[r] = (gn_vd){0};
        acc1[r] = (gn_vd){0};
    }
    for (long p = 0; p < k; p++) {
        const gn_vd b0 = gn_load(panel + p * GN_NR), b1 = gn_load(panel + p * GN_NR + GN_VW);
        const double *ap = strip + p * GN_MR;
#pragma GCC unroll 8
        for (int r = 0; r < GN_MR; r++) {
            acc0[r] += ap[r] * b0;
            acc1[r] += ap[r] * b1;
        }
    }
#pragma GCC unroll 8
    for (int r = 0; r < GN_MR; r++) {
        gn_store(tile + r * GN_NR, acc0[r]);
        gn_store(tile + r * GN_NR + GN_VW, acc1[r]);
    }
}

/* c[m x n] (row-major, contiguous) = A[m x k] * B[k x n]; returns -1 on allocation failure. */
static int gn_gemm(const double *a, long ars, long acs, const double *b, long brs, long bcs,
                   double *c, long m, long k, long n) {
    if (m == 0 || n == 0) return 0;
    if (k == 0) {
        memset(c, 0, (size_t)(m * n) * sizeof(double));
        return 0;
    }
    long panels = (n + GN_NR - 1) / GN_NR;
    double *packed = (double *)malloc((size_t)(panels * k * GN_NR) * sizeof(double));
    double *strip = (double *)malloc((size_t)(GN_MR * k) * sizeof(double));
    if (packed == NULL || strip == NULL) {
        free(packed);
        free(strip);
        return -1;
    }
    gn_pack_b(b, brs, bcs, packed, k, n);
    double tile[GN_MR * GN_NR];
    for (long i0 = 0; i0 < m; i0 += GN_MR) {
        long h = m - i0 < GN_MR ? m - i0 : GN_MR;
        gn_pack_a(a, ars, acs, strip, i0, h, k);
        for (long jp = 0; jp < panels; jp++) {
            long j0 = jp * GN_NR;
            long w = n - j0 < GN_NR ? n - j0 : GN_NR;
            gn_tile(strip, packed + jp * k * GN_NR, k, tile);
            for (long r = 0; r < h; r++)
                memcpy(c + (i0 + r) * n + j0, tile + r * GN_NR, (size_t)w * sizeof(double));
        }
    }
    free(packed);
    free(strip);
    return 0;
}

#endif

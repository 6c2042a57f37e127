# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: BT.601 luma, bilinear resize, uniform-window SSIM,
and the direct/scheduled conv2d implementations the autotuner measures.

Mirrors resotune._fallback; numerical contracts live with the callers.
"""

import numpy as np

cimport numpy as cnp
from libc.string cimport memset

cnp.import_array()

BACKEND = "compiled"


def luma_bt601(const cnp.uint8_t[:, :, ::1] rgb):
    cdef Py_ssize_t h = rgb.shape[0], w = rgb.shape[1]
    out_arr = np.empty((h, w), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t y, x
    with nogil:
        for y in range(h):
            for x in range(w):
                out[y, x] = (<float>0.299) * rgb[y, x, 0] \
                    + (<float>0.587) * rgb[y, x, 1] \
                    + (<float>0.114) * rgb[y, x, 2]
    return out_arr


cdef inline cnp.uint8_t _lerp_round(const cnp.uint8_t* r0, const cnp.uint8_t* r1,
                                    Py_ssize_t xl, Py_ssize_t xh,
                                    float fx, float fy) nogil:
    # float32 throughout, matching the numpy fallback bit for bit
    cdef float gx = <float>1.0 - fx
    cdef float gy = <float>1.0 - fy
    cdef float top = r0[xl] * gx + r0[xh] * fx
    cdef float bot = r1[xl] * gx + r1[xh] * fx
    cdef float v = top * gy + bot * fy + <float>0.5
    if v < 0.0:
        v = 0.0
    elif v > 255.0:
        v = 255.0
    return <cnp.uint8_t>v


def resize_bilinear_u8(const cnp.uint8_t[:, :, ::1] src, Py_ssize_t out_h, Py_ssize_t out_w):
    """Half-pixel-centered bilinear resample; rounds half away from zero."""
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], c = src.shape[2]
    y_lo_a, y_hi_a, y_f_a = _axis_plan(h, out_h)
    x_lo_a, x_hi_a, x_f_a = _axis_plan(w, out_w)
    cdef Py_ssize_t[::1] y_lo = y_lo_a, y_hi = y_hi_a, x_lo = x_lo_a, x_hi = x_hi_a
    cdef float[::1] y_f = y_f_a, x_f = x_f_a
    out_arr = np.empty((out_h, out_w, c), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] out = out_arr
    cdef const cnp.uint8_t* base = &src[0, 0, 0]
    cdef cnp.uint8_t* dst = &out[0, 0, 0]
    cdef Py_ssize_t row_stride = w * c
    cdef const cnp.uint8_t* r0
    cdef const cnp.uint8_t* r1
    cdef Py_ssize_t y, x, ch, xl, xh, o
    cdef float fy, fx
    with nogil:
        o = 0
        for y in range(out_h):
            fy = y_f[y]
            r0 = base + y_lo[y] * row_stride
            r1 = base + y_hi[y] * row_stride
            if c == 3:
                for x in range(out_w):
                    fx = x_f[x]
                    xl = x_lo[x] * 3
                    xh = x_hi[x] * 3
                    dst[o] = _lerp_round(r0, r1, xl, xh, fx, fy)
                    dst[o + 1] = _lerp_round(r0, r1, xl + 1, xh + 1, fx, fy)
                    dst[o + 2] = _lerp_round(r0, r1, xl + 2, xh + 2, fx, fy)
                    o += 3
            else:
                for x in range(out_w):
                    fx = x_f[x]
                    xl = x_lo[x] * c
                    xh = x_hi[x] * c
                    for ch in range(c):
                        dst[o] = _lerp_round(r0, r1, xl + ch, xh + ch, fx, fy)
                        o += 1
    return out_arr


def resize_luma_u8(const cnp.uint8_t[:, :, ::1] src, Py_ssize_t out_h, Py_ssize_t out_w):
    """Fused resize + BT.601 luma: channels are rounded to uint8 exactly as
    resize_bilinear_u8 would, then weighted, without materializing the
    intermediate raster.

    Separable: source rows are horizontally resampled once and cached; the
    vertical pass lerps two cached rows, which matches the 4-point formula
    bit for bit (same float32 expression tree).
    """
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], c = src.shape[2]
    y_lo_a, y_hi_a, y_f_a = _axis_plan(h, out_h)
    x_lo_a, x_hi_a, x_f_a = _axis_plan(w, out_w)
    cdef Py_ssize_t[::1] y_lo = y_lo_a, y_hi = y_hi_a, x_lo = x_lo_a, x_hi = x_hi_a
    cdef float[::1] y_f = y_f_a, x_f = x_f_a
    out_arr = np.empty((out_h, out_w), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef const cnp.uint8_t* base = &src[0, 0, 0]
    cdef Py_ssize_t row_stride = w * c
    hcache_arr = np.empty((h, out_w * c), dtype=np.float32)
    cdef float[:, ::1] hcache = hcache_arr
    filled_arr = np.zeros(h, dtype=np.uint8)
    cdef cnp.uint8_t[::1] filled = filled_arr
    cdef const cnp.uint8_t* srow
    cdef float* hrow
    cdef const float* t0
    cdef const float* t1
    cdef Py_ssize_t y, x, xl, xh, sy, ch, pick
    cdef float fy, gy, fx, gx, rv, gv, bv
    with nogil:
        for y in range(out_h):
            for pick in range(2):
                sy = y_lo[y] if pick == 0 else y_hi[y]
                if filled[sy]:
                    continue
                filled[sy] = 1
                srow = base + sy * row_stride
                hrow = &hcache[sy, 0]
                for x in range(out_w):
                    fx = x_f[x]
                    gx = <float>1.0 - fx
                    xl = x_lo[x] * c
                    xh = x_hi[x] * c
                    for ch in range(c):
                        hrow[x * c + ch] = srow[xl + ch] * gx + srow[xh + ch] * fx
            fy = y_f[y]
            gy = <float>1.0 - fy
            t0 = &hcache[y_lo[y], 0]
            t1 = &hcache[y_hi[y], 0]
            if c == 3:
                for x in range(out_w):
                    rv = _round_clip(t0[3 * x] * gy + t1[3 * x] * fy)
                    gv = _round_clip(t0[3 * x + 1] * gy + t1[3 * x + 1] * fy)
                    bv = _round_clip(t0[3 * x + 2] * gy + t1[3 * x + 2] * fy)
                    out[y, x] = (<float>0.299) * rv + (<float>0.587) * gv + (<float>0.114) * bv
            else:
                for x in range(out_w):
                    out[y, x] = _round_clip(t0[x] * gy + t1[x] * fy)
    return out_arr


cdef inline float _round_clip(float v) nogil:
    v = v + <float>0.5
    if v < 0.0:
        v = 0.0
    elif v > 255.0:
        v = 255.0
    return <float>(<cnp.uint8_t>v)


def _axis_plan(Py_ssize_t src, Py_ssize_t dst):
    x = (np.arange(dst, dtype=np.float64) + 0.5) * (src / float(dst)) - 0.5
    x0 = np.floor(x)
    frac = (x - x0).astype(np.float32)
    lo = np.clip(x0, 0, src - 1).astype(np.intp)
    hi = np.clip(x0 + 1, 0, src - 1).astype(np.intp)
    return lo, hi, frac


def ssim_uniform(const float[:, ::1] a, const float[:, ::1] b, Py_ssize_t win, double c1, double c2):
    """Mean SSIM over all win x win uniform windows stepped by 1.

    Sliding-band implementation: per-column float64 sums over the current
    window rows, swept horizontally. Window statistics on identical or
    constant inputs stay exact, which the closed-form oracles rely on.
    """
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1]
    if h < win or w < win:
        win = h if h < w else w  # degenerate raster: shrink to fit, callers keep >= win
    cols_arr = np.zeros((5, w), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    cdef Py_ssize_t ny = h - win + 1, nx = w - win + 1
    cdef Py_ssize_t y, x, yo
    cdef double av, bv, total = 0.0
    cdef double n = <double>(win * win)
    cdef double sa, sb, saa, sbb, sab, ma, mb, va, vb, cov, num, den
    with nogil:
        for y in range(win):
            for x in range(w):
                av = a[y, x]
                bv = b[y, x]
                cols[0, x] += av
                cols[1, x] += bv
                cols[2, x] += av * av
                cols[3, x] += bv * bv
                cols[4, x] += av * bv
        for yo in range(ny):
            if yo > 0:
                y = yo + win - 1
                for x in range(w):
                    av = a[y, x]
                    bv = b[y, x]
                    cols[0, x] += av
                    cols[1, x] += bv
                    cols[2, x] += av * av
                    cols[3, x] += bv * bv
                    cols[4, x] += av * bv
                    av = a[yo - 1, x]
                    bv = b[yo - 1, x]
                    cols[0, x] -= av
                    cols[1, x] -= bv
                    cols[2, x] -= av * av
                    cols[3, x] -= bv * bv
                    cols[4, x] -= av * bv
            sa = sb = saa = sbb = sab = 0.0
            for x in range(win):
                sa += cols[0, x]
                sb += cols[1, x]
                saa += cols[2, x]
                sbb += cols[3, x]
                sab += cols[4, x]
            for x in range(nx):
                if x > 0:
                    sa += cols[0, x + win - 1] - cols[0, x - 1]
                    sb += cols[1, x + win - 1] - cols[1, x - 1]
                    saa += cols[2, x + win - 1] - cols[2, x - 1]
                    sbb += cols[3, x + win - 1] - cols[3, x - 1]
                    sab += cols[4, x + win - 1] - cols[4, x - 1]
                ma = sa / n
                mb = sb / n
                va = saa / n - ma * ma
                vb = sbb / n - mb * mb
                cov = sab / n - ma * mb
                num = (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                den = (ma * ma + mb * mb + c1) * (va + vb + c2)
                total += num / den
    return total / (ny * nx)


def conv2d_reference(const float[:, :, ::1] inp, const float[:, :, :, ::1] weights,
                     Py_ssize_t stride, Py_ssize_t pad):
    """Direct 7-loop convolution, float64 accumulation, float32 output."""
    cdef Py_ssize_t ic = inp.shape[0], h = inp.shape[1], w = inp.shape[2]
    cdef Py_ssize_t oc = weights.shape[0], kh = weights.shape[2], kw = weights.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    out_arr = np.empty((oc, oh, ow), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t o, y, x, c, i, j, iy, ix
    cdef double acc
    with nogil:
        for o in range(oc):
            for y in range(oh):
                for x in range(ow):
                    acc = 0.0
                    for c in range(ic):
                        for i in range(kh):
                            iy = y * stride + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            for j in range(kw):
                                ix = x * stride + j - pad
                                if ix < 0 or ix >= w:
                                    continue
                                acc += <double>inp[c, iy, ix] * <double>weights[o, c, i, j]
                    out[o, y, x] = <float>acc
    return out_arr


# Scheduled conv2d. The caller (engine.prepare_scheduled) pre-pads and
# pre-packs input/weights per layout so the timed region is pure compute:
#   channel_major: x (ic, H, W), w (oc, ic, kh, kw)
#   channel_blocked: x (H, W, ic), w (oc, kh, kw, ic)
# Loop dims are identified as 0=oc, 1=oh, 2=ow, 3=ic throughout.

DEF MAX_LANES = 128


def conv2d_scheduled(const float[::1] x, const float[::1] wts, float[:, :, ::1] out,
                     Py_ssize_t ic, Py_ssize_t oc,
                     Py_ssize_t oh, Py_ssize_t ow,
                     Py_ssize_t kh, Py_ssize_t kw,
                     Py_ssize_t stride,
                     Py_ssize_t sxc, Py_ssize_t sxy, Py_ssize_t sxx,
                     Py_ssize_t swo, Py_ssize_t swc, Py_ssize_t swi, Py_ssize_t swj,
                     Py_ssize_t t0, Py_ssize_t t1, Py_ssize_t t2, Py_ssize_t t3,
                     Py_ssize_t d0, Py_ssize_t d1, Py_ssize_t d2, Py_ssize_t d3,
                     Py_ssize_t lanes):
    """Tiled conv2d; tile loops and intra-tile loops follow (d0, d1, d2, d3),
    with lanes = vector_width * unroll elements of d3 per micro step.

    sx*/sw* are element strides of the packed input/weight buffers; t* are
    tile sizes per nest level (reduction dim ic carries its full extent).
    """
    cdef Py_ssize_t[4] ext
    ext[0] = oc; ext[1] = oh; ext[2] = ow; ext[3] = ic
    cdef Py_ssize_t[4] tsz
    tsz[d0] = t0; tsz[d1] = t1; tsz[d2] = t2; tsz[d3] = t3
    cdef Py_ssize_t[4] idx
    cdef Py_ssize_t a0, a1, a2, a3, e0, e1, e2, base, nl, l, i, j
    cdef Py_ssize_t lim0, lim1, lim2, lim3
    cdef Py_ssize_t co, cy, cx, cc
    cdef float acc[MAX_LANES]
    cdef float wv, xv
    cdef Py_ssize_t xbase, wbase, sxs, lx, lw, lo_
    cdef Py_ssize_t out_sy = out.shape[2]

    with nogil:
        memset(&out[0, 0, 0], 0, oc * oh * ow * sizeof(float))
        sxs = stride * sxx
        a0 = 0
        while a0 < ext[d0]:
            lim0 = a0 + tsz[d0]
            if lim0 > ext[d0]:
                lim0 = ext[d0]
            a1 = 0
            while a1 < ext[d1]:
                lim1 = a1 + tsz[d1]
                if lim1 > ext[d1]:
                    lim1 = ext[d1]
                a2 = 0
                while a2 < ext[d2]:
                    lim2 = a2 + tsz[d2]
                    if lim2 > ext[d2]:
                        lim2 = ext[d2]
                    a3 = 0
                    while a3 < ext[d3]:
                        lim3 = a3 + tsz[d3]
                        if lim3 > ext[d3]:
                            lim3 = ext[d3]
                        # intra-tile element loops, same nesting order
                        for e0 in range(a0, lim0):
                            idx[d0] = e0
                            for e1 in range(a1, lim1):
                                idx[d1] = e1
                                for e2 in range(a2, lim2):
                                    idx[d2] = e2
                                    base = a3
                                    while base < lim3:
                                        nl = lim3 - base
                                        if nl > lanes:
                                            nl = lanes
                                        idx[d3] = base
                                        co = idx[0]; cy = idx[1]; cx = idx[2]; cc = idx[3]
                                        for l in range(nl):
                                            acc[l] = 0.0
                                        if d3 == 3:  # lanes over ic
                                            xbase = cc * sxc + cy * stride * sxy + cx * sxs
                                            wbase = co * swo + cc * swc
                                            for i in range(kh):
                                                for j in range(kw):
                                                    lx = xbase + i * sxy + j * sxx
                                                    lw = wbase + i * swi + j * swj
                                                    for l in range(nl):
                                                        acc[l] += x[lx + l * sxc] * wts[lw + l * swc]
                                            xv = 0.0
                                            for l in range(nl):
                                                xv += acc[l]
                                            out[co, cy, cx] += xv
                                        elif d3 == 2:  # lanes over ow
                                            xbase = cc * sxc + cy * stride * sxy + cx * sxs
                                            wbase = co * swo + cc * swc
                                            for i in range(kh):
                                                for j in range(kw):
                                                    wv = wts[wbase + i * swi + j * swj]
                                                    lx = xbase + i * sxy + j * sxx
                                                    for l in range(nl):
                                                        acc[l] += wv * x[lx + l * sxs]
                                            for l in range(nl):
                                                out[co, cy, cx + l] += acc[l]
                                        elif d3 == 0:  # lanes over oc
                                            xbase = cc * sxc + cy * stride * sxy + cx * sxs
                                            for i in range(kh):
                                                for j in range(kw):
                                                    xv = x[xbase + i * sxy + j * sxx]
                                                    lw = co * swo + cc * swc + i * swi + j * swj
                                                    for l in range(nl):
                                                        acc[l] += wts[lw + l * swo] * xv
                                            for l in range(nl):
                                                out[co + l, cy, cx] += acc[l]
                                        else:  # lanes over oh
                                            xbase = cc * sxc + cy * stride * sxy + cx * sxs
                                            wbase = co * swo + cc * swc
                                            lo_ = stride * sxy
                                            for i in range(kh):
                                                for j in range(kw):
                                                    wv = wts[wbase + i * swi + j * swj]
                                                    lx = xbase + i * sxy + j * sxx
                                                    for l in range(nl):
                                                        acc[l] += wv * x[lx + l * lo_]
                                            for l in range(nl):
                                                out[co, cy + l, cx] += acc[l]
                                        base += nl
                        a3 = lim3
                    a2 = lim2
                a1 = lim1
            a0 = lim0

"""Slow, obviously-correct reference implementations used only by tests."""
import itertools

import numpy as np


def dft2_bruteforce(x):
    """O(P^4) 2-D DFT by the defining double sum."""
    x = np.asarray(x, dtype=np.complex128)
    p, q = x.shape
    out = np.zeros((p, q), dtype=np.complex128)
    for u in range(p):
        for v in range(q):
            s = 0j
            for m in range(p):
                for n in range(q):
                    s += x[m, n] * np.exp(-2j * np.pi * (u * m / p + v * n / q))
            out[u, v] = s
    return out


def conv_loops(x, k, bias=None, dilation=1, stride=1, padding="reflect"):
    """Nested-loop 'same' cross-correlation."""
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    ph, pw = dilation * (kh - 1) // 2, dilation * (kw - 1) // 2
    mode = "reflect" if padding == "reflect" else "constant"
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0)), mode=mode)
    oh = (h + 2 * ph - dilation * (kh - 1) - 1) // stride + 1
    ow = (w + 2 * pw - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((oh, ow, cout))
    for r in range(oh):
        for c in range(ow):
            for i in range(kh):
                for j in range(kw):
                    for ci in range(cin):
                        out[r, c] += xp[r * stride + i * dilation, c * stride + j * dilation, ci] * k[i, j, ci]
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)
    return out


def box_blur_zero_pad(x):
    x = np.asarray(x, dtype=np.float64)
    h, w, c = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros_like(x)
    for r in range(h):
        for cc in range(w):
            out[r, cc] = xp[r : r + 3, cc : cc + 3].sum(axis=(0, 1)) / 9.0
    return out


def accumulate_explicit(vectors, grid):
    """Per-pixel mean of covering-patch vectors, by looping over pixels and patches."""
    h, w = grid.height, grid.width
    p = grid.patch_size
    v = np.asarray(vectors, dtype=np.float64)
    out = np.zeros((h, w, v.shape[1]))
    for y in range(h):
        for x in range(w):
            acc, n = np.zeros(v.shape[1]), 0
            for q in range(grid.n_patches):
                oy, ox = grid.origin(q)
                if oy <= y < oy + p and ox <= x < ox + p:
                    acc += v[q]
                    n += 1
            out[y, x] = acc / n
    return out


def ap_bruteforce(flags, total_gts):
    """All-point AP: for every recall level reached, take the best precision at any
    cutoff with recall >= it, and integrate over recall steps."""
    if total_gts == 0 or len(flags) == 0:
        return 0.0
    points = []
    tp = fp = 0
    for f in flags:
        tp += bool(f)
        fp += not f
        points.append((tp / total_gts, tp / (tp + fp)))
    ap, prev_r = 0.0, 0.0
    for r in sorted({r for r, _ in points}):
        best = max(p for rr, p in points if rr >= r)
        ap += (r - prev_r) * best
        prev_r = r
    return ap


def max_assignment(iou_matrix, tau):
    """Largest number of det/gt pairs with IoU >= tau over all injective assignments."""
    n_d, n_g = iou_matrix.shape
    best = 0
    for perm in itertools.permutations(range(n_g), min(n_d, n_g)):
        for dets in itertools.permutations(range(n_d), len(perm)):
            best = max(best, sum(iou_matrix[d, g] >= tau for d, g in zip(dets, perm)))
    return best


def window_attention_loops(q, k, v, window):
    """Per-query softmax over the keys of its own window, by explicit loops."""
    h, w, d = q.shape
    out = np.zeros((h, w, v.shape[2]))
    for y in range(h):
        for x in range(w):
            y0, x0 = (y // window) * window, (x // window) * window
            keys = k[y0 : y0 + window, x0 : x0 + window].reshape(-1, d)
            vals = v[y0 : y0 + window, x0 : x0 + window].reshape(-1, v.shape[2])
            logits = keys @ q[y, x] / np.sqrt(d)
            wts = np.exp(logits - logits.max())
            wts /= wts.sum()
            out[y, x] = wts @ vals
    return out


def guidance_loops(fr, ft, cutoff=0.25):
    """Six-vector for one spectrum pair written with explicit bin loops."""
    p = fr.shape[0]
    sx = sy = sabs = 0.0
    ehf_r = elf_r = ehf_t = elf_t = 0.0
    n_hf = n_lf = 0
    cross = 0j
    pr = pt = 0.0
    for u in range(p):
        for v in range(p):
            a = np.angle(fr[u, v]) if fr[u, v] != 0 else 0.0
            b = np.angle(ft[u, v]) if ft[u, v] != 0 else 0.0
            d = (a - b + np.pi) % (2 * np.pi) - np.pi
            sx += np.sin(d)
            sy += np.cos(d)
            sabs += abs(d)
            uu = u if u < p / 2 else u - p
            vv = v if v < p / 2 else v - p
            low = np.hypot(uu, vv) / (p / 2) <= 2 * cutoff
            pw_r, pw_t = abs(fr[u, v]) ** 2, abs(ft[u, v]) ** 2
            if low:
                elf_r += pw_r
                elf_t += pw_t
                n_lf += 1
            else:
                ehf_r += pw_r
                ehf_t += pw_t
                n_hf += 1
            cross += fr[u, v] * np.conj(ft[u, v])
            pr += pw_r
            pt += pw_t
    n = p * p
    ehf_r, ehf_t, elf_r, elf_t = ehf_r / n_hf, ehf_t / n_hf, elf_r / n_lf, elf_t / n_lf
    c_hf = ehf_r / (ehf_r + ehf_t) if ehf_r + ehf_t > 0 else 0.5
    c_lf = elf_t / (elf_r + elf_t) if elf_r + elf_t > 0 else 0.5
    coh = abs(cross) / np.sqrt(pr * pt) if pr * pt > 0 else 0.0
    return np.array([sx / n, sy / n, sabs / n, c_hf, c_lf, coh])

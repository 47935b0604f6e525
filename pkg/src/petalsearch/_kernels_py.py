"""Pure-numpy versions of the compiled kernels.

Signatures and results match ``petalsearch._ckernels``; results agree to
floating-point summation-order differences.
"""
import numpy as np

_CHUNK_ELEMS = 1 << 24


def pool_anchors(fmap, anchors, dy, dx, seg_start, seg_len):
    h, w, c = fmap.shape
    k_n = anchors.shape[0]
    n_seg = seg_start.shape[0]
    out = np.zeros((k_n, n_seg, c))
    n_samples = dy.shape[0]
    if n_samples == 0 or k_n == 0:
        return out
    seg_end = seg_start + seg_len
    chunk = max(1, _CHUNK_ELEMS // max(1, n_samples * c))
    for k0 in range(0, k_n, chunk):
        a = anchors[k0:k0 + chunk]
        yy = a[:, 0:1] + dy[None, :]
        xx = a[:, 1:2] + dx[None, :]
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        g = fmap[np.where(ok, yy, 0), np.where(ok, xx, 0)]  # (k, S, C)
        g *= ok[..., None]
        cs = np.zeros((g.shape[0], n_samples + 1, c))
        np.cumsum(g, axis=1, out=cs[:, 1:])
        sums = cs[:, seg_end] - cs[:, seg_start]
        cnt_cs = np.zeros((g.shape[0], n_samples + 1))
        np.cumsum(ok, axis=1, out=cnt_cs[:, 1:])
        counts = cnt_cs[:, seg_end] - cnt_cs[:, seg_start]
        out[k0:k0 + chunk] = sums / np.maximum(counts, 1.0)[..., None]
    return out


def correlate_direct(street, sats):
    n_g = street.shape[0]
    n_s = sats.shape[1]
    out = np.empty((sats.shape[0], n_s))
    idx = np.arange(n_g)
    for w in range(n_s):
        out[:, w] = np.einsum("am,kam->k", street, sats[:, (idx + w) % n_s, :])
    return out

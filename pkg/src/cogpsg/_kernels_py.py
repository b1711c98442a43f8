"""Pure-Python reference versions of the compiled kernels."""
import numpy as np


def threshold_peaks(cand_idx, cand_val, refractory, spki, npki, searchback=1.66):
    """Pan-Tompkins style adaptive-threshold decision over candidate peaks.

    Returns a uint8 mask over candidates (1 = accepted as QRS). Candidates
    inside the refractory period of the last accepted beat update the noise
    estimate; gaps longer than ``searchback`` times the running mean of the
    last 8 RR intervals trigger a search-back at half threshold.
    """
    cand_idx = [int(c) for c in cand_idx]
    cand_val = [float(c) for c in cand_val]
    n = len(cand_idx)
    acc = [0] * n
    rr_hist = []
    last_qrs = -1
    last_pos = -1
    thr1 = npki + 0.25 * (spki - npki)

    def push(rr):
        rr_hist.append(rr)
        if len(rr_hist) > 8:
            rr_hist.pop(0)

    for i in range(n):
        idx, v = cand_idx[i], cand_val[i]
        if last_qrs >= 0 and idx - last_qrs < refractory:
            npki = 0.125 * v + 0.875 * npki
        elif v > thr1:
            acc[i] = 1
            if last_qrs >= 0:
                push(idx - last_qrs)
            last_qrs, last_pos = idx, i
            spki = 0.125 * v + 0.875 * spki
        else:
            npki = 0.125 * v + 0.875 * npki
            if rr_hist:
                rr_avg = sum(rr_hist) / len(rr_hist)
                if idx - last_qrs > searchback * rr_avg:
                    best, bestv = -1, 0.5 * thr1
                    for j in range(last_pos + 1, i + 1):
                        if (not acc[j] and cand_idx[j] - last_qrs >= refractory
                                and cand_val[j] > bestv):
                            best, bestv = j, cand_val[j]
                    if best >= 0:
                        acc[best] = 1
                        push(cand_idx[best] - last_qrs)
                        last_qrs, last_pos = cand_idx[best], best
                        spki = 0.25 * bestv + 0.75 * spki
        thr1 = npki + 0.25 * (spki - npki)
    return np.asarray(acc, dtype=np.uint8)


def epoch_stats(x, epoch_len):
    """Per-epoch peak-to-peak and population std of consecutive epochs."""
    x = np.asarray(x, dtype=np.float64)
    n_epochs = x.shape[0] // epoch_len
    ep = x[: n_epochs * epoch_len].reshape(n_epochs, epoch_len)
    return np.ptp(ep, axis=1), ep.std(axis=1)

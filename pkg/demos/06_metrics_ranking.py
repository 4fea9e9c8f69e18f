"""The saliency metric suite and the cross-run ranking score.

Five per-sample metrics (CC, SIM, KLD, NSS, AUC-Judd) feed a relative
F-score that ranks checkpoints: CC, SIM, NSS, and KLD means are min-max
scaled across the runs being compared, then combined as
cc + sim + nss - kld (so the score lives in [-1, 3] and is only
meaningful relative to the other runs in the same comparison).  The demo
builds one sharp and one blurred guess at the same ground truth and
watches the ranking prefer the sharp one.
"""

import numpy as np

from sumnet.metrics import evaluate_sample, f_scores, summarize


def blob(size, cy, cx, sigma):
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    m = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2)))
    m[m < m.max() / 32] = 0
    return m / m.sum()


def main():
    gt = blob(32, 10, 20, 2.0)
    fix = np.zeros((32, 32))
    fix[10, 20] = fix[11, 19] = fix[9, 21] = 1.0

    sharp = blob(32, 11, 20, 2.5)          # nearly right
    blurred = blob(32, 16, 16, 7.0)        # central-prior baseline

    for name, pred in (("sharp", sharp), ("blurred", blurred)):
        r = evaluate_sample(pred, gt, fix, name)
        print(f"{name:8s} cc={r.cc:6.3f} sim={r.sim:6.3f} kld={r.kld:6.3f} "
              f"nss={r.nss:6.3f} auc={r.auc:6.3f}")

    runs = []
    for name, pred in (("sharp", sharp), ("blurred", blurred)):
        stats = summarize([evaluate_sample(pred, gt, fix, name)])
        runs.append((name, {k: stats[k]["mean"] for k in ("cc", "sim", "nss", "kld")}))
    for score in f_scores(runs):
        print(f"f-score {score.name:8s} {score.f_score:.3f}")


if __name__ == "__main__":
    main()

"""Run the headline ensemble comparison over several master seeds and summarise it."""

import argparse
import sys
from pathlib import Path

from stochact.acceptance import headline, seed_sweep
from stochact.experiment import load_config


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "acceptance.yaml"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default="runs/acceptance")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--candidate", default="StoFullAS10(255)")
    ap.add_argument("--single", default="relu")
    ap.add_argument("--baseline", default="FusRelu10")
    args = ap.parse_args(argv)
    cfg = load_config(args.config)
    cfg.jobs = args.jobs
    reports = seed_sweep(cfg, args.seeds, out_root=args.out, progress=lambda s: print(s, file=sys.stderr))
    h = headline(reports, args.candidate, args.single, args.baseline)
    lines = ["mean accuracy (%) over seeds " + " ".join(map(str, args.seeds)), *h.lines(),
             f"(a) {args.candidate} >= {args.single} on every dataset: {h.single_ok} {h.beats_single}",
             f"(b) {args.candidate} >= {args.baseline} on >= 2 datasets: {h.baseline_ok} {h.beats_baseline}",
             f"Wilcoxon {args.candidate} vs {args.baseline} over {h.test.n} (dataset, seed) pairs: "
             f"two-sided p={h.test.p_value:.4g}, one-sided (greater) p={h.test.p_greater:.4g}"]
    text = "\n".join(lines) + "\n"
    Path(args.out, "summary.txt").write_text(text)
    print(text, end="")
    return 0 if h.single_ok and h.baseline_ok else 1


if __name__ == "__main__":
    sys.exit(main())

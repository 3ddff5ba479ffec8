"""Sweep the adversarial weight over independent training processes.

Trains one domain-general baseline (lambda = 0) plus one adversarial run
per requested lambda on a generated corpus directory, then reduces the
per-run logs into a single comparison table.  Each run is a separate
`python -m slotfill train` process, so runs share nothing but the
read-only corpus files and can execute in parallel with --jobs.

Expected corpus layout is the `slotfill synth --suite` output: one
<domain>_train.bio and <domain>_test.bio pair per domain, plus
manifest.json.
"""
import argparse
import json
import re
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

_F1_DOMAIN_RE = re.compile(r"^domain (\S+): .* f1 ([0-9.]+) ")
_F1_OVERALL_RE = re.compile(r"^overall: .* f1 ([0-9.]+) ")


def discover_corpora(corpus_dir):
    """(domain, train_path, test_path) triples, manifest order if present."""
    manifest = corpus_dir / "manifest.json"
    if manifest.exists():
        with open(manifest, encoding="utf-8") as fh:
            entries = json.load(fh)["files"]
        by_domain = {}
        for e in entries:
            by_domain.setdefault(e["domain"], {})[e["split"]] = corpus_dir / e["path"]
        return [(d, p["train"], p["test"]) for d, p in by_domain.items()]
    out = []
    for train_path in sorted(corpus_dir.glob("*_train.bio")):
        domain = train_path.name[: -len("_train.bio")]
        test_path = corpus_dir / f"{domain}_test.bio"
        if not test_path.exists():
            raise SystemExit(f"missing test file for domain {domain!r}: {test_path}")
        out.append((domain, train_path, test_path))
    if not out:
        raise SystemExit(f"no *_train.bio files under {corpus_dir}")
    return out


def write_config(run_dir, corpora, regime, lam, args):
    cfg = {
        "schema_version": 1,
        "regime": regime,
        "corpora": [{"path": str(tr), "domain": d} for d, tr, _ in corpora],
        "test_corpora": [{"path": str(te), "domain": d} for d, _, te in corpora],
        "out_dir": str(run_dir),
        "model": {
            "embedding_dim": args.embedding_dim,
            "hidden_dim": args.hidden_dim,
            "mlp_hidden_dim": args.mlp_hidden_dim,
        },
        "train": {
            "lambda_adv": lam,
            "seed": args.seed,
            "max_epochs": args.epochs,
            "patience": args.epochs if args.fixed_budget else args.patience,
        },
    }
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "config.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2)
        fh.write("\n")
    return path


def launch(config_path, log_path):
    with open(log_path, "w", encoding="utf-8") as fh:
        proc = subprocess.run(
            [sys.executable, "-m", "slotfill", "train", "--config", str(config_path)],
            stdout=fh, stderr=subprocess.STDOUT,
        )
    return proc.returncode


def reduce_run(run_dir, domains):
    """Pull (epochs, best_dev, overall_f1, per-domain f1) out of the logs."""
    best_dev, epochs = float("nan"), 0
    metrics = run_dir / "metrics.jsonl"
    if metrics.exists():
        devs = []
        with open(metrics, encoding="utf-8") as fh:
            for line in fh:
                row = json.loads(line)
                epochs = max(epochs, row["epoch"])
                if row["split"] == "dev":
                    devs.append(row["f1"])
        if devs:
            best_dev = max(devs)
    overall, per_domain = float("nan"), {d: float("nan") for d in domains}
    eval_txt = run_dir / "eval.txt"
    if eval_txt.exists():
        for line in eval_txt.read_text(encoding="utf-8").splitlines():
            m = _F1_DOMAIN_RE.match(line)
            if m:
                per_domain[m.group(1)] = float(m.group(2))
            m = _F1_OVERALL_RE.match(line)
            if m:
                overall = float(m.group(1))
    return epochs, best_dev, overall, per_domain


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--corpus-dir", type=Path, required=True,
                    help="directory holding <domain>_{train,test}.bio files")
    ap.add_argument("--out-dir", type=Path, required=True)
    ap.add_argument("--lambdas", default="0.01,0.1,1.0",
                    help="comma-separated adversarial weights (default %(default)s)")
    ap.add_argument("--embedding-dim", type=int, default=64)
    ap.add_argument("--hidden-dim", type=int, default=64)
    ap.add_argument("--mlp-hidden-dim", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--patience", type=int, default=3,
                    help="early-stopping patience (ignored with --fixed-budget)")
    ap.add_argument("--fixed-budget", action="store_true",
                    help="disable early stopping so every run trains --epochs epochs")
    ap.add_argument("--jobs", type=int, default=1,
                    help="concurrent training processes (default %(default)s)")
    args = ap.parse_args(argv)

    corpora = discover_corpora(args.corpus_dir)
    domains = [d for d, _, _ in corpora]
    lambdas = []
    for tok in args.lambdas.split(","):
        tok = tok.strip()
        if tok:
            lambdas.append(float(tok))

    runs = [("general", 0.0, args.out_dir / "general")]
    for lam in lambdas:
        if lam == 0.0:
            continue  # already covered by the baseline
        runs.append(("general-adv", lam, args.out_dir / f"adv{lam:g}"))

    jobs = []
    for regime, lam, run_dir in runs:
        cfg_path = write_config(run_dir, corpora, regime, lam, args)
        jobs.append((regime, lam, run_dir, cfg_path))

    def run_one(job):
        regime, lam, run_dir, cfg_path = job
        rc = launch(cfg_path, run_dir / "train.log")
        print(f"{regime} lambda={lam:g}: exit {rc} ({run_dir})", flush=True)
        return rc

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        codes = list(pool.map(run_one, jobs))

    header = ["run", "lambda", "epochs", "best_dev", "overall_f1"] + domains
    rows = [header]
    for (regime, lam, run_dir, _), rc in zip(jobs, codes):
        if rc != 0:
            rows.append([regime, f"{lam:g}", "failed", "-", "-"] + ["-"] * len(domains))
            continue
        epochs, best_dev, overall, per_domain = reduce_run(run_dir, domains)
        rows.append(
            [regime, f"{lam:g}", str(epochs), f"{best_dev:.2f}", f"{overall:.2f}"]
            + [f"{per_domain[d]:.2f}" for d in domains]
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    for r in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return 1 if any(codes) else 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Command-line harness. Every verb writes into one run directory.

Layout of a run directory::

    config.toml, config.hash     resolved configuration and its digest
    data/                        dataset splits
    checkpoints/                 trained models
    logs/                        JSON-lines training logs
    reports/                     one JSON report (plus CSV curves) per verb
    report.md, tables/           output of ``report``
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from . import config as C
from . import experiments as E
from .fpnet import EncoderConfig, TrainHistory, load_fpnet, save_fpnet
from .nn import save_checkpoint, state_hash

log = logging.getLogger("fpnetlab")

VERBS = (
    "gen-data", "train", "eval", "sweep-alpha", "sweep-bits", "sweep-zones",
    "drift", "ad-eval", "baseline", "report", "reproduce",
)
# verbs each report depends on, in order, so ``reproduce`` can rebuild it from scratch
PIPELINES = {
    "data": ["gen-data"],
    "train": ["gen-data", "train"],
    "eval": ["gen-data", "train", "eval"],
    "baseline": ["gen-data", "baseline"],
    "sweep_alpha": ["gen-data", "sweep-alpha"],
    "sweep_bits": ["gen-data", "sweep-bits"],
    "sweep_zones": ["sweep-zones"],
    "drift": ["gen-data", "train", "drift"],
    "ad_eval": ["gen-data", "train", "ad-eval"],
}


class HarnessError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _floats(text: str | None, cast=float):
    if text is None:
        return None
    try:
        return tuple(cast(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise HarnessError(f"could not parse list {text!r}: {exc}") from exc


def _finite(metrics: dict, verb: str) -> None:
    for k, v in metrics.items():
        if isinstance(v, float) and not math.isfinite(v):
            raise HarnessError(f"{verb}: metric {k} is {v}")


def _provenance(cfg: C.ExperimentConfig, **extra) -> dict:
    return {
        "config_hash": cfg.hash(),
        "profile": cfg.profile,
        "seeds": {
            "environment": cfg.environment.seed,
            "data": cfg.data.seed,
            "split": cfg.data.split_seed,
            "ood": cfg.data.ood_seed,
            "train": cfg.train.seed,
            "ad": cfg.ad.seed,
            "link": cfg.link.seed,
        },
        "versions": {"fpnetlab": __version__, "numpy": np.__version__, "python": platform.python_version()},
        **extra,
    }


def _write_report(run_dir: Path, name: str, cfg, args: dict, metrics: dict, **body) -> dict:
    _finite(metrics, name)
    rep = {"report": name, "args": args, "metrics": metrics, "provenance": _provenance(cfg), **body}
    path = run_dir / "reports" / f"{name}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s", path)
    return rep


def _write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if r.get(k) is None else r.get(k) for k in keys})


def _splits(cfg, run_dir: Path) -> E.Splits:
    data = run_dir / "data"
    if all((data / f"{n}.json").exists() for n in E.SPLIT_NAMES):
        return E.read_splits(cfg, data)
    splits = E.make_splits(cfg)
    E.write_splits(splits, data)
    return splits


def _ckpt(run_dir: Path, n: int) -> Path:
    return run_dir / "checkpoints" / f"fpnet_N{n}.tnck"


def _base_model(cfg, run_dir: Path):
    n = cfg.encoder.codeword_lens[-1]
    path = _ckpt(run_dir, n)
    if not path.exists():
        raise HarnessError(f"no checkpoint at {path}; run `fpnetlab train --out {run_dir}` first")
    model, meta = load_fpnet(path)
    if meta.get("config_hash") != cfg.hash():
        raise HarnessError(f"{path} was trained under config {meta.get('config_hash')}, not {cfg.hash()}")
    return model


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------


def cmd_gen_data(cfg, run_dir: Path, args: dict) -> dict:
    s = _splits(cfg, run_dir)
    counts = {n: len(getattr(s, n)) for n in E.SPLIT_NAMES}
    return _write_report(run_dir, "data", cfg, args, {f"n_{k}": v for k, v in counts.items()}, environment=s.env.digest())


def cmd_train(cfg, run_dir: Path, args: dict) -> dict:
    s = _splits(cfg, run_dir)
    metrics, hashes = {}, {}
    for n in cfg.encoder.codeword_lens:
        path = _ckpt(run_dir, n)
        if path.exists():
            log.info("resuming: %s already trained", path.name)
            model, meta = load_fpnet(path)
            if meta.get("config_hash") != cfg.hash():
                raise HarnessError(f"{path} belongs to another config; use a fresh --out")
            hashes[n] = meta["state_hash"]
        else:
            log.info("training FPNet with N=%d", n)
            run = E.fit_fpnet(cfg, s, codeword_len=n)
            run.history.write_jsonl(run_dir / "logs" / f"train_N{n}.jsonl")
            model = run.model
            hashes[n] = state_hash(model)
            save_fpnet(path, model, {"config_hash": cfg.hash(), "state_hash": hashes[n]})
        m = E.evaluate(model, s.bfm("test"))
        metrics[f"N{n}.sgcs"], metrics[f"N{n}.accuracy"] = m["sgcs"], m["accuracy"]
    return _write_report(run_dir, "train", cfg, args, metrics, checkpoints={str(k): v for k, v in hashes.items()})


def cmd_eval(cfg, run_dir: Path, args: dict) -> dict:
    s = _splits(cfg, run_dir)
    test = s.bfm("test")
    rows = []
    for n in cfg.encoder.codeword_lens:
        path = _ckpt(run_dir, n)
        if not path.exists():
            raise HarnessError(f"no checkpoint for N={n} at {path}; run `fpnetlab train` first")
        model, _ = load_fpnet(path)
        rows.append(E.fpnet_row(cfg, model, test, s.test.h))
    rows += E.codec_rows(cfg, test, s.test.h)
    metrics = {}
    for r in rows:
        tag = r["method"] + (f"_N{r['codeword_len']}" if r.get("codeword_len") else "")
        for k in ("sgcs", "accuracy", "evm_db", "r_gross", "r_net"):
            if r.get(k) is not None:
                metrics[f"{tag}.{k}"] = r[k]
    # baseline rows are shown for comparison but their metrics belong to the baseline report
    base = run_dir / "reports" / "baseline.json"
    if base.exists():
        rows += json.loads(base.read_text())["rows"]
    _write_csv(run_dir / "reports" / "eval.csv", rows)
    return _write_report(run_dir, "eval", cfg, args, metrics, rows=rows)


def cmd_baseline(cfg, run_dir: Path, args: dict) -> dict:
    s = _splits(cfg, run_dir)
    test = s.bfm("test")
    log.info("training the sequential baseline")
    seq = E.fit_sequential(cfg, s)
    seq.history.write_jsonl(run_dir / "logs" / "baseline_sequential.jsonl")
    meta = {"config_hash": cfg.hash()}
    save_fpnet(run_dir / "checkpoints" / "sfpnet_autoencoder.tnck", seq.autoencoder, meta)
    save_checkpoint(run_dir / "checkpoints" / "sfpnet_classifier.tnck", seq.classifier, meta)
    rows = [E.sequential_row(cfg, seq, test, s.test.h)]
    log.info("fitting KNN and the uncompressed positioning network")
    knn, extra = E.knn_rows(cfg, s)
    extra.pop("history").write_jsonl(run_dir / "logs" / "baseline_positioning.jsonl")
    rows += knn
    metrics = {f"{r['method']}.{k}": r[k] for r in rows for k in ("sgcs", "accuracy") if r.get(k) is not None}
    return _write_report(run_dir, "baseline", cfg, args, metrics, rows=rows, **extra)


def _save_run(run_dir: Path, cfg, sub: str):
    def on_run(tag, run):
        d = run_dir / "runs" / sub / tag
        run.history.write_jsonl(d / "train.jsonl")
        save_fpnet(d / "model.tnck", run.model, {"config_hash": cfg.hash()})
    return on_run


def cmd_sweep_alpha(cfg, run_dir: Path, args: dict) -> dict:
    s = _splits(cfg, run_dir)
    alphas = args.get("alphas") or cfg.sweeps.alphas
    rows = E.sweep_alpha(cfg, s, alphas, on_run=_save_run(run_dir, cfg, "sweep_alpha"))
    _write_csv(run_dir / "reports" / "sweep_alpha.csv", rows)
    metrics = {f"alpha{r['alpha']:g}.{k}": r[k] for r in rows for k in ("sgcs", "accuracy")}
    return _write_report(run_dir, "sweep_alpha", cfg, {**args, "alphas": list(alphas)}, metrics, rows=rows)


def cmd_sweep_bits(cfg, run_dir: Path, args: dict) -> dict:
    s = _splits(cfg, run_dir)
    lens = args.get("lens") or cfg.sweeps.codeword_lens
    rows = E.sweep_bits(cfg, s, lens, on_run=_save_run(run_dir, cfg, "sweep_bits"))
    _write_csv(run_dir / "reports" / "sweep_bits.csv", rows)
    metrics = {}
    for r in rows:
        tag = f"N{r['codeword_len']}" if r["codeword_len"] else r["method"]
        for k in ("sgcs", "accuracy", "r_net"):
            if r.get(k) is not None:
                metrics[f"{tag}.{k}"] = r[k]
    return _write_report(run_dir, "sweep_bits", cfg, {**args, "lens": list(lens)}, metrics, rows=rows)


def cmd_sweep_zones(cfg, run_dir: Path, args: dict) -> dict:
    counts = args.get("zones") or cfg.sweeps.zone_counts
    rows = E.sweep_zones(cfg, counts, on_run=_save_run(run_dir, cfg, "sweep_zones"))
    _write_csv(run_dir / "reports" / "sweep_zones.csv", rows)
    metrics = {f"zones{r['n_zones']}.{k}": r[k] for r in rows for k in ("sgcs", "accuracy")}
    return _write_report(run_dir, "sweep_zones", cfg, {**args, "zones": list(counts)}, metrics, rows=rows)


def cmd_drift(cfg, run_dir: Path, args: dict) -> dict:
    s = _splits(cfg, run_dir)
    model = _base_model(cfg, run_dir)
    res = E.drift(cfg, s, model, args.get("intensity"), args.get("sizes"))
    _write_csv(run_dir / "reports" / "drift_curves.csv", res.pop("curves"))
    _write_csv(run_dir / "reports" / "drift_final.csv", res["final"])
    metrics = {k: res[k] for k in (
        "accuracy_env_a", "accuracy_env_b_before", "sgcs_env_a", "sgcs_env_b_before", "accuracy_env_b_trained", "sgcs_env_b_trained"
    )}
    metrics.update({f"finetune{r['n_samples']}.accuracy": r["accuracy"] for r in res["final"]})
    return _write_report(run_dir, "drift", cfg, args, metrics, **res)


def cmd_ad_eval(cfg, run_dir: Path, args: dict) -> dict:
    s = _splits(cfg, run_dir)
    model = _base_model(cfg, run_dir)
    hist = TrainHistory()
    res = E.ad_eval(cfg, s, model, hist)
    hist.write_jsonl(run_dir / "logs" / "adblock.jsonl")
    ad = res.pop("model")
    save_checkpoint(run_dir / "checkpoints" / "adblock.tnck", ad, {"config_hash": cfg.hash(), "threshold": ad.threshold})
    curve = res.pop("calibration")
    curve.to_csv(run_dir / "reports" / "ad_sweep.csv")
    _write_csv(
        run_dir / "reports" / "misrouting.csv",
        [{"zone": i, "fraction": f} for i, f in enumerate(res["misrouting"])],
    )
    t = res["test"]
    metrics = {"threshold": res["threshold"], "misrouting_classes": res["misrouting_classes"]}
    metrics.update({k: t[k] for k in ("tpr", "fpr", "precision", "f1") if t[k] is not None})
    return _write_report(run_dir, "ad_eval", cfg, args, metrics, **res)


# ---------------------------------------------------------------------------
# report and reproduce
# ---------------------------------------------------------------------------

REPORT_ORDER = ("data", "train", "eval", "baseline", "sweep_bits", "sweep_alpha", "sweep_zones", "drift", "ad_eval")


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def cmd_report(cfg, run_dir: Path, args: dict) -> dict:
    """Markdown summary plus one CSV of every reported metric. Byte-stable for the same inputs."""
    lines = [f"# Run report: {run_dir.name}", "", f"Config hash `{cfg.hash()}`, profile `{cfg.profile}`.", ""]
    bundle = []
    missing = []
    for name in REPORT_ORDER:
        path = run_dir / "reports" / f"{name}.json"
        if not path.exists():
            missing.append(name)
            continue
        rep = json.loads(path.read_text())
        lines += [f"## {name}", ""]
        rows = rep.get("rows")
        if rows:
            keys = [k for k in rows[0] if not isinstance(rows[0][k], (dict, list))]
            lines.append("| " + " | ".join(keys) + " |")
            lines.append("|" + "---|" * len(keys))
            for r in rows:
                lines.append("| " + " | ".join(_fmt(r.get(k)) for k in keys) + " |")
        else:
            lines.append("| metric | value |")
            lines.append("|---|---|")
            for k in sorted(rep["metrics"]):
                lines.append(f"| {k} | {_fmt(rep['metrics'][k])} |")
        for k in sorted(rep["metrics"]):
            bundle.append({"report": name, "metric": k, "value": rep["metrics"][k]})
        prov = rep["provenance"]
        lines += ["", f"_source: reports/{name}.json, config {prov['config_hash']}, numpy {prov['versions']['numpy']}_", ""]
    if missing:
        lines += ["## Missing artifacts", ""] + [f"- {m}: not run" for m in missing] + [""]
    (run_dir / "report.md").write_text("\n".join(lines))
    _write_csv(run_dir / "tables" / "metrics.csv", bundle)
    log.info("wrote %s", run_dir / "report.md")
    return {"report": "report", "present": [n for n in REPORT_ORDER if n not in missing], "missing": missing}


def _stored_metrics(run_dir: Path) -> list[tuple[str, str]]:
    out = []
    for name in PIPELINES:
        path = run_dir / "reports" / f"{name}.json"
        if path.exists():
            out += [(name, k) for k in sorted(json.loads(path.read_text())["metrics"])]
    return out


def cmd_reproduce(cfg, run_dir: Path, args: dict) -> dict:
    """Rebuild one stored metric in a scratch directory and compare it bit for bit."""
    choices = _stored_metrics(run_dir)
    if not choices:
        raise HarnessError(f"{run_dir} has no reports to reproduce")
    if args.get("metric"):
        name, _, key = args["metric"].partition(":")
        if (name, key) not in choices:
            raise HarnessError(f"metric {args['metric']!r} not found; use REPORT:KEY, e.g. {choices[0][0]}:{choices[0][1]}")
    else:
        name, key = choices[int(np.random.default_rng(args.get("pick_seed", 0)).integers(len(choices)))]
    stored_rep = json.loads((run_dir / "reports" / f"{name}.json").read_text())
    stored = stored_rep["metrics"][key]
    scratch = Path(tempfile.mkdtemp(prefix="fpnetlab-reproduce-"))
    try:
        C.write_resolved(cfg, scratch)
        for verb in PIPELINES[name]:
            verb_args = stored_rep["args"] if verb == PIPELINES[name][-1] else {}
            HANDLERS[verb](cfg, scratch, dict(verb_args))
        again = json.loads((scratch / "reports" / f"{name}.json").read_text())["metrics"][key]
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    identical = type(stored) is type(again) and stored == again
    out = {"metric": f"{name}:{key}", "stored": stored, "recomputed": again, "identical": identical}
    (run_dir / "reports").mkdir(exist_ok=True)
    (run_dir / "reports" / "reproduce.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return out


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-alpha": cmd_sweep_alpha,
    "sweep-bits": cmd_sweep_bits,
    "sweep-zones": cmd_sweep_zones,
    "drift": cmd_drift,
    "ad-eval": cmd_ad_eval,
    "baseline": cmd_baseline,
    "report": cmd_report,
    "reproduce": cmd_reproduce,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpnetlab", description="Joint CSI feedback and positioning experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment file")
    common.add_argument("--profile", choices=sorted(C.PROFILES), help="named preset applied under the config file")
    common.add_argument("--seed", type=int, help="overrides the training and detector seeds")
    common.add_argument("--out", help="run directory (defaults to the config's output)")
    for verb in VERBS:
        sp = sub.add_parser(verb, parents=[common])
        if verb == "sweep-alpha":
            sp.add_argument("--alphas", help="comma-separated loss weights")
        elif verb == "sweep-bits":
            sp.add_argument("--lens", help="comma-separated codeword lengths")
        elif verb == "sweep-zones":
            sp.add_argument("--zones", help="comma-separated zone counts")
        elif verb == "drift":
            sp.add_argument("--intensity", type=float)
            sp.add_argument("--sizes", help="comma-separated fine-tune sample budgets")
        elif verb == "reproduce":
            sp.add_argument("--metric", help="REPORT:KEY to re-derive; random when omitted")
            sp.add_argument("--pick-seed", type=int, default=0, help="seed for the random metric choice")
    return p


def resolve(ns: argparse.Namespace) -> tuple[C.ExperimentConfig, Path]:
    run_dir = Path(ns.out) if ns.out else None
    stored = run_dir is not None and (run_dir / "config.toml").exists()
    if ns.verb in ("report", "reproduce"):
        if not stored:
            raise HarnessError(f"{ns.out or '--out'} is not a run directory (no config.toml)")
        return C.read_resolved(run_dir), run_dir
    overrides = {}
    if ns.seed is not None:
        overrides = {"train": {"seed": ns.seed}, "ad": {"seed": ns.seed}}
    cfg = C.load_config(ns.config, ns.profile, overrides)
    run_dir = run_dir or Path(cfg.output)
    if stored:
        prev = C.read_resolved(run_dir)
        if prev.hash() != cfg.hash():
            raise HarnessError(
                f"{run_dir} already holds config {prev.hash()}; this invocation resolves to {cfg.hash()}. Use a new --out."
            )
    C.write_resolved(cfg, run_dir)
    return cfg, run_dir


def _verb_args(ns: argparse.Namespace) -> dict:
    args = {}
    if getattr(ns, "alphas", None):
        args["alphas"] = list(_floats(ns.alphas))
    if getattr(ns, "lens", None):
        args["lens"] = list(_floats(ns.lens, int))
    if getattr(ns, "zones", None):
        args["zones"] = list(_floats(ns.zones, int))
    if getattr(ns, "intensity", None) is not None:
        args["intensity"] = ns.intensity
    if getattr(ns, "sizes", None):
        args["sizes"] = list(_floats(ns.sizes, int))
    if getattr(ns, "metric", None):
        args["metric"] = ns.metric
    if getattr(ns, "pick_seed", None) is not None:
        args["pick_seed"] = ns.pick_seed
    return args


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg, run_dir = resolve(ns)
        out = HANDLERS[ns.verb](cfg, run_dir, _verb_args(ns))
    except (HarnessError, C.ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"fpnetlab {ns.verb}: error: {exc}", file=sys.stderr)
        return 2
    summary = out.get("metrics", out)
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    if ns.verb == "reproduce" and not out["identical"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

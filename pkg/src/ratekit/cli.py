"""Command-line pipeline: simulate -> train -> importance -> evaluate.

Every subcommand is driven by an explicit seed, writes only into its output
directory, and echoes the merged effective configuration there, so reruns
with the same arguments are byte-identical. Exit codes: 2 usage, 3 data or
config problems, 4 numerical failures; error messages name the stage that
failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from ratekit import bnn, esa, evaluate, rate, simgen
from ratekit.core import NotPositiveDefiniteError

__all__ = ["main", "dispatch", "render_curve_svg"]

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_NUMERIC_ERRORS = (
    NotPositiveDefiniteError,
    bnn.TrainingDivergedError,
    rate.InconsistentPrecisionError,
    np.linalg.LinAlgError,
    ArithmeticError,
    FloatingPointError,
)


class StageError(Exception):
    def __init__(self, stage_name: str, cause: BaseException, exit_code: int):
        self.stage_name = stage_name
        self.cause = cause
        self.exit_code = exit_code
        super().__init__(f"[{stage_name}] {cause}")


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except _NUMERIC_ERRORS as exc:
        raise StageError(name, exc, EXIT_NUMERIC) from exc
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise StageError(name, exc, EXIT_DATA) from exc


# ---------------------------------------------------------------------------
# SVG rendering


def render_curve_svg(series, x_label: str, y_label: str) -> str:
    """Minimal deterministic line plot: one polyline per (label, xs, ys) series.

    Data ranges map linearly onto a fixed 640x480 viewport; callers get valid
    standalone SVG text.
    """
    if not series:
        raise ValueError("need at least one series")
    parsed = []
    for label, xs, ys in series:
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        if xs.shape != ys.shape or xs.ndim != 1:
            raise ValueError(f"series {label!r}: xs and ys must be 1-d and equal length")
        if xs.size < 2:
            raise ValueError(f"series {label!r}: need at least 2 points")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError(f"series {label!r}: points must be finite")
        parsed.append((str(label), xs, ys))

    width, height = 640, 480
    ml, mr, mt, mb = 60, 20, 20, 45
    x0, x1 = ml, width - mr
    y0, y1 = height - mb, mt  # y axis points up

    all_x = np.concatenate([xs for _, xs, _ in parsed])
    all_y = np.concatenate([ys for _, _, ys in parsed])
    xmin, xmax = float(all_x.min()), float(all_x.max())
    ymin, ymax = float(all_y.min()), float(all_y.max())
    xspan = xmax - xmin or 1.0
    yspan = ymax - ymin or 1.0

    def sx(v: float) -> float:
        return x0 + (v - xmin) / xspan * (x1 - x0)

    def sy(v: float) -> float:
        return y0 + (v - ymin) / yspan * (y1 - y0)

    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) // 2}" y="{height - 8}" text-anchor="middle" '
        f'font-size="14">{_xml_escape(x_label)}</text>',
        f'<text x="14" y="{(y0 + y1) // 2}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 14 {(y0 + y1) // 2})">{_xml_escape(y_label)}</text>',
        f'<text x="{x0}" y="{y0 + 16}" text-anchor="middle" font-size="11">{xmin:.4g}</text>',
        f'<text x="{x1}" y="{y0 + 16}" text-anchor="middle" font-size="11">{xmax:.4g}</text>',
        f'<text x="{x0 - 6}" y="{y0}" text-anchor="end" font-size="11">{ymin:.4g}</text>',
        f'<text x="{x0 - 6}" y="{y1 + 10}" text-anchor="end" font-size="11">{ymax:.4g}</text>',
    ]
    for i, (label, xs, ys) in enumerate(parsed):
        color = palette[i % len(palette)]
        points = " ".join(f"{sx(float(a)):.2f},{sy(float(b)):.2f}" for a, b in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        out.append(
            f'<text x="{x1 - 2}" y="{mt + 16 * (i + 1)}" text-anchor="end" font-size="12" '
            f'fill="{color}">{_xml_escape(label)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _xml_escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# ---------------------------------------------------------------------------
# Config plumbing


def _load_config(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    with open(args.config) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    return cfg


def _merge(defaults: dict, config: dict, args) -> dict:
    """defaults < config file < explicitly passed flags."""
    merged = dict(defaults)
    for key in defaults:
        if key in config:
            merged[key] = config[key]
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    return merged


def _prepare_out_dir(args) -> Path:
    if not getattr(args, "out", None):
        raise ValueError("an output directory is required (--out)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out: Path, command: str, effective: dict) -> None:
    doc = {"command": command, "config": effective}
    (out / "effective_config.json").write_text(json.dumps(doc, sort_keys=True) + "\n")


def _load_dataset(path) -> simgen.Dataset:
    return simgen.load_dataset_csv(path)


def _load_network(path) -> bnn.Network:
    return bnn.network_from_json(Path(path).read_text())


def _parse_hidden(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    parts = [part.strip() for part in str(text).split(",") if part.strip()]
    if not parts:
        raise ValueError("hidden layer list is empty")
    return tuple(int(part) for part in parts)


def _parse_fractions(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(part) for part in str(text).split(",") if part.strip())


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_simulate(args) -> int:
    with _stage("config"):
        out = _prepare_out_dir(args)
        cfg = _merge(
            {
                "n": 1000,
                "p": 100,
                "frac_causal": 0.1,
                "frac_redundant": 0.0,
                "clusters_per_class": 2,
                "class_sep": 2.0,
                "flip_y": 0.01,
                "test_fraction": 0.0,
                "seed": 0,
            },
            _load_config(args),
            args,
        )
        _echo_config(out, "simulate", cfg)
    with _stage("simulate"):
        spec = simgen.SynthSpec(
            n=int(cfg["n"]),
            p=int(cfg["p"]),
            frac_causal=float(cfg["frac_causal"]),
            frac_redundant=float(cfg["frac_redundant"]),
            n_clusters_per_class=int(cfg["clusters_per_class"]),
            class_sep=float(cfg["class_sep"]),
            flip_y=float(cfg["flip_y"]),
            seed=int(cfg["seed"]),
        )
        ds = simgen.synth_classification(spec)
    with _stage("write-output"):
        test_fraction = float(cfg["test_fraction"])
        if test_fraction > 0:
            n_test = int(round(test_fraction * ds.n))
            split_rng = np.random.default_rng(spec.seed)
            order = split_rng.permutation(ds.n)
            test_idx, train_idx = order[:n_test], order[n_test:]
            for name, idx in (("train", train_idx), ("test", test_idx)):
                part = simgen.Dataset(
                    X=ds.X[idx],
                    y=ds.y[idx],
                    causal_mask=ds.causal_mask,
                    feature_names=ds.feature_names,
                    column_permutation=ds.column_permutation,
                    seed=ds.seed,
                )
                simgen.save_dataset_csv(part, out / f"{name}.csv")
        else:
            simgen.save_dataset_csv(ds, out / "dataset.csv")
    return 0


def _cmd_train(args) -> int:
    with _stage("config"):
        out = _prepare_out_dir(args)
        cfg = _merge(
            {
                "data": None,
                "hidden": "128,128",
                "link": "sigmoid",
                "classes": 1,
                "prior_scale": 1.0,
                "epochs": 20,
                "learning_rate": 1e-3,
                "patience": 2,
                "batch_size": 32,
                "mc_samples": 1,
                "val_fraction": 0.2,
                "seed": 0,
            },
            _load_config(args),
            args,
        )
        if not cfg["data"]:
            raise ValueError("a dataset CSV is required (--data)")
        _echo_config(out, "train", cfg)
    with _stage("load-data"):
        ds = _load_dataset(cfg["data"])
    with _stage("train"):
        net_cfg = bnn.NetworkConfig(
            input_dim=ds.p,
            hidden_sizes=_parse_hidden(cfg["hidden"]),
            link=str(cfg["link"]),
            n_classes=int(cfg["classes"]),
            prior_scale=float(cfg["prior_scale"]),
        )
        train_cfg = bnn.TrainConfig(
            epochs=int(cfg["epochs"]),
            learning_rate=float(cfg["learning_rate"]),
            patience=int(cfg["patience"]),
            batch_size=int(cfg["batch_size"]),
            mc_samples=int(cfg["mc_samples"]),
            val_fraction=float(cfg["val_fraction"]),
            seed=int(cfg["seed"]),
        )
        net = bnn.build_network(net_cfg, seed=int(cfg["seed"]))
        trained, history = bnn.train(net, ds, train_cfg)
    with _stage("write-output"):
        (out / "model.json").write_text(bnn.network_to_json(trained) + "\n")
        (out / "history.json").write_text(json.dumps(history, sort_keys=True) + "\n")
    return 0


def _importance_common(args, with_groups: bool) -> int:
    command = "group-importance" if with_groups else "importance"
    with _stage("config"):
        out = _prepare_out_dir(args)
        defaults = {
            "data": None,
            "model": None,
            "jitter": 1e-8,
            "path": "fast",
            "class_index": 0,
        }
        if with_groups:
            defaults["groups"] = None
        cfg = _merge(defaults, _load_config(args), args)
        for required in ("data", "model") + (("groups",) if with_groups else ()):
            if not cfg[required]:
                raise ValueError(f"--{required} is required")
        _echo_config(out, command, cfg)
    with _stage("load-data"):
        ds = _load_dataset(cfg["data"])
        net = _load_network(cfg["model"])
    with _stage("effect-sizes"):
        lp = bnn.logit_posterior(net, ds.X)
        effect = esa.covariance_esa(ds.X, lp, feature_names=ds.feature_names)
        esa.effect_sizes_to_csv(effect, out / "effect_sizes.csv")
    with _stage("precision"):
        pm = rate.build_precision(
            effect, base_jitter=float(cfg["jitter"]), class_index=int(cfg["class_index"])
        )
    if with_groups:
        with _stage("load-groups"):
            groups = _read_group_csv(cfg["groups"], ds.feature_names)
        with _stage("group-importance"):
            report = rate.group_rate(pm, groups)
        with _stage("write-output"):
            (out / "group_report.json").write_text(rate.report_to_json(report) + "\n")
            rate.report_to_csv(report, out / "group_report.csv")
    else:
        with _stage("importance"):
            report = rate.rate_scores(pm, path=str(cfg["path"]))
        with _stage("write-output"):
            (out / "report.json").write_text(rate.report_to_json(report) + "\n")
            rate.report_to_csv(report, out / "report.csv")
    return 0


def _cmd_importance(args) -> int:
    return _importance_common(args, with_groups=False)


def _cmd_group_importance(args) -> int:
    return _importance_common(args, with_groups=True)


def _read_group_csv(path, feature_names) -> rate.GroupMap:
    """Rows of group_name,feature_name; a literal header row is skipped."""
    import csv as _csv

    groups: dict[str, list[str]] = {}
    with open(path, newline="") as fh:
        for row in _csv.reader(fh):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise ValueError(f"group file row must be group_name,feature_name: {row!r}")
            name, feat = row[0].strip(), row[1].strip()
            if (name, feat) in (("group_name", "feature_name"), ("group", "feature")):
                continue
            groups.setdefault(name, []).append(feat)
    if not groups:
        raise ValueError(f"{path}: no groups found")
    return rate.GroupMap.from_names(groups, feature_names)


def _cmd_evaluate(args) -> int:
    with _stage("config"):
        out = _prepare_out_dir(args)
        cfg = _merge(
            {
                "report": None,
                "mask": None,
                "model": None,
                "data": None,
                "degradation": False,
                "ranking": "rate",
                "fractions": "0,0.05,0.1,0.15,0.2,0.25,0.3,0.35,0.4,0.45,0.5",
                "repeats": 10,
                "seed": 0,
            },
            _load_config(args),
            args,
        )
        _echo_config(out, "evaluate", cfg)
        if not cfg["report"]:
            raise ValueError("--report is required")
    with _stage("load-report"):
        report_doc = json.loads(Path(cfg["report"]).read_text())
        names = [item["name"] for item in report_doc["items"]]
        scores = np.array([item["rate"] for item in report_doc["items"]])

    wrote_anything = False
    if cfg["mask"]:
        with _stage("roc"):
            mask_doc = json.loads(Path(cfg["mask"]).read_text())
            if mask_doc.get("causal_mask") is None:
                raise ValueError(f"{cfg['mask']}: no causal mask recorded")
            mask = np.asarray(mask_doc["causal_mask"], dtype=bool)
            if mask.shape[0] != scores.shape[0]:
                raise ValueError("mask length does not match the report")
            curve = evaluate.roc_auc(scores, mask)
            evaluate.roc_curve_to_csv(curve, out / "roc.csv")
            svg = render_curve_svg(
                [(f"AUC={curve.auc:.4f}", curve.fpr, curve.tpr)],
                "false positive rate",
                "true positive rate",
            )
            (out / "roc.svg").write_text(svg)
            wrote_anything = True

    if cfg["degradation"]:
        with _stage("degradation"):
            if not cfg["model"] or not cfg["data"]:
                raise ValueError("degradation needs --model and --data")
            net = _load_network(cfg["model"])
            ds = _load_dataset(cfg["data"])
            if list(ds.feature_names) != names:
                raise ValueError("report features do not match the dataset")
            if cfg["ranking"] == "rate":
                ranking = np.argsort(-scores, kind="stable")
            elif cfg["ranking"] == "random":
                ranking = np.random.default_rng(int(cfg["seed"])).permutation(len(scores))
            else:
                raise ValueError(f"unknown ranking: {cfg['ranking']!r}")
            curve = evaluate.shuffle_degradation(
                net,
                ds,
                ranking,
                fractions=_parse_fractions(cfg["fractions"]),
                repeats=int(cfg["repeats"]),
                seed=int(cfg["seed"]),
            )
            evaluate.degradation_curve_to_csv(curve, out / "degradation.csv")
            svg = render_curve_svg(
                [(f"ranking={cfg['ranking']}", curve.fractions, curve.mean_accuracy)],
                "fraction of features shuffled",
                "test accuracy",
            )
            (out / "degradation.svg").write_text(svg)
            wrote_anything = True

    if not wrote_anything:
        raise StageError("config", ValueError("nothing to evaluate: pass --mask and/or --degradation"), EXIT_DATA)
    return 0


def _cmd_demo_collinearity(args) -> int:
    with _stage("config"):
        out = _prepare_out_dir(args)
        cfg = _merge(
            {"rho": 0.999, "n": 5000, "reps": 100, "seed": 0},
            _load_config(args),
            args,
        )
        _echo_config(out, "demo-collinearity", cfg)
    with _stage("replicates"):
        rho, n, reps = float(cfg["rho"]), int(cfg["n"]), int(cfg["reps"])
        seeds = np.random.SeedSequence(int(cfg["seed"])).generate_state(reps)
        rows = []
        for r in range(reps):
            ds = simgen.collinear_regression(n, rho, seed=int(seeds[r]))
            cov_est = esa.covariance_effect_sizes(ds.X, ds.y)
            ols_est = esa.ols_effect_size(ds.X, ds.y)
            rows.append((cov_est, ols_est))
        cov_all = np.stack([r[0] for r in rows])
        ols_all = np.stack([r[1] for r in rows])
    with _stage("write-output"):
        import csv as _csv

        with open(out / "estimates.csv", "w", newline="") as fh:
            writer = _csv.writer(fh, lineterminator="\n")
            writer.writerow(["replicate", "covariance_f1", "covariance_f2", "ols_f1", "ols_f2"])
            for r in range(reps):
                writer.writerow(
                    [r]
                    + [repr(float(v)) for v in cov_all[r]]
                    + [repr(float(v)) for v in ols_all[r]]
                )
        with open(out / "collinearity_summary.csv", "w", newline="") as fh:
            writer = _csv.writer(fh, lineterminator="\n")
            writer.writerow(["estimator", "coefficient", "mean", "std"])
            for label, block in (("covariance", cov_all), ("ols", ols_all)):
                for j in range(block.shape[1]):
                    writer.writerow(
                        [
                            label,
                            f"f{j + 1}",
                            repr(float(block[:, j].mean())),
                            repr(float(block[:, j].std(ddof=1))),
                        ]
                    )
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_common(sub) -> None:
    sub.add_argument("--config", help="JSON config file; flags override its fields")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ratekit",
        description="Feature importance for Bayesian neural networks",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("simulate", help="generate a synthetic classification dataset")
    _add_common(p)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--frac-causal", dest="frac_causal", type=float, default=None)
    p.add_argument("--frac-redundant", dest="frac_redundant", type=float, default=None)
    p.add_argument("--clusters-per-class", dest="clusters_per_class", type=int, default=None)
    p.add_argument("--class-sep", dest="class_sep", type=float, default=None)
    p.add_argument("--flip-y", dest="flip_y", type=float, default=None)
    p.add_argument("--test-fraction", dest="test_fraction", type=float, default=None)
    p.set_defaults(func=_cmd_simulate)

    p = subs.add_parser("train", help="train a network on a dataset CSV")
    _add_common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--hidden", default=None, help="comma-separated hidden widths")
    p.add_argument("--link", default=None, choices=("sigmoid", "identity", "softmax"))
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--prior-scale", dest="prior_scale", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--mc-samples", dest="mc_samples", type=int, default=None)
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=None)
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("importance", help="score per-feature importance")
    _add_common(p)
    p.add_argument("--data", default=None, help="evaluation dataset CSV")
    p.add_argument("--model", default=None)
    p.add_argument("--jitter", type=float, default=None)
    p.add_argument("--path", default=None, choices=("fast", "naive"))
    p.add_argument("--class-index", dest="class_index", type=int, default=None)
    p.set_defaults(func=_cmd_importance)

    p = subs.add_parser("group-importance", help="score named feature groups")
    _add_common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--groups", default=None, help="CSV of group_name,feature_name rows")
    p.add_argument("--jitter", type=float, default=None)
    p.add_argument("--class-index", dest="class_index", type=int, default=None)
    p.set_defaults(func=_cmd_group_importance)

    p = subs.add_parser("evaluate", help="ROC against a causal mask and/or shuffle degradation")
    _add_common(p)
    p.add_argument("--report", default=None, help="importance report JSON")
    p.add_argument("--mask", default=None, help="dataset mask sidecar JSON")
    p.add_argument("--model", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--degradation", action="store_const", const=True, default=None)
    p.add_argument("--ranking", default=None, choices=("rate", "random"))
    p.add_argument("--fractions", default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = subs.add_parser(
        "demo-collinearity",
        help="compare covariance and least-squares effect sizes on collinear data",
    )
    _add_common(p)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.set_defaults(func=_cmd_demo_collinearity)

    return parser


def dispatch(argv=None) -> int:
    """Run one subcommand; returns the process exit code instead of exiting."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except StageError as err:
        print(f"ratekit: error [{err.stage_name}]: {err.cause}", file=sys.stderr)
        return err.exit_code


def main() -> None:
    sys.exit(dispatch())

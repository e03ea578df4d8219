"""Experiment harness: ``run`` trains methods over seeds, ``verify`` checks the risk relations.

Config files are INI-style (``key = value`` under ``[section]`` headers)::

    [experiment]
    scenario = grid-checkerboard
    corruption = none
    methods = giw, diw
    seeds = 0, 1, 2

    [train]
    epochs = 200
    lr = 0.005

    [verify]
    cases = i, ii, iii, iv
    classifiers = 10
    n = 100000
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DomainError
from .kernels import KernelConfig
from .netcore import Mlp, forward
from .oracle import consistency_report
from .osvm import score_histogram
from .synth import (CASES, SupportSpec, apply_class_prior_shift, apply_label_noise,
                    make_case_spec, make_grid_example, make_toy_validation, make_validation,
                    sample)
from .training import METHODS, METRIC_FIELDS, TrainConfig, class_prior_shift_mode, train

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3

SCENARIOS = ("grid-aligned", "grid-checkerboard") + tuple(f"case-{c}" for c in CASES)
_TEST_OFFSET = 500
_VAL_OFFSET = 1000
_NOISE_OFFSET = 2000


class ConfigError(ValueError):
    def __init__(self, msg: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line else msg)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "grid-checkerboard"
    corruption: str = "none"
    corruption_level: float = 0.0
    minority: tuple = (1,)
    methods: tuple = ("giw",)
    seeds: tuple = (0,)
    n_train: int = 200
    n_test: int = 2000
    validation: str = "toy"
    per_box: int = 2
    resolution: int = 100
    bins: int = 20
    out: str = "results"
    train: TrainConfig = TrainConfig()
    verify_cases: tuple = CASES
    verify_classifiers: int = 10
    verify_n: int = 100_000
    verify_hidden: tuple = (32, 32)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DomainError(f"scenario: unknown scenario {self.scenario!r}")
        if self.corruption not in ("none", "label-noise", "class-prior-shift"):
            raise DomainError(f"corruption: unknown corruption {self.corruption!r}")
        if self.corruption == "label-noise" and not 0 <= self.corruption_level < 1:
            raise DomainError("corruption: label-noise rate must lie in [0, 1)")
        if self.corruption == "class-prior-shift" and self.corruption_level < 1:
            raise DomainError("corruption: class-prior-shift rho must be >= 1")
        if not self.methods:
            raise DomainError("methods: need at least one method")
        if not self.seeds:
            raise DomainError("seeds: need at least one seed")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise DomainError(f"methods: unknown method(s) {bad}")
        if self.validation not in ("toy", "per-box"):
            raise DomainError("validation: must be 'toy' or 'per-box'")
        if self.resolution < 16:
            raise DomainError("resolution: must be >= 16")
        bad = [c for c in self.verify_cases if c not in CASES]
        if bad:
            raise DomainError(f"cases: unknown case(s) {bad}")


# ---------------------------------------------------------------------------
# config parsing


def _key_lines(text: str) -> dict:
    """Map ``(section, key)`` to its 1-based line number."""
    out, section = {}, None
    for k, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif "=" in s and not s.startswith(("#", ";")):
            out[(section, s.split("=", 1)[0].strip().lower())] = k
    return out


def _split_list(raw: str) -> list:
    return [p.strip() for p in raw.replace(";", ",").split(",") if p.strip()]


def _float_or(raw: str, words=()):
    raw = raw.strip()
    if raw.lower() in words:
        return raw.lower()
    return float(raw)


def _convert(name: str, raw: str, default):
    raw = raw.strip()
    if name in ("hidden",):
        return tuple(int(v) for v in _split_list(raw))
    if name == "alpha_override":
        return None if raw.lower() in ("none", "") else float(raw)
    if name == "osvm_gamma":
        return _float_or(raw, ("median",))
    if name == "split_threshold":
        return _float_or(raw, ("auto",))
    if isinstance(default, bool):
        low = raw.lower()
        if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
            raise ValueError(f"expected a boolean, got {raw!r}")
        return low in ("true", "yes", "1", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _train_config(section, lines, header: Optional[int]) -> TrainConfig:
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    kw, kernel = {}, {}
    for key, raw in section.items():
        line = lines.get(("train", key))
        try:
            if key == "kernel_gamma":
                kernel["gamma"] = _float_or(raw, ("median",))
            elif key == "kernel_ridge":
                kernel["ridge"] = float(raw)
            elif key == "kernel_squared_median":
                kernel["squared_median"] = _convert("b", raw, True)
            elif key in fields and key != "kernel":
                kw[key] = _convert(key, raw, fields[key].default)
            else:
                raise ConfigError(f"unknown train key {key!r}", line)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", line) from None
    if kernel:
        kw["kernel"] = KernelConfig(**kernel)
    try:
        return TrainConfig(**kw)
    except DomainError as exc:
        raise ConfigError(str(exc), header) from None


_EXPERIMENT_KEYS = {"scenario", "corruption", "minority", "methods", "seeds", "n_train", "n_test",
                    "validation", "per_box", "resolution", "bins", "out"}
_VERIFY_KEYS = {"cases", "classifiers", "n", "hidden"}


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text; raises ``ConfigError`` carrying the offending line."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(exc.message if hasattr(exc, "message") else str(exc),
                          getattr(exc, "lineno", None)) from None
    lines = _key_lines(text)
    for sec in parser.sections():
        if sec not in ("experiment", "train", "verify"):
            raise ConfigError(f"unknown section [{sec}]", _section_line(text, sec))
    kw = {}
    if parser.has_section("experiment"):
        for key, raw in parser.items("experiment"):
            line = lines.get(("experiment", key))
            if key not in _EXPERIMENT_KEYS:
                raise ConfigError(f"unknown experiment key {key!r}", line)
            try:
                if key == "corruption":
                    parts = raw.split()
                    kw["corruption"] = parts[0]
                    if len(parts) > 1:
                        kw["corruption_level"] = float(parts[1])
                    elif parts[0] != "none":
                        raise ValueError("corruption needs a level, e.g. 'label-noise 0.2'")
                elif key == "methods":
                    kw["methods"] = tuple(_split_list(raw))
                elif key in ("seeds", "minority"):
                    kw[key] = tuple(int(v) for v in _split_list(raw))
                elif key in ("n_train", "n_test", "per_box", "resolution", "bins"):
                    kw[key] = int(raw)
                else:
                    kw[key] = raw.strip()
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}", line) from None
    if parser.has_section("train"):
        kw["train"] = _train_config(dict(parser.items("train")), lines,
                                    _section_line(text, "train"))
    if parser.has_section("verify"):
        for key, raw in parser.items("verify"):
            line = lines.get(("verify", key))
            if key not in _VERIFY_KEYS:
                raise ConfigError(f"unknown verify key {key!r}", line)
            try:
                if key == "cases":
                    kw["verify_cases"] = tuple(_split_list(raw))
                elif key == "hidden":
                    kw["verify_hidden"] = tuple(int(v) for v in _split_list(raw))
                else:
                    kw["verify_" + key] = int(raw)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}", line) from None
    try:
        return ExperimentConfig(**kw)
    except DomainError as exc:
        raise ConfigError(str(exc), _guess_line(str(exc), lines)) from None


def _section_line(text: str, name: str) -> Optional[int]:
    for k, line in enumerate(text.splitlines(), 1):
        if line.strip() == f"[{name}]":
            return k
    return None


def _guess_line(msg: str, lines: dict) -> Optional[int]:
    key = msg.split(":", 1)[0].strip()
    for sec in ("experiment", "verify"):
        if (sec, key) in lines:
            return lines[(sec, key)]
    return None


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# data and artifacts


def scenario_spec(scenario: str) -> SupportSpec:
    if scenario.startswith("grid-"):
        return make_grid_example(scenario[len("grid-"):])
    return make_case_spec(scenario[len("case-"):])


def make_datasets(exp: ExperimentConfig, seed: int):
    """``(spec, Dtr, Dv, Dte)`` for one seed; corruption hits the training data only."""
    spec = scenario_spec(exp.scenario)
    Dtr = sample(spec, "train", exp.n_train, seed)
    Dte = sample(spec, "test", exp.n_test, seed + _TEST_OFFSET, tag="test")
    if exp.validation == "toy":
        Dv = make_toy_validation(spec, seed + _VAL_OFFSET)
    else:
        Dv = make_validation(spec, exp.per_box, seed + _VAL_OFFSET)
    if exp.corruption == "label-noise":
        Dtr = apply_label_noise(Dtr, exp.corruption_level, seed + _NOISE_OFFSET, spec.n_classes)
    elif exp.corruption == "class-prior-shift":
        Dtr = apply_class_prior_shift(Dtr, exp.corruption_level, exp.minority, seed + _NOISE_OFFSET)
    return spec, Dtr, Dv, Dte


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_if_changed(path: Path, text: str) -> bool:
    """Atomically write ``text`` unless the file already holds exactly that."""
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists() and path.read_text() == text:
        return False
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return True


def boundary_grid(model, spec: SupportSpec, resolution: int = 100, pad: float = 0.05) -> list:
    """``(x1, x2, predicted_class)`` on a lattice over the padded test bounding box."""
    if resolution < 16:
        raise DomainError("resolution must be >= 16")
    lo, hi = spec.bounding_box("test")
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    span = hi - lo
    lo, hi = lo - pad * span, hi + pad * span
    xs = np.linspace(lo[0], hi[0], resolution)
    ys = np.linspace(lo[1], hi[1], resolution)
    g1, g2 = np.meshgrid(xs, ys)
    P = np.column_stack([g1.ravel(), g2.ravel()])
    logits = forward(model, P) if isinstance(model, Mlp) else np.asarray(model(P), float)
    pred = np.argmax(logits, axis=1)
    return [(float(a), float(b), int(c)) for (a, b), c in zip(P, pred)]


def _run_paths(out: Path, method: str, seed: int) -> dict:
    stem = f"{method}_seed{seed}.csv"
    paths = {"metrics": out / "metrics" / stem, "boundary": out / "boundary" / stem}
    if method == "giw":
        paths["histogram"] = out / "histogram" / stem
    return paths


def _read_last_accuracy(path: Path, k: int = 10) -> float:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    accs = [float(r["test_acc"]) for r in rows[-k:]]
    return float(np.mean(accs))


def run_one(exp: ExperimentConfig, method: str, seed: int, out: Path) -> float:
    """Train one (method, seed) pair unless its artifacts exist; return last-10 accuracy."""
    paths = _run_paths(out, method, seed)
    cfg = dataclasses.replace(exp.train, method=method)
    if method == "giw" and exp.corruption == "class-prior-shift":
        cfg = class_prior_shift_mode(cfg)
        paths.pop("histogram", None)
    if all(p.exists() for p in paths.values()):
        log.info("skip %s seed %d (complete)", method, seed)
        return _read_last_accuracy(paths["metrics"])
    spec, Dtr, Dv, Dte = make_datasets(exp, seed)
    result = train(Dtr, Dv, cfg, seed, Dte, n_classes=spec.n_classes)
    rows = [[m[k] for k in METRIC_FIELDS] for m in result.metrics]
    # metrics last: their presence marks the run as complete
    write_if_changed(paths["boundary"], _csv_text(
        ("x1", "x2", "predicted_class"), boundary_grid(result.model, spec, exp.resolution)))
    if "histogram" in paths and result.split is not None:
        write_if_changed(paths["histogram"], _csv_text(
            ("bin_lo", "bin_hi", "count"), score_histogram(result.split.rescaled, exp.bins)))
    write_if_changed(paths["metrics"], _csv_text(METRIC_FIELDS, rows))
    return result.last_accuracy()


def run(exp: ExperimentConfig, out: Optional[Path] = None, seed_offset: int = 0) -> int:
    out = Path(out or exp.out)
    seeds = [s + seed_offset for s in exp.seeds]
    summary = []
    for method in exp.methods:
        accs = [run_one(exp, method, s, out) for s in seeds]
        summary.append((method, len(accs), float(np.mean(accs)), float(np.std(accs))))
        log.info("%s: %.4f +- %.4f", method, summary[-1][2], summary[-1][3])
    write_if_changed(out / "summary.csv",
                     _csv_text(("method", "n_seeds", "mean_acc", "std_acc"), summary))
    return EXIT_OK


def verify(exp: ExperimentConfig, out: Optional[Path] = None, seed_offset: int = 0) -> int:
    """Write one consistency report per case; exit 3 if any relation fails."""
    out = Path(out or exp.out) / "reports"
    ok = True
    for case in exp.verify_cases:
        spec = make_case_spec(case)
        blocks, passed = [], 0
        for k in range(exp.verify_classifiers):
            seed = seed_offset + k
            net = Mlp.init([2, *exp.verify_hidden, spec.n_classes], seed=seed)
            rep = consistency_report(net, spec, exp.verify_n, seed)
            passed += rep.passed
            blocks.append(f"# classifier {k}: {rep.summary()}\n" + rep.to_record())
        status = "pass" if passed == exp.verify_classifiers else "FAIL"
        head = f"case={case}\nclassifiers={exp.verify_classifiers}\npassed={passed}\nstatus={status}\n"
        write_if_changed(out / f"case-{case}.txt", head + "\n" + "\n".join(blocks))
        print(f"case ({case}): {passed}/{exp.verify_classifiers} {status}")
        ok &= passed == exp.verify_classifiers
    return EXIT_OK if ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="giw", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=("run", "verify"))
    p.add_argument("config", help="path to the INI config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed-offset", type=int, default=0, help="added to every seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        exp = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else None
    if args.command == "run":
        return run(exp, out, args.seed_offset)
    return verify(exp, out, args.seed_offset)

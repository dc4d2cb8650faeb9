"""Command-line entry point: synth | anchors | calibrate | lodo | sweep-k | sweep-rank.

Options come from built-in defaults, overridden by a flat key=value config
file (--config), overridden by explicit flags. All randomness derives from
one --seed. Outputs are written atomically. Exit codes: 0 success, 1
validation error, 2 I/O error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from .anchors import load_anchors, save_anchors
from .calibrate import CalibrationConfig, calibrate
from .errors import ConfigMismatch, InvalidInput, IoError, StratcalError
from .harness import (
    StrategyConfig,
    results_to_csv,
    run_lodo,
    run_manifest,
    run_stage1,
    sweep_k,
    sweep_rank,
    sweep_to_csv,
)
from .spectral import SpectralConfig
from .synth import (
    SCENARIOS,
    DomainData,
    generate_scenario,
    load_dataset,
    save_dataset,
)

_STRATEGY_ALIASES = {
    "baseline": "baseline_no_calibration",
    "global": "global_anchor",
    "dataset": "dataset_anchor",
}


def _cast_strategy(value: str) -> str:
    return _STRATEGY_ALIASES.get(value, value)


_DEFAULTS = {
    "scenario": "paper_like",
    "strategy": "structural",
    "k": 2,
    "rank": 1,
    "match_space": "power",
    "target_space": "power",
    "eps": 1e-8,
    "frame_len": 64,
    "hop": 32,
    "window": "hann",
    "warmup_epochs": 2,
    "train_epochs": 12,
    "lr": 0.01,
    "batch_size": 64,
    "optimizer": "adam",
    "encoder_variant": "conv1d",
    "encoder_channels": 8,
    "kernel_width": 17,
    "stride": 1,
    "series_len": 256,
    "in_channels": 2,
    "n_classes": 3,
    "seed": 0,
    "threads": 1,
}

_CASTERS = {
    "scenario": str,
    "strategy": _cast_strategy,
    "k": int,
    "rank": int,
    "match_space": str,
    "target_space": str,
    "eps": float,
    "frame_len": int,
    "hop": int,
    "window": str,
    "warmup_epochs": int,
    "train_epochs": int,
    "lr": float,
    "batch_size": int,
    "optimizer": str,
    "encoder_variant": str,
    "encoder_channels": int,
    "kernel_width": int,
    "stride": int,
    "series_len": int,
    "in_channels": int,
    "n_classes": int,
    "seed": int,
    "threads": int,
}

_SPECTRAL_KEYS = ("frame_len", "hop", "window")


def read_config_file(path) -> dict:
    """Parse a flat key=value config file; unknown keys are rejected."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInput(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CASTERS:
            raise InvalidInput(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _CASTERS[key](value)
        except ValueError as exc:
            raise InvalidInput(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def resolve_options(args: argparse.Namespace, command_defaults: dict | None = None):
    """defaults < per-command defaults < config file < explicit flags.

    Returns ``(options, explicit)`` where ``explicit`` holds the keys set by
    the config file or a flag.
    """
    options = dict(_DEFAULTS)
    options.update(command_defaults or {})
    explicit = set()
    if getattr(args, "config", None):
        file_values = read_config_file(args.config)
        options.update(file_values)
        explicit.update(file_values)
    for key in _CASTERS:
        flag = getattr(args, key, None)
        if flag is not None:
            options[key] = flag
            explicit.add(key)
    return options, explicit


def _sync_from_dataset(options: dict, domains) -> None:
    """Shape-like options follow the loaded data, not the defaults."""
    options["series_len"] = int(domains[0].x.shape[-1])
    options["in_channels"] = int(domains[0].x.shape[-2])
    options["n_classes"] = int(max(int(d.y.max()) for d in domains)) + 1


def strategy_config(options: dict, unit_mask: bool = False) -> StrategyConfig:
    return StrategyConfig(
        strategy=options["strategy"],
        k=options["k"],
        calibration=CalibrationConfig(
            match_space=options["match_space"],
            target_space=options["target_space"],
            eps=options["eps"],
            rank=options["rank"],
            unit_mask=unit_mask,
        ),
        spectral=SpectralConfig(
            frame_len=options["frame_len"],
            hop=options["hop"],
            window=options["window"],
            eps=options["eps"],
        ),
        warmup_epochs=options["warmup_epochs"],
        train_epochs=options["train_epochs"],
        lr=options["lr"],
        batch_size=options["batch_size"],
        seed=options["seed"],
        optimizer=options["optimizer"],
        encoder_variant=options["encoder_variant"],
        encoder_channels=options["encoder_channels"],
        kernel_width=options["kernel_width"],
        stride=options["stride"],
        series_len=options["series_len"],
        in_channels=options["in_channels"],
        n_classes=options["n_classes"],
    )


def _write_text_atomic(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-out-")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                f.write(text)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _load_domains(options: dict, data_path):
    if data_path:
        domains, _meta = load_dataset(data_path)
        _sync_from_dataset(options, domains)
        return domains
    return generate_scenario(
        options["scenario"],
        base_seed=options["seed"],
        series_len=options["series_len"],
        n_channels=options["in_channels"],
    )


def cmd_synth(args) -> int:
    options, _ = resolve_options(args)
    domains = generate_scenario(
        options["scenario"],
        base_seed=options["seed"],
        series_len=options["series_len"],
        n_channels=options["in_channels"],
    )
    save_dataset(
        domains,
        args.out,
        meta_extra={"scenario": options["scenario"], "seed": options["seed"]},
    )
    print(f"wrote {args.out}: {len(domains)} domains")
    for d in domains:
        counts = np.bincount(d.y)
        print(
            f"  domain {d.domain_id}: structure {d.structure_id}, "
            f"{len(d)} samples, class counts {counts.tolist()}"
        )
    return 0


def cmd_anchors(args) -> int:
    # anchors from a series file describe the raw series themselves, so the
    # stage-I auxiliary encoder defaults to identity here
    options, _ = resolve_options(args, command_defaults={"encoder_variant": "identity"})
    domains, _ = load_dataset(args.data)
    _sync_from_dataset(options, domains)
    cfg = strategy_config(options)
    if cfg.strategy == "baseline_no_calibration":
        raise InvalidInput("strategy baseline_no_calibration builds no anchors")
    anchors = run_stage1(domains, cfg)
    save_anchors(anchors, args.out)
    sizes = np.bincount(anchors.strata.assignments, minlength=anchors.k)
    print(f"wrote {args.out}: K={anchors.k}, inertia={anchors.strata.inertia:.6g}")
    print(f"  stratum sizes: {sizes.tolist()}")
    return 0


def cmd_calibrate(args) -> int:
    options, explicit = resolve_options(args)
    domains, meta = load_dataset(args.data)
    anchors = load_anchors(args.anchors)
    cal_cfg = CalibrationConfig(
        match_space=options["match_space"],
        target_space=options["target_space"],
        eps=options["eps"],
        rank=options["rank"],
        unit_mask=bool(args.unit_mask),
    )
    spectral_cfg = anchors.spectral_cfg
    if any(key in explicit for key in _SPECTRAL_KEYS):
        requested = SpectralConfig(
            frame_len=options["frame_len"],
            hop=options["hop"],
            window=options["window"],
            eps=spectral_cfg.eps,
        )
        if requested.fingerprint() != spectral_cfg.fingerprint():
            raise ConfigMismatch(
                "requested spectral options disagree with the anchor file "
                f"({requested.to_dict()} vs {spectral_cfg.to_dict()})"
            )

    sidecar = []
    calibrated_domains = []
    for d in domains:
        x, y = d.samples()
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            result = calibrate(x[i], anchors, spectral_cfg, cal_cfg)
            out[i] = result.data
            sidecar.append(
                {
                    "domain": int(d.domain_id),
                    "sample": int(i),
                    "matched_stratum": int(result.matched_stratum),
                    "match_distance": float(result.match_distance),
                }
            )
        calibrated_domains.append(
            DomainData(domain_id=d.domain_id, x=out, y=y, structure_id=d.structure_id)
        )
    save_dataset(calibrated_domains, args.out, meta_extra={**meta, "calibrated": True})
    sidecar_path = args.sidecar or (str(args.out) + ".sidecar.json")
    _write_text_atomic(sidecar_path, json.dumps(sidecar, indent=1) + "\n")
    print(f"wrote {args.out} and {sidecar_path}: {len(sidecar)} samples")
    return 0


def _print_rows(csv_text: str) -> None:
    for line in csv_text.strip().splitlines():
        print(f"  {line}")


def _emit(args, cfg: StrategyConfig, csv_text: str, manifest_extra: dict) -> None:
    _write_text_atomic(args.out, csv_text)
    manifest = run_manifest(cfg, extra=manifest_extra)
    _write_text_atomic(str(args.out) + ".manifest.json", json.dumps(manifest, indent=1) + "\n")
    print(f"wrote {args.out}")
    _print_rows(csv_text)


def cmd_lodo(args) -> int:
    options, _ = resolve_options(args)
    domains = _load_domains(options, args.data)
    cfg = strategy_config(options, unit_mask=bool(args.unit_mask))
    results = run_lodo(domains, cfg, threads=options["threads"])
    _emit(args, cfg, results_to_csv(results), {"command": "lodo", "scenario": options["scenario"]})
    return 0


def _parse_int_list(text: str, flag: str):
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise InvalidInput(f"{flag} expects a comma-separated integer list") from exc
    if not values:
        raise InvalidInput(f"{flag} expects at least one value")
    return values


def cmd_sweep_k(args) -> int:
    options, _ = resolve_options(args)
    domains = _load_domains(options, args.data)
    cfg = strategy_config(options)
    k_values = _parse_int_list(args.k_values, "--k")
    rows = sweep_k(domains, cfg, k_values, threads=options["threads"])
    _emit(args, cfg, sweep_to_csv(rows, "k"), {"command": "sweep-k", "k_values": k_values})
    return 0


def cmd_sweep_rank(args) -> int:
    options, _ = resolve_options(args)
    domains = _load_domains(options, args.data)
    cfg = strategy_config(options)
    r_values = _parse_int_list(args.r_values, "--r")
    rows = sweep_rank(domains, cfg, r_values, threads=options["threads"])
    _emit(args, cfg, sweep_to_csv(rows, "r"), {"command": "sweep-rank", "r_values": r_values})
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidInput(message)


def _add_common(parser, skip=()) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    for key, caster in _CASTERS.items():
        if key in skip:
            continue
        parser.add_argument(f"--{key.replace('_', '-')}", dest=key, type=caster)


def build_parser() -> _Parser:
    parser = _Parser(prog="stratcal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help=f"generate a synthetic dataset ({', '.join(SCENARIOS)})")
    _add_common(p)
    p.add_argument("--out", required=True, help="dataset output path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("anchors", help="build reference anchors from a dataset")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--out", required=True, help="anchor output path")
    p.set_defaults(func=cmd_anchors)

    p = sub.add_parser("calibrate", help="calibrate a dataset against an anchor file")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sidecar", help="sidecar JSON path (default: <out>.sidecar.json)")
    p.add_argument("--unit-mask", action="store_true", help="debug: pass-through calibration")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("lodo", help="leave-one-domain-out experiment")
    _add_common(p)
    p.add_argument("--data", help="dataset path (default: generate --scenario)")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--unit-mask", action="store_true", help="debug: pass-through calibration")
    p.set_defaults(func=cmd_lodo)

    p = sub.add_parser("sweep-k", help="LODO sweep over stratification granularity")
    _add_common(p, skip=("k",))
    p.add_argument("--data", help="dataset path (default: generate --scenario)")
    p.add_argument("--k", dest="k_values", required=True, help="granularities, e.g. 1,2,3,4")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_k, k=None)

    p = sub.add_parser("sweep-rank", help="LODO sweep over evaluation matching rank")
    _add_common(p)
    p.add_argument("--data", help="dataset path (default: generate --scenario)")
    p.add_argument("--r", dest="r_values", required=True, help="ranks, e.g. 1,2,3")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_rank)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except StratcalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def entrypoint() -> None:
    sys.exit(main())

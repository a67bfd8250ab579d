"""Command-line surface: explain / exact / evaluate / synth.

Every run writes machine-readable outputs (JSON plus CSV) carrying a
manifest with the full configuration, seed, input hashes, and call
statistics, so runs are reproducible from their outputs alone.

Exit codes: 0 success, 1 runtime or model failure, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .approx import (
    LeastSquaresConfig,
    SamplingConfig,
    least_squares_estimate,
    sampling_estimate,
)
from .exact import AttributionResult, exact_attribution, ordering_game_from, sb_exact, shapley_exact
from .games import (
    FIG3_SAMPLE,
    MASK_TOKEN,
    SyntheticTokenModel,
    generate_synthetic_dataset,
    toy_ordered_game,
)
from .gateway import (
    GatewayError,
    GatewayGame,
    MaskingPolicy,
    ModelEndpoint,
    SequenceSample,
)
from .metrics import (
    MetricConfig,
    inclusion_exclusion_auc,
    insertion_deletion_auc,
    pi_permutation_curve,
)
from .perms import SeededSampler, identity

ENDPOINT_ENV = "SEQATTR_ENDPOINT"


class UsageError(Exception):
    """Configuration problems the user must fix (exit code 2)."""


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    version: str = __version__
    input_hashes: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    model_calls: int | None = None
    cache_hit_rate: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _hash_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_sample(path: str, baseline: str | None) -> SequenceSample:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read sample file {path}: {exc}") from exc
    if "tokens" not in obj:
        raise UsageError(f"sample file {path} lacks a 'tokens' field")
    policy = MaskingPolicy(baseline_token=baseline or obj.get("baseline", MASK_TOKEN))
    try:
        return SequenceSample(
            tokens=tuple(obj["tokens"]),
            groups=tuple(obj["groups"]) if obj.get("groups") else None,
            baseline_policy=policy,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _build_endpoint(args) -> ModelEndpoint:
    address = os.environ.get(ENDPOINT_ENV) or args.endpoint
    if args.transport == "in_process":
        raise UsageError("in_process transport is only available for built-in games")
    if not address:
        raise UsageError(
            f"--endpoint (or ${ENDPOINT_ENV}) is required for transport {args.transport}"
        )
    try:
        return ModelEndpoint(
            transport=args.transport,
            address=address,
            batch_limit=args.batch_limit,
            timeout=args.timeout,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _synthetic_endpoint(model: SyntheticTokenModel) -> ModelEndpoint:
    return ModelEndpoint(transport="in_process", adapter=model.batch)


def _resolve_game(args):
    """(game, gateway-or-None, sample-or-None) for explain/exact runs."""
    if args.game == "toy":
        tokens = tuple(args.tokens) if args.tokens else FIG3_SAMPLE
        try:
            return toy_ordered_game(tokens), None, None
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    if args.game == "synthetic":
        model = (
            SyntheticTokenModel.from_config_file(args.model_config)
            if args.model_config
            else SyntheticTokenModel(nonlinearity=args.nonlinearity)
        )
        if args.tokens:
            tokens = tuple(args.tokens)
        else:
            sampler = SeededSampler(args.seed)
            tokens = generate_synthetic_dataset(sampler, 1, model)[0]
        model.sequence_length = len(tokens)
        sample = SequenceSample(
            tokens=tokens,
            groups=tuple(args.groups) if args.groups else None,
            baseline_policy=MaskingPolicy(baseline_token=model.mask_token),
        )
        gw = GatewayGame(
            _synthetic_endpoint(model), sample, class_index=args.class_index
        )
        return gw.as_game(), gw, sample
    # external model run
    if not args.sample:
        raise UsageError("--sample is required unless --game is given")
    sample = _load_sample(args.sample, args.baseline)
    if args.groups:
        sample.groups = tuple(args.groups)
    endpoint = _build_endpoint(args)
    gw = GatewayGame(endpoint, sample, class_index=args.class_index)
    return gw.as_game(), gw, sample


def _write_result(result: AttributionResult, manifest: RunManifest, out: str, emit_gamma: bool):
    payload = result.to_dict()
    if not emit_gamma:
        payload.pop("gamma", None)
        payload.pop("gamma_positions", None)
    payload["manifest"] = manifest.to_dict()
    with open(out + ".json", "w") as fh:
        json.dump(payload, fh, indent=2)
    with open(out + ".csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "vi", "pi"])
        for i, (v, p) in enumerate(zip(result.vi, result.pi), start=1):
            w.writerow([i, v, p])


def _finish_manifest(manifest: RunManifest, started: float, gw: GatewayGame | None):
    manifest.wall_clock_s = round(time.monotonic() - started, 3)
    if gw is not None:
        manifest.model_calls = gw.model_calls
        manifest.cache_hit_rate = round(gw.cache.hit_rate, 4)


def cmd_explain(args) -> int:
    started = time.monotonic()
    game, gw, _ = _resolve_game(args)
    try:
        if args.method == "sampling":
            result = sampling_estimate(
                game,
                SamplingConfig(K=args.K, L=args.L, seed=args.seed),
                groups=tuple(args.groups) if args.groups else None,
            )
        elif args.method == "ls":
            cfg = LeastSquaresConfig(K=args.K, L=args.L, seed=args.seed, ridge=args.ridge)
            cfg.validate(game.n)
            result = least_squares_estimate(game, cfg)
        else:
            result = exact_attribution(
                game, groups=tuple(args.groups) if args.groups else None
            )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    manifest = RunManifest(
        command="explain",
        config={
            "method": args.method,
            "K": args.K,
            "L": args.L,
            "class_index": args.class_index,
            "baseline": args.baseline,
            "groups": list(args.groups) if args.groups else None,
            "game": args.game,
            "transport": args.transport,
            "ridge": args.ridge,
            "jobs": args.jobs,
        },
        seed=args.seed,
        input_hashes={"sample": _hash_file(args.sample)} if args.sample else {},
    )
    _finish_manifest(manifest, started, gw)
    _write_result(result, manifest, args.out, args.emit_gamma)
    print(f"wrote {args.out}.json and {args.out}.csv")
    return 0


def cmd_exact(args) -> int:
    started = time.monotonic()
    game, gw, _ = _resolve_game(args)
    try:
        result = exact_attribution(game, groups=tuple(args.groups) if args.groups else None)
        shap = shapley_exact(game.set_game(identity(game.n)), game.n)
        sb = sb_exact(ordering_game_from(game), game.n)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    manifest = RunManifest(
        command="exact",
        config={
            "game": args.game,
            "class_index": args.class_index,
            "groups": list(args.groups) if args.groups else None,
        },
        seed=args.seed,
        input_hashes={"sample": _hash_file(args.sample)} if args.sample else {},
    )
    _finish_manifest(manifest, started, gw)
    payload = result.to_dict()
    payload["shapley_identity_order"] = [float(x) for x in shap]
    payload["ordered_shapley"] = [float(x) for x in sb]
    payload["manifest"] = manifest.to_dict()
    with open(args.out + ".json", "w") as fh:
        json.dump(payload, fh, indent=2)
    with open(args.out + ".csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "vi", "pi", "shapley", "ordered_shapley"])
        for i in range(game.n):
            w.writerow([i + 1, result.vi[i], result.pi[i], shap[i], sb[i]])
    print(f"wrote {args.out}.json and {args.out}.csv")
    return 0


METRIC_NAMES = ("pi-curve", "inc", "exc", "ins", "del")


def cmd_evaluate(args) -> int:
    started = time.monotonic()
    try:
        with open(args.samples) as fh:
            sample_objs = json.load(fh)
        with open(args.attributions) as fh:
            attr_objs = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read inputs: {exc}") from exc
    if not isinstance(sample_objs, list) or not isinstance(attr_objs, list):
        raise UsageError("samples and attributions files must hold JSON lists")
    if len(sample_objs) != len(attr_objs):
        raise UsageError("need one attribution record per sample")

    samples = [
        SequenceSample(
            tokens=tuple(o["tokens"]),
            baseline_policy=MaskingPolicy(
                baseline_token=args.baseline or o.get("baseline", MASK_TOKEN)
            ),
        )
        for o in sample_objs
    ]
    vi = [o["vi"] for o in attr_objs]
    pi = [o["pi"] for o in attr_objs]

    if args.model_config:
        model = SyntheticTokenModel.from_config_file(args.model_config)
        endpoint = _synthetic_endpoint(model)
    else:
        endpoint = _build_endpoint(args)
    cfg = MetricConfig(permutations_per_k=args.permutations, seed=args.seed)
    metrics = METRIC_NAMES if args.metric == "all" else (args.metric,)

    aucs = {}
    for name in metrics:
        if name == "pi-curve":
            curves = [
                pi_permutation_curve(endpoint, s, p, cfg) for s, p in zip(samples, pi)
            ]
            mean_scores = np.mean([c.scores for c in curves], axis=0)
            from .metrics import EvalCurve

            curve = EvalCurve.from_points(cfg.k_grid, mean_scores)
        elif name in ("inc", "exc"):
            mode = "inclusion" if name == "inc" else "exclusion"
            curve = inclusion_exclusion_auc(endpoint, samples, vi, mode, cfg)
        else:
            mode = "insertion" if name == "ins" else "deletion"
            curve = insertion_deletion_auc(endpoint, samples, vi, mode, cfg)
        curve.write_csv(f"{args.out}.{name}.csv")
        aucs[name] = curve.auc

    manifest = RunManifest(
        command="evaluate",
        config={
            "metric": args.metric,
            "permutations": args.permutations,
            "baseline": args.baseline,
            "transport": args.transport,
        },
        seed=args.seed,
        input_hashes={
            "samples": _hash_file(args.samples),
            "attributions": _hash_file(args.attributions),
        },
    )
    _finish_manifest(manifest, started, None)
    with open(args.out + ".json", "w") as fh:
        json.dump({"auc": aucs, "manifest": manifest.to_dict()}, fh, indent=2)
    print(f"wrote {args.out}.json and per-metric CSVs")
    return 0


def cmd_synth(args) -> int:
    started = time.monotonic()
    model = SyntheticTokenModel(nonlinearity=args.nonlinearity, sequence_length=args.length)
    sampler = SeededSampler(args.seed)
    dataset = generate_synthetic_dataset(sampler, args.count, model)
    os.makedirs(args.out, exist_ok=True)
    data_path = os.path.join(args.out, "dataset.json")
    cfg_path = os.path.join(args.out, "model_config.json")
    with open(data_path, "w") as fh:
        json.dump(
            [{"tokens": list(seq), "baseline": model.mask_token} for seq in dataset],
            fh,
            indent=2,
        )
    with open(cfg_path, "w") as fh:
        json.dump(model.to_config(), fh, indent=2)
    manifest = RunManifest(
        command="synth",
        config={"count": args.count, "length": args.length, "nonlinearity": args.nonlinearity},
        seed=args.seed,
        input_hashes={"dataset": _hash_file(data_path), "model_config": _hash_file(cfg_path)},
    )
    _finish_manifest(manifest, started, None)
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2)
    print(f"wrote {data_path}, {cfg_path}, manifest.json")
    return 0


def _add_endpoint_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--transport", choices=("in_process", "pipe_jsonl", "http_json"),
                   default="in_process")
    p.add_argument("--endpoint", default=None, help=f"address; ${ENDPOINT_ENV} overrides")
    p.add_argument("--batch-limit", type=int, default=64)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--class-index", type=int, default=1)
    p.add_argument("--baseline", default=None, help="mask sentinel token")


def _add_game_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--game", choices=("toy", "synthetic"), default=None,
                   help="built-in game instead of an external model")
    p.add_argument("--sample", default=None, help="sample JSON file")
    p.add_argument("--tokens", nargs="+", default=None, help="inline token sequence")
    p.add_argument("--groups", nargs="+", type=int, default=None,
                   help="monotone position-to-group map")
    p.add_argument("--model-config", default=None,
                   help="synthetic model config JSON (with --game synthetic)")
    p.add_argument("--nonlinearity", choices=("linear", "sigmoid"), default="linear")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqattr",
        description="Position-sensitive feature attribution for sequence models",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="estimate value/position importances")
    _add_game_flags(p)
    _add_endpoint_flags(p)
    p.add_argument("--method", choices=("sampling", "ls", "exact"), default="sampling")
    p.add_argument("--K", type=int, default=64)
    p.add_argument("--L", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--jobs", type=int, default=1, help="gateway concurrency cap")
    p.add_argument("--emit-gamma", action="store_true")
    p.add_argument("--out", default="attributions")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("exact", help="full brute-force oracle outputs")
    _add_game_flags(p)
    _add_endpoint_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="exact")
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("evaluate", help="faithfulness metric curves")
    _add_endpoint_flags(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--attributions", required=True)
    p.add_argument("--model-config", default=None)
    p.add_argument("--metric", choices=METRIC_NAMES + ("all",), default="all")
    p.add_argument("--permutations", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="metrics")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write a synthetic dataset and model config")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--length", type=int, default=10)
    p.add_argument("--nonlinearity", choices=("linear", "sigmoid"), default="sigmoid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="synthetic")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GatewayError as exc:
        print(f"model failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

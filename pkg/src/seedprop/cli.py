"""Command-line client for the grounding service.

Subcommands mirror the service endpoints one-to-one.  Without --server the
request models are executed in-process through the same handler functions the
HTTP routes use; with --server they are posted as JSON to a running instance.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 internal error.
Errors are emitted as one machine-readable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import InternalError, SeedpropError, ValidationError
from .service import handlers, schemas

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_INTERNAL = 3


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.replace(" ", "").split(",") if tok != ""]


def _parse_layer_sets(text: str) -> list[list[int]]:
    return [_parse_int_list(group) for group in text.split(";") if group != ""]


def _load_config_file(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _build_config(args) -> schemas.ConfigModel:
    raw = _load_config_file(args.config) if args.config else {}
    overrides = {
        "n_steps": args.steps,
        "gate_quantile": args.quantile,
        "variant": args.variant,
        "threads": args.threads,
        "snapshot_every": args.snapshots,
    }
    if getattr(args, "graph_layers", None) is not None:
        gl = args.graph_layers
        overrides["graph_layer_set"] = _parse_int_list(gl) if gl[0].isdigit() else gl
    if getattr(args, "anchor_layers", None) is not None:
        al = args.anchor_layers
        overrides["anchor_layer_set"] = "all" if al == "all" else _parse_int_list(al)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    raw.pop("output_dir", None)
    try:
        return schemas.ConfigModel(**raw)
    except Exception as exc:
        raise ValidationError(f"bad config: {exc}") from None


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--server", help="base URL of a running service; default runs in-process")
    parser.add_argument("--config", help="JSON file with pipeline config fields")
    parser.add_argument("--threads", type=int, default=None, help="worker threads")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed where applicable")
    parser.add_argument("--output", help="output file or directory")
    parser.add_argument("--steps", type=int, default=None, help="propagation step count")
    parser.add_argument("--quantile", type=float, default=None, help="gate quantile")
    parser.add_argument(
        "--variant",
        choices=["full", "anchor_only", "no_gate", "no_cos"],
        default=None,
        help="pipeline variant (ablations)",
    )
    parser.add_argument("--snapshots", type=int, default=None, help="dump PGM every K steps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seedprop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ground", help="ground concepts over attention bundles")
    p.add_argument("bundles", nargs="+")
    p.add_argument("--concepts", help="comma-separated concept names (default: all in bundle)")
    p.add_argument("--graph-layers", help="layer list '9,18', preset name, or 'auto'")
    p.add_argument("--anchor-layers", help="layer list or 'all'")
    p.add_argument("--dump-graph", action="store_true", help="write edge-list dumps")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate grounding results against annotations")
    p.add_argument("--results", required=True, help="directory with ground outputs")
    p.add_argument("--annotations", required=True, help="dataset directory with annotations.json")
    _add_common(p)

    p = sub.add_parser("stats", help="locality profile or affinity statistics")
    p.add_argument("--bundle", required=True)
    p.add_argument("--locality", action="store_true")
    p.add_argument("--affinity", action="store_true")
    p.add_argument("--dataset", help="dataset directory (affinity stats)")
    p.add_argument("--metric", choices=["chebyshev", "euclidean"], default="chebyshev")
    p.add_argument("--affinity-kind", choices=["w_attn", "w_cos", "gated"], default="gated")
    _add_common(p)

    p = sub.add_parser("sweep", help="propagation-step or layer-set sweeps")
    p.add_argument("--dataset", required=True)
    p.add_argument("--sweep-steps", help="comma-separated step counts, e.g. 10,40,160,640")
    p.add_argument("--layer-sets", help="semicolon-separated layer lists, e.g. '9;18;9,18'")
    _add_common(p)

    p = sub.add_parser("synth", help="generate the deterministic synthetic benchmark")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--pixel-scale", type=int, default=16)
    _add_common(p)

    p = sub.add_parser("validate", help="validate bundle archives")
    p.add_argument("bundles", nargs="+")
    _add_common(p)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8650)
    return parser


_ROUTES = {
    "ground": ("/ground", handlers.ground),
    "eval": ("/eval", handlers.evaluate),
    "stats": ("/stats", handlers.stats),
    "sweep": ("/sweep", handlers.sweep),
    "synth": ("/synth", handlers.synth),
    "validate": ("/validate", handlers.validate),
}


def _dispatch(command: str, request, server: str | None):
    path, handler = _ROUTES[command]
    if server is None:
        return handler(request).model_dump()
    import httpx

    resp = httpx.post(server.rstrip("/") + path, json=request.model_dump(), timeout=3600.0)
    if resp.status_code >= 400:
        payload = resp.json()
        kind = payload.get("kind", "internal")
        if kind == "validation":
            raise ValidationError(payload.get("error", resp.text))
        if kind == "io":
            raise OSError(payload.get("error", resp.text))
        raise InternalError(payload.get("error", resp.text))
    return resp.json()


def _make_request(args):
    if args.command == "ground":
        concepts = args.concepts.split(",") if args.concepts else None
        return schemas.GroundRequest(
            bundles=args.bundles,
            concepts=concepts,
            config=_build_config(args),
            output_dir=args.output or ".",
            dump_graph=args.dump_graph,
        )
    if args.command == "eval":
        return schemas.EvalRequest(
            results_dir=args.results, annotations_dir=args.annotations, output=args.output
        )
    if args.command == "stats":
        if args.locality == args.affinity:
            raise ValidationError("pass exactly one of --locality / --affinity")
        return schemas.StatsRequest(
            bundle=args.bundle,
            kind="locality" if args.locality else "affinity",
            dataset_dir=args.dataset,
            metric=args.metric,
            affinity_kind=args.affinity_kind,
            gate_quantile=args.quantile if args.quantile is not None else 0.98,
            output=args.output,
        )
    if args.command == "sweep":
        if (args.sweep_steps is None) == (args.layer_sets is None):
            raise ValidationError("pass exactly one of --sweep-steps / --layer-sets")
        return schemas.SweepRequest(
            dataset_dir=args.dataset,
            steps=_parse_int_list(args.sweep_steps) if args.sweep_steps else None,
            layer_sets=_parse_layer_sets(args.layer_sets) if args.layer_sets else None,
            config=_build_config(args),
            output=args.output,
        )
    if args.command == "synth":
        if args.output is None:
            raise ValidationError("synth needs --output")
        return schemas.SynthRequest(
            count=args.count,
            seed=args.seed if args.seed is not None else 7,
            output_dir=args.output,
            grid_side=args.grid,
            pixel_scale=args.pixel_scale,
        )
    if args.command == "validate":
        return schemas.ValidateRequest(bundles=args.bundles)
    raise InternalError(f"unroutable command {args.command!r}")


def _fail(kind: str, exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"kind": kind, "error": str(exc)}) + "\n")
    return code


_AGGREGATE_KEYS = ("acc", "miou", "map", "acc_fg", "miou_fg", "map_fg", "nar", "anchor_hit_rate")


def _print_eval_table(result: dict) -> None:
    report = result.get("report", {})
    if not all(k in report for k in _AGGREGATE_KEYS):
        return
    head = "  ".join(f"{k:>15s}" for k in _AGGREGATE_KEYS)
    vals = "  ".join(f"{report[k]:15.4f}" for k in _AGGREGATE_KEYS)
    sys.stderr.write(f"{head}\n{vals}\n({report.get('pair_count', 0)} image-concept pairs)\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return EXIT_OK
    try:
        request = _make_request(args)
        result = _dispatch(args.command, request, args.server)
    except ValidationError as exc:
        return _fail("validation", exc, EXIT_VALIDATION)
    except OSError as exc:
        return _fail("io", exc, EXIT_IO)
    except SeedpropError as exc:
        return _fail("internal", exc, EXIT_INTERNAL)
    json.dump(result, sys.stdout, indent=2)
    sys.stdout.write("\n")
    if args.command == "eval":
        _print_eval_table(result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

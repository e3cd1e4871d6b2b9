"""Command-line entry point.

Every command prints a JSON document with the effective configuration and a
result summary on stdout. Exit codes: 0 success, 1 input or validation error
(JSON error on stderr), 2 fit did not converge (outputs are still written).

Settings come from flags, optionally preloaded from ``--config`` (JSON or
TOML). Config keys mirror the long flag names; per-command values live in
nested sections such as ``[fit]`` or ``[model.procedural]`` and flags given
on the command line always win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
GLOBAL_KEYS = ("seed", "threads", "output_dir")


def _model_parsers(sub):
    model = sub.add_parser("model", help="build, inspect, assemble and export body models")
    msub = model.add_subparsers(dest="action", required=True)
    leaves = {}

    p = msub.add_parser("procedural", help="generate the procedural test humanoid")
    p.add_argument("--vertices", type=int, default=500)
    p.add_argument("--face-identity", type=int, default=8)
    p.add_argument("--body-identity", type=int, default=8)
    p.add_argument("--expression", type=int, default=6)
    p.add_argument("--hands", action="store_true")
    p.add_argument("--eyes", action="store_true")
    p.add_argument("--out", default="model.sbm")
    leaves["procedural"] = (p, "model_procedural")

    p = msub.add_parser("info", help="report dims and invariant checks of a model or descriptor")
    p.add_argument("path", nargs="?", help="SBM1 model or JSON descriptor; omitted = built-in reference descriptor")
    leaves["info"] = (p, "model_info")

    p = msub.add_parser("assemble", help="combine head and body models from a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default="assembled.sbm")
    p.add_argument("--map-out", help="also write the head-to-body surface map (JSON)")
    leaves["assemble"] = (p, "model_assemble")

    p = msub.add_parser("export-obj", help="write a generated mesh as OBJ")
    p.add_argument("model")
    p.add_argument("--params", help="fit parameter JSON (zeros if omitted)")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--out", default="mesh.obj")
    leaves["export-obj"] = (p, "model_export_obj")

    p = msub.add_parser("landmarks", help="pick a landmark definition by farthest-point sampling")
    p.add_argument("model")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--name", default="dense")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--out", default="landmarks.json")
    leaves["landmarks"] = (p, "model_landmarks")
    return {("model", k): v for k, v in leaves.items()}


def _identity_parsers(sub):
    ident = sub.add_parser("identity", help="fit identity priors")
    isub = ident.add_subparsers(dest="action", required=True)
    p = isub.add_parser("build", help="fit face Gaussians and gendered body transfers")
    p.add_argument("--face-samples", required=True, help="SBM1 with one samples array per gender")
    p.add_argument("--neutral", required=True, help="neutral body model")
    p.add_argument("--male", help="male body model")
    p.add_argument("--female", help="female body model")
    p.add_argument("--out", default="identity_priors.sbm")
    return {("identity", "build"): (p, "identity_build")}


def _archive_parsers(sub):
    arch = sub.add_parser("archive", help="pose archive utilities")
    asub = arch.add_subparsers(dest="action", required=True)
    leaves = {}
    p = asub.add_parser("import", help="JSON archive -> SBM1")
    p.add_argument("source")
    p.add_argument("--out", default="archive.sbm")
    leaves["import"] = (p, "archive_import")
    p = asub.add_parser("export", help="SBM1 archive -> JSON")
    p.add_argument("archive")
    p.add_argument("--out", default="archive.json")
    leaves["export"] = (p, "archive_export")
    p = asub.add_parser("procedural", help="random archive with a block of rest-pose frames")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--tpose-frames", type=int, default=200)
    p.add_argument("--pose-scale", type=float, default=0.4)
    p.add_argument("--tpose-jitter", type=float, default=0.01)
    p.add_argument("--clusters", type=int, default=4, help="number of activity clusters")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--out", default="archive.sbm")
    leaves["procedural"] = (p, "archive_procedural")
    p = asub.add_parser("fit-gmm", help="fit a diagonal GMM to body poses")
    p.add_argument("archive")
    p.add_argument("--components", type=int, default=8)
    p.add_argument("--out", default="gmm.json")
    leaves["fit-gmm"] = (p, "archive_fit_gmm")
    return {("archive", k): v for k, v in leaves.items()}


def _sample_parsers(sub):
    samp = sub.add_parser("sample", help="draw identities or poses")
    ssub = samp.add_subparsers(dest="action", required=True)
    p = ssub.add_parser("identity")
    p.add_argument("--priors", required=True, help="identity prior container")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--gender-probs", help="JSON/TOML mapping gender -> probability (default equal split)")
    p.add_argument("--beta-scale", type=float, default=1.0)
    p.add_argument("--out", default="identities.json")
    ident = (p, "sample_identity")
    p = ssub.add_parser("pose")
    p.add_argument("--archive", required=True)
    p.add_argument("--gmm", help="fitted GMM JSON; fitted on the fly when omitted")
    p.add_argument("--components", type=int, default=8)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--tpose-weight", type=float, default=0.1)
    p.add_argument("--tpose-component", type=int, help="override which GMM component is the T-pose class")
    p.add_argument("--class-weights", help="JSON/TOML mapping class label or index -> weight")
    p.add_argument("--activity-exponent", type=float, default=0.0)
    p.add_argument("--mirror-prob", type=float, default=0.5)
    p.add_argument("--out", default="poses.sbm")
    p.add_argument("--report", default="pose_report.json")
    return {("sample", "identity"): ident, ("sample", "pose"): (p, "sample_pose")}


def _synth_parser(sub):
    p = sub.add_parser("synth", help="generate synthetic 2D landmark observations")
    p.add_argument("--model", required=True)
    p.add_argument("--cameras", help="camera JSON; default rig when omitted")
    p.add_argument("--n-cameras", type=int, default=3)
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--landmarks", help="landmark definition JSON")
    p.add_argument("--n-landmarks", type=int, default=200)
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--poses", help="pose archive to take the first frames from")
    p.add_argument("--pose-scale", type=float, default=0.2)
    p.add_argument("--identity-scale", type=float, default=0.5)
    p.add_argument("--expression-scale", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=0.0, help="pixel noise standard deviation")
    p.add_argument("--observations-out", default="observations.ndjson")
    p.add_argument("--truth-out", default="truth.json")
    p.add_argument("--cameras-out", default="cameras.json")
    p.add_argument("--landmarks-out", default="landmarks.json")
    return {("synth",): (p, "synth")}


def _fit_parser(sub):
    p = sub.add_parser("fit", help="fit model parameters to landmark observations")
    p.add_argument("--model", required=True)
    p.add_argument("--observations", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--landmarks", required=True)
    p.add_argument("--truth", help="ground-truth parameters; enables recovery metrics and perturbed init")
    p.add_argument("--init", help="initial parameters (overrides perturbed init)")
    p.add_argument("--perturb-pose", type=float, default=0.1)
    p.add_argument("--perturb-identity", type=float, default=0.05)
    p.add_argument("--perturb-expression", type=float, default=0.0)
    p.add_argument("--perturb-translation", type=float, default=0.0)
    p.add_argument("--weights", help="energy weights as a JSON/TOML file or inline JSON (defaults echoed when omitted)")
    p.add_argument("--solver", help="solver settings as a JSON/TOML file or inline JSON")
    p.add_argument("--body-prior", help="body pose GMM JSON")
    p.add_argument("--left-hand-prior")
    p.add_argument("--right-hand-prior")
    p.add_argument("--face-prior", help="identity prior container; its neutral face Gaussian is used")
    p.add_argument("--strict", action="store_true", help="warn when fewer than three views are given")
    p.add_argument("--result-out", default="fit_result.json")
    p.add_argument("--params-out", default="fitted.json")
    p.add_argument("--obj-prefix", help="write one fitted OBJ per frame with this prefix")
    return {("fit",): (p, "fit_cmd")}


def _colormatch_parser(sub):
    p = sub.add_parser("colormatch", help="match body skin colour statistics to a face texture")
    p.add_argument("--body", required=True, help="body texture PNG")
    p.add_argument("--mask", required=True, help="body skin mask PNG")
    p.add_argument("--face-stats", help="face statistics JSON")
    p.add_argument("--face", help="face texture PNG (statistics computed on the fly)")
    p.add_argument("--face-mask", help="face skin mask PNG")
    p.add_argument("--no-clamp", action="store_true")
    p.add_argument("--library", help="JSON list of texture statistics to filter by colour distance")
    p.add_argument("--bound", type=float, default=50.0)
    p.add_argument("--variant", choices=("standard", "printed"), default="standard")
    p.add_argument("--out", default="body_matched.png")
    return {("colormatch",): (p, "colormatch")}


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="synthbody", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="JSON or TOML file with default settings")
    parser.add_argument("--threads", type=int, default=1, help="numerical library thread count")
    parser.add_argument("--output-dir", default=".")
    sub = parser.add_subparsers(dest="command", required=True)
    leaves = {}
    for make in (_model_parsers, _identity_parsers, _archive_parsers, _sample_parsers, _synth_parser, _fit_parser,
                 _colormatch_parser):
        leaves.update(make(sub))
    # global flags are also accepted after the subcommand
    for leaf, _ in leaves.values():
        group = leaf.add_argument_group("global options")
        group.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        group.add_argument("--config", default=argparse.SUPPRESS)
        group.add_argument("--threads", type=int, default=argparse.SUPPRESS)
        group.add_argument("--output-dir", default=argparse.SUPPRESS)
    return parser, leaves


def _command_key(args) -> tuple[str, ...]:
    action = getattr(args, "action", None)
    return (args.command,) if action is None else (args.command, action)


def _config_section(config: dict, key: tuple[str, ...]) -> dict:
    node = config
    for part in key:
        node = node.get(part, {}) if isinstance(node, dict) else {}
    return node if isinstance(node, dict) else {}


def _normalize(d: dict) -> dict:
    return {k.replace("-", "_"): v for k, v in d.items()}


def _apply_config(parser, leaves, args, argv):
    """Re-parse with config values installed as defaults, so explicit flags win."""
    from .commands import CommandError, read_config_file

    config = read_config_file(args.config)
    if not isinstance(config, dict):
        raise CommandError("config file must hold a mapping")
    key = _command_key(args)
    leaf, _ = leaves[key]
    top = _normalize({k: v for k, v in config.items() if not isinstance(v, dict) or k in ("weights", "solver")})
    section = _normalize(_config_section(config, key))
    globals_ = {k: v for k, v in top.items() if k in GLOBAL_KEYS}
    known = {a.dest for a in leaf._actions} - set(GLOBAL_KEYS) - {"config", "help"}
    unknown = (set(top) - set(GLOBAL_KEYS) - {"config"}) | (set(section) - known)
    if unknown:
        raise CommandError(f"unknown config keys for '{' '.join(key)}': {sorted(unknown)}")
    parser.set_defaults(**globals_)
    leaf.set_defaults(**section)
    return parser.parse_args(argv)


def _effective_config(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("handler", "effective_config")}
    return json.loads(json.dumps(cfg, default=str))


def main(argv=None) -> int:
    parser, leaves = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    # Only effective when numpy has not been imported yet (the normal CLI path).
    for var in THREAD_VARS:
        os.environ.setdefault(var, str(args.threads))

    from . import commands

    try:
        if args.config:
            args = _apply_config(parser, leaves, args, argv)
        key = _command_key(args)
        handler = getattr(commands, leaves[key][1])
        args.effective_config = _effective_config(args)
        Path(args.output_dir).mkdir(parents=True, exist_ok=True)
        try:
            summary = handler(args)
            code = 0
        except commands.CommandExit as e:
            summary, code = e.summary, e.code
    except commands.CommandError as e:
        err = {"error": "invalid_input", "message": str(e)}
        err.update(e.details)
        sys.stderr.write(json.dumps(err, sort_keys=True, default=str) + "\n")
        return 1
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as e:
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}, sort_keys=True) + "\n")
        return 1
    out = {"command": " ".join(key), "config": args.effective_config, "result": summary}
    sys.stdout.write(json.dumps(out, indent=1, sort_keys=True, default=str) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())

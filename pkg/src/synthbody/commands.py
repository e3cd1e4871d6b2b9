"""Subcommand implementations. Each takes the parsed namespace and returns a JSON-able summary."""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np

from . import container
from .assembly import HeadBases, RigidGroup, assemble
from .color import TextureStats, filter_candidates, load_image, load_mask, match_moments, save_image, texture_stats
from .descriptor import check_descriptor, load_descriptor, reference_descriptor
from .fitting import EnergyWeights, FitConfig, FitParams, FitProblem, PosePriorSet, fit, perturb_init
from .fitting.solver import frame_meshes, recovery_metrics
from .identity import (
    GENDERS,
    IdentityPriors,
    fit_gaussian,
    load_identity_priors,
    sample_identity_set,
    save_identity_priors,
    solve_gender_transfer,
)
from .model import BodyModel, ModelError, Pose, ShapeParams, load_model, model_from_container, save_model, write_obj
from .poses import (
    GmmModel,
    PoseArchive,
    archive_from_arrays,
    archive_to_arrays,
    body_mirror_map,
    classify_many,
    draw_index,
    fit_pose_gmm,
    frame_to_pose,
    load_archive,
    mirror_pose,
    sampling_weights,
    save_archive,
)
from .procedural import procedural_model
from .scene import (
    LandmarkDef,
    ObservationSet,
    default_rig,
    generate_observations,
    load_cameras,
    make_landmark_def,
    save_cameras,
)
from .transfer import SurfaceMap


class CommandError(ValueError):
    """Input or validation problem; reported as JSON on stderr with exit code 1."""

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details


class CommandExit(Exception):
    """Finished with a non-zero exit code after writing outputs."""

    def __init__(self, code: int, summary: dict):
        super().__init__(code)
        self.code = code
        self.summary = summary


# --- helpers ---------------------------------------------------------------


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def out_path(args, name: str) -> Path:
    p = Path(name)
    if not p.is_absolute():
        p = Path(args.output_dir) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def write_json(args, name: str, obj: Any) -> str:
    p = out_path(args, name)
    p.write_text(dump_json(obj))
    return str(p)


def read_config_file(path: str | Path) -> dict:
    """JSON or TOML mapping, chosen by extension."""
    p = Path(path)
    if not p.exists():
        raise CommandError(f"file not found: {p}")
    if p.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(p.read_text())
    return json.loads(p.read_text())


def mapping_arg(value) -> dict:
    """Accept a mapping (from a config file), an inline JSON object, or a path to a JSON/TOML file."""
    if value is None:
        return {}
    if isinstance(value, dict):
        return value
    if str(value).lstrip().startswith("{"):
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError as e:
            raise CommandError(f"invalid inline JSON: {e}") from None
        if not isinstance(parsed, dict):
            raise CommandError("inline JSON must be an object")
        return parsed
    return read_config_file(value)


def require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise CommandError(f"file not found: {p}")
    return p


def read_model(path) -> BodyModel:
    return load_model(require(path))


def read_gmm(path) -> GmmModel:
    return GmmModel.from_json(json.loads(require(path).read_text()))


# --- model -----------------------------------------------------------------


def model_procedural(args) -> dict:
    model = procedural_model(
        n_vertices=args.vertices,
        n_face_identity=args.face_identity,
        n_body_identity=args.body_identity,
        n_expression=args.expression,
        hands=args.hands,
        eyes=args.eyes,
        seed=args.seed,
    )
    p = out_path(args, args.out)
    save_model(p, model, {"generator": {"name": "procedural", "seed": args.seed}})
    return {"outputs": [str(p)], "dims": model.dims, "joint_names": list(model.joint_names)}


def model_info(args) -> dict:
    if args.path is None:
        desc = reference_descriptor()
        source = "built-in reference descriptor"
    else:
        raw = require(args.path).read_bytes()
        source = args.path
        if raw[:4] == container.MAGIC:
            meta, arrays = container.loads(raw)
            if meta.get("kind") != "body_model":
                raise CommandError(f"{args.path}: container kind {meta.get('kind')!r} is not a body model")
            try:
                model = model_from_container(meta, arrays, validate=False)
            except ModelError as e:
                raise CommandError(str(e), problems=[str(e)]) from None
            problems = model.check()
            report = {"source": source, "kind": "body_model", "dims": model.dims,
                      "groups": {k: len(v) for k, v in model.joint_groups.items()}, "problems": problems}
            if problems:
                raise CommandError("model invariants violated", report=report, problems=problems)
            return report
        try:
            desc = load_descriptor(args.path)
        except (ValueError, json.JSONDecodeError) as e:
            raise CommandError(f"{args.path}: {e}") from None
    problems = check_descriptor(desc)
    report = {
        "source": source,
        "kind": "model_descriptor",
        "profile": desc.get("profile"),
        "dims": desc.get("dims"),
        "joint_breakdown": desc.get("joint_breakdown"),
        "landmarks": desc.get("landmarks"),
        "problems": problems,
    }
    if problems:
        raise CommandError("descriptor does not match its profile", report=report, problems=problems)
    return report


def model_assemble(args) -> dict:
    manifest_path = require(args.manifest)
    manifest = read_config_file(manifest_path)
    base = manifest_path.parent

    def rel(key):
        return None if manifest.get(key) is None else base / manifest[key]

    known = {"body", "head", "head_mask", "surface_map", "body_source", "rigid_groups"}
    unknown = set(manifest) - known
    if unknown:
        raise CommandError(f"unknown manifest keys: {sorted(unknown)}")
    if "body" not in manifest or "head" not in manifest:
        raise CommandError("manifest needs 'body' and 'head' model paths")
    body = read_model(rel("body"))
    head_model = read_model(rel("head"))
    head = HeadBases.from_model(head_model)
    mask = None
    if manifest.get("head_mask") is not None:
        mask = np.array(json.loads(require(rel("head_mask")).read_text()), dtype=float)
    smap = None
    if manifest.get("surface_map") is not None:
        smap = SurfaceMap.load(require(rel("surface_map")), head.faces, head.template.shape[0])
    source = read_model(rel("body_source")) if manifest.get("body_source") else None
    groups = [RigidGroup(int(g["joint"]), tuple(g["vertices"]), bool(g.get("regress_from_extremes", False)))
              for g in manifest.get("rigid_groups", [])]
    report = assemble(body, head, mask, smap, source, groups)
    p = out_path(args, args.out)
    save_model(p, report.model, {"assembled_from": manifest})
    outputs = [str(p)]
    if args.map_out:
        mp = out_path(args, args.map_out)
        report.surface_map.save(mp)
        outputs.append(str(mp))
    return {"outputs": outputs, "dims": report.model.dims, "notes": report.notes,
            "head_vertices": int(np.count_nonzero(report.head_mask))}


def _frame_params(model: BodyModel, params_path, frame: int) -> tuple[ShapeParams, Pose]:
    if params_path is None:
        return ShapeParams.zeros(model), Pose.identity(model.n_joints)
    params = FitParams.load(require(params_path))
    params.check(model)
    if not 0 <= frame < params.n_frames:
        raise CommandError(f"frame {frame} out of range for {params.n_frames} frames")
    return params.shape(frame), params.pose(frame)


def model_export_obj(args) -> dict:
    from .model import generate_mesh

    model = read_model(args.model)
    shape, pose = _frame_params(model, args.params, args.frame)
    p = out_path(args, args.out)
    write_obj(p, generate_mesh(model, shape, pose), model.faces)
    return {"outputs": [str(p)], "vertices": model.n_vertices, "faces": int(model.faces.shape[0])}


def model_landmarks(args) -> dict:
    model = read_model(args.model)
    lm = make_landmark_def(model, args.count, args.name, args.start)
    p = out_path(args, args.out)
    lm.save(p)
    return {"outputs": [str(p)], "count": len(lm)}


# --- identity --------------------------------------------------------------


def identity_build(args) -> dict:
    _, samples = container.read(require(args.face_samples))
    neutral = read_model(args.neutral)
    face = {}
    for g in GENDERS:
        if g in samples:
            face[g] = fit_gaussian(np.asarray(samples[g], dtype=float), label=g)
    transfers = {}
    residuals = {}
    for g, path in (("male", args.male), ("female", args.female)):
        if path:
            gm = read_model(path)
            t = solve_gender_transfer(gm.template, gm.body_identity_basis, neutral.template,
                                      neutral.body_identity_basis, gender=g)
            transfers[g] = t
            residuals[g] = {"template": t.template_residual, "max_basis": float(np.max(t.basis_residuals, initial=0.0))}
    priors = IdentityPriors(face, transfers, neutral.n_body_identity)
    p = out_path(args, args.out)
    save_identity_priors(p, priors)
    return {"outputs": [str(p)], "genders": list(priors.genders()), "transfer_residuals": residuals,
            "jitter": {g: f.jitter for g, f in face.items()}}


def sample_identity(args) -> dict:
    priors = load_identity_priors(require(args.priors))
    probs = mapping_arg(args.gender_probs) if args.gender_probs else None
    available = priors.genders()
    if probs is None:
        probs = {g: 1 / len(available) for g in available}
    for g, w in probs.items():
        if g not in GENDERS:
            raise CommandError(f"unknown gender {g!r}")
        if w > 0 and g not in available:
            raise CommandError(f"no priors available for gender {g!r}")
    rng = np.random.default_rng(args.seed)
    draws = []
    for _ in range(args.count):
        d = sample_identity_set(priors.face, priors.transfers, priors.n_beta, rng, probs, args.beta_scale)
        draws.append({"gender": d["gender"], "gamma": d["gamma"].tolist(), "beta": d["beta"].tolist()})
    counts = {g: sum(d["gender"] == g for d in draws) for g in GENDERS}
    p = write_json(args, args.out, {"seed": args.seed, "gender_probs": probs, "samples": draws})
    return {"outputs": [p], "counts": counts}


# --- archives and pose sampling -------------------------------------------


def archive_import(args) -> dict:
    d = json.loads(require(args.source).read_text())
    meta = {k: v for k, v in d.items() if k not in ("arrays",)}
    arrays = {k: np.asarray(v, dtype=np.uint8 if k == "has_hands" else np.float32)
              for k, v in d["arrays"].items()}
    archive = archive_from_arrays(meta, arrays)
    p = out_path(args, args.out)
    save_archive(p, archive)
    return {"outputs": [str(p)], "frames": len(archive)}


def archive_export(args) -> dict:
    archive = load_archive(require(args.archive))
    meta, arrays = archive_to_arrays(archive)
    meta["arrays"] = {k: np.asarray(v, dtype=np.float32 if v.dtype.kind == "f" else v.dtype).tolist()
                      for k, v in arrays.items()}
    p = write_json(args, args.out, meta)
    return {"outputs": [p], "frames": len(archive)}


def archive_procedural(args) -> dict:
    """Random body poses plus a block of rest-pose frames, for demos and tests."""
    model = read_model(args.model)
    rng = np.random.default_rng(args.seed)
    body_idx = model.body_joints()
    B = len(body_idx)
    n_active = args.frames - args.tpose_frames
    if n_active < 0:
        raise CommandError("tpose frames exceed the total frame count")
    # activities cluster around a few distinct mean poses, as captured motion does
    centres = rng.normal(0.0, args.pose_scale, (args.clusters, B, 3))
    which = rng.integers(0, args.clusters, n_active)
    active = centres[which] + rng.normal(0.0, args.pose_scale / 4, (n_active, B, 3))
    rest = rng.normal(0.0, args.tpose_jitter, (args.tpose_frames, B, 3))
    body = np.concatenate([rest, active]).astype(np.float32)
    expr = rng.normal(0.0, 0.5, (args.frames, model.n_expression)).astype(np.float32) if model.n_expression else None
    mirror = body_mirror_map(model) if model.joint_mirror is not None else None
    archive = PoseArchive(body=body, fps=args.fps, expression=expr, joint_mirror=mirror)
    p = out_path(args, args.out)
    save_archive(p, archive)
    return {"outputs": [str(p)], "frames": len(archive), "body_joints": B}


def archive_fit_gmm(args) -> dict:
    archive = load_archive(require(args.archive))
    gmm = fit_pose_gmm(archive, args.components, seed=args.seed)
    p = write_json(args, args.out, gmm.to_json())
    return {"outputs": [p], "labels": list(gmm.labels), "iterations": len(gmm.log_likelihood_trace),
            "log_likelihood": gmm.log_likelihood_trace[-1]}


def sample_pose(args) -> dict:
    archive = load_archive(require(args.archive))
    gmm = read_gmm(args.gmm) if args.gmm else fit_pose_gmm(archive, args.components, seed=args.seed)
    if args.tpose_component is not None:
        if not 0 <= args.tpose_component < gmm.n_components:
            raise CommandError(f"tpose component {args.tpose_component} out of range")
        labels = tuple("tpose" if i == args.tpose_component else f"c{i}" for i in range(gmm.n_components))
        gmm = replace(gmm, labels=labels)
    class_weights = {"tpose": args.tpose_weight}
    class_weights.update(mapping_arg(args.class_weights))
    weights = sampling_weights(archive, gmm, class_weights, args.activity_exponent)
    if args.mirror_prob > 0 and archive.joint_mirror is None:
        raise CommandError("archive has no joint mirror map; use --mirror-prob 0")
    rng = np.random.default_rng(args.seed)
    frames, picks, mirrored = [], [], 0
    for _ in range(args.count):
        idx, flip = draw_index(weights, rng, args.mirror_prob)
        frame = archive.frame(idx)
        if flip:
            frame = mirror_pose(frame, archive.joint_mirror)
            mirrored += 1
        frames.append(frame)
        picks.append(idx)
    out = PoseArchive.from_frames(frames, fps=archive.fps, joint_mirror=archive.joint_mirror)
    p = out_path(args, args.out)
    save_archive(p, out)
    labels = classify_many(gmm, archive.body_vectors())
    observed = np.bincount(labels[np.array(picks, dtype=np.int64)], minlength=gmm.n_components)
    expected = np.array([weights[labels == k].sum() for k in range(gmm.n_components)]) * args.count
    report = {
        "labels": list(gmm.labels),
        "observed": observed.tolist(),
        "expected": expected.tolist(),
        "mirrored": mirrored,
        "source_indices": picks,
    }
    rp = write_json(args, args.report, report)
    return {"outputs": [str(p), rp], "observed": report["observed"], "expected": report["expected"]}


# --- synthetic observations -----------------------------------------------


def synth(args) -> dict:
    model = read_model(args.model)
    rng = np.random.default_rng(args.seed)
    cameras = load_cameras(require(args.cameras)) if args.cameras else default_rig(args.n_cameras, args.radius)
    lm = LandmarkDef.load(require(args.landmarks)) if args.landmarks else make_landmark_def(model, args.n_landmarks)
    lm.check(model.n_vertices)
    shape = ShapeParams(
        rng.normal(0.0, args.identity_scale, model.n_face_identity),
        rng.normal(0.0, args.identity_scale, model.n_body_identity),
        np.zeros(model.n_expression),
    )
    if args.poses:
        archive = load_archive(require(args.poses))
        if len(archive) < args.frames:
            raise CommandError(f"pose archive has {len(archive)} frames, {args.frames} requested")
        picked = [frame_to_pose(model, archive.frame(i)) for i in range(args.frames)]
        poses = [p for p, _ in picked]
        exprs = [e if e is not None else np.zeros(model.n_expression) for _, e in picked]
    else:
        poses = [Pose(rng.normal(0.0, args.pose_scale, (model.n_joints, 3)), rng.normal(0.0, 0.05, 3))
                 for _ in range(args.frames)]
        exprs = [rng.normal(0.0, args.expression_scale, model.n_expression) for _ in range(args.frames)]
    obs = generate_observations(model, shape, poses, cameras, lm, args.noise, seed=args.seed, expressions=exprs)
    counts = obs.count_per_camera(len(cameras))
    summary = {"observations": len(obs), "per_camera": counts, "dropped": {str(k): v for k, v in obs.dropped.items()}}
    if len(obs) == 0:
        raise CommandError("no landmark is visible in any camera", **summary)
    truth = FitParams.from_truth(shape, poses, cameras, exprs)
    paths = {
        "observations": out_path(args, args.observations_out),
        "truth": out_path(args, args.truth_out),
        "cameras": out_path(args, args.cameras_out),
        "landmarks": out_path(args, args.landmarks_out),
    }
    obs.save_ndjson(paths["observations"])
    paths["truth"].write_text(dump_json(truth.to_json()))
    save_cameras(paths["cameras"], cameras)
    lm.save(paths["landmarks"])
    summary["outputs"] = [str(p) for p in paths.values()]
    return summary


# --- fitting ---------------------------------------------------------------


def _zero_init(model: BodyModel, n_frames: int, cameras) -> FitParams:
    return FitParams(
        np.zeros(model.n_face_identity), np.zeros(model.n_body_identity),
        np.zeros((n_frames, model.n_expression)), np.zeros((n_frames, model.n_joints, 3)),
        np.zeros((n_frames, 3)), np.stack([c.rotation for c in cameras]), np.stack([c.translation for c in cameras]),
    )


def fit_cmd(args) -> dict:
    model = read_model(args.model)
    cameras = load_cameras(require(args.cameras))
    obs = ObservationSet.load_ndjson(require(args.observations))
    lm = LandmarkDef.load(require(args.landmarks))
    if len(obs) == 0:
        raise CommandError("observation file is empty")
    warnings = []
    if args.strict and len(cameras) < 3:
        warnings.append(f"only {len(cameras)} camera view(s); at least 3 views are required for reliable fitting")
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)

    truth = FitParams.load(require(args.truth)) if args.truth else None
    n_frames = truth.n_frames if truth is not None else int(obs.frame.max()) + 1
    if args.init:
        init = FitParams.load(require(args.init))
    elif truth is not None:
        scales = {"pose": args.perturb_pose, "identity": args.perturb_identity,
                  "expression": args.perturb_expression, "translation": args.perturb_translation}
        init = perturb_init(truth, scales, np.random.default_rng(args.seed))
    else:
        init = _zero_init(model, n_frames, cameras)
    init.check(model)

    weights = EnergyWeights.from_json(mapping_arg(args.weights))
    solver = FitConfig.from_json(mapping_arg(args.solver))
    priors = PosePriorSet(
        body=read_gmm(args.body_prior) if args.body_prior else None,
        left_hand=read_gmm(args.left_hand_prior) if args.left_hand_prior else None,
        right_hand=read_gmm(args.right_hand_prior) if args.right_hand_prior else None,
    )
    face_prior = None
    if args.face_prior:
        ip = load_identity_priors(require(args.face_prior))
        if "neutral" not in ip.face:
            raise CommandError("face prior file has no neutral face Gaussian")
        face_prior = ip.face["neutral"]
    problem = FitProblem(model, cameras, obs, lm, init.n_frames, weights, priors, face_prior)
    result = fit(problem, init, solver)
    if truth is not None:
        result.metrics = recovery_metrics(model, truth, result.params)
    doc = result.to_json()
    doc["warnings"] = warnings
    doc["cli"] = args.effective_config
    outputs = [write_json(args, args.result_out, doc), write_json(args, args.params_out, result.params.to_json())]
    if args.obj_prefix:
        for f, verts in enumerate(frame_meshes(model, result.params)):
            p = out_path(args, f"{args.obj_prefix}{f:03d}.obj")
            write_obj(p, verts, model.faces)
            outputs.append(str(p))
    summary = {
        "outputs": outputs,
        "converged": result.converged,
        "diverged": result.diverged,
        "iterations": result.iterations,
        "energy": result.energy,
        "message": result.message,
        "weights": weights.to_json(),
        "solver": solver.to_json(),
        "metrics": result.metrics,
        "warnings": warnings,
    }
    if not result.converged:
        raise CommandExit(2, summary)
    return summary


# --- colour ----------------------------------------------------------------


def colormatch(args) -> dict:
    body = load_image(require(args.body))
    mask = load_mask(require(args.mask))
    if args.face_stats:
        stats = TextureStats.load(require(args.face_stats))
    elif args.face:
        face_mask = load_mask(require(args.face_mask)) if args.face_mask else None
        stats = texture_stats(load_image(require(args.face)), face_mask)
    else:
        raise CommandError("give --face-stats or --face")
    result = match_moments(body, stats, mask, clamp=not args.no_clamp)
    p = out_path(args, args.out)
    save_image(p, result)
    sidecar = p.with_name(p.name + ".stats.json")
    sidecar.write_text(dump_json(texture_stats(result, mask).to_json()))
    summary = {"outputs": [str(p), str(sidecar)], "face_stats": stats.to_json()}
    if args.library:
        lib = [TextureStats.from_json(d) for d in json.loads(require(args.library).read_text())]
        summary["candidates"] = filter_candidates(stats.mean, lib, args.bound, args.variant)
    return summary

"""Command-line pipeline: denoise, simgen, train, encode, eval, synth.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure.  All binary artifacts use the datastore formats; trained weights use
the UHSW layout and denoised distributions the UHSD layout.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import re
import sys

import numpy as np

from . import conceptsim, datastore, evaluate, hamming, hashnet, synthdata

log = logging.getLogger("concepthash")

_USAGE_ERROR = 1
_DATA_ERROR = 2
_NUMERIC_ERROR = 3

SIM_MODES = (conceptsim.CONCEPT, conceptsim.CONCEPT_NO_DENOISE, conceptsim.FEATURE_COSINE)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the interface contract reserves 2 for
    # data errors and 1 for usage.
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="concepthash", description=__doc__)
    parser.add_argument("--config", help="key=value config file (used by train)")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for eval")
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("denoise", help="apply the concept discard rule to a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--tau-mult", type=float, default=3.0,
                   help="temperature as a multiple of the concept count")
    p.add_argument("--no-rescale", action="store_true",
                   help="reuse the first-pass temperature after discarding")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simgen", help="write concept distributions for a similarity source")
    p.add_argument("--scores", required=True, help="score file(s), comma-separated")
    p.add_argument("--mode", default=conceptsim.CONCEPT,
                   choices=[conceptsim.CONCEPT, conceptsim.CONCEPT_NO_DENOISE])
    p.add_argument("--tau-mult", type=float, default=3.0)
    p.add_argument("--no-rescale", action="store_true")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train the hashing head from a config file")
    p.add_argument("--config", dest="train_config", help="key=value config file")

    p = sub.add_parser("encode", help="encode features into packed binary codes")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="output code file")

    p = sub.add_parser("eval", help="score retrieval quality of code files")
    p.add_argument("--query-codes", required=True)
    p.add_argument("--db-codes", required=True)
    p.add_argument("--query-labels", required=True)
    p.add_argument("--db-labels", required=True)
    p.add_argument("--topn", type=int, default=5000)
    p.add_argument("--pn-points", help="comma-separated P@n curve points")
    p.add_argument("--macro-pr", action="store_true",
                   help="macro-average the PR curve instead of micro-pooling")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate a clustered toy dataset")
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--per-cluster", type=int, required=True)
    p.add_argument("--concepts", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--seed", type=int, dest="synth_seed", default=0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--out", required=True, help="output directory")
    return parser


# ---------------------------------------------------------------------------
# config files


_PATH_KEYS = ("scores_path", "features_path", "labels_path")
_TRAIN_FIELDS = {f.name: f.type for f in dataclasses.fields(hashnet.TrainConfig)}
_KNOWN_KEYS = set(_TRAIN_FIELDS) | set(_PATH_KEYS) | {"sim_mode", "tau_mode", "out_dir", "preset"}

_INT_FIELDS = {"code_bits", "batch", "epochs", "seed", "hidden"}


def read_run_config(path) -> dict:
    """Parse a flat key=value config file; unknown keys are rejected."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = key.strip(), value.strip()
            if key not in _KNOWN_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = value
    return values


def _train_config_from(values: dict, seed_override=None) -> hashnet.TrainConfig:
    kwargs = {}
    if "preset" in values:
        kwargs.update(hashnet.PRESETS.get(values["preset"]) or {})
        if values["preset"] not in hashnet.PRESETS:
            raise ValueError(f"unknown preset {values['preset']!r}")
    for name in _TRAIN_FIELDS:
        if name in values:
            kwargs[name] = int(values[name]) if name in _INT_FIELDS else float(values[name])
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return hashnet.TrainConfig(**kwargs)


def _parse_tau_mode(text: str | None) -> tuple[str, float]:
    """Either "<mult>m" (temperature = mult * concept count) or a fixed value."""
    if text is None or text == "":
        return "mult", 3.0
    match = re.fullmatch(r"([0-9.]+)\s*m", text.strip())
    if match:
        return "mult", float(match.group(1))
    return "fixed", float(text)


def _temperature_for(mode: tuple[str, float], m: int) -> float:
    kind, value = mode
    return value * m if kind == "mult" else value


# ---------------------------------------------------------------------------
# commands


def _split_paths(text: str) -> list[str]:
    return [p for p in (piece.strip() for piece in text.split(",")) if p]


def cmd_denoise(args) -> int:
    scores = datastore.read_score_matrix(args.scores)
    temperature = args.tau_mult * scores.m
    report, dist = conceptsim.denoise(
        scores, temperature, rescale_temperature=not args.no_rescale
    )
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "denoise_report.txt")
    with open(report_path, "w", encoding="utf-8") as f:
        f.write(conceptsim.format_denoise_report(report, scores.concept_names, temperature))
    datastore.write_distribution_matrix(
        os.path.join(args.out, "distributions.uhsd"), dist
    )
    log.info("kept %d of %d concepts", report.n_kept, scores.m)
    return 0


def cmd_simgen(args) -> int:
    paths = _split_paths(args.scores)
    matrices = [datastore.read_score_matrix(p) for p in paths]
    temperature = args.tau_mult * matrices[0].m
    if args.mode == conceptsim.CONCEPT:
        _, dists = conceptsim.denoise_shared(
            matrices, temperature, rescale_temperature=not args.no_rescale
        )
    else:
        dists = [conceptsim.concept_distributions(s, temperature) for s in matrices]
    os.makedirs(args.out, exist_ok=True)
    for i, dist in enumerate(dists):
        datastore.write_distribution_matrix(
            os.path.join(args.out, f"distributions_{i:02d}.uhsd"), dist
        )
    return 0


def _build_source(values: dict, features: datastore.FeatureMatrix) -> conceptsim.SimilaritySource:
    mode = values.get("sim_mode", conceptsim.CONCEPT)
    if mode not in SIM_MODES:
        raise ValueError(f"sim_mode must be one of {SIM_MODES}, got {mode!r}")
    if mode == conceptsim.FEATURE_COSINE:
        return conceptsim.SimilaritySource.from_features(features)
    if "scores_path" not in values:
        raise ValueError(f"sim_mode {mode} needs scores_path")
    matrices = [datastore.read_score_matrix(p) for p in _split_paths(values["scores_path"])]
    tau_mode = _parse_tau_mode(values.get("tau_mode"))
    temperature = _temperature_for(tau_mode, matrices[0].m)
    if mode == conceptsim.CONCEPT:
        _, dists = conceptsim.denoise_shared(
            matrices, temperature, rescale_temperature=tau_mode[0] == "mult"
        )
        return conceptsim.SimilaritySource.from_distributions(dists, denoised=True)
    dists = [conceptsim.concept_distributions(s, temperature) for s in matrices]
    return conceptsim.SimilaritySource.from_distributions(dists, denoised=False)


def cmd_train(args, global_config, seed_override) -> int:
    config_path = args.train_config or global_config
    if not config_path:
        raise _UsageError("train needs --config")
    values = read_run_config(config_path)
    for key in _PATH_KEYS:
        if key in values:
            for p in _split_paths(values[key]):
                if not os.path.exists(p):
                    raise FileNotFoundError(f"{key} refers to missing file {p}")
    if "features_path" not in values:
        raise ValueError("config must set features_path")
    if "out_dir" not in values:
        raise ValueError("config must set out_dir")
    cfg = _train_config_from(values, seed_override)
    features = datastore.read_feature_matrix(values["features_path"])
    source = _build_source(values, features)
    log.info("training %d-bit head on %d items, %d epochs", cfg.code_bits, features.n, cfg.epochs)
    params, history = hashnet.train(features, source, cfg)
    os.makedirs(values["out_dir"], exist_ok=True)
    hashnet.save_params(os.path.join(values["out_dir"], "model.uhsw"), params)
    with open(os.path.join(values["out_dir"], "loss_history.csv"), "w", encoding="utf-8") as f:
        f.write("epoch,mean_loss\n")
        for epoch, value in enumerate(history, 1):
            f.write(f"{epoch},{value:.9g}\n")
    return 0


def cmd_encode(args) -> int:
    params = hashnet.load_params(args.model)
    features = datastore.read_feature_matrix(args.features)
    chunks = []
    for start in range(0, features.n, 4096):
        batch = features.features[start : start + 4096]
        chunks.append(hamming.binarize(hashnet.forward(params, batch)).words)
    codes = datastore.PackedCodeSet(params.code_bits, np.vstack(chunks))
    datastore.write_codes(args.out, codes)
    return 0


def _default_pn_points(top_n: int, db_n: int) -> list[int]:
    ladder = []
    step, scale = 1, 1
    while step * scale <= min(top_n, db_n):
        ladder.append(step * scale)
        if step == 1:
            step = 2
        elif step == 2:
            step = 5
        else:
            step, scale = 1, scale * 10
    cap = min(top_n, db_n)
    if cap not in ladder:
        ladder.append(cap)
    return ladder


def cmd_eval(args, threads: int) -> int:
    query_codes = datastore.read_codes(args.query_codes)
    db_codes = datastore.read_codes(args.db_codes)
    query_labels = datastore.read_labels(args.query_labels)
    db_labels = datastore.read_labels(args.db_labels)
    if args.pn_points:
        points = [int(p) for p in _split_paths(args.pn_points)]
    else:
        points = _default_pn_points(args.topn, db_codes.n)
    report = evaluate.evaluate_retrieval(
        query_codes, query_labels, db_codes, db_labels,
        top_n=args.topn, p_at_n_points=points,
        macro_pr=args.macro_pr, threads=threads,
    )
    evaluate.write_report_csvs(report, args.out)
    if report.queries_without_relevant:
        print(
            f"warning: {report.queries_without_relevant} query(ies) have no "
            "relevant database item and cannot contribute recall",
            file=sys.stderr,
        )
    log.info("map@%d = %.6f", report.map_n, report.map)
    return 0


def cmd_synth(args, seed_override) -> int:
    seed = seed_override if seed_override is not None else args.synth_seed
    scores, features, labels = synthdata.make_clustered_dataset(
        clusters=args.clusters,
        per_cluster=args.per_cluster,
        concepts=args.concepts,
        dim=args.dim,
        noise=args.noise,
        seed=seed,
    )
    os.makedirs(args.out, exist_ok=True)
    datastore.write_score_matrix(os.path.join(args.out, "scores.uhsm"), scores)
    datastore.write_feature_matrix(os.path.join(args.out, "features.uhsf"), features)
    datastore.write_labels(os.path.join(args.out, "labels.tsv"), labels)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"concepthash: error: {exc}", file=sys.stderr)
        return _USAGE_ERROR
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "denoise":
            return cmd_denoise(args)
        if args.command == "simgen":
            return cmd_simgen(args)
        if args.command == "train":
            return cmd_train(args, args.config, args.seed)
        if args.command == "encode":
            return cmd_encode(args)
        if args.command == "eval":
            return cmd_eval(args, args.threads)
        if args.command == "synth":
            return cmd_synth(args, args.seed)
        raise AssertionError(f"unhandled command {args.command}")
    except _UsageError as exc:
        print(f"concepthash: error: {exc}", file=sys.stderr)
        return _USAGE_ERROR
    except (hashnet.TrainingDivergedError, FloatingPointError) as exc:
        print(f"concepthash: numerical failure: {exc}", file=sys.stderr)
        return _NUMERIC_ERROR
    except (ValueError, OSError) as exc:
        print(f"concepthash: error: {exc}", file=sys.stderr)
        return _DATA_ERROR


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -s` to see the verdict lines.
Every tolerance and runtime budget is asserted, not just reported.
"""

import functools
import math
import os
import time

import numpy as np

from concepthash import cli, conceptsim as cs, datastore as ds, evaluate as ev
from concepthash import hamming as hm, hashnet as hn
from concepthash.datastore import LabelTable, ScoreMatrix, pack_bits, unpack_bits


def criterion(name):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except BaseException:
                print(f"ACCEPTANCE {name}: FAIL")
                raise
            print(f"ACCEPTANCE {name}: PASS")
            return result

        return run

    return wrap


# ---------------------------------------------------------------------------
# shared helpers (independent references, deliberately naive)


def naive_loss_total(z, sim, cfg):
    z = np.asarray(z, float)
    t = z.shape[0]

    def cos(a, b):
        return float(a @ b) / (float(np.linalg.norm(a)) * float(np.linalg.norm(b)))

    l2 = sum(
        (cos(z[i], z[j]) - sim[i, j]) ** 2 for i in range(t) for j in range(t)
    ) / (t * t)
    con = 0.0
    for i in range(t):
        pos = [j for j in range(t) if j != i and sim[i, j] >= cfg.sim_threshold]
        neg = [j for j in range(t) if j != i and sim[i, j] < cfg.sim_threshold]
        if not pos:
            continue
        tail = sum(math.exp(cos(z[i], z[l]) / cfg.contrast_temp) for l in neg)
        row = 0.0
        for j in pos:
            e = math.exp(cos(z[i], z[j]) / cfg.contrast_temp)
            row += -math.log(e / (e + tail))
        con += row / len(pos)
    con /= t
    quant = sum(
        float(((z[i] - np.where(z[i] > 0, 1.0, -1.0)) ** 2).sum()) for i in range(t)
    ) / t
    return l2 + cfg.contrast_weight * con + cfg.quant_weight * quant


def random_instance(rng):
    t = int(rng.integers(2, 9))
    k = int(rng.integers(2, 17))
    z = rng.uniform(0.05, 0.95, size=(t, k)) * rng.choice([-1.0, 1.0], size=(t, k))
    raw = rng.random((t, t))
    sim = (raw + raw.T) / 2
    np.fill_diagonal(sim, 1.0)
    cfg = hn.TrainConfig(
        code_bits=k,
        contrast_weight=float(rng.uniform(0.0, 1.0)),
        quant_weight=float(rng.uniform(0.0, 0.1)),
        contrast_temp=float(rng.uniform(0.1, 1.0)),
        sim_threshold=float(rng.uniform(0.0, 1.0)),
    )
    return z, sim, cfg


def random_codes(rng, n, k):
    return pack_bits(rng.random((n, k)) > 0.5)


def random_labels(rng, n, universe=5):
    rows = []
    for _ in range(n):
        size = int(rng.integers(1, 3))
        rows.append(
            frozenset(int(x) for x in rng.choice(universe, size=size, replace=False))
        )
    return LabelTable(tuple(rows))


def textbook_ap(flags):
    n_relevant = sum(flags)
    if n_relevant == 0:
        return 0.0
    total = 0.0
    for i, flag in enumerate(flags, 1):
        if flag:
            total += sum(flags[:i]) / i
    return total / n_relevant


def bit_distance(bits_a, bits_b):
    return int(np.sum(bits_a != bits_b))


# ---------------------------------------------------------------------------
# criteria


@criterion("gradient correctness (100 instances, rel err < 1e-4, < 10 s)")
def test_gradient_correctness():
    start = time.time()
    rng = np.random.default_rng(12345)
    worst = 0.0
    for _ in range(100):
        z, sim, cfg = random_instance(rng)
        analytic = hn.loss_grad(z, sim, cfg)
        numeric = np.zeros_like(z)
        step = 1e-5
        for i in range(z.shape[0]):
            for j in range(z.shape[1]):
                plus, minus = z.copy(), z.copy()
                plus[i, j] += step
                minus[i, j] -= step
                numeric[i, j] = (
                    hn.loss(plus, sim, cfg).total - hn.loss(minus, sim, cfg).total
                ) / (2 * step)
        scale = max(1e-12, float(np.abs(numeric).max()))
        worst = max(worst, float(np.abs(analytic - numeric).max()) / scale)
    elapsed = time.time() - start
    assert worst < 1e-4, f"max relative error {worst}"
    assert elapsed < 10.0, f"took {elapsed:.1f}s"


@criterion("loss oracle (1000 instances within 1e-10, < 5 s)")
def test_loss_oracle():
    start = time.time()
    rng = np.random.default_rng(23456)
    worst = 0.0
    for _ in range(1000):
        z, sim, cfg = random_instance(rng)
        worst = max(worst, abs(hn.loss(z, sim, cfg).total - naive_loss_total(z, sim, cfg)))
    elapsed = time.time() - start
    assert worst < 1e-10, f"worst gap {worst}"
    assert elapsed < 5.0, f"took {elapsed:.1f}s"


@criterion("metric oracle (MAP/P@n/PR exactly equal brute force, < 5 s)")
def test_metric_oracle():
    start = time.time()
    rng = np.random.default_rng(34567)
    for _ in range(20):
        k = int(rng.integers(4, 17))
        n_db = int(rng.integers(10, 101))
        n_q = int(rng.integers(2, 8))
        queries, db = random_codes(rng, n_q, k), random_codes(rng, n_db, k)
        q_labels, db_labels = random_labels(rng, n_q), random_labels(rng, n_db)
        top_n = int(rng.integers(1, n_db + 1))

        q_bits, db_bits = unpack_bits(queries), unpack_bits(db)
        orders = [
            sorted(
                range(n_db),
                key=lambda j, qb=qb: (bit_distance(qb, db_bits[j]), j),
            )
            for qb in q_bits
        ]
        flags = [
            [not q_labels.labels[qi].isdisjoint(db_labels.labels[j]) for j in order]
            for qi, order in enumerate(orders)
        ]

        expect_map = sum(textbook_ap(f[:top_n]) for f in flags) / n_q
        assert ev.map_at_n(queries, q_labels, db, db_labels, top_n) == expect_map

        points = sorted(set(int(x) for x in rng.integers(1, n_db + 1, size=3)))
        expect_curve = [
            (p, sum(sum(f[:p]) / p for f in flags) / n_q) for p in points
        ]
        assert (
            ev.precision_at_n_curve(queries, q_labels, db, db_labels, points)
            == expect_curve
        )

        mine_pr, _ = ev.pr_curve_hamming(queries, q_labels, db, db_labels)
        distances = [
            [bit_distance(qb, db_bits[j]) for j in range(n_db)] for qb in q_bits
        ]
        all_flags = [
            [not q_labels.labels[qi].isdisjoint(db_labels.labels[j]) for j in range(n_db)]
            for qi in range(n_q)
        ]
        total_rel = sum(sum(f) for f in all_flags)
        for r, precision, recall in mine_pr:
            got = sum(1 for d_row in distances for d in d_row if d <= r)
            rel = sum(
                1
                for d_row, f_row in zip(distances, all_flags)
                for d, f in zip(d_row, f_row)
                if d <= r and f
            )
            assert precision == (rel / got if got else 1.0)
            assert recall == (rel / total_rel if total_rel else 0.0)
    elapsed = time.time() - start
    assert elapsed < 5.0, f"took {elapsed:.1f}s"


@criterion("hamming engine (10k pairs per width + full-sort ranking, < 5 s)")
def test_hamming_engine():
    start = time.time()
    rng = np.random.default_rng(45678)
    for k in (1, 63, 64, 65, 96, 128):
        codes = random_codes(rng, 200, k)
        bits = unpack_bits(codes)
        pairs = rng.integers(0, 200, size=(10_000, 2))
        expected = np.sum(bits[pairs[:, 0]] != bits[pairs[:, 1]], axis=1)
        for (i, j), want in zip(pairs[::97], expected[::97]):
            assert hm.hamming_distance(codes, int(i), int(j)) == want
        # vectorized check of every sampled pair via the packed word path
        got = np.bitwise_count(
            codes.words[pairs[:, 0]] ^ codes.words[pairs[:, 1]]
        ).sum(axis=1)
        assert np.array_equal(got, expected)

        db = random_codes(rng, 80, k)
        db_bits = unpack_bits(db)
        for qi in range(4):
            query = random_codes(rng, 1, k)
            q_bits = unpack_bits(query)[0]
            oracle = sorted(
                range(80), key=lambda j: (bit_distance(q_bits, db_bits[j]), j)
            )
            assert hm.rank_topn(query.words[0], db, 80).tolist() == oracle
            assert hm.rank_topn(query.words[0], db, 11).tolist() == oracle[:11]
    elapsed = time.time() - start
    assert elapsed < 5.0, f"took {elapsed:.1f}s"


@criterion("denoising rule boundaries (inclusive thresholds, < 1 s)")
def test_denoising_rule():
    start = time.time()
    # integer bound: n=100, m=10 -> [5, 50]
    freqs = np.zeros(10, dtype=int)
    freqs[:4] = [4, 5, 50, 41]
    keep = cs.discard_mask(freqs, 100, 10)
    assert not keep[0]  # ceil(0.5 n/m) - 1 = 4, below the bound
    assert keep[1] and keep[2]
    freqs = np.zeros(10, dtype=int)
    freqs[:3] = [51, 49, 0]
    keep = cs.discard_mask(freqs, 100, 10)
    assert not keep[0]  # 0.5 n + 1
    assert keep[1]  # 0.5 n - 1
    # fractional bound: n=10, m=4 -> lower 1.25
    keep = cs.discard_mask(np.array([1, 2, 3, 4]), 10, 4)
    assert not keep[0] and keep[1]

    rows = np.zeros((20, 5))
    rows[:, 0] = 10.0  # one concept dominates every row
    dominant = ScoreMatrix(tuple(f"c{i}" for i in range(5)), rows)
    dist = cs.concept_distributions(dominant, 3.0 * dominant.m)
    freqs = cs.concept_frequencies(dist)
    assert freqs[0] == dominant.n
    assert not cs.discard_mask(freqs, dominant.n, dominant.m)[0]
    elapsed = time.time() - start
    assert elapsed < 1.0, f"took {elapsed:.1f}s"


@criterion("softmax properties (stochastic rows, argmax, scale/shift identities)")
def test_softmax_properties():
    rng = np.random.default_rng(56789)
    for _ in range(25):
        n, m = int(rng.integers(1, 40)), int(rng.integers(2, 30))
        raw = rng.normal(size=(n, m)) * float(rng.uniform(0.1, 5))
        s = ScoreMatrix(tuple(f"c{i}" for i in range(m)), raw)
        temperature = float(rng.uniform(0.01, 50))
        dist = cs.concept_distributions(s, temperature)
        assert np.abs(dist.dist.sum(axis=1) - 1.0).max() <= 1e-9
        assert np.array_equal(
            np.argmax(dist.dist, axis=1), np.argmax(s.scores, axis=1)
        )
    # exact-in-float32 scale and shift transformations
    base = rng.integers(-64, 64, size=(12, 7)) / 16.0
    names = tuple(f"c{i}" for i in range(7))
    for c in (0.5, 2.0, 4.0):
        a = cs.concept_distributions(ScoreMatrix(names, c * base), 1.3)
        b = cs.concept_distributions(ScoreMatrix(names, base), 1.3 * c)
        assert np.abs(a.dist - b.dist).max() < 1e-12
    shifted = base + rng.integers(-4, 5, size=(12, 1))
    a = cs.concept_distributions(ScoreMatrix(names, base), 2.5)
    b = cs.concept_distributions(ScoreMatrix(names, shifted), 2.5)
    assert np.abs(a.dist - b.dist).max() < 1e-12


@criterion("AP spot values ([1,0,1] -> 5/6, [1,1,0] -> 1, [0,0,0] -> 0)")
def test_ap_spot_values():
    assert ev.average_precision([True, False, True]) == 0.5 * 1.0 + 0.5 * (2 / 3)
    assert ev.average_precision([True, True, False]) == 1.0
    assert ev.average_precision([False, False, False]) == 0.0


# ---------------------------------------------------------------------------
# synthetic end-to-end


def run_synthetic_pipeline(root):
    """synth -> split -> denoise -> train -> encode -> eval, via the CLI."""

    def run(argv):
        rc = cli.main([str(a) for a in argv])
        assert rc == 0, f"command failed: {argv}"

    data = os.path.join(root, "data")
    run(["synth", "--clusters", 10, "--per-cluster", 50, "--concepts", 20,
         "--dim", 64, "--seed", 7, "--noise", 0.05, "--out", data])

    scores = ds.read_score_matrix(os.path.join(data, "scores.uhsm"))
    features = ds.read_feature_matrix(os.path.join(data, "features.uhsf"))
    labels = ds.read_labels(os.path.join(data, "labels.tsv"))

    # hold out the first 5 points of each cluster as queries
    cluster = np.repeat(np.arange(10), 50)
    is_query = np.zeros(500, dtype=bool)
    for c in range(10):
        is_query[np.flatnonzero(cluster == c)[:5]] = True
    q_idx, db_idx = np.flatnonzero(is_query), np.flatnonzero(~is_query)

    split = os.path.join(root, "split")
    os.makedirs(split, exist_ok=True)
    ds.write_score_matrix(
        os.path.join(split, "db_scores.uhsm"),
        ScoreMatrix(scores.concept_names, scores.scores[db_idx]),
    )
    ds.write_feature_matrix(
        os.path.join(split, "db_features.uhsf"), ds.FeatureMatrix(features.features[db_idx])
    )
    ds.write_feature_matrix(
        os.path.join(split, "q_features.uhsf"), ds.FeatureMatrix(features.features[q_idx])
    )
    ds.write_labels(
        os.path.join(split, "db_labels.tsv"),
        LabelTable(tuple(labels.labels[i] for i in db_idx)),
    )
    ds.write_labels(
        os.path.join(split, "q_labels.tsv"),
        LabelTable(tuple(labels.labels[i] for i in q_idx)),
    )

    run(["denoise", "--scores", os.path.join(split, "db_scores.uhsm"),
         "--tau-mult", 3, "--out", os.path.join(root, "den")])

    config = os.path.join(root, "run.cfg")
    with open(config, "w", encoding="utf-8") as f:
        f.write(
            f"scores_path={split}/db_scores.uhsm\n"
            f"features_path={split}/db_features.uhsf\n"
            "sim_mode=concept\ntau_mode=3m\n"
            f"out_dir={root}/run\n"
            "code_bits=32\nepochs=30\nseed=7\n"
        )
    run(["train", "--config", config])
    run(["encode", "--model", f"{root}/run/model.uhsw",
         "--features", f"{split}/db_features.uhsf", "--out", f"{root}/db.uhsb"])
    run(["encode", "--model", f"{root}/run/model.uhsw",
         "--features", f"{split}/q_features.uhsf", "--out", f"{root}/q.uhsb"])
    run(["eval", "--query-codes", f"{root}/q.uhsb", "--db-codes", f"{root}/db.uhsb",
         "--query-labels", f"{split}/q_labels.tsv",
         "--db-labels", f"{split}/db_labels.tsv",
         "--topn", 100, "--out", f"{root}/rep"])

    history = [
        float(line.split(",")[1])
        for line in open(f"{root}/run/loss_history.csv").read().splitlines()[1:]
    ]
    map_value = float(open(f"{root}/rep/map.csv").read().splitlines()[1].split(",")[0])
    return {
        "history": history,
        "map": map_value,
        "features": features,
        "labels": labels,
        "q_idx": q_idx,
        "db_idx": db_idx,
        "artifacts": [
            f"{root}/run/model.uhsw",
            f"{root}/run/loss_history.csv",
            f"{root}/db.uhsb",
            f"{root}/q.uhsb",
            f"{root}/rep/map.csv",
            f"{root}/rep/p_at_n.csv",
            f"{root}/rep/pr.csv",
        ],
    }


@criterion("synthetic end-to-end (MAP@100 >= 0.95, loss decreases, < 2 min)")
def test_synthetic_end_to_end(tmp_path):
    start = time.time()
    result = run_synthetic_pipeline(str(tmp_path))

    # headroom: brute-force cosine retrieval on the raw features must be
    # achievable on this data before the hashed version is held to 0.95
    features, labels = result["features"], result["labels"]
    q_idx, db_idx = result["q_idx"], result["db_idx"]
    rows = features.features.astype(np.float64)
    unit = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    sims = unit[q_idx] @ unit[db_idx].T
    aps = []
    for r in range(len(q_idx)):
        order = np.lexsort((np.arange(len(db_idx)), -sims[r]))[:100]
        flags = [
            not labels.labels[q_idx[r]].isdisjoint(labels.labels[db_idx[j]])
            for j in order
        ]
        aps.append(textbook_ap(flags))
    headroom = sum(aps) / len(aps)
    assert headroom >= 0.99, f"feature-cosine reference reached only {headroom}"

    assert result["map"] >= 0.95, f"MAP@100 = {result['map']}"
    assert result["history"][-1] < result["history"][0]
    assert len(result["history"]) == 30
    elapsed = time.time() - start
    assert elapsed < 120.0, f"took {elapsed:.1f}s"


@criterion("determinism (same seed -> byte-identical artifacts)")
def test_end_to_end_determinism(tmp_path):
    first = run_synthetic_pipeline(str(tmp_path / "one"))
    second = run_synthetic_pipeline(str(tmp_path / "two"))
    for a, b in zip(first["artifacts"], second["artifacts"]):
        assert os.path.basename(a) == os.path.basename(b)
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read(), f"{os.path.basename(a)} differs"

"""Acceptance gate: nine standalone criteria, one pass/fail line each.

Each test prints its verdict outside pytest's capture so the lines are
visible in any run mode. Criteria 1 and 2 share one 5,000-frame ingest via a
module fixture; everything else builds its own inputs.
"""

import threading
import time

import numpy as np
import pytest
from scipy.spatial import Delaunay

from streammem import (
    AttentionParams,
    FrameFeature,
    MemoryEngine,
    average_pool,
    bench_latency,
    default_config,
    max_tokens,
    retrieve_key_features,
    semantic_attention,
    semantic_attention_grad,
    synth_stream,
    weighted_kmeans,
)
from oracles import finite_difference, retrieve_bruteforce

import streammem


def _verdict(capsys, cid: str, ok: bool, description: str) -> None:
    line = f"ACCEPTANCE {cid} {'PASS' if ok else 'FAIL'}: {description}"
    with capsys.disabled():
        print(line, flush=True)
    assert ok, line


@pytest.fixture(scope="module")
def long_run():
    """5,000-frame ingest shared by criteria 1 and 2."""
    config = default_config(dim=16)
    engine = MemoryEngine(config)
    stream = synth_stream(0, 5000, 4, 8, 16)
    token_counts = []
    worst_weight_err = 0.0
    t0 = time.perf_counter()
    for t, frame in enumerate(stream, start=1):
        engine.ingest_frame(frame)
        token_counts.append(engine.read_snapshot().token_count)
        worst_weight_err = max(
            worst_weight_err, abs(float(engine.temporal_weights.sum()) - t)
        )
    elapsed = time.perf_counter() - t0
    return config, token_counts, worst_weight_err, elapsed


def test_criterion_1_budget_identity(long_run, capsys):
    config, token_counts, _, elapsed = long_run
    budget = max_tokens(config)
    over_cap = [t for t, n in enumerate(token_counts, start=1) if t >= 26 and n != budget]
    ok = budget == 681 and not over_cap and elapsed < 60.0
    _verdict(
        capsys, "C1", ok,
        f"snapshot token count == 681 for every t >= 26 over 5000 frames "
        f"(violations: {len(over_cap)}, ingest {elapsed:.1f}s < 60s)",
    )


def test_criterion_2_weight_conservation(long_run, capsys):
    _, _, worst_weight_err, _ = long_run
    ok = worst_weight_err <= 1e-9
    _verdict(
        capsys, "C2", ok,
        f"sum of temporal weights == frames ingested after all 5000 frames "
        f"(worst |error| {worst_weight_err:.2e} <= 1e-9)",
    )


def test_criterion_3_clustering_oracle(capsys):
    failures = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 7))
        d = int(rng.integers(1, 5))
        k = int(rng.integers(1, min(3, n) + 1))
        points = rng.normal(size=(n, d))
        weights = rng.integers(1, 5, size=n).astype(float)
        warm = seed % 2 == 0

        state = weighted_kmeans(points, weights, k, max_iters=10,
                                warm_start=warm, seed=seed)
        hist = state.objective_history
        monotone = all(hist[i + 1] <= hist[i] + 1e-12 for i in range(len(hist) - 1))

        flat = points.reshape(n, -1)
        means_ok = True
        for c in range(k):
            members = state.assignments == c
            mean = (weights[members, None] * flat[members]).sum(axis=0)
            mean /= weights[members].sum()
            if np.max(np.abs(state.centroids[c].reshape(-1) - mean)) > 1e-9:
                means_ok = False

        rerun = weighted_kmeans(points, weights, k, max_iters=10,
                                warm_start=warm, seed=seed)
        exact = (
            state.centroids.tobytes() == rerun.centroids.tobytes()
            and state.weights.tobytes() == rerun.weights.tobytes()
            and state.assignments.tobytes() == rerun.assignments.tobytes()
        )
        if not (monotone and means_ok and exact):
            failures += 1
    _verdict(
        capsys, "C3", failures == 0,
        f"weighted k-means: monotone objective, centroids = weighted means "
        f"(1e-9), bit-exact reruns on {200 - failures}/200 toy instances",
    )


def test_criterion_4_retrieval_oracle(capsys):
    mismatches = 0
    for seed in range(500):
        rng = np.random.default_rng(1000 + seed)
        d = int(rng.integers(1, 5))
        b = int(rng.integers(2, 11))
        k = int(rng.integers(1, 9))
        n_ret = int(rng.integers(1, 5))
        config = default_config(
            p_spa=4, p_tem=2, p_abs=1, dim=d, n_tem=8, n_ret=min(n_ret, 8), n_buff=16
        )
        buffer = [
            FrameFeature.from_array(rng.normal(size=(4, 4, d))) for _ in range(b)
        ]
        centroids = rng.normal(size=(k, 2, 2, d))
        weights = rng.integers(1, 6, size=k).astype(float)

        got = retrieve_key_features(buffer, centroids, weights, config)
        got_idx = [next(i for i, f in enumerate(buffer) if f is g) for g in got]

        pooled = [average_pool(f, 2).tokens for f in buffer]
        want_idx = retrieve_bruteforce(pooled, centroids, weights, config.n_ret)
        if got_idx != want_idx:
            mismatches += 1
    _verdict(
        capsys, "C4", mismatches == 0,
        f"retrieval matches brute-force nearest-neighbor scan on 500 random "
        f"instances ({mismatches} mismatches)",
    )


def test_criterion_5_attention_correctness(capsys):
    # Softmax row sums, read back through the update: with the last input
    # column pinned to 1, (out - (1-a)*A)[:, -1] is exactly the row sum.
    worst_row_err = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n_abs = int(rng.integers(1, 5))
        n = int(rng.integers(1, 5))
        d = int(rng.integers(2, 6))
        params = AttentionParams.seeded(d, seed=seed, decay_alpha=0.1)
        abstract = rng.normal(size=(n_abs, d))
        new = rng.normal(size=(n, d))
        new[:, -1] = 1.0
        out = semantic_attention(abstract, new, params, scale=seed % 2 == 0)
        row_sums = out[:, -1] - (1.0 - params.decay_alpha) * abstract[:, -1]
        worst_row_err = max(worst_row_err, float(np.max(np.abs(row_sums - 1.0))))
    rows_ok = worst_row_err <= 1e-9

    worst_rel = 0.0
    for seed in range(20):
        rng = np.random.default_rng(500 + seed)
        n_abs = int(rng.integers(1, 4))
        n = int(rng.integers(1, 4))
        d = int(rng.integers(2, 5))
        alpha = float(rng.choice([0.1, 0.5, 0.9]))
        scale = seed % 2 == 1
        params = AttentionParams.seeded(d, seed=seed, decay_alpha=alpha)
        abstract = rng.normal(size=(n_abs, d))
        new = rng.normal(size=(n, d))
        upstream = rng.normal(size=(n_abs, d))

        grads = semantic_attention_grad(abstract, new, params, upstream, scale=scale)
        for x, analytic in (
            (abstract, grads.abstract),
            (new, grads.new_features),
            (params.key_proj, grads.key_proj),
            (params.query_proj, grads.query_proj),
        ):
            writable = x.copy()
            live = {"abstract": abstract, "new": new,
                    "key": params.key_proj, "query": params.query_proj}
            for name, arr in live.items():
                if arr is x:
                    live[name] = writable

            def loss():
                p = AttentionParams(key_proj=live["key"], query_proj=live["query"],
                                    decay_alpha=alpha)
                return float(np.sum(
                    upstream * semantic_attention(live["abstract"], live["new"],
                                                  p, scale=scale)
                ))

            fd = finite_difference(loss, writable, eps=1e-5)
            rel = np.linalg.norm(fd - analytic) / max(np.linalg.norm(analytic), 1e-12)
            worst_rel = max(worst_rel, float(rel))
    grads_ok = worst_rel < 1e-3
    _verdict(
        capsys, "C5", rows_ok and grads_ok,
        f"softmax rows sum to 1 on 100 cases (worst {worst_row_err:.2e} <= 1e-9); "
        f"analytic vs central-difference gradients on 20 cases "
        f"(worst rel {worst_rel:.2e} < 1e-3)",
    )


def test_criterion_6_concurrency_safety(capsys):
    total_violations = 0
    total_reads = 0
    for run in range(3):
        config = default_config(dim=8)
        engine = MemoryEngine(config)
        stream = synth_stream(run, 10_000, 4, 8, 8)
        stop = threading.Event()
        violations = [0, 0, 0, 0]
        reads = [0, 0, 0, 0]

        def reader(slot: int) -> None:
            last_version = -1
            while not stop.is_set():
                snap = engine.read_snapshot()
                if not snap.verify_checksum():
                    violations[slot] += 1
                if snap.version < last_version:
                    violations[slot] += 1
                last_version = snap.version
                reads[slot] += 1
                time.sleep(1e-3)  # pace the spin so the writer keeps moving

        threads = [threading.Thread(target=reader, args=(i,)) for i in range(4)]
        for th in threads:
            th.start()
        try:
            for frame in stream:
                engine.ingest_frame(frame)
        finally:
            stop.set()
            for th in threads:
                th.join()
        total_violations += sum(violations)
        total_reads += sum(reads)
        assert engine.frames_ingested == 10_000
    _verdict(
        capsys, "C6", total_violations == 0,
        f"4 readers x 3 runs x 10000 frames: {total_reads} reads, "
        f"{total_violations} checksum/monotonicity violations",
    )


def test_criterion_7_flat_latency(capsys):
    t0 = time.perf_counter()
    config = default_config(dim=32)
    engine_report = bench_latency(config, (1000, 10_000), 32, seed=0)
    baseline = bench_latency(config, (1000, 10_000), 32, seed=0, keep_all=True)
    elapsed = time.perf_counter() - t0

    flatness = engine_report.flatness_ratio()
    banks = [r.bank_tokens for r in engine_report.rows]
    base_tokens = [r.bank_tokens for r in baseline.rows]
    ok = (
        flatness <= 1.5
        and banks == [681, 681]
        and base_tokens == [64_000, 640_000]
        and elapsed < 300.0
    )
    _verdict(
        capsys, "C7", ok,
        f"median read at 10k frames is {flatness:.2f}x the 1k median (<= 1.5x), "
        f"bank tokens constant at 681, keep-all grows 64000 -> 640000 "
        f"(bench {elapsed:.0f}s < 300s)",
    )


def test_criterion_8_scene_structure(capsys):
    config = default_config(p_spa=4, p_tem=2, p_abs=1, dim=6, n_abs=5)
    passed = 0
    for seed in range(10):
        stream = synth_stream(seed, 30, 3, 4, 6)
        engine = MemoryEngine(config)
        centroid_scene = list(stream.scene_ids[: config.n_tem])
        raw = []
        pure = True
        for idx, frame in enumerate(stream):
            engine.ingest_frame(frame)
            raw.append(frame)
            state = engine.last_cluster_state
            if state is None:
                continue
            member_scene = centroid_scene + [stream.scene_ids[idx]]
            scenes = [set() for _ in range(config.n_tem)]
            for point, cluster in enumerate(state.assignments):
                scenes[cluster].add(member_scene[point])
            if any(len(s) != 1 for s in scenes):
                pure = False
                break
            centroid_scene = [s.pop() for s in scenes]
        if not pure:
            continue

        export = streammem.export_memory_pca(engine.read_snapshot(), raw)
        n_mem = engine.read_snapshot().token_count
        mem, raw_xy = export.coords[:n_mem], export.coords[n_mem:]
        tem_rows = [i for i, b in enumerate(export.banks[:n_mem]) if b == "temporal"]
        per_centroid = config.p_tem ** 2
        per_frame = 16
        contained = True
        for pos, row in enumerate(tem_rows):
            scene = centroid_scene[pos // per_centroid]
            scene_rows = [
                f * per_frame + j
                for f in range(30)
                if stream.scene_ids[f] == scene
                for j in range(per_frame)
            ]
            hull = Delaunay(raw_xy[scene_rows])
            if hull.find_simplex(mem[row]) < 0:
                contained = False
        if contained:
            passed += 1
    _verdict(
        capsys, "C8", passed == 10,
        f"temporal centroids project inside their own scene's raw-token hull "
        f"on {passed}/10 seeds (30 frames, 3 scenes)",
    )


def test_criterion_9_out_of_scope(capsys):
    # End-to-end QA accuracy needs trained vision/language models and an LLM
    # judge; the engine deliberately exposes no such surface.
    banned = ("qa", "accuracy", "vqa", "judge", "llm")
    leaked = [
        name for name in streammem.__all__
        if any(term in name.lower() for term in banned)
    ]
    _verdict(
        capsys, "C9", leaked == [],
        "question-answering accuracy evaluation is out of scope (needs trained "
        "vision/language models and an external judge); the public API exposes "
        f"no such surface (leaked: {leaked})",
    )

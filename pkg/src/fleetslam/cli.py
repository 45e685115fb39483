"""Experiment harness.

Subcommands:
  generate    write a synthetic dataset (manhattan g2o file or scenario bundle)
  pcm-bench   batch vs incremental clique search as loop closures stream in
  dpgo-bench  trajectory estimation: local PGO / RBCD / RBCD-ES / centralized
  run         full pipeline on a scenario bundle (protocol + meshes + reports)
  report      summarize the artifacts of a previous run
  print-config  dump the fully resolved configuration

Exit codes: 0 ok, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import time
from statistics import median

import numpy as np

from . import __version__, dpgo, mesh_deform, multirobot, pcm, pose_graph
from .config import (
    BenchConfig,
    DatasetConfig,
    ExperimentConfig,
    config_hash,
    dump_config,
    load_config,
)
from .errors import ConfigError, FleetSlamError


def _load_dataset(cfg: ExperimentConfig) -> pose_graph.MultiRobotPoseGraph:
    ds = cfg.dataset
    if ds.kind == "manhattan":
        return pose_graph.generate_manhattan(
            ds.poses,
            step=ds.step,
            noise=(ds.sigma_rot, ds.sigma_trans),
            loop_prob=ds.loop_prob,
            rng_seed=cfg.seed,
            grid_size=ds.grid_size,
        )
    if ds.kind == "g2o":
        with open(ds.path) as fh:
            return pose_graph.parse_g2o(fh.read())
    raise ConfigError(f"dataset kind {ds.kind!r} is not a pose graph source")


def _write(out_dir: str, name: str, text: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def _manifest(cfg: ExperimentConfig, out_dir: str):
    manifest = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "package_version": __version__,
        "numpy_version": np.__version__,
    }
    _write(out_dir, "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_generate(cfg: ExperimentConfig, args) -> int:
    if args.what == "manhattan":
        graph = _load_dataset(cfg)
        if cfg.outliers:
            graph = pose_graph.inject_outliers(graph, cfg.outliers, rng_seed=cfg.seed + 1)
        text = pose_graph.serialize_g2o(graph, graph.ground_truth)
        os.makedirs(os.path.dirname(os.path.abspath(args.out_path)), exist_ok=True)
        with open(args.out_path, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out_path}: {graph.num_keys} poses, "
              f"{len(graph.measurements)} measurements")
        return 0
    if args.what == "scenario":
        import dataclasses

        scen_cfg = dataclasses.replace(
            cfg.scenario, n_robots=cfg.robots, seed=cfg.seed
        )
        scenario = multirobot.generate_scenario(scen_cfg)
        multirobot.save_scenario(scenario, args.out_path)
        print(
            f"wrote scenario bundle {args.out_path}: {len(scenario.robots)} robots, "
            f"{scenario.total_keyframes()} keyframes"
        )
        return 0
    raise ConfigError(f"unknown generate target {args.what!r}")


def _timed(fn, repetitions: int):
    """Median wall time over `repetitions` runs; result from the first."""
    result = None
    times = []
    for k in range(max(1, repetitions)):
        t0 = time.perf_counter()
        out = fn()
        times.append((time.perf_counter() - t0) * 1e3)
        if k == 0:
            result = out
    return result, median(times)


def cmd_pcm_bench(cfg: ExperimentConfig, out_dir: str) -> int:
    graph = _load_dataset(cfg)
    if cfg.outliers:
        graph = pose_graph.inject_outliers(graph, cfg.outliers, rng_seed=cfg.seed + 1)
    chains = pcm.OdometryChains(graph)
    candidates = [
        pcm.CandidateLoop(m, k) for k, (_, m) in enumerate(graph.loops())
    ]
    kept = [
        c
        for c in candidates
        if pcm.odometry_consistency_filter(c, graph, cfg.pcm, chains)
    ]
    order = np.arange(len(kept))
    if cfg.bench.shuffle:
        order = np.random.default_rng(cfg.seed + 2).permutation(len(kept))
    sequence = [
        pcm.CandidateLoop(kept[i].measurement, k)
        for k, i in enumerate(order[: cfg.bench.pcm_max_vertices])
    ]

    out = io.StringIO()
    out.write("n_vertices,batch_ms,incremental_ms,batch_clique,incremental_clique\n")
    if not sequence:
        out.write("0,0.0,0.0,0,0\n")
    graph_cg = pcm.ConsistencyGraph(graph, cfg.pcm)
    prev = pcm.CliqueResult(members=frozenset(), size=0, is_exact=False, explored_nodes=0)
    cum_batch = cum_inc = 0.0
    step = cfg.bench.pcm_batch
    for start in range(0, len(sequence), step):
        graph_cg.add_candidates(sequence[start : start + step])
        batch_res, batch_ms = _timed(
            lambda: pcm.max_clique_batch(graph_cg), cfg.bench.repetitions
        )
        frontier = list(graph_cg.frontier)

        def run_incremental():
            graph_cg.frontier = list(frontier)
            return pcm.max_clique_incremental(graph_cg, prev)

        inc_res, inc_ms = _timed(run_incremental, cfg.bench.repetitions)
        prev = inc_res
        cum_batch += batch_ms
        cum_inc += inc_ms
        out.write(
            f"{len(graph_cg)},{batch_ms:.3f},{inc_ms:.3f},"
            f"{batch_res.size},{inc_res.size}\n"
        )
    path = _write(out_dir, "pcm_bench.csv", out.getvalue())
    _manifest(cfg, out_dir)
    print(
        f"pcm-bench: {len(sequence)} vertices, cumulative batch {cum_batch:.0f} ms, "
        f"incremental {cum_inc:.0f} ms -> {path}"
    )
    return 0


def _method_rows(cfg: ExperimentConfig, graph) -> list[dict]:
    import dataclasses

    truth = graph.ground_truth
    rows = []

    def evaluate(name, trajectory, cost, iterations, wall_ms):
        ate = (
            pose_graph.ate(trajectory, truth) if truth is not None else float("nan")
        )
        rows.append(
            dict(
                method=name,
                ate_m=ate,
                pgo_cost=cost,
                iterations=iterations,
                wall_ms=wall_ms,
            )
        )

    t0 = time.perf_counter()
    local = dpgo.local_pgo_baseline(graph)
    evaluate(
        "local_pgo",
        local,
        pose_graph.pgo_cost(graph, local),
        0,
        (time.perf_counter() - t0) * 1e3,
    )

    t0 = time.perf_counter()
    lifted, trace = dpgo.rbcd_solve(graph, cfg.rbcd)
    rounded = dpgo.round_solution(lifted)
    evaluate(
        "rbcd",
        rounded,
        pose_graph.pgo_cost(graph, rounded),
        len(trace.rows),
        (time.perf_counter() - t0) * 1e3,
    )
    rbcd_trace = trace

    es_cfg = dataclasses.replace(cfg.rbcd, early_stop_iterations=50)
    t0 = time.perf_counter()
    lifted_es, trace_es = dpgo.rbcd_solve(graph, es_cfg)
    rounded_es = dpgo.round_solution(lifted_es)
    evaluate(
        "rbcd_es",
        rounded_es,
        pose_graph.pgo_cost(graph, rounded_es),
        len(trace_es.rows),
        (time.perf_counter() - t0) * 1e3,
    )

    t0 = time.perf_counter()
    central, cost = dpgo.centralized_solve(graph)
    evaluate(
        "centralized",
        central,
        pose_graph.pgo_cost(graph, central),
        0,
        (time.perf_counter() - t0) * 1e3,
    )
    return rows, rbcd_trace


def cmd_dpgo_bench(cfg: ExperimentConfig, out_dir: str) -> int:
    graph = _load_dataset(cfg)
    if len(graph.robots) == 1 and cfg.robots > 1:
        graph = pose_graph.partition(graph, cfg.robots)
    dataset_name = cfg.dataset.path or f"manhattan-{cfg.dataset.poses}"
    rows, trace = _method_rows(cfg, graph)
    out = io.StringIO()
    out.write("dataset,method,ate_m,pgo_cost,iterations,wall_ms\n")
    for row in rows:
        out.write(
            f"{dataset_name},{row['method']},{row['ate_m']:.6f},"
            f"{row['pgo_cost']:.6f},{row['iterations']},{row['wall_ms']:.1f}\n"
        )
    path = _write(out_dir, "dpgo_bench.csv", out.getvalue())
    _write(out_dir, "rbcd_trace.csv", trace.to_csv())
    _manifest(cfg, out_dir)
    for row in rows:
        print(
            f"{row['method']:>12}: ate {row['ate_m']:.4f} m, cost {row['pgo_cost']:.2f}"
        )
    print(f"-> {path}")
    return 0


def cmd_run(cfg: ExperimentConfig, out_dir: str) -> int:
    if cfg.dataset.kind != "scenario":
        raise ConfigError("run requires dataset.kind == 'scenario'")
    scenario = multirobot.load_scenario(cfg.dataset.path)
    result = multirobot.run_protocol(scenario, config=cfg.protocol_config())

    _write(out_dir, "trajectory.tum", pose_graph.write_tum(result.trajectory))
    for trace_idx, trace in enumerate(result.solver_traces):
        _write(out_dir, f"rbcd_trace_{trace_idx:02d}.csv", trace.to_csv())

    report = multirobot.bandwidth_report(result.ledger, scenario, cfg.wire)
    _write(out_dir, "bandwidth.csv", report.to_csv())

    accuracy = io.StringIO()
    accuracy.write("robot_id,stage,mean_distance_m,label_accuracy\n")
    merged_raw = []
    merged_lmo = []
    merged_truth = []
    frames = dpgo.align_robot_frames(
        pose_graph.MultiRobotPoseGraph(
            [m for r in scenario.robots for m in r.odometry] + result.inlier_loops
        ),
        {
            r.robot_id: [
                r.odometric_trajectory()[k]
                for k in sorted(r.odometric_trajectory())
            ]
            for r in scenario.robots
        },
    )
    for robot in scenario.robots:
        truth_mesh = scenario.truth_meshes[robot.robot_id]
        simplified, vmap = mesh_deform.simplify_mesh(robot.mesh, cfg.simplify_cell)
        observations = {
            key: sorted({int(vmap[v]) for v in obs})
            for key, obs in robot.observations.items()
        }
        keyframes = [
            (k, robot.odometric_trajectory()[k])
            for k in sorted(robot.ground_truth)
        ]
        graph = mesh_deform.build_deformation_graph(simplified, keyframes, observations)
        anchors = result.anchors[robot.robot_id]
        res = mesh_deform.lmo_optimize(graph, anchors, cfg.lmo)
        deformed = mesh_deform.interpolate_vertices(robot.mesh, graph, res, cfg.lmo)
        mesh_deform.save_ply(
            deformed, os.path.join(out_dir, f"mesh_robot{robot.robot_id:02d}_lmo.ply")
        )

        dist_raw, acc_raw = mesh_deform.mesh_accuracy(
            robot.mesh, truth_mesh, cfg.bench.sample_density, seed=cfg.seed
        )
        dist_lmo, acc_lmo = mesh_deform.mesh_accuracy(
            deformed, truth_mesh, cfg.bench.sample_density, seed=cfg.seed
        )
        accuracy.write(
            f"{robot.robot_id},raw,{dist_raw:.6f},{-1.0 if acc_raw is None else acc_raw:.6f}\n"
        )
        accuracy.write(
            f"{robot.robot_id},lmo,{dist_lmo:.6f},{-1.0 if acc_lmo is None else acc_lmo:.6f}\n"
        )

        # merged meshes: raw placed by single-loop frame alignment, LMO
        # meshes are already in the shared frame
        frame = frames[robot.robot_id]
        placed = robot.mesh.copy()
        placed.vertices = frame.apply(placed.vertices)
        merged_raw.append(placed)
        merged_lmo.append(deformed)
        merged_truth.append(truth_mesh)

    def merge(meshes):
        verts = np.concatenate([m.vertices for m in meshes])
        offsets = np.cumsum([0] + [m.n_vertices for m in meshes][:-1])
        faces = np.concatenate(
            [m.faces + off for m, off in zip(meshes, offsets)]
        )
        labels = np.concatenate([m.labels for m in meshes])
        return mesh_deform.TriMesh(verts, faces, labels)

    truth_merged = merge(merged_truth)
    for stage, meshes in (("raw", merged_raw), ("lmo", merged_lmo)):
        dist, acc = mesh_deform.mesh_accuracy(
            merge(meshes), truth_merged, cfg.bench.sample_density, seed=cfg.seed
        )
        accuracy.write(f"merged,{stage},{dist:.6f},{-1.0 if acc is None else acc:.6f}\n")
    _write(out_dir, "accuracy.csv", accuracy.getvalue())
    _manifest(cfg, out_dir)

    truth = scenario.ground_truth()
    ate = pose_graph.ate(result.trajectory, truth)
    print(
        f"run: ate {ate:.4f} m, inliers {len(result.inlier_loops)}/"
        f"{len(result.accepted_loops)}, total {report.total_bytes / 2**20:.2f} MB "
        f"(keypoint baseline {report.centralized_keypoints_bytes / 2**20:.2f} MB)"
    )
    print(f"artifacts -> {out_dir}")
    return 0


def cmd_report(args) -> int:
    out_dir = args.dir
    for name in ("pcm_bench.csv", "dpgo_bench.csv", "bandwidth.csv", "accuracy.csv"):
        path = os.path.join(out_dir, name)
        if os.path.exists(path):
            print(f"== {name}")
            with open(path) as fh:
                sys.stdout.write(fh.read())
    manifest = os.path.join(out_dir, "manifest.json")
    if os.path.exists(manifest):
        print("== manifest.json")
        with open(manifest) as fh:
            sys.stdout.write(fh.read())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fleetslam", description="distributed multi-robot SLAM experiments"
    )
    parser.add_argument("--config", help="YAML experiment config")
    parser.add_argument("--seed", type=int, help="override random seed")
    parser.add_argument("--out", help="override output directory")
    parser.add_argument("--robots", type=int, help="override robot count")
    parser.add_argument("--outliers", type=int, help="override injected outlier count")
    parser.add_argument("--rank", type=int, help="override relaxation rank")
    parser.add_argument(
        "--early-stop", type=int, help="cap solver iterations (ES variant)"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic dataset")
    gen.add_argument("what", choices=["manhattan", "scenario"])
    gen.add_argument("out_path")

    sub.add_parser("pcm-bench", help="batch vs incremental clique search")
    sub.add_parser("dpgo-bench", help="trajectory estimation benchmark")
    sub.add_parser("run", help="full pipeline on a scenario bundle")

    rep = sub.add_parser("report", help="print the artifacts of a run")
    rep.add_argument("dir")

    sub.add_parser("print-config", help="dump the resolved configuration")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {
            "seed": args.seed,
            "out": args.out,
            "robots": args.robots,
            "outliers": args.outliers,
        }
        cfg = load_config(args.config, overrides)
        if args.rank is not None or args.early_stop is not None:
            import dataclasses

            rbcd = dataclasses.replace(
                cfg.rbcd,
                **{
                    k: v
                    for k, v in (
                        ("rank", args.rank),
                        ("early_stop_iterations", args.early_stop),
                    )
                    if v is not None
                },
            )
            cfg = dataclasses.replace(cfg, rbcd=rbcd)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "print-config":
            sys.stdout.write(dump_config(cfg))
            return 0
        if args.command == "generate":
            return cmd_generate(cfg, args)
        if args.command == "pcm-bench":
            return cmd_pcm_bench(cfg, cfg.out)
        if args.command == "dpgo-bench":
            return cmd_dpgo_bench(cfg, cfg.out)
        if args.command == "run":
            return cmd_run(cfg, cfg.out)
        if args.command == "report":
            return cmd_report(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FleetSlamError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

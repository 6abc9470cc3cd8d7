"""Command-line harness.

Subcommands:
  run          one episode (by seed or scene file)
  bench        a suite of episodes with aggregate SR / SPL / SoftSPL
  gen-scene    write a procedural scene file
  verify-bound sweep the batched-prompt cost model against its ratio bound
  render-trace render an executed trace over the scene map as a PPM image

The http provider reads GRAPHNAV_LLM_URL, GRAPHNAV_LLM_MODEL and
GRAPHNAV_LLM_TOKEN from the environment.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .agent import run_benchmark, run_episode
from .config import AblationFlags, EpisodeConfig, SceneParams
from .llm import CostModel, bound_coefficient, estimate_cost, verify_complexity_bound
from .simulator import Scene, generate_scene


def _add_ablation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-reperception", action="store_true",
                   help="trust the first detected goal candidate outright")
    p.add_argument("--no-scene-graph", action="store_true",
                   help="ignore scores; explore the nearest frontier")
    p.add_argument("--no-rooms", action="store_true", help="drop room nodes")
    p.add_argument("--no-groups", action="store_true", help="drop group nodes")
    p.add_argument("--edges", choices=["none", "short", "long", "all"], default="all")
    p.add_argument("--prompting", choices=["cot", "flat-text"], default="cot")


def _add_episode_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scene", type=Path, default=None, help="scene file instead of a seed")
    p.add_argument("--goal", type=str, default=None)
    p.add_argument("--provider", choices=["scripted", "http"], default="scripted")
    p.add_argument("--script", type=Path, default=None,
                   help="pattern/response file for the scripted provider")
    p.add_argument("--rooms", type=int, default=3)
    p.add_argument("--false-positives", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=500)
    p.add_argument("--out-dir", type=Path, default=None)
    _add_ablation_flags(p)


def _episode_config(args, seed: int | None = None) -> EpisodeConfig:
    ablations = AblationFlags(
        reperception=not args.no_reperception,
        scene_graph=not args.no_scene_graph,
        rooms=not args.no_rooms,
        groups=not args.no_groups,
        edges=args.edges,
        prompting=args.prompting,
    )
    return EpisodeConfig(
        seed=args.seed if seed is None else seed,
        scene_path=args.scene,
        goal=args.goal,
        max_steps=args.max_steps,
        provider=args.provider,
        script_path=args.script,
        out_dir=args.out_dir,
        ablations=ablations,
        scene_params=SceneParams(
            n_rooms=args.rooms, n_false_positives=args.false_positives
        ),
    )


def cmd_run(args) -> int:
    result = run_episode(_episode_config(args))
    print(json.dumps(
        {k: v for k, v in result.to_dict().items() if k not in ("trace", "explanations")},
        indent=2,
    ))
    for exp in result.explanations:
        print(f"[step {exp['step']}] frontier {exp['frontier_id']}: {exp['text']}")
    return 0 if result.success else 1


def cmd_bench(args) -> int:
    seeds = _parse_seeds(args.seeds)
    configs = [_episode_config(args, seed=s) for s in seeds]
    report = run_benchmark(configs, jobs=args.jobs)
    print(report.table())
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        report.save(args.out_dir / "report.json")
        print(f"report written to {args.out_dir / 'report.json'}")
    return 0


def _parse_seeds(spec: str) -> list[int]:
    if ":" in spec:
        lo, hi = spec.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in spec.split(",") if s]


def cmd_gen_scene(args) -> int:
    params = SceneParams(
        n_rooms=args.rooms,
        n_false_positives=args.false_positives,
        goal_category=args.goal,
    )
    scene = generate_scene(args.seed, params)
    scene.save(args.out)
    print(f"scene seed={args.seed} rooms={args.rooms} goal={scene.goal_category!r} -> {args.out}")
    return 0


def cmd_verify_bound(args) -> int:
    model = CostModel(l_pro=args.l_pro, r=args.r, alpha=args.alpha)
    violation = verify_complexity_bound(model, c=args.c)
    coef = bound_coefficient(5, 100, r=args.r, alpha=args.alpha)
    print(f"coefficient at (m=5, n=100): {coef:.5f}")
    for m, n in [(1, 1), (2, 50), (5, 100)]:
        t_our, t_naive, ratio = estimate_cost(model, m, n)
        print(f"m={m:>2} n={n:>3}: ratio={ratio:.6f} bound={args.c / (m + n):.6f}")
    if violation is None:
        print(f"bound ratio < {args.c}/(m+n) holds on the full sweep")
        return 0
    _, _, ratio = estimate_cost(model, *violation)
    print(f"bound ratio < {args.c}/(m+n) FAILS first at (m={violation[0]}, n={violation[1]})"
          f": ratio={ratio:.6f} vs {args.c / sum(violation):.6f}")
    return 1


def cmd_render_trace(args) -> int:
    scene = Scene.load(args.scene)
    trace = json.loads(Path(args.trace).read_text())
    out = render_trace_ppm(scene, trace)
    Path(args.out).write_bytes(out)
    print(f"rendered {len(trace)} steps -> {args.out}")
    return 0


def render_trace_ppm(scene: Scene, trace: list[dict]) -> bytes:
    """Scene map with the executed path in red, start green, goals blue."""
    import numpy as np

    grid = scene.gt_grid
    cfg = grid.config
    lut = np.zeros((3, 3), dtype=np.uint8)
    lut[0] = (128, 128, 128)
    lut[1] = (255, 255, 255)
    lut[2] = (0, 0, 0)
    img = lut[grid.cells]

    def paint(x: float, y: float, color, radius: int = 1) -> None:
        ix, iy = grid.world_to_cell(x, y)
        for ox in range(-radius, radius + 1):
            for oy in range(-radius, radius + 1):
                nx, ny = ix + ox, iy + oy
                if 0 <= nx < cfg.width and 0 <= ny < cfg.height:
                    img[nx, ny] = color

    for rec in trace:
        paint(rec["x"], rec["y"], (220, 40, 40), radius=1)
    paint(scene.start.x, scene.start.y, (40, 200, 40), radius=3)
    by_id = {o.id: o for o in scene.objects}
    for gid in scene.goal_ids:
        paint(by_id[gid].x, by_id[gid].y, (40, 80, 230), radius=3)
    rows = img.transpose(1, 0, 2)[::-1]
    header = f"P6\n{cfg.width} {cfg.height}\n255\n".encode()
    return header + rows.tobytes()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphnav",
        description="scene-graph-guided object navigation on a synthetic simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one episode")
    _add_episode_args(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_bench = sub.add_parser("bench", help="run an episode suite")
    _add_episode_args(p_bench)
    p_bench.add_argument("--seeds", type=str, default="1:10",
                         help="comma list or lo:hi range")
    p_bench.add_argument("--jobs", type=int, default=1)
    p_bench.set_defaults(fn=cmd_bench)

    p_gen = sub.add_parser("gen-scene", help="generate a scene file")
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--rooms", type=int, default=3)
    p_gen.add_argument("--false-positives", type=int, default=0)
    p_gen.add_argument("--goal", type=str, default=None)
    p_gen.add_argument("--out", type=Path, required=True)
    p_gen.set_defaults(fn=cmd_gen_scene)

    p_bound = sub.add_parser("verify-bound", help="sweep the cost-model ratio bound")
    p_bound.add_argument("--l-pro", type=int, default=1000)
    p_bound.add_argument("--alpha", type=float, default=0.01)
    p_bound.add_argument("--r", type=float, default=2.0)
    p_bound.add_argument("--c", type=float, default=5.49)
    p_bound.set_defaults(fn=cmd_verify_bound)

    p_render = sub.add_parser("render-trace", help="render a trace over the map")
    p_render.add_argument("--scene", type=Path, required=True)
    p_render.add_argument("--trace", type=Path, required=True)
    p_render.add_argument("--out", type=Path, required=True)
    p_render.set_defaults(fn=cmd_render_trace)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: synthesize, verify, generate suites, benchmark.

Exit codes: 0 success, 1 internal error, 2 invalid input, 3 verification
failure.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
import time
from dataclasses import dataclass

from .core import DistDim, DistType, Mesh
from .cost import plan_cost
from .errors import InvalidRedistribution, ParseError, RedistError
from .normalizer import naive_sequence
from .search import SynthesisOptions, synthesize
from .simulator import verify
from .syntax import parse_mesh, parse_type

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INVALID = 2
EXIT_VERIFY = 3


@dataclass
class Problem:
    """One redistribution problem plus the element width for byte reports."""

    mesh: Mesh
    source: DistType
    target: DistType
    bytes_per_element: int = 4

    def to_json_dict(self) -> dict:
        return {
            "mesh": str(self.mesh),
            "from": str(self.source),
            "to": str(self.target),
        }

    @classmethod
    def from_json_dict(cls, d: dict, bytes_per_element: int = 4) -> "Problem":
        return cls(
            parse_mesh(d["mesh"]),
            parse_type(d["from"]),
            parse_type(d["to"]),
            bytes_per_element,
        )


@dataclass
class SuiteConfig:
    """Parameters for random problem generation; the seed fixes the suite."""

    count: int = 200
    mesh_axes: int = 3
    max_rank: int = 6
    min_elements: int = 4096
    max_elements: int = 65536
    seed: int = 0


_AXIS_NAMES = "abcdefghijklmnopqrstuvwxyz"


def generate_problem(rng: random.Random, config: SuiteConfig) -> Problem:
    """Sample one valid problem.

    Every mesh axis is independently replicated or assigned to partition
    one dimension, once for the source and once for the target; global
    extents are built as products so divisibility always holds, then
    padded with small factors toward the requested element range.
    """
    axes = [
        (_AXIS_NAMES[i], rng.choice([2, 3, 4, 5, 6, 7, 8]))
        for i in range(config.mesh_axes)
    ]
    mesh = Mesh(tuple(axes))
    rank = rng.randint(1, config.max_rank)
    src_assign = [rng.randrange(-1, rank) for _ in axes]  # -1 replicates
    tgt_assign = [rng.randrange(-1, rank) for _ in axes]

    globals_ = [1] * rank
    for (name, size), pick in zip(axes, src_assign):
        if pick >= 0:
            globals_[pick] *= size
    for (name, size), pick in zip(axes, tgt_assign):
        if pick >= 0:
            globals_[pick] *= size

    def total() -> int:
        t = 1
        for g in globals_:
            t *= g
        return t

    guard = 0
    while total() < config.min_elements and guard < 64:
        i = rng.randrange(rank)
        f = rng.choice([2, 3, 5, 7])
        if total() * f <= config.max_elements:
            globals_[i] *= f
        guard += 1

    def build(assign: list[int]) -> DistType:
        per_dim: list[list[str]] = [[] for _ in range(rank)]
        for (name, _size), pick in zip(axes, assign):
            if pick >= 0:
                per_dim[pick].append(name)
        dims = []
        for i in range(rank):
            order = per_dim[i][:]
            rng.shuffle(order)
            prod = 1
            for a in order:
                prod *= mesh.size_of(a)
            dims.append(DistDim(globals_[i] // prod, tuple(order), globals_[i]))
        return DistType(tuple(dims))

    return Problem(mesh, build(src_assign), build(tgt_assign))


def generate_suite(config: SuiteConfig):
    rng = random.Random(config.seed)
    return [generate_problem(rng, config) for _ in range(config.count)]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _options_from_args(args) -> SynthesisOptions:
    return SynthesisOptions(
        memory_bound=args.memory_bound,
        no_over_partition=args.no_over_partition,
        prefer_permute_elision=getattr(args, "prefer_permute_elision", False),
    )


def cmd_synth(args) -> int:
    try:
        mesh = parse_mesh(args.mesh)
        source = parse_type(getattr(args, "from"))
        target = parse_type(args.to)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        result = synthesize(mesh, source, target, _options_from_args(args))
    except InvalidRedistribution as exc:
        print(f"invalid redistribution: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except RedistError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    plan = result.plan
    bpe = args.bytes_per_element
    report = None
    if args.verify:
        report = verify(result.decomposition.mesh, plan.source, plan.target, plan)

    if args.json:
        payload = result.to_json_dict()
        payload["bytesPerElement"] = bpe
        payload["totalBytes"] = plan.cost * bpe
        if report is not None:
            payload["verification"] = report.to_json_dict()
        print(json.dumps(payload, indent=2))
    else:
        print(f"mesh {mesh}")
        print(f"source {source}")
        print(f"target {target}")
        if result.decomposition.mesh != mesh:
            print(f"prime mesh {result.decomposition.mesh}")
        if not plan.steps:
            print("plan: nothing to do (source equals target)")
        else:
            print(f"plan ({len(plan.steps)} steps):")
            for line in result.display_steps():
                print(f"  {line}")
        print(
            f"cost {plan.cost} elements/device ({plan.cost * bpe} bytes/device), "
            f"height {plan.height}"
        )
        if result.final_permute_index is not None:
            print(f"final permute at step {result.final_permute_index}")
        if report is not None:
            print(f"verification: {json.dumps(report.to_json_dict())}")
    if report is not None and not report.correct:
        return EXIT_VERIFY
    return EXIT_OK


def cmd_gen(args) -> int:
    config = SuiteConfig(
        count=args.count,
        mesh_axes=args.axes,
        max_rank=args.max_rank,
        min_elements=args.min_elements,
        max_elements=args.max_elements,
        seed=args.seed,
    )
    out = sys.stdout if args.output == "-" else open(args.output, "w")
    try:
        for problem in generate_suite(config):
            out.write(json.dumps(problem.to_json_dict()) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _geomean(values) -> float:
    values = [v for v in values if v > 0]
    if not values:
        return 1.0
    log_sum = sum(__import__("math").log(v) for v in values)
    return __import__("math").exp(log_sum / len(values))


def cmd_bench(args) -> int:
    problems = []
    with open(args.problems) as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                problems.append(Problem.from_json_dict(json.loads(line)))
            except (json.JSONDecodeError, ParseError, KeyError) as exc:
                print(f"line {line_no}: bad problem: {exc}", file=sys.stderr)
                return EXIT_INVALID

    rows = []
    failures = 0
    for idx, problem in enumerate(problems):
        try:
            start = time.perf_counter()
            result = synthesize(
                problem.mesh, problem.source, problem.target, _options_from_args(args)
            )
            elapsed = time.perf_counter() - start
            naive = naive_sequence(problem.mesh, problem.source, problem.target)
            naive_report = plan_cost(naive)
            verified = ""
            if args.verify:
                report = verify(
                    result.decomposition.mesh,
                    result.plan.source,
                    result.plan.target,
                    result.plan,
                )
                verified = "ok" if report.correct else "FAIL"
                if not report.correct:
                    failures += 1
            rows.append(
                {
                    "index": idx,
                    "synthCost": result.plan.cost,
                    "naiveCost": naive_report.total,
                    "ratio": (
                        result.plan.cost / naive_report.total
                        if naive_report.total
                        else 1.0
                    ),
                    "synthHeight": result.plan.height,
                    "naiveHeight": naive_report.height,
                    "wallMs": elapsed * 1000.0,
                    "verified": verified,
                }
            )
        except RedistError as exc:
            failures += 1
            rows.append({"index": idx, "error": str(exc)})

    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        header = f"{'#':>4} {'synth':>10} {'naive':>10} {'ratio':>7} {'h.synth':>8} {'h.naive':>8} {'ms':>8}"
        if args.verify:
            header += "  verified"
        print(header)
        for row in rows:
            if "error" in row:
                print(f"{row['index']:>4} error: {row['error']}")
                continue
            line = (
                f"{row['index']:>4} {row['synthCost']:>10} {row['naiveCost']:>10} "
                f"{row['ratio']:>7.3f} {row['synthHeight']:>8} {row['naiveHeight']:>8} "
                f"{row['wallMs']:>8.1f}"
            )
            if args.verify:
                line += f"  {row['verified']}"
            print(line)
        ratios = [r["ratio"] for r in rows if "ratio" in r]
        times = sorted(r["wallMs"] for r in rows if "wallMs" in r)
        if times:
            median = times[len(times) // 2]
            print(
                f"geomean cost ratio vs naive: {_geomean(ratios):.4f}   "
                f"median synthesis {median:.1f} ms over {len(times)} problems"
            )
    if failures:
        print(f"{failures} problem(s) failed", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="redistill",
        description="Synthesize memory-efficient collective programs that "
        "redistribute sharded arrays between two layouts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="synthesize a plan for one problem")
    synth.add_argument("--mesh", required=True, help="mesh, e.g. '{x:4, y:6}'")
    synth.add_argument("--from", required=True, help="source type, e.g. '[3{x}12, 2{y}12]'")
    synth.add_argument("--to", required=True, help="target type")
    synth.add_argument("--json", action="store_true", help="emit the plan as JSON")
    synth.add_argument("--verify", action="store_true", help="simulate and check the plan")
    synth.add_argument("--bytes-per-element", type=int, default=4)
    synth.add_argument("--memory-bound", type=int, default=None, help="per-device element bound")
    synth.add_argument("--no-over-partition", action="store_true")
    synth.add_argument(
        "--prefer-permute-elision",
        action="store_true",
        help="re-rank equal-cost paths to avoid the final permute",
    )
    synth.set_defaults(func=cmd_synth)

    gen = sub.add_parser("gen", help="generate a random problem suite (JSON lines)")
    gen.add_argument("--count", type=int, default=200)
    gen.add_argument("--axes", type=int, default=3)
    gen.add_argument("--max-rank", type=int, default=6)
    gen.add_argument("--min-elements", type=int, default=4096)
    gen.add_argument("--max-elements", type=int, default=65536)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--output", default="-")
    gen.set_defaults(func=cmd_gen)

    bench = sub.add_parser("bench", help="benchmark a problem suite against the naive baseline")
    bench.add_argument("problems", help="JSON-lines problem file from 'gen'")
    bench.add_argument("--json", action="store_true")
    bench.add_argument("--verify", action="store_true")
    bench.add_argument("--bytes-per-element", type=int, default=4)
    bench.add_argument("--memory-bound", type=int, default=None)
    bench.add_argument("--no-over-partition", action="store_true")
    bench.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RedistError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

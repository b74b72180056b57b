"""Command-line harness: gen, plan, run, sweep, verify."""

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass
import math
from pathlib import Path
import sys
import tempfile

from .core_types import DeviceProfile, derive_params, read_ct_file
from .executors import EXECUTORS, run_named, verify
from .nocap import nocap_plan, read_mcv_file
from .ocap import ocap_lower_bound, ocap_plan
from .storage import FileBackend, make_backend
from .workload import WorkloadSpec, default_mcv_size, emit, generate

EXIT_OK, EXIT_INFEASIBLE, EXIT_MISMATCH = 0, 2, 3

CSV_COLUMNS = ["algo", "n_R", "n_S", "record_size", "page_size", "B", "skew", "seed",
               "seq_reads", "rand_reads", "seq_writes", "rand_writes", "normalized_io",
               "wall_ms", "output_count", "digest"]
ALGORITHMS = sorted(EXECUTORS) + ["ocap"]


class Infeasible(Exception):
    pass


def _csv_list(text):
    return [t for t in (x.strip() for x in text.split(",")) if t]


def _int_list(text):
    return [int(x) for x in _csv_list(text)]


def _add_geometry(p):
    g = p.add_argument_group("geometry")
    g.add_argument("--n-r", type=int, default=100_000, help="records in R")
    g.add_argument("--n-s", type=int, default=800_000, help="records in S")
    g.add_argument("--record-size", type=int, default=1024, help="bytes per R record")
    g.add_argument("--record-size-s", type=int, default=None,
                   help="bytes per S record (default: same as R)")
    g.add_argument("--page-size", type=int, default=4096)
    g.add_argument("--fudge", "-F", type=float, default=1.02)
    g.add_argument("--beta", type=float, default=0.95)


def _add_device(p):
    g = p.add_argument_group("device")
    g.add_argument("--sync", action="store_true", help="synchronous-write device preset")
    g.add_argument("--mu", type=float, help="random write / sequential read")
    g.add_argument("--tau", type=float, help="sequential write / sequential read")
    g.add_argument("--rr-ratio", type=float, help="random read / sequential read")


def _add_workload(p):
    g = p.add_argument_group("workload")
    g.add_argument("--skew", default="uniform",
                   help="uniform | zipf:<alpha> | hotcold:<frac>:<hot_avg>:<cold_avg>")
    g.add_argument("--mcv-k", type=int, default=None, help="tracked keys (default 5%% of R)")
    g.add_argument("--noise-sigma", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--workload", type=Path,
                   help="directory written by `gen`; replaces the generator flags")


def _add_backend(p):
    p.add_argument("--backend", choices=("sim", "file"), default="sim")
    p.add_argument("--data-dir", type=Path, help="scratch directory for the file backend")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corrjoin", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a workload (R, S, ct.txt, mcv.csv) to a directory")
    _add_geometry(p)
    _add_workload(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("plan", help="print an OCAP or NOCAP plan")
    _add_geometry(p)
    _add_device(p)
    _add_workload(p)
    p.add_argument("--planner", choices=("ocap", "nocap"), default="nocap")
    p.add_argument("--buffer-pages", "-B", type=int, required=True)
    p.add_argument("--ct", type=Path, help="correlation table file")
    p.add_argument("--mcv", type=Path, help="MCV file (key,frequency lines)")

    p = sub.add_parser("run", help="run one join and print its I/O")
    _add_geometry(p)
    _add_device(p)
    _add_workload(p)
    _add_backend(p)
    p.add_argument("--algo", choices=sorted(EXECUTORS), required=True)
    p.add_argument("--buffer-pages", "-B", type=int, required=True)
    p.add_argument("--csv", type=Path, help="append the result row to this CSV")

    p = sub.add_parser("sweep", help="run algorithms over buffer sizes, skews and seeds")
    _add_geometry(p)
    _add_device(p)
    _add_workload(p)
    _add_backend(p)
    p.add_argument("--algo", type=_csv_list, default=["dhh", "nocap", "ocap"],
                   help=f"comma-separated subset of {','.join(ALGORITHMS)}")
    p.add_argument("--buffer-pages", "-B", type=_int_list, default=None,
                   help="comma-separated buffer sizes (default: powers of two 2^8..||R||)")
    p.add_argument("--skews", type=_csv_list, default=None,
                   help="comma-separated skews (default: --skew)")
    p.add_argument("--repetitions", type=int, default=1, help="seeds seed..seed+reps-1")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--csv", type=Path, required=True)

    p = sub.add_parser("verify", help="check that two algorithms produce the same join")
    _add_geometry(p)
    _add_device(p)
    _add_workload(p)
    _add_backend(p)
    p.add_argument("--algo", type=_csv_list, default=["nocap", "dhh"])
    p.add_argument("--buffer-pages", "-B", type=int, required=True)
    return parser


def device_from(args) -> DeviceProfile:
    base = DeviceProfile.preset(sync=args.sync)
    return DeviceProfile(mu=args.mu or base.mu, tau=args.tau or base.tau,
                         rho=args.rr_ratio or base.rho)


def config_from(args, B, record_size_R=None, record_size_S=None):
    rs_R = record_size_R or args.record_size
    rs_S = record_size_S or args.record_size_s or rs_R
    try:
        return derive_params(args.page_size, rs_R, rs_S, B, args.fudge,
                             device=device_from(args), beta=args.beta, sync_writes=args.sync)
    except ValueError as exc:
        raise Infeasible(str(exc)) from None


def spec_from(args, skew=None, seed=None) -> WorkloadSpec:
    return WorkloadSpec(args.n_r, args.n_s, args.record_size,
                        args.record_size_s or args.record_size,
                        skew or args.skew, args.noise_sigma,
                        args.seed if seed is None else seed)


def cmd_gen(args):
    spec = spec_from(args)
    args.out.mkdir(parents=True, exist_ok=True)
    emit(generate(spec), args.out, args.page_size, args.mcv_k, args.noise_sigma)
    print(f"wrote {args.out} (n_R={spec.n_R}, n_S={spec.n_S}, skew={spec.skew})")
    return EXIT_OK


def _load_dir(args):
    """Relations and MCVs from a `gen` directory on a file backend."""
    backend = FileBackend(args.page_size, args.workload, args.sync)
    R, S = backend.open_existing("R"), backend.open_existing("S")
    return backend, R, S, read_mcv_file(args.workload / "mcv.csv")


class _Session:
    """Relations plus MCVs for one workload, on the chosen backend."""

    def __init__(self, args, skew=None, seed=None):
        self.tmp = None
        if getattr(args, "workload", None):
            self.backend, self.R, self.S, self.mcv = _load_dir(args)
            self.truth_path = args.workload / "ct.txt"
            self.skew, self.seed = "file", args.seed
            self.record_sizes = (self.R.record_size, self.S.record_size)
            return
        spec = spec_from(args, skew, seed)
        workload = generate(spec)
        directory = None
        if args.backend == "file":
            if args.data_dir:
                directory = args.data_dir / f"{spec.skew}-{spec.seed}".replace(":", "_")
            else:
                self.tmp = tempfile.TemporaryDirectory(prefix="corrjoin-")
                directory = self.tmp.name
        self.backend = make_backend(args.backend, args.page_size, directory, args.sync)
        self.R, self.S = workload.materialize(self.backend)
        k = default_mcv_size(spec.n_R) if args.mcv_k is None else args.mcv_k
        self.mcv = workload.mcv(k)
        self.workload = workload
        self.truth_path = None
        self.skew, self.seed = str(spec.skew), spec.seed
        self.record_sizes = (spec.record_size_R, spec.record_size_S)

    def truth(self):
        if self.truth_path is not None:
            return read_ct_file(self.truth_path)
        return self.workload.truth

    def close(self):
        self.backend.shutdown()
        if self.tmp is not None:
            self.tmp.cleanup()


def result_row(algo, session, config, B, result=None, lower_bound=None):
    row = dict(algo=algo, n_R=session.R.n, n_S=session.S.n,
               record_size=session.R.record_size, page_size=config.page_size, B=B,
               skew=session.skew, seed=session.seed)
    if result is None:
        row.update(seq_reads=0, rand_reads=0, seq_writes=0, rand_writes=0,
                   normalized_io=f"{lower_bound:.3f}", wall_ms=0, output_count="", digest="")
    else:
        io = result.io
        row.update(seq_reads=io.seq_reads, rand_reads=io.rand_reads, seq_writes=io.seq_writes,
                   rand_writes=io.rand_writes,
                   normalized_io=f"{result.normalized(config):.3f}",
                   wall_ms=f"{result.wall_ms:.1f}", output_count=result.output_count,
                   digest=f"{result.digest:016x}")
    return row


def _run_one(algo, session, args, B):
    config = config_from(args, B, *session.record_sizes)
    if algo == "ocap":
        lb = ocap_lower_bound(session.truth(), session.R.pages, session.S.pages, B, config)
        return result_row(algo, session, config, B, lower_bound=lb)
    try:
        result = run_named(algo, session.R, session.S, B, config, session.mcv)
    except ValueError as exc:
        raise Infeasible(f"{algo} at B={B}: {exc}") from None
    return result_row(algo, session, config, B, result)


def _append_csv(path, rows):
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if new:
            writer.writeheader()
        writer.writerows(rows)


def cmd_plan(args):
    B = args.buffer_pages
    config = config_from(args, B)
    try:
        if args.planner == "ocap":
            ct = read_ct_file(args.ct) if args.ct else generate(spec_from(args)).truth
            plan = ocap_plan(ct, ct.n, B, config)
            print(plan.describe())
        else:
            if args.mcv:
                mcv = read_mcv_file(args.mcv)
            else:
                workload = generate(spec_from(args))
                k = default_mcv_size(args.n_r) if args.mcv_k is None else args.mcv_k
                mcv = workload.mcv(k)
            plan = nocap_plan(mcv, args.n_r, args.n_s, B, config)
            print(plan.describe(), end="")
    except ValueError as exc:
        raise Infeasible(str(exc)) from None
    return EXIT_OK


def cmd_run(args):
    session = _Session(args)
    try:
        row = _run_one(args.algo, session, args, args.buffer_pages)
    finally:
        session.close()
    print(" ".join(f"{k}={row[k]}" for k in CSV_COLUMNS))
    if args.csv:
        _append_csv(args.csv, [row])
    return EXIT_OK


def default_grid(pages_R) -> list:
    """Powers of two from 2^8 up to the size of R in pages."""
    top = max(8, math.floor(math.log2(max(pages_R, 1))))
    return [2 ** e for e in range(8, top + 1)]


@dataclass
class _SweepTask:
    args: argparse.Namespace
    skew: str
    seed: int
    grid: list
    algos: list


def _sweep_group(task: _SweepTask):
    session = _Session(task.args, task.skew, task.seed)
    try:
        grid = task.grid or default_grid(session.R.pages)
        return [_run_one(a, session, task.args, B) for B in grid for a in task.algos]
    finally:
        session.close()


def cmd_sweep(args):
    unknown = [a for a in args.algo if a not in ALGORITHMS]
    if unknown:
        print(f"unknown algorithm(s): {', '.join(unknown)}; choose from {ALGORITHMS}",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    grid = args.buffer_pages
    if grid and min(grid) < 3:
        raise Infeasible("buffer sizes must be at least 3 pages")
    skews = args.skews or [args.skew]
    tasks = [_SweepTask(args, skew, args.seed + r, grid, args.algo)
             for skew in skews for r in range(args.repetitions)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            for rows in pool.map(_sweep_group, tasks):
                _append_csv(args.csv, rows)
    else:
        for task in tasks:
            _append_csv(args.csv, _sweep_group(task))
    print(f"wrote {args.csv}")
    return EXIT_OK


def cmd_verify(args):
    session = _Session(args)
    try:
        config = config_from(args, args.buffer_pages, *session.record_sizes)
        results = {}
        for algo in args.algo:
            try:
                results[algo] = run_named(algo, session.R, session.S, args.buffer_pages,
                                          config, session.mcv)
            except ValueError as exc:
                raise Infeasible(f"{algo}: {exc}") from None
    finally:
        session.close()
    first, *others = args.algo
    ok = True
    for algo in args.algo:
        r = results[algo]
        print(f"{algo}: count={r.output_count} digest={r.digest:016x}")
    for algo in others:
        ok &= verify(results[first], results[algo])
    print("match" if ok else "MISMATCH")
    return EXIT_OK if ok else EXIT_MISMATCH


COMMANDS = {"gen": cmd_gen, "plan": cmd_plan, "run": cmd_run, "sweep": cmd_sweep,
            "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())

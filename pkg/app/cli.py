"""
Operator entry point.

    python -m app.cli sim --preset n5 --seed 1 --out results --chain --plot
    python -m app.cli sweep presets/sweeps/balance.json --jobs 4
    python -m app.cli node --config node.json
    python -m app.cli audit results/n005-p0.30-s1.chain

Exit status: 0 on success, 1 when an audit finds a bad block, 2 for unusable
configuration or unreadable input.
"""

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Tuple

import pandas as pd

from app.core.encoding import block_hash
from app.core.errors import ChainFileError, ConfigError
from app.services.chain_store import read_chain, write_chain
from app.services.consensus import audit_chain
from app.sim.config import SimConfig, SweepSpec, config_label, load_config, load_preset, load_sweep
from app.sim.metrics import gnuplot_script, summarize, write_summary
from app.sim.simnet import build_simulation

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

OUTPUT_SUFFIXES = (".csv", ".summary.json", ".chain", ".gp")


# --- outputs ------------------------------------------------------------------

def reserve_stem(out_dir: Path, label: str, taken: Set[str]) -> Path:
    """First of label, label-2, label-3, ... with no existing output, so nothing is overwritten"""
    n = 1
    while True:
        stem = label if n == 1 else f"{label}-{n}"
        if stem not in taken and not any((out_dir / (stem + s)).exists() for s in OUTPUT_SUFFIXES):
            taken.add(stem)
            return out_dir / stem
        n += 1


def run_one(config: SimConfig, stem: Path, chain: bool = False, plot: bool = False) -> Dict[str, object]:
    """Run one simulation and write its CSV, summary and optional chain and plot script"""
    simulation = build_simulation(config)
    metrics = simulation.run()

    csv_path = Path(f"{stem}.csv")
    metrics.write_csv(csv_path)
    summary = summarize(metrics, config.node_count)
    summary["label"] = stem.name
    summary["config"] = config.model_dump(mode="json")
    write_summary(summary, f"{stem}.summary.json")
    if chain:
        write_chain(f"{stem}.chain", simulation.chain.params, simulation.chain.blocks)
    if plot:
        title = f"{config.node_count} nodes, seed {config.seed}"
        Path(f"{stem}.gp").write_text(gnuplot_script(csv_path.name, title), encoding="utf-8")
    return summary


def _run_job(job: Tuple[SimConfig, Path, bool, bool]) -> Dict[str, object]:
    return run_one(*job)


# --- sim / sweep ----------------------------------------------------------------

def _parse_ints(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma separated list of integers") from None


def _parse_floats(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma separated list of numbers") from None


def _crash_height(text: str):
    return text if text == "random" else int(text)


def _base_config(args: argparse.Namespace) -> SimConfig:
    if args.config:
        return load_config(args.config)
    if args.preset:
        return load_preset(args.preset)
    return SimConfig()


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    return {
        "seed": args.seed,
        "node_count": args.nodes,
        "blocks": args.blocks,
        "network": args.network,
        "crash_leader_at": args.crash_leader_at,
        "skew_placement": args.skew,
    }


def cmd_sim(args: argparse.Namespace) -> int:
    config = _base_config(args).with_overrides(**_overrides(args))
    configs = [config]
    if args.baseline:
        configs.append(config.with_overrides(migration_enabled=False))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    taken: Set[str] = set()
    for cfg in configs:
        stem = reserve_stem(out_dir, config_label(cfg), taken)
        summary = run_one(cfg, stem, chain=args.chain, plot=args.plot)
        print(
            f"{stem}.csv: {summary['blocks']} blocks, crossover {summary['crossover_block']}, "
            f"mean std-dev {summary['mean_std_dev']}, {summary['migrations']} migrations"
        )
    return EXIT_OK


def _sweep_spec(args: argparse.Namespace) -> SweepSpec:
    spec = load_sweep(args.spec) if args.spec else SweepSpec()
    changes = {}
    if args.preset or args.config:
        changes["base"] = _base_config(args)
    if args.nodes_list:
        changes["node_counts"] = args.nodes_list
    if args.seeds:
        changes["seeds"] = args.seeds
    if args.arrival_probs:
        changes["arrival_probs"] = args.arrival_probs
    if args.baseline:
        changes["baseline"] = True
    if args.out:
        changes["out_dir"] = args.out
    if args.blocks is not None:
        changes["base"] = changes.get("base", spec.base).with_overrides(blocks=args.blocks)
    return spec.model_copy(update=changes)


def cmd_sweep(args: argparse.Namespace) -> int:
    spec = _sweep_spec(args)
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    taken: Set[str] = set()
    jobs = [
        (config, reserve_stem(out_dir, config_label(config), taken), args.chain, args.plot)
        for config in spec.variations()
    ]
    if args.jobs == 1:
        summaries = [_run_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            summaries = list(pool.map(_run_job, jobs))

    table = pd.DataFrame([
        {k: v for k, v in summary.items() if k != "config"}
        for summary in summaries
    ])
    index_path = reserve_stem(out_dir, "sweep", taken)
    table.to_csv(f"{index_path}.csv", index=False, float_format="%.6f", lineterminator="\n")
    print(f"{len(summaries)} runs, index in {index_path}.csv")
    return EXIT_OK


# --- node ---------------------------------------------------------------------------

def cmd_node(args: argparse.Namespace) -> int:
    import uvicorn

    from app.config import load_settings
    from app.main import build_service, create_app

    settings = load_settings(
        args.config,
        host=args.host,
        port=args.port,
        peers=args.peers,
        key_file=args.key,
        chain_file=args.chain_file,
    )
    service = build_service(settings)
    uvicorn.run(create_app(service), host=settings.host, port=settings.port, log_level=settings.log_level.lower())
    return EXIT_OK


# --- audit --------------------------------------------------------------------------

def cmd_audit(args: argparse.Namespace) -> int:
    params, blocks = read_chain(args.chain)
    verified, failed, verdict = audit_chain(blocks, params)
    if args.verbose:
        for block in blocks[:verified]:
            print(f"  {block.height:5d}  retry {block.retry}  leader {block.leader}  {len(block.scores)} scores  {_plan_text(block.plan)}")
    if failed is not None:
        print(f"FAIL block {failed}: {verdict.reason.value} {verdict.detail} ({verified} blocks verified before it)")
        return EXIT_FAILED
    head = block_hash(blocks[-1]).hex() if blocks else "none"
    print(f"OK {verified} blocks verified, head {head}")
    return EXIT_OK


def _plan_text(plan) -> str:
    if plan.migration is not None:
        m = plan.migration
        return f"migrate {m.app_id} {m.source}->{m.target}"
    if plan.placements:
        return f"place {', '.join(p.app_id for p in plan.placements)}"
    return "no change"


# --- parser ---------------------------------------------------------------------------

def _add_sim_options(p: argparse.ArgumentParser) -> None:
    source = p.add_mutually_exclusive_group()
    source.add_argument("--preset", help="Preset name from presets/ (n5, n25, n50, n100)")
    source.add_argument("--config", help="Simulation config JSON file")
    p.add_argument("--blocks", type=int, help="Override the number of blocks")
    p.add_argument("--baseline", action="store_true", help="Also run the no-migration baseline")
    p.add_argument("--chain", action="store_true", help="Export each run's chain for audits")
    p.add_argument("--plot", action="store_true", help="Write a gnuplot script next to each CSV")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="edge-ledger", description="Self-balancing edge ledger")
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("sim", help="Run one seeded simulation")
    _add_sim_options(s)
    s.add_argument("--seed", type=int, help="Override the seed")
    s.add_argument("--nodes", type=int, help="Override the node count")
    s.add_argument("--network", choices=["shared", "gossip"], help="Network model")
    s.add_argument("--crash-leader-at", type=_crash_height, help="Crash the leader of this height, or 'random'")
    s.add_argument("--skew", type=int, help="Blocks during which only node 0 takes apps")
    s.add_argument("--out", default="results", help="Output directory")
    s.set_defaults(func=cmd_sim)

    w = sub.add_parser("sweep", help="Run a sweep of simulations in parallel")
    w.add_argument("spec", nargs="?", help="Sweep spec JSON file")
    _add_sim_options(w)
    w.add_argument("--nodes", dest="nodes_list", type=_parse_ints, help="Node counts, e.g. 5,25,50,100")
    w.add_argument("--seeds", type=_parse_ints, help="Seeds, e.g. 1,2,3")
    w.add_argument("--arrival-probs", type=_parse_floats, help="Arrival probabilities per node and block")
    w.add_argument("--jobs", type=int, default=1, help="Parallel worker processes")
    w.add_argument("--out", help="Output directory (overrides the spec)")
    w.set_defaults(func=cmd_sweep)

    n = sub.add_parser("node", help="Run a node daemon")
    n.add_argument("--config", help="Node settings JSON file")
    n.add_argument("--host")
    n.add_argument("--port", type=int)
    n.add_argument("--peers", help="Comma separated peer base URLs")
    n.add_argument("--key", help="Key file (generated if missing)")
    n.add_argument("--chain-file", help="Chain file")
    n.set_defaults(func=cmd_node)

    a = sub.add_parser("audit", help="Re-verify every block of a chain file")
    a.add_argument("chain")
    a.add_argument("-v", "--verbose", action="store_true", help="List the verified blocks")
    a.set_defaults(func=cmd_audit)
    return ap


def main(argv: Optional[Iterable[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ChainFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

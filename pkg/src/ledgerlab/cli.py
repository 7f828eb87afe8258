"""Command-line entry point: ``ledgerlab <command> ...``.

Exit codes: 0 success (or intact ledger), 1 tampered ledger or negative check,
2 usage, configuration or I/O error. Every structured output is canonical JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .contract import ContractError, EndorsementPolicy, NotFound, read_record
from .encoding import EncodingError, canonical_json
from .gateway import (
    EmptyLedger,
    GatewayConfig,
    GatewayError,
    ParseError,
    RecordFileInvalid,
    check_offchain,
    ingest_records,
    stats,
)
from .identity import MembershipDirectory
from .ledger import BlockStore, LedgerError, genesis_config
from .network import Consortium, FaultSchedule, ScenarioConfig, Workload, build_consortium, build_workload
from .peer import PeerError, replay
from .raft import ConfigError, NoLeaderAvailable
from .verifier import Mode, Target, TargetNotFound, manifest_bytes, tamper, verify_chain

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_ERROR = 2

log = logging.getLogger("ledgerlab")


class UsageError(Exception):
    pass


def _emit(obj, out: str | None = None) -> None:
    data = canonical_json(obj)
    if out:
        Path(out).write_bytes(data + b"\n")
    else:
        sys.stdout.write(data.decode("utf-8") + "\n")


def _seed(args) -> int:
    env = os.environ.get("LEDGERLAB_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"LEDGERLAB_SEED must be an integer, got {env!r}") from None
    return args.seed


def _bundle_for(args) -> MembershipDirectory:
    path = Path(args.bundle) if args.bundle else Path(args.ledger).with_name("bundle.jsonl")
    return MembershipDirectory.read_bundle(path)


def _world_state(args):
    store = BlockStore.read(args.ledger)
    directory = _bundle_for(args)
    policy = EndorsementPolicy(genesis_config(store.read_block(0)).endorsement_required)
    state, _ = replay(store.blocks, directory, policy)
    return state


def _load_scenario(path: str | None) -> tuple[ScenarioConfig, FaultSchedule | None]:
    if path is None:
        return ScenarioConfig(), None
    obj = json.loads(Path(path).read_text("utf-8"))
    faults = FaultSchedule.from_json(obj["faults"]) if "faults" in obj else None
    return ScenarioConfig.from_json(obj), faults


# -- commands ------------------------------------------------------------------


def cmd_init(args) -> int:
    config, _ = _load_scenario(args.scenario)
    config = replace(config, seed=_seed(args))
    consortium = build_consortium(config, random_keys=args.random_keys)
    out = Path(args.out)
    consortium.save(out)
    (out / "genesis.jsonl").replace(out / "ledger.jsonl")
    (out / "scenario.json").write_bytes(canonical_json(config.to_json()))
    _emit({"identities": sorted(consortium.identities), "ledger": str(out / "ledger.jsonl"), "seed": config.seed})
    return EXIT_OK


def cmd_run_scenario(args) -> int:
    from .sim import run_scenario

    config, embedded = _load_scenario(args.scenario)
    faults = FaultSchedule.read(args.faults) if args.faults else embedded or FaultSchedule()
    if args.workload:
        workload = Workload.read(args.workload)
    elif args.records:
        workload = build_workload(ingest_records(args.records), args.lifecycle, config.organizations, seed=_seed(args))
    else:
        raise UsageError("pass --workload or --records")
    consortium = Consortium.load(args.network) if args.network else None
    report, sim = run_scenario(config, faults, workload, seed=_seed(args), consortium=consortium)
    if args.ledger_out:
        sim.reference_store().write(args.ledger_out)
        if consortium is None:
            sim.directory.write_bundle(Path(args.ledger_out).with_name("bundle.jsonl"))
    _emit(report.to_json(), args.out)
    return EXIT_OK


def cmd_submit(args) -> int:
    from .sim import Simulation

    network = Path(args.network)
    store = BlockStore.read(args.ledger or network / "ledger.jsonl")
    consortium = Consortium.load(network, store)
    scenario_path = network / "scenario.json"
    config = ScenarioConfig.from_json(json.loads(scenario_path.read_text("utf-8"))) if scenario_path.exists() else ScenarioConfig()
    identity_name = args.identity
    if args.config:
        gateway_config = GatewayConfig.read(args.config)
        identity_name = identity_name or gateway_config.identity
        config = replace(config, fanout_per_org=gateway_config.fanout_per_org)
    if not identity_name:
        raise UsageError("pass --identity or a --config naming one")
    identity = consortium.identities.get(identity_name)
    if identity is None:
        raise UsageError(f"unknown identity {identity_name!r}")
    config = replace(config, seed=_seed(args))
    sim = Simulation(config, consortium, base_chain=store)
    sim.run_for(config.warmup_ms)
    receipts = []
    for record in ingest_records(args.records):
        receipts.append(sim.gateway.submit_record(record, identity).to_json())
    sim.run_for(config.settle_ms)
    sim.reference_store().write(args.ledger or network / "ledger.jsonl")
    _emit({"receipts": receipts})
    return EXIT_OK


def cmd_ingest(args) -> int:
    records = ingest_records(args.records)
    _emit({"count": len(records), "ids": [r.id for r in records]})
    return EXIT_OK


def cmd_query(args) -> int:
    state = _world_state(args)
    try:
        record = read_record(state, args.record_id)
    except NotFound:
        _emit({"error": "NotFound", "id": args.record_id})
        return EXIT_FAIL
    _emit(record.to_json())
    return EXIT_OK


def cmd_verify(args) -> int:
    report = verify_chain(Path(args.ledger), _bundle_for(args), Mode(args.mode))
    _emit(report.to_json(), args.out)
    return EXIT_OK if not report.violations else EXIT_FAIL


def cmd_tamper(args) -> int:
    try:
        targets = [Target.parse(t) for t in args.target] or None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if targets is None and args.k is None:
        raise UsageError("pass --target or --k")
    manifest = tamper(args.ledger, targets, mutation=args.rule, seed=_seed(args), k=args.k)
    if args.manifest:
        Path(args.manifest).write_bytes(manifest_bytes(manifest))
    _emit([m.to_json() for m in manifest])
    return EXIT_OK


def cmd_stats(args) -> int:
    _emit(stats(BlockStore.read(args.ledger)).to_json())
    return EXIT_OK


def cmd_check_offchain(args) -> int:
    state = _world_state(args)
    record = read_record(state, args.record_id)
    ok = check_offchain(record, args.file)
    _emit({"id": record.id, "match": ok})
    return EXIT_OK if ok else EXIT_FAIL


def cmd_fixtures(args) -> int:
    from .fixtures import generate_fixtures

    fx = generate_fixtures(_seed(args), args.out)
    _emit({"root": str(fx.root)})
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .fixtures import FIXTURE_SEED

    parser = argparse.ArgumentParser(prog="ledgerlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def ledger_args(p, bundle: bool = True) -> None:
        p.add_argument("--ledger", required=True, help="ledger file (JSON lines)")
        if bundle:
            p.add_argument("--bundle", help="certificate bundle (default: bundle.jsonl next to the ledger)")

    p = sub.add_parser("init", help="create CAs, identities and a genesis ledger")
    p.add_argument("--out", required=True)
    p.add_argument("--scenario", help="scenario config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--random-keys", action="store_true", help="use OS randomness for keys and nonces")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("run-scenario", help="simulate a workload and print the scenario report")
    p.add_argument("--scenario", help="scenario config JSON (may embed a 'faults' list)")
    p.add_argument("--workload", help="workload JSON")
    p.add_argument("--records", help="records JSON array (builds the reference workload)")
    p.add_argument("--lifecycle", type=int, default=4, help="lifecycle envelopes when using --records")
    p.add_argument("--faults", help="fault schedule JSON")
    p.add_argument("--network", help="directory from 'init' holding the identities to use")
    p.add_argument("--seed", type=int, default=FIXTURE_SEED)
    p.add_argument("--ledger-out", help="write the committed chain here")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_run_scenario)

    p = sub.add_parser("submit", help="submit records through the gateway and wait for commit")
    p.add_argument("--network", required=True, help="directory from 'init'")
    p.add_argument("--ledger", help="ledger to extend (default: <network>/ledger.jsonl)")
    p.add_argument("--records", required=True)
    p.add_argument("--identity", help="submitting identity name")
    p.add_argument("--config", help="gateway config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_submit)

    p = sub.add_parser("ingest", help="validate a records file")
    p.add_argument("records")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("query", help="print a committed record")
    p.add_argument("record_id")
    ledger_args(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("verify", help="check chain integrity and signatures")
    ledger_args(p)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.STRICT.value)
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("tamper", help="edit ledger fields in place and print the manifest")
    ledger_args(p, bundle=False)
    p.add_argument("--target", action="append", default=[], help="BLOCK:TX:FIELD.PATH (TX may be '-')")
    p.add_argument("--k", type=int, help="pick k record transactions at random")
    p.add_argument("--rule", default="auto", help="auto, zero or set:<json>")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", help="also write the manifest here")
    p.set_defaults(func=cmd_tamper)

    p = sub.add_parser("stats", help="block, transaction and throughput counts")
    ledger_args(p, bundle=False)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("check-offchain", help="compare a local file against a record's data hash")
    p.add_argument("record_id")
    p.add_argument("file")
    ledger_args(p)
    p.set_defaults(func=cmd_check_offchain)

    p = sub.add_parser("fixtures", help="regenerate the fixture corpus")
    p.add_argument("--out", default="fixtures/v1")
    p.add_argument("--seed", type=int, default=FIXTURE_SEED)
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (RecordFileInvalid, ParseError) as exc:
        failures = getattr(exc, "failures", None)
        _emit({"error": type(exc).__name__, "detail": str(exc), "failures": [list(f) for f in failures or []]})
        return EXIT_ERROR
    except (
        UsageError,
        ConfigError,
        OSError,
        LedgerError,
        EncodingError,
        TargetNotFound,
        ContractError,
        GatewayError,
        PeerError,
        NoLeaderAvailable,
        EmptyLedger,
        json.JSONDecodeError,
        KeyError,
    ) as exc:
        print(f"ledgerlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

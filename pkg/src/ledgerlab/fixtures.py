"""Deterministic test corpus: synthetic records, a golden ledger, tamper
manifest and fault schedules.

Record distributions: sites alternate between the two organizations; 70% of
records are measurements (levels L0 to L3, weighted toward L0 and L1) and 30%
are simulations (S0 to S3). Every off-chain file is a small pseudo-random blob
(512 to 8192 bytes) derived from the record id, so each content hash in the
corpus is the real SHA-256 of bytes the generator can reproduce.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import random
import shutil
from dataclasses import dataclass
from pathlib import Path

from .contract import Category, DataPointer, RecordType, ScientificRecord, make_record_id
from .encoding import canonical_json
from .network import (
    DEFAULT_ORGANIZATIONS,
    SITE_OF,
    FaultSchedule,
    ScenarioConfig,
    build_workload,
    leader_crash_schedule,
    partition_schedule,
    peer_corrupt_schedule,
    peer_name,
)
from .verifier import manifest_bytes, tamper

FIXTURE_VERSION = "v1"
FIXTURE_SEED = 20240601
RECORD_COUNT = 430
LIFECYCLE_COUNT = 4
TAMPER_K = 13
TAMPER_SEED = 13
CHECKSUM_FILE = "SHA256SUMS"

_FIRST = ("Ana", "Luis", "Carla", "Diego", "Elena", "Jorge", "Marta", "Pablo", "Sofia", "Tomas")
_LAST = ("Rojas", "Guerrero", "Paredes", "Vasquez", "Castro", "Mendoza", "Salazar", "Cardenas")
_MEASUREMENT_LEVELS = (("L0", 4), ("L1", 3), ("L2", 2), ("L3", 1))
_SIMULATION_LEVELS = (("S0", 3), ("S1", 3), ("S2", 2), ("S3", 1))


def orcid_checksum(base_digits: str) -> str:
    """ISO 7064 MOD 11-2 check character over the first 15 digits."""
    total = 0
    for ch in base_digits:
        total = (total + int(ch)) * 2
    value = (12 - total % 11) % 11
    return "X" if value == 10 else str(value)


def synthetic_orcid(rng: random.Random) -> str:
    digits = "0000" + "".join(str(rng.randrange(10)) for _ in range(11))
    full = digits + orcid_checksum(digits)
    return "-".join(full[i : i + 4] for i in range(0, 16, 4))


def file_bytes(record_id: str, kind: str, size: int) -> bytes:
    return random.Random(f"file:{record_id}:{kind}").randbytes(size)


def _pointer(record_id: str, site: str, kind: str, rng: random.Random) -> DataPointer:
    size = rng.randint(512, 8192)
    digest = hashlib.sha256(file_bytes(record_id, kind, size)).hexdigest()
    return DataPointer(digest, f"https://data.example.org/lago/{site}/{record_id}/{kind}.dat", size)


def _weighted(rng: random.Random, table) -> str:
    return rng.choices([name for name, _ in table], weights=[w for _, w in table])[0]


def synthetic_records(count: int = RECORD_COUNT, seed: int = FIXTURE_SEED) -> list[ScientificRecord]:
    rng = random.Random(f"records:{seed}")
    people = {
        org: [(f"{rng.choice(_FIRST)} {rng.choice(_LAST)}", synthetic_orcid(rng)) for _ in range(4)]
        for org in DEFAULT_ORGANIZATIONS
    }
    start = dt.date(2024, 1, 1)
    records = []
    for i in range(count):
        org = DEFAULT_ORGANIZATIONS[i % len(DEFAULT_ORGANIZATIONS)]
        site = SITE_OF[org]
        date = start + dt.timedelta(days=rng.randrange(366))
        measurement = rng.random() < 0.7
        level = _weighted(rng, _MEASUREMENT_LEVELS if measurement else _SIMULATION_LEVELS)
        record_id = make_record_id(level, site, date.strftime("%Y%m%d"), f"{rng.getrandbits(32):08x}")
        name, orcid = rng.choice(people[org])
        metadata = {
            "detector": f"WCD-{site[:3].upper()}-{rng.randint(1, 3)}",
            "start_utc": f"{date.isoformat()}T{rng.randrange(24):02d}:00:00Z",
            "duration_s": str(rng.choice((600, 1800, 3600))),
        }
        common = dict(
            id=record_id,
            metadata=metadata,
            site_name=site,
            collaborator_name=name,
            orcid=orcid,
            access_url=f"https://data.example.org/lago/{site}/{record_id}",
        )
        if measurement:
            metadata["pressure_hpa"] = f"{rng.uniform(700, 1013):.1f}"
            record = ScientificRecord(
                record_type=RecordType(Category.MEASUREMENT, level),
                raw_data=_pointer(record_id, site, "raw", rng),
                **common,
            )
        else:
            metadata["primaries"] = rng.choice(("protons", "helium", "iron", "all"))
            record = ScientificRecord(
                record_type=RecordType(Category.SIMULATION, level),
                raw_data=None,
                input_data=_pointer(record_id, site, "input", rng),
                input_metadata={"generator": "CORSIKA", "flux_time_s": str(rng.choice((3600, 86400)))},
                output_data=_pointer(record_id, site, "output", rng),
                output_metadata={"format": "ARTI"},
                **common,
            )
        record.validate()
        records.append(record)
    return records


def reference_config(seed: int = FIXTURE_SEED) -> ScenarioConfig:
    return ScenarioConfig(seed=seed)


def fault_schedules() -> dict[str, FaultSchedule]:
    victim = peer_name(DEFAULT_ORGANIZATIONS[1], 2)
    return {
        "leader_crash": leader_crash_schedule(60_000, restart_after_ms=30_000),
        "peer_corrupt": peer_corrupt_schedule(victim, 120_000),
        "partition": partition_schedule(peer_name(DEFAULT_ORGANIZATIONS[0], 1), 90_000, 60_000),
    }


@dataclass(frozen=True)
class FixtureSet:
    root: Path
    records: Path
    workload: Path
    scenario: Path
    ledger: Path
    bundle: Path
    keys: Path
    report: Path
    tamper_manifest: Path
    faults: dict[str, Path]
    offchain: Path
    lifecycle_count: int = LIFECYCLE_COUNT
    tamper_k: int = TAMPER_K
    tamper_seed: int = TAMPER_SEED

    @classmethod
    def at(cls, root: str | Path) -> "FixtureSet":
        root = Path(root)
        return cls(
            root=root,
            records=root / "records.json",
            workload=root / "workload.json",
            scenario=root / "scenario.json",
            ledger=root / "ledger.jsonl",
            bundle=root / "bundle.jsonl",
            keys=root / "keys.json",
            report=root / "report.json",
            tamper_manifest=root / "tamper_manifest.json",
            faults={name: root / "faults" / f"{name}.json" for name in fault_schedules()},
            offchain=root / "offchain",
        )


def checksums(root: Path) -> bytes:
    lines = []
    for path in sorted(p for p in root.rglob("*") if p.is_file() and p.name != CHECKSUM_FILE):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        lines.append(f"{digest}  {path.relative_to(root).as_posix()}\n")
    return "".join(lines).encode()


def verify_checksums(root: str | Path) -> list[str]:
    """Names of files whose digests differ from the pinned checksum file."""
    root = Path(root)
    expected = (root / CHECKSUM_FILE).read_bytes()
    if expected == checksums(root):
        return []
    pinned = dict(reversed(line.split("  ", 1)) for line in expected.decode().splitlines())
    actual = dict(reversed(line.split("  ", 1)) for line in checksums(root).decode().splitlines())
    return sorted(name for name in pinned.keys() | actual.keys() if pinned.get(name) != actual.get(name))


def generate_fixtures(seed: int = FIXTURE_SEED, out_dir: str | Path = "fixtures/v1") -> FixtureSet:
    """Regenerate the whole corpus. The same seed always yields identical bytes."""
    from .sim import run_scenario

    fx = FixtureSet.at(out_dir)
    if fx.root.exists():
        shutil.rmtree(fx.root)
    fx.root.mkdir(parents=True)

    records = synthetic_records(RECORD_COUNT, seed)
    fx.records.write_bytes(canonical_json([r.to_json() for r in records]))
    config = reference_config(seed)
    fx.scenario.write_bytes(canonical_json(config.to_json()))
    workload = build_workload(records, LIFECYCLE_COUNT, seed=seed)
    workload.write(fx.workload)
    (fx.root / "faults").mkdir()
    for name, schedule in fault_schedules().items():
        schedule.write(fx.faults[name])

    report, sim = run_scenario(config, FaultSchedule(), workload)
    sim.consortium.save(fx.root)
    (fx.root / "genesis.jsonl").unlink()
    sim.reference_store().write(fx.ledger)
    fx.report.write_bytes(report.to_bytes())

    scratch = fx.root / "tampered.jsonl"
    shutil.copyfile(fx.ledger, scratch)
    manifest = tamper(scratch, k=TAMPER_K, seed=TAMPER_SEED)
    scratch.unlink()
    fx.tamper_manifest.write_bytes(manifest_bytes(manifest))

    fx.offchain.mkdir()
    for record in records[:3]:
        pointer = record.raw_data or record.input_data
        kind = "raw" if record.raw_data else "input"
        (fx.offchain / f"{record.id}.dat").write_bytes(file_bytes(record.id, kind, pointer.size_bytes))

    (fx.root / CHECKSUM_FILE).write_bytes(checksums(fx.root))
    return fx

#!/usr/bin/env python3
"""End-to-end attack-discovery demo against the modem simulator.

Stage 1 probes a mined command database as-is and classifies the crashes
(temporary / recoverable / permanent). Stage 2 fuzzes a hybrid command
whose simulator config hides a one-byte-away crash and reports how many
injections the mutation loop needed. Stage 3 exercises the Nv file
sandbox: a symlink escape that works on the default config and is
stopped by the hardened one.

    python3 scripts/run_attack_demo.py --budget 10000 --seed 1
"""

import argparse
import sys
import tempfile
from pathlib import Path

from rilmine.fixtures import gen_crash_suite, gen_mutation_target
from rilmine.harness import campaign, probe_nv_escape
from rilmine.sim import SimConfig
from rilmine.taint import payload_hex


def stage_probe() -> None:
    print("== stage 1: probe the crash suite ==")
    db, cfg, expected = gen_crash_suite()
    findings, stats = campaign(db, cfg, budget=0)
    for f in findings:
        shown = f.payload[:12].hex(" ") + (" ..." if len(f.payload) > 12 else "")
        print(f"  {f.crash_type:<11} {f.root_function:<55} {shown}")
    counts: dict = {}
    for f in findings:
        counts[f.crash_type] = counts.get(f.crash_type, 0) + 1
    print(f"  probes={stats.probes} classes={counts}")
    assert all(expected[f.root_function] == f.crash_type for f in findings)


def stage_mutate(budget: int, seed: int) -> None:
    print("== stage 2: mutate a hybrid command until it crashes ==")
    db, cfg, crash_payload = gen_mutation_target()
    rec = db.records[0]
    print(f"  as mined: {payload_hex(rec.payload)} (mask {rec.payload.mask})")
    findings, stats = campaign(db, cfg, budget=budget, seed=seed)
    if not findings:
        print(f"  no crash within {budget} injections")
        return
    f = findings[0]
    print(f"  crash:    {f.payload.hex(' ')} -> {f.crash_type} "
          f"after {f.execs} injections (corpus adds {stats.corpus_adds})")
    assert f.payload == crash_payload


def stage_nv_escape() -> None:
    print("== stage 3: Nv sandbox escape ==")
    with tempfile.TemporaryDirectory() as tmp:
        tmp_path = Path(tmp)
        for label, hardened in (("default", False), ("hardened", True)):
            cfg = SimConfig(sandbox_root=str(tmp_path / f"nv-{label}"),
                            symlink_check=hardened)
            rep = probe_nv_escape(cfg, str(tmp_path / f"outside-{label}"))
            verdict = "escaped" if rep.escaped else "contained"
            print(f"  {label:<9} dotdot={rep.dotdot_status} "
                  f"symlink-write={rep.write_status} -> {verdict}"
                  + (f" (leak at {rep.leak_path})" if rep.leak_path else ""))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--budget", type=int, default=10_000,
                    help="mutation injections per command")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)
    stage_probe()
    stage_mutate(args.budget, args.seed)
    stage_nv_escape()
    return 0


if __name__ == "__main__":
    sys.exit(main())

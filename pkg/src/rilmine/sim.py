"""Modem simulator: payload-matched crash behavior on a logical clock.

The world holds crash latches rather than a process model. A latch is
temporary (expires at a tick), recoverable (cleared by reboot), or
permanent (cleared only by reflash); the modem reports OUT_OF_SERVICE
while any latch is active. Dominance for introspection is
permanent > recoverable > temporary.

Behavior is table-driven: the first matching row decides the effect of an
injected payload. Matchers are byte sequences with ``..`` wildcards and an
optional trailing ``*`` for prefix matches.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

IN_SERVICE = "IN_SERVICE"
OUT_OF_SERVICE = "OUT_OF_SERVICE"

RSP_OK = 0x01
RSP_UNKNOWN = 0x7E

EFFECTS = ("ok", "temporary_crash", "recoverable_crash", "permanent_crash")


@dataclass(frozen=True)
class BehaviorRow:
    matcher: tuple  # int per byte, None = wildcard
    prefix: bool
    effect: str
    args: tuple = ()

    def matches(self, payload: bytes) -> bool:
        if self.prefix:
            if len(payload) < len(self.matcher):
                return False
        elif len(payload) != len(self.matcher):
            return False
        return all(m is None or payload[i] == m for i, m in enumerate(self.matcher))

    def to_text(self) -> str:
        toks = [".." if m is None else f"{m:02x}" for m in self.matcher]
        if self.prefix:
            toks.append("*")
        eff = self.effect
        if self.args:
            eff += "(" + ",".join(str(a) for a in self.args) + ")"
        return " ".join(toks) + " -> " + eff


@dataclass
class SimConfig:
    rows: list = field(default_factory=list)
    channel: str = "/dev/umts_ipc0"
    valid_codes: frozenset = frozenset({RSP_OK})
    default_recover_after: int = 3
    reboot_ticks: int = 6
    sandbox_root: str | None = None
    dotdot_check: bool = True
    symlink_check: bool = False

    def to_text(self) -> str:
        lines = [
            "# rilmine sim config v1",
            f"channel = {self.channel}",
            "valid_codes = " + " ".join(f"{c:02x}" for c in sorted(self.valid_codes)),
            f"recover_after = {self.default_recover_after}",
            f"reboot_ticks = {self.reboot_ticks}",
            f"dotdot_check = {'true' if self.dotdot_check else 'false'}",
            f"symlink_check = {'true' if self.symlink_check else 'false'}",
        ]
        if self.sandbox_root is not None:
            lines.append(f"sandbox_root = {self.sandbox_root}")
        lines.append("")
        lines += [r.to_text() for r in self.rows]
        return "\n".join(lines) + "\n"


class SimConfigError(ValueError):
    pass


def parse_sim_config(text: str) -> SimConfig:
    cfg = SimConfig()
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "->" in line:
            left, _, right = line.partition("->")
            toks = left.split()
            prefix = False
            if toks and toks[-1] == "*":
                prefix = True
                toks = toks[:-1]
            if not toks:
                raise SimConfigError(f"line {lineno}: empty matcher")
            matcher = []
            for t in toks:
                if t == "..":
                    matcher.append(None)
                else:
                    try:
                        v = int(t, 16)
                    except ValueError:
                        raise SimConfigError(f"line {lineno}: bad byte {t!r}") from None
                    if not 0 <= v <= 0xFF:
                        raise SimConfigError(f"line {lineno}: byte out of range {t!r}")
                    matcher.append(v)
            eff = right.strip()
            args: tuple = ()
            if "(" in eff:
                name, _, rest = eff.partition("(")
                if not rest.endswith(")"):
                    raise SimConfigError(f"line {lineno}: unclosed args")
                args = tuple(int(a) for a in rest[:-1].split(",") if a.strip())
                eff = name
            if eff not in EFFECTS:
                raise SimConfigError(f"line {lineno}: unknown effect {eff!r}")
            rows.append(BehaviorRow(tuple(matcher), prefix, eff, args))
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise SimConfigError(f"line {lineno}: expected key = value or matcher -> effect")
        key, val = key.strip(), val.strip()
        if key == "channel":
            cfg = replace(cfg, channel=val)
        elif key == "valid_codes":
            cfg = replace(cfg, valid_codes=frozenset(int(t, 16) for t in val.split()))
        elif key == "recover_after":
            cfg = replace(cfg, default_recover_after=int(val))
        elif key == "reboot_ticks":
            cfg = replace(cfg, reboot_ticks=int(val))
        elif key == "sandbox_root":
            cfg = replace(cfg, sandbox_root=val)
        elif key == "dotdot_check":
            cfg = replace(cfg, dotdot_check=val.lower() == "true")
        elif key == "symlink_check":
            cfg = replace(cfg, symlink_check=val.lower() == "true")
        else:
            raise SimConfigError(f"line {lineno}: unknown key {key!r}")
    cfg = replace(cfg, rows=rows)
    return cfg


def load_sim_config(path: str) -> SimConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_sim_config(fh.read())


@dataclass(frozen=True)
class Response:
    code: int | None  # None = modem gave no response
    state: str

    @property
    def responded(self) -> bool:
        return self.code is not None


class SimWorld:
    """One modem instance on a logical tick counter."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.tick = 0
        self.exec_count = 0
        self._temporaries: list[int] = []  # expiry ticks
        self._recoverable = False
        self._permanent = False

    # -- state ----------------------------------------------------------

    def _expire(self):
        self._temporaries = [t for t in self._temporaries if t > self.tick]

    def active_latch(self) -> str | None:
        self._expire()
        if self._permanent:
            return "permanent"
        if self._recoverable:
            return "recoverable"
        if self._temporaries:
            return "temporary"
        return None

    def query_state(self) -> str:
        return OUT_OF_SERVICE if self.active_latch() else IN_SERVICE

    # -- time -----------------------------------------------------------

    def advance(self, n: int = 1):
        assert n >= 0
        self.tick += n
        self._expire()

    def reboot(self):
        self.tick += self.config.reboot_ticks
        self._recoverable = False
        self._expire()

    def reflash(self):
        self.tick += self.config.reboot_ticks
        self._temporaries.clear()
        self._recoverable = False
        self._permanent = False

    # -- injection ------------------------------------------------------

    def inject(self, payload: bytes) -> Response:
        self.exec_count += 1
        self.tick += 1
        if self.query_state() == OUT_OF_SERVICE:
            return Response(None, OUT_OF_SERVICE)
        for row in self.config.rows:
            if not row.matches(payload):
                continue
            if row.effect == "ok":
                code = row.args[0] if row.args else RSP_OK
                return Response(code, self.query_state())
            if row.effect == "temporary_crash":
                after = row.args[0] if row.args else self.config.default_recover_after
                self._temporaries.append(self.tick + after)
            elif row.effect == "recoverable_crash":
                self._recoverable = True
            elif row.effect == "permanent_crash":
                self._permanent = True
            return Response(None, self.query_state())
        return Response(RSP_UNKNOWN, self.query_state())


# ---------------------------------------------------------------------------
# Nv file sandbox

@dataclass(frozen=True)
class NvRequest:
    op: str  # "read" | "write"
    path: str
    data: bytes | None = None


@dataclass(frozen=True)
class NvResult:
    status: str  # "ok" | "rejected" | "not-found" | "error"
    data: bytes | None = None
    reason: str | None = None


def nv_handle(config: SimConfig, req: NvRequest) -> NvResult:
    """File request against the sandbox root. The dotdot check is a bare
    substring test; containment of symlink targets is enforced only when
    symlink_check is set, so the default config follows planted links out
    of the sandbox."""
    root = config.sandbox_root
    if root is None:
        return NvResult("error", reason="no-sandbox-root")
    if req.op not in ("read", "write"):
        return NvResult("error", reason=f"bad-op:{req.op}")
    if config.dotdot_check and ".." in req.path:
        return NvResult("rejected", reason="dotdot")
    full = os.path.join(root, req.path.lstrip("/"))
    if config.symlink_check:
        real_root = os.path.realpath(root)
        real = os.path.realpath(full)
        if real != real_root and not real.startswith(real_root + os.sep):
            return NvResult("rejected", reason="symlink-escape")
    try:
        if req.op == "read":
            if not os.path.exists(full):
                return NvResult("not-found")
            with open(full, "rb") as fh:
                return NvResult("ok", data=fh.read())
        if req.data is None:
            return NvResult("error", reason="write-without-data")
        with open(full, "wb") as fh:
            fh.write(req.data)
        return NvResult("ok")
    except OSError as e:
        return NvResult("error", reason=type(e).__name__)

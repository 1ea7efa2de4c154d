"""Register-transfer IR for lifted vendor RIL binaries.

Programs arrive as JSON text (``ir_version: 1``, see docs/ir_format.md).
The model is a small P-Code-style language: varnodes addressed by
(space, offset, size) and twelve opcodes. Class metadata (hierarchy,
vtables, constructor/member lists) rides alongside the code because the
downstream analyses need it to resolve virtual calls.

IRProgram and everything hanging off it is immutable after load; analyses
only read, so a program can be shared across worker threads freely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

SPACES = ("const", "reg", "stack", "ram", "unique")

OPCODES = (
    "COPY",
    "LOAD",
    "STORE",
    "INT_ADD",
    "INT_SUB",
    "INT_EQUAL",
    "INT_NOTEQUAL",
    "CALL",
    "CALLIND",
    "BRANCH",
    "CBRANCH",
    "RETURN",
)

# Parameter/return type strings: "int", "bytes" (byte pointer), "str"
# (string pointer), "class:<Name>" (object pointer), "void" (returns only).
_SCALAR_TYPES = ("int", "bytes", "str", "void")


class ParseError(ValueError):
    """Raised on malformed program text; message carries the field path."""


class ValidationError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(str(d) for d in self.diagnostics)
        super().__init__(f"{len(self.diagnostics)} invariant violation(s): {lines}")


@dataclass(frozen=True)
class Varnode:
    """Storage cell (space, offset, size).

    const varnodes carry their literal value in ``offset``.  A stack
    varnode names the cell at that frame offset; passed as a pointer-typed
    call argument or used as a LOAD/STORE address operand it denotes the
    address of that cell (decompiler idiom for local arrays).
    """

    space: str
    offset: int
    size: int

    def __str__(self) -> str:
        return f"{self.space}:{self.offset:#x}:{self.size}"

    @property
    def is_const(self) -> bool:
        return self.space == "const"


@dataclass(frozen=True)
class Instruction:
    op: str
    output: Varnode | None = None
    inputs: tuple[Varnode, ...] = ()
    callee: str | None = None  # CALL only; CALLIND computes input[0]


@dataclass
class Block:
    id: int
    instructions: list[Instruction] = field(default_factory=list)
    successors: tuple[int, ...] = ()


@dataclass
class Param:
    name: str
    type: str


@dataclass
class Function:
    """One lifted function. Parameter k lives in varnode (reg, k, *)."""

    id: str
    name: str
    owning_class: str | None
    params: list[Param]
    return_type: str
    stack_size: int
    blocks: list[Block]

    def block(self, bid: int) -> Block:
        for b in self.blocks:
            if b.id == bid:
                return b
        raise KeyError(f"{self.id}: no block {bid}")

    def linear(self) -> list[tuple[int, int, Instruction]]:
        """Instructions in block declaration order as (block id, index, ins)."""
        cached = self.__dict__.get("_linear")
        if cached is None:
            cached = [
                (b.id, i, ins)
                for b in self.blocks
                for i, ins in enumerate(b.instructions)
            ]
            self.__dict__["_linear"] = cached
        return cached

    def linear_pos(self, bid: int, idx: int) -> int:
        cached = self.__dict__.get("_linear_pos")
        if cached is None:
            cached = {
                (b, i): n for n, (b, i, _) in enumerate(self.linear())
            }
            self.__dict__["_linear_pos"] = cached
        return cached[(bid, idx)]

    def param_index(self, v: Varnode) -> int | None:
        if v.space == "reg" and 0 <= v.offset < len(self.params):
            return v.offset
        return None


@dataclass
class ClassInfo:
    name: str
    parents: list[str] = field(default_factory=list)
    vtable_addr: int = 0
    vtable: list[str] = field(default_factory=list)
    constructors: list[str] = field(default_factory=list)
    members: list[str] = field(default_factory=list)


@dataclass
class IRProgram:
    name: str
    word_size: int = 8
    classes: list[ClassInfo] = field(default_factory=list)
    functions: list[Function] = field(default_factory=list)
    data: list[tuple[int, bytes]] = field(default_factory=list)
    externals: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._fn_by_id = {f.id: f for f in self.functions}
        self._cls_by_name = {c.name: c for c in self.classes}

    def fn(self, fid: str) -> Function:
        return self._fn_by_id[fid]

    def has_fn(self, fid: str) -> bool:
        return fid in self._fn_by_id

    def cls(self, name: str) -> ClassInfo:
        return self._cls_by_name[name]

    def has_cls(self, name: str) -> bool:
        return name in self._cls_by_name

    def is_external(self, name: str) -> bool:
        return name in self.externals

    def subclasses(self, name: str) -> list[str]:
        """Transitive subclasses of ``name``, excluding itself, in class
        declaration order (deterministic)."""
        out = []
        frontier = {name}
        changed = True
        while changed:
            changed = False
            for c in self.classes:
                if c.name in out or c.name in frontier:
                    continue
                if any(p in frontier or p in out for p in c.parents):
                    out.append(c.name)
                    changed = True
        return out

    def ancestors(self, name: str) -> list[str]:
        """Ancestor classes, root-most first (depth-first over parents)."""
        seen: list[str] = []

        def walk(n: str):
            c = self._cls_by_name.get(n)
            if c is None:
                return
            for p in c.parents:
                walk(p)
                if p not in seen:
                    seen.append(p)

        walk(name)
        return seen

    def read_bytes(self, addr: int, n: int) -> bytes | None:
        for base, blob in self.data:
            if base <= addr and addr + n <= base + len(blob):
                return blob[addr - base : addr - base + n]
        return None

    def read_cstring(self, addr: int) -> str | None:
        for base, blob in self.data:
            if base <= addr < base + len(blob):
                chunk = blob[addr - base :]
                end = chunk.find(b"\x00")
                if end < 0:
                    end = len(chunk)
                return chunk[:end].decode("ascii", errors="replace")
        return None


@dataclass(frozen=True)
class Diagnostic:
    invariant: str
    location: str
    message: str

    def __str__(self) -> str:
        return f"[{self.invariant}] {self.location}: {self.message}"


def format_site(fn_id: str, bid: int, idx: int) -> str:
    return f"{fn_id}@{bid}:{idx}"


def class_of_type(t: str) -> str | None:
    if t.startswith("class:"):
        return t.split(":", 1)[1]
    return None


# ---------------------------------------------------------------------------
# JSON decode/encode

def _varnode_from(obj, path: str) -> Varnode:
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: varnode must be an object")
    try:
        space, offset, size = obj["space"], obj["offset"], obj["size"]
    except KeyError as e:
        raise ParseError(f"{path}: varnode missing key {e}") from None
    if space not in SPACES:
        raise ParseError(f"{path}: unknown space {space!r}")
    if not isinstance(offset, int) or not isinstance(size, int) or size <= 0:
        raise ParseError(f"{path}: offset must be int, size a positive int")
    return Varnode(space, offset, size)


def _ins_from(obj, path: str) -> Instruction:
    op = obj.get("op")
    if op not in OPCODES:
        raise ParseError(f"{path}: unknown opcode {op!r}")
    out = _varnode_from(obj["out"], f"{path}.out") if "out" in obj else None
    ins = tuple(
        _varnode_from(v, f"{path}.in[{i}]") for i, v in enumerate(obj.get("in", []))
    )
    callee = obj.get("callee")
    if callee is not None and not isinstance(callee, str):
        raise ParseError(f"{path}: callee must be a string")
    return Instruction(op, out, ins, callee)


def _check_type_str(t, path: str) -> str:
    if not isinstance(t, str) or (
        t not in _SCALAR_TYPES and not t.startswith("class:")
    ):
        raise ParseError(f"{path}: bad type {t!r}")
    return t


def _function_from(obj, path: str) -> Function:
    for key in ("id", "name", "stack_size", "blocks"):
        if key not in obj:
            raise ParseError(f"{path}: missing key {key!r}")
    params = [
        Param(p["name"], _check_type_str(p["type"], f"{path}.params[{i}]"))
        for i, p in enumerate(obj.get("params", []))
    ]
    blocks = []
    for j, b in enumerate(obj["blocks"]):
        bp = f"{path}.blocks[{j}]"
        if "id" not in b:
            raise ParseError(f"{bp}: missing block id")
        blocks.append(
            Block(
                id=b["id"],
                instructions=[
                    _ins_from(x, f"{bp}.ins[{k}]") for k, x in enumerate(b.get("ins", []))
                ],
                successors=tuple(b.get("succ", [])),
            )
        )
    return Function(
        id=obj["id"],
        name=obj["name"],
        owning_class=obj.get("class"),
        params=params,
        return_type=_check_type_str(obj.get("return", "void"), f"{path}.return"),
        stack_size=obj["stack_size"],
        blocks=blocks,
    )


def _class_from(obj, path: str) -> ClassInfo:
    if "name" not in obj:
        raise ParseError(f"{path}: missing class name")
    return ClassInfo(
        name=obj["name"],
        parents=list(obj.get("parents", [])),
        vtable_addr=obj.get("vtable_addr", 0),
        vtable=list(obj.get("vtable", [])),
        constructors=list(obj.get("constructors", [])),
        members=list(obj.get("members", [])),
    )


def load_program(text: str) -> IRProgram:
    """Parse, link and validate one program.

    Raises ParseError (with a field path) on malformed input, and
    ValidationError listing every diagnostic when type invariants fail.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"line {e.lineno} col {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    if doc.get("ir_version") != 1:
        raise ParseError(f"unsupported ir_version {doc.get('ir_version')!r}")
    data = []
    for i, seg in enumerate(doc.get("data", [])):
        try:
            data.append((seg["addr"], bytes.fromhex(seg["hex"])))
        except (KeyError, ValueError) as e:
            raise ParseError(f"data[{i}]: {e}") from None
    prog = IRProgram(
        name=doc.get("name", "unnamed"),
        word_size=doc.get("word_size", 8),
        classes=[_class_from(c, f"classes[{i}]") for i, c in enumerate(doc.get("classes", []))],
        functions=[
            _function_from(f, f"functions[{i}]") for i, f in enumerate(doc.get("functions", []))
        ],
        data=data,
        externals=list(doc.get("externals", [])),
    )
    seen = set()
    for f in prog.functions:
        if f.id in seen:
            raise ParseError(f"duplicate function id {f.id!r}")
        seen.add(f.id)
    seen = set()
    for c in prog.classes:
        if c.name in seen:
            raise ParseError(f"duplicate class {c.name!r}")
        seen.add(c.name)
    _check_links(prog)
    diags = validate(prog)
    if diags:
        raise ValidationError(diags)
    return prog


def _check_links(p: IRProgram):
    """Dangling-reference scan; raises ParseError on the first hole."""
    for c in p.classes:
        for par in c.parents:
            if not p.has_cls(par):
                raise ParseError(f"class {c.name}: unknown parent {par!r}")
        for fid in c.vtable + c.constructors + c.members:
            if not p.has_fn(fid):
                raise ParseError(f"class {c.name}: dangling function ref {fid!r}")
    for f in p.functions:
        if f.owning_class is not None and not p.has_cls(f.owning_class):
            raise ParseError(f"{f.id}: unknown owning class {f.owning_class!r}")
        for bid, idx, ins in f.linear():
            if ins.op == "CALL":
                if ins.callee and not (p.has_fn(ins.callee) or p.is_external(ins.callee)):
                    raise ParseError(
                        f"{format_site(f.id, bid, idx)}: dangling callee {ins.callee!r}"
                    )


def validate(p: IRProgram) -> list[Diagnostic]:
    """Check every type invariant; returns one Diagnostic per violation."""
    out: list[Diagnostic] = []

    def bad(inv, loc, msg):
        out.append(Diagnostic(inv, loc, msg))

    ids = [f.id for f in p.functions]
    if len(ids) != len(set(ids)):
        bad("unique-function-ids", p.name, "duplicate function ids")
    if len(p.externals) != len(set(p.externals)):
        bad("unique-externals", p.name, "duplicate external names")

    spans = sorted((a, a + len(b)) for a, b in p.data)
    for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
        if s2 < e1:
            bad("data-overlap", p.name, f"segments [{s1:#x},{e1:#x}) and [{s2:#x},{e2:#x}) overlap")

    for c in p.classes:
        stack = [c.name]
        seen = set()
        while stack:
            n = stack.pop()
            if n == c.name and seen:
                bad("acyclic-parents", c.name, "class participates in a parent cycle")
                break
            if n in seen:
                continue
            seen.add(n)
            if p.has_cls(n):
                stack.extend(p.cls(n).parents)
        for fid in c.vtable:
            if not p.has_fn(fid):
                bad("vtable-resolves", c.name, f"vtable entry {fid!r} missing")

    for f in p.functions:
        if f.owning_class is not None:
            ok = (
                f.params
                and f.params[0].name == "this"
                and class_of_type(f.params[0].type) == f.owning_class
            )
            if not ok:
                bad(
                    "member-this-param",
                    f.id,
                    f"member of {f.owning_class} must take this: class:{f.owning_class} first",
                )
        block_ids = {b.id for b in f.blocks}
        if len(block_ids) != len(f.blocks):
            bad("unique-block-ids", f.id, "duplicate block ids")
        for b in f.blocks:
            for s in b.successors:
                if s not in block_ids:
                    bad("successors-local", f"{f.id}@{b.id}", f"successor {s} not in function")
            for idx, ins in enumerate(b.instructions):
                loc = format_site(f.id, b.id, idx)
                for v in ins.inputs + ((ins.output,) if ins.output else ()):
                    if v.space == "stack" and not (
                        0 <= v.offset and v.offset + v.size <= f.stack_size
                    ):
                        bad("stack-bounds", loc, f"{v} outside stack_size {f.stack_size}")
                if ins.op == "CALL" and not ins.callee:
                    bad("call-has-callee", loc, "CALL without resolved callee")
                if ins.op == "CALLIND":
                    if ins.callee:
                        bad("callind-unresolved", loc, "CALLIND must not carry a callee")
                    if not ins.inputs:
                        bad("callind-target", loc, "CALLIND needs input[0] = computed target")
                if ins.op in ("INT_EQUAL", "INT_NOTEQUAL"):
                    if len(ins.inputs) != 2 or ins.output is None or ins.output.size != 1:
                        bad("cmp-shape", loc, f"{ins.op} wants 2 inputs and a 1-byte output")
    return out


# ---------------------------------------------------------------------------
# Encode

def _varnode_to(v: Varnode) -> dict:
    return {"space": v.space, "offset": v.offset, "size": v.size}


def _ins_to(x: Instruction) -> dict:
    d: dict = {"op": x.op}
    if x.output is not None:
        d["out"] = _varnode_to(x.output)
    if x.inputs:
        d["in"] = [_varnode_to(v) for v in x.inputs]
    if x.callee is not None:
        d["callee"] = x.callee
    return d


def program_to_dict(p: IRProgram) -> dict:
    return {
        "ir_version": 1,
        "name": p.name,
        "word_size": p.word_size,
        "classes": [
            {
                "name": c.name,
                "parents": c.parents,
                "vtable_addr": c.vtable_addr,
                "vtable": c.vtable,
                "constructors": c.constructors,
                "members": c.members,
            }
            for c in p.classes
        ],
        "functions": [
            {
                "id": f.id,
                "name": f.name,
                **({"class": f.owning_class} if f.owning_class else {}),
                "params": [{"name": q.name, "type": q.type} for q in f.params],
                "return": f.return_type,
                "stack_size": f.stack_size,
                "blocks": [
                    {
                        "id": b.id,
                        "succ": list(b.successors),
                        "ins": [_ins_to(x) for x in b.instructions],
                    }
                    for b in f.blocks
                ],
            }
            for f in p.functions
        ],
        "data": [{"addr": a, "hex": blob.hex()} for a, blob in p.data],
        "externals": p.externals,
    }


def serialize(p: IRProgram) -> str:
    return json.dumps(program_to_dict(p), indent=1)


def reaching_def(f: Function, v: Varnode, before: int) -> tuple[int, Instruction] | None:
    """Nearest instruction writing exactly ``v`` before linear position
    ``before``; None when the value enters the function from outside."""
    lin = f.linear()
    for pos in range(before - 1, -1, -1):
        ins = lin[pos][2]
        if ins.output == v:
            return pos, ins
    return None

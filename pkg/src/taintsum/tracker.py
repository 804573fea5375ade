"""Concrete IR interpreter with byte-granular shadow state.

Two tracking modes share identical concrete semantics:

  * instr:  every instruction propagates tags (explicit flows only);
  * hybrid: instruction-level propagation runs in user code, is suppressed
    inside library functions that carry rule programs, and the rules are
    applied at the outermost library call's return point against the
    recorded argument values.

Tainting is observation-only: concrete execution never depends on it.
"""

from __future__ import annotations

import json
import math
import struct as _struct
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .ir import (
    Alloca, Array, BinOp, Br, Call, Char, ConstInt, Float, Function, Gep,
    GlobalRef, Instr, Int, Jmp, Load, Module, Operand, Ptr, Ret, Store,
    StructRef, Temp, Type, Void, align_of, align_up, field_offset,
    field_path_offset, size_of, validate_module,
)
from .rules import (
    GATHER_FIXED, GATHER_STRING, READ_OUT, SET_FIXED, SET_STRING,
    TaintRuleProgram,
)

PAGE = 4096
GLOBALS_BASE = 0x1000
DEFAULT_MEMORY = 16 * 1024 * 1024
DEFAULT_STEP_BUDGET = 10 ** 8
DEFAULT_MAX_FRAMES = 512
_COND_TY = Int(64)


class MachineTrap(Exception):
    def __init__(self, kind: str, instr: Optional[str] = None, detail: str = ""):
        self.kind = kind
        self.instr = instr
        msg = kind + (f" at {instr}" if instr else "")
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


# ---------------------------------------------------------------------------
# Shadow store
# ---------------------------------------------------------------------------

class Tagmap:
    """Paged byte-granular shadow memory; absent pages read as tag 0 and
    pages are materialized only when a nonzero tag lands on them."""

    def __init__(self):
        self.pages: dict[int, bytearray] = {}

    def get_taint(self, addr: int, sz: int) -> int:
        tag = 0
        i = addr
        end = addr + sz
        while i < end:
            page = self.pages.get(i // PAGE)
            off = i % PAGE
            chunk = min(end - i, PAGE - off)
            if page is not None:
                for b in page[off:off + chunk]:
                    tag |= b
            i += chunk
        return tag

    def set_taint(self, addr: int, tag: int, sz: int) -> None:
        i = addr
        end = addr + sz
        while i < end:
            pno = i // PAGE
            off = i % PAGE
            chunk = min(end - i, PAGE - off)
            page = self.pages.get(pno)
            if page is None:
                if tag == 0:
                    i += chunk
                    continue
                page = self.pages.setdefault(pno, bytearray(PAGE))
            page[off:off + chunk] = bytes([tag]) * chunk
            i += chunk

    def or_taint(self, addr: int, tag: int, sz: int) -> None:
        if tag == 0:
            return
        for i in range(addr, addr + sz):
            page = self.pages.setdefault(i // PAGE, bytearray(PAGE))
            page[i % PAGE] |= tag

    def get_vector(self, addr: int, sz: int) -> bytes:
        out = bytearray(sz)
        for i in range(sz):
            page = self.pages.get((addr + i) // PAGE)
            if page is not None:
                out[i] = page[(addr + i) % PAGE]
        return bytes(out)

    def set_vector(self, addr: int, vec: bytes) -> None:
        for i, b in enumerate(vec):
            pno = (addr + i) // PAGE
            page = self.pages.get(pno)
            if page is None:
                if b == 0:
                    continue
                page = self.pages.setdefault(pno, bytearray(PAGE))
            page[(addr + i) % PAGE] = b

    def nonzero_bytes(self) -> list[tuple[int, int]]:
        out = []
        for pno in sorted(self.pages):
            page = self.pages[pno]
            base = pno * PAGE
            for off, b in enumerate(page):
                if b:
                    out.append((base + off, b))
        return out

    def count_nonzero(self) -> int:
        return sum(1 for page in self.pages.values() for b in page if b)


# ---------------------------------------------------------------------------
# Taint configuration and the run report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SourceSpec:
    fn: str
    where: str                  # "param" | "ret"
    index: Optional[int] = None
    label: int = 1


@dataclass(frozen=True)
class SinkSpec:
    fn: str
    index: int


@dataclass(frozen=True)
class TaintConfig:
    sources: tuple[SourceSpec, ...] = ()
    sinks: tuple[SinkSpec, ...] = ()

    @staticmethod
    def from_json(doc: dict) -> "TaintConfig":
        sources = []
        for s in doc.get("sources", ()):
            label = int(s.get("label", 1))
            if not (1 <= label <= 255):
                raise ValueError(f"source label {label} outside one tag byte")
            sources.append(SourceSpec(s["fn"], s.get("where", "param"),
                                      s.get("index"), label))
        sinks = [SinkSpec(s["fn"], int(s["index"])) for s in doc.get("sinks", ())]
        return TaintConfig(tuple(sources), tuple(sinks))

    @staticmethod
    def load(path: str) -> "TaintConfig":
        with open(path, "r", encoding="utf-8") as fp:
            return TaintConfig.from_json(json.load(fp))


@dataclass(frozen=True)
class SinkHit:
    fn: str
    tag: int
    call_site: str


@dataclass(frozen=True)
class RunReport:
    exit_value: int
    shadow_ops_instr: int
    shadow_ops_rules: int
    instr_executed_total: int
    instr_executed_unins: int
    tainted_bytes_final: tuple[tuple[int, int], ...]
    sink_hits: tuple[SinkHit, ...]
    ret_tag: int

    def to_json(self) -> dict:
        return {
            "exitValue": self.exit_value,
            "shadowOpsInstr": self.shadow_ops_instr,
            "shadowOpsRules": self.shadow_ops_rules,
            "instrExecutedTotal": self.instr_executed_total,
            "instrExecutedUninstrumented": self.instr_executed_unins,
            "taintedBytesFinal": [list(x) for x in self.tainted_bytes_final],
            "sinkHits": [
                {"fn": h.fn, "tag": h.tag, "callSite": h.call_site}
                for h in self.sink_hits
            ],
            "retTag": self.ret_tag,
        }


# ---------------------------------------------------------------------------
# Value helpers
# ---------------------------------------------------------------------------

def _width(ty: Type) -> int:
    if isinstance(ty, Int):
        return ty.bits // 8
    if isinstance(ty, Float):
        return ty.bits // 8
    if isinstance(ty, Char):
        return 1
    if isinstance(ty, Ptr):
        return 8
    if isinstance(ty, Void):
        return 0
    raise MachineTrap("bad value type", detail=str(ty))


def _norm_int(v: int, ty: Type) -> int:
    if isinstance(ty, Char):
        return v & 0xFF
    if isinstance(ty, Ptr):
        return v & (2 ** 64 - 1)
    bits = ty.bits
    v &= (1 << bits) - 1
    if ty.signed and v >= 1 << (bits - 1):
        v -= 1 << bits
    return v


def _fold(vec: bytes) -> int:
    tag = 0
    for b in vec:
        tag |= b
    return tag


def _resize_vec(vec: bytes, n: int) -> bytes:
    if len(vec) == n:
        return vec
    if len(vec) > n:
        return vec[:n]
    return vec + bytes([_fold(vec)]) * (n - len(vec))


@dataclass
class _Frame:
    fn: Function
    temps: dict[str, object]
    tags: dict[str, bytes]
    block: int
    pc: int
    stack_mark: int
    fires_rules: bool = False
    arg_record: Optional[list[tuple[object, bytes]]] = None
    call_ins: Optional[Call] = None


# ---------------------------------------------------------------------------
# The machine
# ---------------------------------------------------------------------------

class Machine:
    def __init__(self, module: Module, *, mode: str = "instr",
                 rule_programs: Optional[Mapping[str, TaintRuleProgram]] = None,
                 taint_config: Optional[TaintConfig] = None,
                 mem_size: int = DEFAULT_MEMORY,
                 step_budget: int = DEFAULT_STEP_BUDGET,
                 max_frames: int = DEFAULT_MAX_FRAMES,
                 default_len: int = 64,
                 seed: int = 0):
        if mode not in ("instr", "hybrid"):
            raise ValueError(f"unknown mode {mode!r}")
        self.module = module
        self.mode = mode
        self.rules = dict(rule_programs or {})
        self.cfg = taint_config or TaintConfig()
        self.mem_size = mem_size
        self.memory = bytearray(mem_size)
        self.tagmap = Tagmap()
        self.ret_shadow = b""
        self.step_budget = step_budget
        self.max_frames = max_frames
        self.default_len = default_len
        self.seed = seed

        self.in_lib_depth = 0
        self.shadow_ops_instr = 0
        self.shadow_ops_rules = 0
        self.instr_total = 0
        self.instr_unins = 0
        self.sink_hits: list[SinkHit] = []

        self.global_addr: dict[str, int] = {}
        self._layout_globals()
        self.stack_ptr = mem_size
        self._frames: list[_Frame] = []
        self._labels = {
            f.name: {b.label: i for i, b in enumerate(f.blocks)}
            for f in module.functions.values()
        }
        self._sources = {}
        for s in self.cfg.sources:
            self._sources.setdefault(s.fn, []).append(s)
        self._sinks = {}
        for s in self.cfg.sinks:
            self._sinks.setdefault(s.fn, []).append(s)

    # -- memory ----------------------------------------------------------------

    def _layout_globals(self) -> None:
        addr = GLOBALS_BASE
        for g in self.module.globals.values():
            a = align_of(g.ty, self.module.structs)
            addr = align_up(addr, max(a, 1))
            sz = size_of(g.ty, self.module.structs)
            self.global_addr[g.name] = addr
            if g.init:
                self.memory[addr:addr + len(g.init)] = g.init
            addr += sz
        self.heap_ptr = align_up(addr, 16)
        self.globals_end = addr

    def alloc(self, n: int, align: int = 8) -> int:
        addr = align_up(self.heap_ptr, align)
        if addr + n >= self.mem_size // 2:
            raise MachineTrap("out of scratch memory")
        self.heap_ptr = addr + n
        return addr

    def _check_bounds(self, addr: int, sz: int, uid: Optional[str]) -> None:
        if addr < GLOBALS_BASE or addr + sz > self.mem_size:
            raise MachineTrap("out-of-bounds access", uid,
                              f"addr=0x{addr:x} size={sz}")

    def read_value(self, ty: Type, addr: int, uid: Optional[str] = None):
        w = _width(ty)
        self._check_bounds(addr, w, uid)
        raw = bytes(self.memory[addr:addr + w])
        if isinstance(ty, Float):
            return _struct.unpack("<f" if ty.bits == 32 else "<d", raw)[0]
        v = int.from_bytes(raw, "little")
        if isinstance(ty, Int) and ty.signed and v >= 1 << (ty.bits - 1):
            v -= 1 << ty.bits
        return v

    def write_value(self, ty: Type, addr: int, value, uid: Optional[str] = None):
        w = _width(ty)
        self._check_bounds(addr, w, uid)
        if isinstance(ty, Float):
            raw = _struct.pack("<f" if ty.bits == 32 else "<d", value)
        else:
            raw = (int(value) & (2 ** (w * 8) - 1)).to_bytes(w, "little")
        self.memory[addr:addr + w] = raw

    def write_bytes(self, addr: int, data: bytes) -> None:
        self._check_bounds(addr, len(data), None)
        self.memory[addr:addr + len(data)] = data

    def read_bytes(self, addr: int, n: int) -> bytes:
        self._check_bounds(addr, n, None)
        return bytes(self.memory[addr:addr + n])

    def scan_string(self, addr: int, cap: int) -> int:
        """Byte extent of a NUL-terminated region: terminator included,
        capped at `cap` when no terminator shows up."""
        end = min(addr + cap, self.mem_size)
        for i in range(addr, end):
            if self.memory[i] == 0:
                return i - addr + 1
        return max(end - addr, 0)

    # -- tags -------------------------------------------------------------------

    def _instrumented(self) -> bool:
        return self.mode == "instr" or self.in_lib_depth == 0

    def _operand_value(self, frame: _Frame, op: Operand, ty: Type):
        if isinstance(op, Temp):
            try:
                v = frame.temps[op.name]
            except KeyError:
                raise MachineTrap("undefined temporary", detail=f"%{op.name}")
            if isinstance(ty, Float):
                return float(v)
            return _norm_int(int(v), ty)
        if isinstance(op, GlobalRef):
            return self.global_addr[op.name]
        if isinstance(op, ConstInt):
            return float(op.value) if isinstance(ty, Float) else _norm_int(op.value, ty)
        return op.value if isinstance(ty, Float) else _norm_int(int(op.value), ty)

    def _operand_tags(self, frame: _Frame, op: Operand, n: int) -> bytes:
        if isinstance(op, Temp):
            return _resize_vec(frame.tags.get(op.name, b"\0"), n)
        return bytes(n)

    # -- calls -------------------------------------------------------------------

    def call_entry(self, fn_name: str, args: Sequence[object],
                   arg_tags: Optional[Sequence[Optional[bytes]]] = None) -> int:
        """Invoke a function as the program entry and run to completion;
        returns its (integer) result, 0 for void."""
        fn = self.module.functions.get(fn_name)
        if fn is None:
            raise MachineTrap("unknown entry function", detail=fn_name)
        if len(args) != len(fn.params):
            raise MachineTrap("entry argument count mismatch",
                              detail=f"{fn_name} wants {len(fn.params)}")
        vecs = []
        for i, (pname, pty) in enumerate(fn.params):
            w = _width(pty)
            vec = bytes(w)
            if arg_tags is not None and arg_tags[i]:
                vec = _resize_vec(arg_tags[i], w)
            vecs.append(vec)
        self._check_sinks(fn.name, [self._coerce(a, t) for a, (_, t) in
                                    zip(args, fn.params)], vecs, "<entry>")
        frame = self._make_frame(fn, list(args), vecs, call_ins=None)
        self._frames.append(frame)
        return self._run_loop()

    def _coerce(self, v, ty: Type):
        return float(v) if isinstance(ty, Float) else _norm_int(int(v), ty)

    def _make_frame(self, fn: Function, args: Sequence[object],
                    vecs: Sequence[bytes], call_ins: Optional[Call]) -> _Frame:
        if len(self._frames) >= self.max_frames:
            raise MachineTrap("stack overflow (frame cap)",
                              call_ins.uid if call_ins else None)
        temps: dict[str, object] = {}
        tags: dict[str, bytes] = {}
        for (pname, pty), v, vec in zip(fn.params, args, vecs):
            temps[pname] = self._coerce(v, pty)
            tags[pname] = vec
        frame = _Frame(fn, temps, tags, 0, 0, self.stack_ptr)
        if (self.mode == "hybrid" and self.in_lib_depth == 0
                and fn.name in self.rules):
            frame.fires_rules = True
            frame.arg_record = [(temps[p], tags[p]) for p, _ in fn.params]
            self.in_lib_depth += 1
        frame.call_ins = call_ins
        return frame

    def _check_sinks(self, fn_name: str, args, vecs, call_uid: str) -> None:
        if self.in_lib_depth > 0 or fn_name not in self._sinks:
            return
        fn = self.module.functions[fn_name]
        for spec in self._sinks[fn_name]:
            i = spec.index
            if i >= len(args):
                continue
            pty = fn.params[i][1]
            region = self._param_region(pty, args[i])
            if region is None:
                tag = _fold(vecs[i])
            else:
                tag = self.tagmap.get_taint(*region)
            if tag:
                self.sink_hits.append(SinkHit(fn_name, tag, call_uid))

    def _apply_sources(self, frame: _Frame, caller: Optional[_Frame]) -> None:
        if self.in_lib_depth > 0:
            return
        specs = self._sources.get(frame.fn.name)
        if not specs:
            return
        for spec in specs:
            if spec.where == "ret":
                w = len(self.ret_shadow) or _width(frame.fn.ret_ty)
                self.ret_shadow = bytes(
                    b | spec.label for b in _resize_vec(self.ret_shadow, w))
                continue
            i = spec.index or 0
            if i >= len(frame.fn.params):
                continue
            pty = frame.fn.params[i][1]
            value = frame.temps[frame.fn.params[i][0]]
            region = self._param_region(pty, value)
            if region is not None:
                self.tagmap.or_taint(region[0], spec.label, region[1])
            elif caller is not None and frame.call_ins is not None:
                op = frame.call_ins.args[i]
                if isinstance(op, Temp):
                    vec = caller.tags.get(op.name, bytes(_width(pty)))
                    caller.tags[op.name] = bytes(
                        b | spec.label for b in _resize_vec(vec, _width(pty)))

    def _param_region(self, ty: Type, value) -> Optional[tuple[int, int]]:
        """Shadow region named by a pointer-typed parameter value; None for
        scalars (their taint lives in the value shadow)."""
        if not isinstance(ty, Ptr) or not isinstance(value, int) or value == 0:
            return None
        pointee = ty.pointee
        if isinstance(pointee, (Char, Void)):
            return (value, self.scan_string(value, self.default_len))
        try:
            return (value, size_of(pointee, self.module.structs))
        except Exception:
            return None

    # -- interpreter -------------------------------------------------------------

    def _run_loop(self) -> int:
        exit_value = 0
        while self._frames:
            frame = self._frames[-1]
            block = frame.fn.blocks[frame.block]
            ins = block.instrs[frame.pc]
            self.instr_total += 1
            if self.instr_total > self.step_budget:
                raise MachineTrap("step budget exhausted", ins.uid)
            if self.mode == "hybrid" and self.in_lib_depth > 0:
                self.instr_unins += 1
            exit_value = self._step(frame, ins)
        return exit_value

    def _step(self, frame: _Frame, ins: Instr) -> int:
        live = self._instrumented()
        fn = frame.fn
        if isinstance(ins, Alloca):
            sz = size_of(ins.ty, self.module.structs)
            a = align_of(ins.ty, self.module.structs)
            addr = (self.stack_ptr - sz) & ~(max(a, 1) - 1)
            if addr <= self.heap_ptr:
                raise MachineTrap("stack overflow", ins.uid)
            self.stack_ptr = addr
            self.memory[addr:addr + sz] = bytes(sz)
            self.tagmap.set_taint(addr, 0, sz)     # allocation bookkeeping
            frame.temps[ins.dest] = addr
            frame.tags[ins.dest] = bytes(8)
            frame.pc += 1
        elif isinstance(ins, Load):
            addr = self._operand_value(frame, ins.addr, Ptr(ins.ty))
            frame.temps[ins.dest] = self.read_value(ins.ty, addr, ins.uid)
            w = _width(ins.ty)
            if live:
                frame.tags[ins.dest] = self.tagmap.get_vector(addr, w)
                self.shadow_ops_instr += 1
            else:
                frame.tags[ins.dest] = bytes(w)
            frame.pc += 1
        elif isinstance(ins, Store):
            addr = self._operand_value(frame, ins.addr, Ptr(ins.ty))
            value = self._operand_value(frame, ins.value, ins.ty)
            self.write_value(ins.ty, addr, value, ins.uid)
            if live:
                w = _width(ins.ty)
                self.tagmap.set_vector(addr, self._operand_tags(frame, ins.value, w))
                self.shadow_ops_instr += 1
            frame.pc += 1
        elif isinstance(ins, Gep):
            frame.temps[ins.dest] = self._gep_addr(frame, ins)
            if live:
                tag = _fold(self._operand_tags(frame, ins.base, 8))
                for idx in ins.indices:
                    tag |= _fold(self._operand_tags(frame, idx, 8))
                frame.tags[ins.dest] = bytes([tag]) * 8
                self.shadow_ops_instr += 1
            else:
                frame.tags[ins.dest] = bytes(8)
            frame.pc += 1
        elif isinstance(ins, BinOp):
            frame.temps[ins.dest] = self._binop(frame, ins)
            w = _width(ins.ty)
            if live:
                tag = (_fold(self._operand_tags(frame, ins.lhs, w))
                       | _fold(self._operand_tags(frame, ins.rhs, w)))
                frame.tags[ins.dest] = bytes([tag]) * w
                self.shadow_ops_instr += 1
            else:
                frame.tags[ins.dest] = bytes(w)
            frame.pc += 1
        elif isinstance(ins, Br):
            cond = self._operand_value(frame, ins.cond, _COND_TY)
            label = ins.then_label if cond != 0 else ins.else_label
            frame.block = self._labels[fn.name][label]
            frame.pc = 0
        elif isinstance(ins, Jmp):
            frame.block = self._labels[fn.name][ins.label]
            frame.pc = 0
        elif isinstance(ins, Call):
            return self._do_call(frame, ins)
        elif isinstance(ins, Ret):
            return self._do_ret(frame, ins)
        else:
            raise MachineTrap("unknown instruction", ins.uid)
        return 0

    def _gep_addr(self, frame: _Frame, ins: Gep) -> int:
        base = self._operand_value(frame, ins.base, Ptr(ins.base_ty))
        structs = self.module.structs
        t: Type = ins.base_ty
        first = self._operand_value(frame, ins.indices[0], Int(64))
        addr = base + first * size_of(t, structs)
        for idx in ins.indices[1:]:
            if isinstance(t, StructRef):
                decl = structs[t.name]
                fname, fty = decl.fields[idx.value]  # validated constant
                addr += field_offset(decl, fname, structs)
                t = fty
            elif isinstance(t, Array):
                i = self._operand_value(frame, idx, Int(64))
                addr += i * size_of(t.elem, structs)
                t = t.elem
            else:
                raise MachineTrap("malformed gep", ins.uid)
        return addr & (2 ** 64 - 1)

    def _binop(self, frame: _Frame, ins: BinOp):
        ty = ins.ty
        a = self._operand_value(frame, ins.lhs, ty)
        b = self._operand_value(frame, ins.rhs, ty)
        op = ins.op
        if isinstance(ty, Float):
            if op == "add":
                r = a + b
            elif op == "sub":
                r = a - b
            elif op == "mul":
                r = a * b
            elif op == "div":
                if b != 0.0:
                    r = a / b
                else:
                    r = math.copysign(math.inf, a) if a else math.nan
            elif op == "rem":
                r = math.fmod(a, b) if b != 0.0 else math.nan
            elif op == "cmp":
                return 1.0 if a == b else 0.0
            else:
                raise MachineTrap("float bit operation", ins.uid)
            if ty.bits == 32:
                r = _struct.unpack("<f", _struct.pack("<f", r))[0]
            return r
        bits = 8 if isinstance(ty, Char) else 64 if isinstance(ty, Ptr) else ty.bits
        if op == "add":
            r = a + b
        elif op == "sub":
            r = a - b
        elif op == "mul":
            r = a * b
        elif op in ("div", "rem"):
            if b == 0:
                raise MachineTrap("division by zero", ins.uid)
            q = abs(a) // abs(b)
            if (a < 0) != (b < 0):
                q = -q
            r = q if op == "div" else a - q * b
        elif op == "and":
            r = a & b
        elif op == "or":
            r = a | b
        elif op == "xor":
            r = a ^ b
        elif op == "shl":
            r = a << (b & (bits - 1))
        elif op == "shr":
            r = a >> (b & (bits - 1))   # arithmetic for signed, logical otherwise
        elif op == "cmp":
            r = 1 if a == b else 0
        else:
            raise MachineTrap("unknown op", ins.uid)
        return _norm_int(r, ty)

    def _do_call(self, frame: _Frame, ins: Call) -> int:
        callee = self.module.functions.get(ins.callee)
        if callee is None:
            raise MachineTrap("unresolved callee", ins.uid, f"@{ins.callee}")
        args = []
        vecs = []
        for (pname, pty), op in zip(callee.params, ins.args):
            args.append(self._operand_value(frame, op, pty))
            vecs.append(self._operand_tags(frame, op, _width(pty)))
        if self._instrumented() and ins.args:
            self.shadow_ops_instr += 1
        self._check_sinks(callee.name, args, vecs, ins.uid)
        frame.pc += 1
        self._frames.append(self._make_frame(callee, args, vecs, call_ins=ins))
        return 0

    def _do_ret(self, frame: _Frame, ins: Ret) -> int:
        fn = frame.fn
        value = 0
        if ins.value is not None:
            value = self._operand_value(frame, ins.value, fn.ret_ty)
        if self._instrumented():
            if ins.value is not None:
                self.ret_shadow = self._operand_tags(
                    frame, ins.value, _width(fn.ret_ty))
                self.shadow_ops_instr += 1
            else:
                self.ret_shadow = b""
        self.stack_ptr = frame.stack_mark
        self._frames.pop()
        caller = self._frames[-1] if self._frames else None
        if frame.fires_rules:
            self.in_lib_depth -= 1
            prog = self.rules.get(fn.name)
            if prog is not None:
                apply_rule_program(prog, frame.arg_record or [], self)
        self._apply_sources(frame, caller)
        if caller is not None and frame.call_ins is not None:
            dest = frame.call_ins.dest
            if dest is not None:
                caller.temps[dest] = self._coerce(value, fn.ret_ty)
                w = _width(fn.ret_ty)
                if self._instrumented():
                    caller.tags[dest] = _resize_vec(self.ret_shadow or bytes(w), w)
                else:
                    caller.tags[dest] = bytes(w)
        return int(value)



# ---------------------------------------------------------------------------
# Rule application
# ---------------------------------------------------------------------------

def _rule_region(machine: Machine, fn_name: str, slot,
                 arg_record) -> Optional[tuple[str, object]]:
    """Resolve a slot to ("mem", (addr, size-or-None)), ("nu", argindex),
    or ("ret", None); None means the step is a no-op (null pointer or an
    unresolvable slot).  A size of None marks string extents scanned at
    application time."""
    structs = machine.module.structs
    if slot.kind == "ret":
        return ("ret", None)
    if slot.kind == "global":
        base = machine.global_addr.get(slot.name)
        if base is None:
            return None
        gty = machine.module.globals[slot.name].ty
        off, leaf = (0, gty)
        if slot.field_path:
            off, leaf = field_path_offset(gty, slot.field_path, structs)
        return ("mem", (base + off, size_of(leaf, structs)))
    if slot.index is None or slot.index >= len(arg_record):
        return None
    value, _vec = arg_record[slot.index]
    if slot.field_path:
        # the recorded value is the struct pointer; offset into the pointee
        if not isinstance(value, int) or value == 0:
            return None
        fn = machine.module.functions.get(fn_name)
        if fn is None or slot.index >= len(fn.params):
            return None
        off, leaf = field_path_offset(fn.params[slot.index][1],
                                      slot.field_path, structs)
        return ("mem", (value + off, size_of(leaf, structs)))
    if isinstance(slot.ty, Ptr):
        if not isinstance(value, int) or value == 0:
            return None
        pointee = slot.ty.pointee
        if isinstance(pointee, (Char, Void)):
            return ("mem", (value, None))
        return ("mem", (value, size_of(pointee, structs)))
    return ("nu", slot.index)


def apply_rule_program(prog: TaintRuleProgram, arg_record, machine: Machine) -> None:
    """Execute a compiled rule program against the shadow state using the
    argument values recorded at call entry."""
    acc = 0
    out_tag = 0
    current_entry = -1

    for step in prog.steps:
        if step.entry != current_entry:
            current_entry = step.entry
            acc = 0
            out_tag = 0
        machine.shadow_ops_rules += 1
        loc = _rule_region(machine, prog.function, step.slot, arg_record)
        if loc is None:
            continue
        kind, payload = loc

        if step.op in (GATHER_FIXED, GATHER_STRING):
            if kind == "nu":
                acc |= _fold(arg_record[payload][1])
            elif kind == "ret":
                acc |= _fold(machine.ret_shadow)
            else:
                addr, sz = payload
                if sz is None or step.op == GATHER_STRING:
                    sz = machine.scan_string(addr, step.max_len
                                             or machine.default_len)
                acc |= machine.tagmap.get_taint(addr, sz)
        elif step.op == READ_OUT:
            if kind == "ret":
                out_tag = _fold(machine.ret_shadow)
            elif kind == "nu":
                out_tag = _fold(arg_record[payload][1])
            else:
                addr, sz = payload
                if sz is None or step.max_len is not None:
                    sz = machine.scan_string(addr, step.max_len
                                             or machine.default_len)
                out_tag = machine.tagmap.get_taint(addr, sz)
        elif step.op in (SET_FIXED, SET_STRING):
            tag = out_tag | acc
            if kind == "ret":
                w = step.nbytes if step.nbytes is not None else len(machine.ret_shadow)
                machine.ret_shadow = bytes([tag]) * w
            elif kind == "nu":
                pass        # by-value scalars have no caller-visible cell
            else:
                addr, sz = payload
                if sz is None or step.op == SET_STRING:
                    sz = machine.scan_string(addr, step.max_len
                                             or machine.default_len)
                machine.tagmap.set_taint(addr, tag, sz)


# ---------------------------------------------------------------------------
# Top-level run
# ---------------------------------------------------------------------------

def run(module: Module, entry: str, args: Sequence[int] = (),
        cfg: Optional[TaintConfig] = None, mode: str = "instr",
        rule_programs: Optional[Mapping[str, TaintRuleProgram]] = None,
        fallback: Sequence[str] = (), **machine_kw) -> RunReport:
    """Validate, execute, and report.  In hybrid mode every library
    function must either carry a rule program or be listed in `fallback`
    (falling back to instruction-level tracking)."""
    diags = validate_module(module)
    if diags:
        raise ValueError("module is not well-formed: "
                         + "; ".join(str(d) for d in diags[:5]))
    rule_programs = dict(rule_programs or {})
    if mode == "hybrid":
        missing = [f.name for f in module.library_functions()
                   if f.name not in rule_programs and f.name not in fallback]
        if missing:
            raise ValueError(
                "hybrid mode needs rules or an explicit fallback for: "
                + ", ".join(sorted(missing)))
    machine = Machine(module, mode=mode, rule_programs=rule_programs,
                      taint_config=cfg, **machine_kw)
    exit_value = machine.call_entry(entry, list(args))
    return RunReport(
        exit_value=exit_value,
        shadow_ops_instr=machine.shadow_ops_instr,
        shadow_ops_rules=machine.shadow_ops_rules,
        instr_executed_total=machine.instr_total,
        instr_executed_unins=machine.instr_unins,
        tainted_bytes_final=tuple(machine.tagmap.nonzero_bytes()),
        sink_hits=tuple(machine.sink_hits),
        ret_tag=_fold(machine.ret_shadow),
    )

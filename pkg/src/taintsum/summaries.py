"""Library-function summaries: complex-type flattening, source/target node
derivation with the node-to-slot binding, and reachability-based summary
generation over the dependency graph.

A summary is the aggregated relation  output slot <- {input slots}  where a
slot names a parameter, a global, or the return value, optionally refined
by a field path into a struct.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .ir import (
    Array, Call, ConstInt, Diagnostic, Function, Gep, GlobalRef, Instr, Load,
    Module, Ptr, Store, StructDecl, StructRef, Temp, Type, VOID,
    field_path_offset, is_prim_type, is_struct_like, type_str,
)
from .parser import parse_type as _parse_type, _Cursor, _tokenize, print_module
from .pdg import Pdg, PdgError, build_pdg, _is_summary_out_node


# ---------------------------------------------------------------------------
# Type flattening
# ---------------------------------------------------------------------------

def flatten_prim_types(structs: Mapping[str, StructDecl]) -> dict[str, frozenset[Type]]:
    """Flatten each struct/union declaration to its set of primitive leaf
    types.  Arrays flatten to their element, nested declarations recurse,
    and any pointer counts as a primitive leaf."""
    result: dict[str, frozenset[Type]] = {}

    def collect(decl: StructDecl, acc: set[Type]) -> None:
        for _, fty in decl.fields:
            t = fty
            while isinstance(t, Array):
                t = t.elem
            if is_prim_type(t):
                acc.add(t)
            elif isinstance(t, StructRef) and t.name in structs:
                collect(structs[t.name], acc)

    for name, decl in structs.items():
        acc: set[Type] = set()
        collect(decl, acc)
        result[name] = frozenset(acc)
    return result


# ---------------------------------------------------------------------------
# Slots and the node binding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlotRef:
    kind: str                           # "param" | "global" | "ret"
    index: Optional[int] = None         # param order
    name: Optional[str] = None          # global name
    ty: Type = VOID
    field_path: tuple[str, ...] = ()

    def sort_key(self) -> tuple:
        return ({"param": 0, "global": 1, "ret": 2}[self.kind],
                self.index if self.index is not None else -1,
                self.name or "", self.field_path)

    def __str__(self) -> str:
        if self.kind == "param":
            base = f"param{self.index}"
        elif self.kind == "global":
            base = f"@{self.name}"
        else:
            base = "ret"
        if self.field_path:
            base += "." + ".".join(self.field_path)
        return base

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "param":
            out["index"] = self.index
        elif self.kind == "global":
            out["name"] = self.name
        out["type"] = type_str(self.ty)
        out["fieldPath"] = list(self.field_path)
        return out

    @staticmethod
    def from_json(d: dict) -> "SlotRef":
        ty = _parse_type(_Cursor(_tokenize(d["type"]), 0))
        return SlotRef(d["kind"], d.get("index"), d.get("name"), ty,
                       tuple(d.get("fieldPath", ())))


@dataclass
class NodeBinding:
    sources: list[int] = field(default_factory=list)
    targets: list[int] = field(default_factory=list)
    wp: dict[int, SlotRef] = field(default_factory=dict)

    def add_source(self, node: int, slot: SlotRef) -> None:
        if node not in self.wp:
            self.wp[node] = slot
        if node not in self.sources:
            self.sources.append(node)

    def add_target(self, node: int, slot: SlotRef) -> None:
        if node not in self.wp:
            self.wp[node] = slot
        if node not in self.targets:
            self.targets.append(node)

    def merged_with(self, other: "NodeBinding") -> "NodeBinding":
        out = NodeBinding(list(self.sources), list(self.targets), dict(self.wp))
        for n in other.sources:
            out.add_source(n, other.wp[n])
        for n in other.targets:
            out.add_target(n, other.wp[n])
        return out


@dataclass(frozen=True)
class Summary:
    function: str
    entries: tuple[tuple[SlotRef, tuple[SlotRef, ...]], ...]
    control_deps: bool = False

    def outputs(self) -> tuple[SlotRef, ...]:
        return tuple(out for out, _ in self.entries)

    def to_json(self) -> dict:
        return {
            "function": self.function,
            "controlDeps": self.control_deps,
            "entries": [
                {"out": out.to_json(), "ins": [s.to_json() for s in ins]}
                for out, ins in self.entries
            ],
        }

    @staticmethod
    def from_json(d: dict) -> "Summary":
        entries = tuple(
            (SlotRef.from_json(e["out"]),
             tuple(SlotRef.from_json(s) for s in e["ins"]))
            for e in d["entries"]
        )
        return Summary(d["function"], entries, d["controlDeps"])


def _slot_field_ty(module: Module, base_ty: Type, path: tuple[str, ...]) -> Type:
    if not path:
        return base_ty
    _, leaf = field_path_offset(base_ty, path, module.structs)
    return leaf


def make_slot(module: Module, kind: str, *, index: int = None, name: str = None,
              base_ty: Type = VOID, path: tuple[str, ...] = ()) -> SlotRef:
    return SlotRef(kind, index=index, name=name,
                   ty=_slot_field_ty(module, base_ty, path), field_path=path)


# ---------------------------------------------------------------------------
# Syntactic address chains (the "ad-hoc instruction pattern" part)
# ---------------------------------------------------------------------------

def _chain_root(fn: Function, defs: Mapping[str, Instr], module: Module,
                op) -> Optional[tuple[str, object, tuple[str, ...]]]:
    """Walk an operand back through constant gep chains to a parameter or
    global root; returns (rootkind, root, field path) or None.

    A nonzero or variable leading index defeats field recovery (the slot
    degrades to the whole parameter/global); loads break the chain."""
    path: tuple[str, ...] = ()
    whole = False
    for _ in range(64):
        if isinstance(op, GlobalRef):
            return ("global", op.name, () if whole else path)
        if not isinstance(op, Temp):
            return None
        if op.name in fn.param_names():
            idx = fn.param_names().index(op.name)
            return ("param", idx, () if whole else path)
        d = defs.get(op.name)
        if not isinstance(d, Gep):
            return None
        seg, imprecise = _gep_field_names(module, d)
        if imprecise:
            whole = True
        path = seg + path
        op = d.base
    return None


def _gep_field_names(module: Module, gep: Gep) -> tuple[tuple[str, ...], bool]:
    first = gep.indices[0]
    imprecise = not (isinstance(first, ConstInt) and first.value == 0)
    names: list[str] = []
    t = gep.base_ty
    for idx in gep.indices[1:]:
        if isinstance(t, StructRef):
            decl = module.structs[t.name]
            fname, fty = decl.fields[idx.value]
            names.append(fname)
            t = fty
        elif isinstance(t, Array):
            # element offsets stay inside the field; the slot is the field
            t = t.elem
    return tuple(names), imprecise


def _defs_of(fn: Function) -> dict[str, Instr]:
    return {ins.defined_temp(): ins for ins in fn.instructions()
            if ins.defined_temp() is not None}


def _is_summary_in(g: Pdg, node_id: int) -> bool:
    """True when the node feeds a summarized callee (its outgoing d_gnrl
    edges were induced by a callee summary)."""
    return any(kind == "d_gnrl" and _is_summary_out_node(g, dst)
               for dst, kind in g.successors(node_id))


# ---------------------------------------------------------------------------
# Source and target node derivation
# ---------------------------------------------------------------------------

def _candidates(module: Module, fn: Function, g: Pdg):
    """Parameter and global candidates as (node ids, slot base, type)."""
    cands = []
    for i, (pname, pty) in enumerate(fn.params):
        cands.append((("param", i), [g.formal_in(i)], pty))
    for gname in module.globals:
        nodes = []
        for fname in g.included:
            nid = g.global_value_node(gname, fname)
            if nid is not None:
                nodes.append(nid)
        if nodes:
            cands.append((("global", gname), nodes, module.globals[gname].ty))
    return cands


def _base_slot(module: Module, fn: Function, root: tuple,
               path: tuple[str, ...]) -> SlotRef:
    kind, ident = root
    if kind == "param":
        return make_slot(module, "param", index=ident,
                         base_ty=fn.params[ident][1], path=path)
    return make_slot(module, "global", name=ident,
                     base_ty=module.globals[ident].ty, path=path)


def _struct_refinements(module: Module, fn: Function, g: Pdg, root: tuple,
                        cand_nodes: list[int], want_load: bool):
    """Shared pattern scan for struct-like candidates.

    Yields (node id, slot) for loads (sources) or stores (targets) whose
    address derives from the candidate through constant geps, and for
    summarized call arguments rooted at the candidate.
    """
    reach: set[int] = set()
    for n in cand_nodes:
        reach |= g.reachable_from(n, include_control_deps=False)
        reach.add(n)
    out = []
    for f in g.included.values():
        defs = _defs_of(f)
        for ins in f.instructions():
            if isinstance(ins, Gep):
                chain = _chain_root(f, defs, module, Temp(ins.dest))
                if chain is None or (chain[0], chain[1]) != root:
                    continue
                gnode = g.node_of_instr(ins.uid)
                if gnode not in reach:
                    continue
                nxt = g.find_next_use(ins.uid)
                if nxt is None:
                    continue
                nxt_ins = next(i for i in f.instructions() if i.uid == nxt)
                if want_load:
                    if isinstance(nxt_ins, Load) and nxt_ins.addr == Temp(ins.dest):
                        out.append((g.node_of_instr(nxt),
                                    _base_slot(module, fn, root, chain[2])))
                else:
                    if isinstance(nxt_ins, Store) and nxt_ins.addr == Temp(ins.dest):
                        out.append((g.node_of_instr(nxt),
                                    _base_slot(module, fn, root, chain[2])))
    return out


def _call_arg_bindings(module: Module, fn: Function, g: Pdg, root: tuple,
                       cand_nodes: list[int]):
    """Summarized-call arguments whose pointer derives from the candidate:
    composes the caller-side field path with the callee summary's slots."""
    reach: set[int] = set()
    for n in cand_nodes:
        reach |= g.reachable_from(n, include_control_deps=False)
        reach.add(n)
    ins_nodes = []     # (node, slot) feeding the callee
    out_nodes = []     # (node, slot) written by the callee
    for f in g.included.values():
        defs = _defs_of(f)
        for ins in f.instructions():
            if not isinstance(ins, Call) or ins.uid not in g.summarized_calls:
                continue
            for j, arg in enumerate(ins.args):
                chain = _chain_root(f, defs, module, arg)
                if chain is None or (chain[0], chain[1]) != root:
                    continue
                base_path = chain[2]
                ai = g.actual_in(ins.uid, j)
                if ai is not None and ai in reach:
                    if _is_summary_in(g, ai):
                        ins_nodes.append(
                            (ai, _base_slot(module, fn, root, base_path)))
                    for (cu, aj, fp), fnode in sorted(g._ai_field.items()):
                        if cu == ins.uid and aj == j:
                            ins_nodes.append(
                                (fnode,
                                 _base_slot(module, fn, root, base_path + fp)))
                for (cu, aj, fp), anode in sorted(g._ao.items()):
                    if cu == ins.uid and aj == j and cu in g.summarized_calls:
                        out_nodes.append(
                            (anode,
                             _base_slot(module, fn, root, base_path + fp)))
    return ins_nodes, out_nodes


def source_nodes(module: Module, fn: Function, g: Pdg) -> NodeBinding:
    """Input candidates: primitive params/globals bind directly; struct-like
    ones bind through field loads and summarized call arguments."""
    binding = NodeBinding()
    for root, nodes, ty in _candidates(module, fn, g):
        slot = _base_slot(module, fn, root, ())
        if is_prim_type(ty) and not is_struct_like(ty):
            for n in nodes:
                binding.add_source(n, slot)
            continue
        for n, s in _struct_refinements(module, fn, g, root, nodes, want_load=True):
            binding.add_source(n, s)
        ins_nodes, _ = _call_arg_bindings(module, fn, g, root, nodes)
        for n, s in ins_nodes:
            binding.add_source(n, s)
        if root[0] == "global":
            for n in nodes:
                if _is_summary_in(g, n):
                    binding.add_source(n, slot)
    binding.sources.sort()
    return binding


def target_nodes(module: Module, fn: Function, g: Pdg) -> NodeBinding:
    """Output candidates: every return instruction, stores that reach a
    global or pointer parameter, and summarized-call outputs."""
    binding = NodeBinding()
    for rid in g.return_nodes():
        binding.add_target(rid, make_slot(module, "ret", base_ty=fn.ret_ty))

    for root, nodes, ty in _candidates(module, fn, g):
        # only globals and pointer parameters name caller-visible storage
        if root[0] != "global" and not isinstance(ty, Ptr):
            continue

        # stores whose address chains back through constant geps
        for f in g.included.values():
            defs = _defs_of(f)
            for ins in f.instructions():
                if not isinstance(ins, Store):
                    continue
                chain = _chain_root(f, defs, module, ins.addr)
                if chain is not None and (chain[0], chain[1]) == root:
                    binding.add_target(g.node_of_instr(ins.uid),
                                       _base_slot(module, fn, root, chain[2]))
                    continue
                # stashed-pointer writes: load-then-store
                if isinstance(ins.addr, Temp):
                    d = defs.get(ins.addr.name)
                    if isinstance(d, Load):
                        lnode = g.node_of_instr(d.uid)
                        reach_ok = any(
                            lnode in g.reachable_from(n) for n in nodes)
                        if reach_ok and g.find_next_use(d.uid) == ins.uid:
                            binding.add_target(g.node_of_instr(ins.uid),
                                               _base_slot(module, fn, root, ()))
        _, out_nodes = _call_arg_bindings(module, fn, g, root, nodes)
        for n, s in out_nodes:
            binding.add_target(n, s)

    # globals written by summarized callees, regardless of local references
    for (cu, gname, fp), nid in sorted(g._gout.items()):
        binding.add_target(
            nid, make_slot(module, "global", name=gname,
                           base_ty=module.globals[gname].ty, path=fp))
    binding.targets.sort()
    return binding


# ---------------------------------------------------------------------------
# Summary generation
# ---------------------------------------------------------------------------

def summary_gen(binding: NodeBinding, g: Pdg,
                include_control_deps: bool = False) -> Summary:
    """Emit out <- in for every source/target pair connected in the graph
    whose slots differ, aggregated by output slot."""
    agg: dict[SlotRef, set[SlotRef]] = {}
    for ns in binding.sources:
        reach = g.reachable_from(ns, include_control_deps)
        for nt in binding.targets:
            if nt not in reach:
                continue
            s_in, s_out = binding.wp[ns], binding.wp[nt]
            if s_in == s_out:
                continue
            agg.setdefault(s_out, set()).add(s_in)
    entries = tuple(
        (out, tuple(sorted(agg[out], key=SlotRef.sort_key)))
        for out in sorted(agg, key=SlotRef.sort_key)
    )
    return Summary(g.function_name, entries, include_control_deps)


def summarize_function(module: Module, fn: Function | str,
                       callee_summaries: Mapping[str, Summary] | None = None,
                       include_control_deps: bool = False,
                       ) -> tuple[Pdg, NodeBinding, Summary]:
    if isinstance(fn, str):
        fn = module.functions[fn]
    g = build_pdg(module, fn, callee_summaries or {})
    binding = source_nodes(module, fn, g).merged_with(target_nodes(module, fn, g))
    return g, binding, summary_gen(binding, g, include_control_deps)


def _library_deps(module: Module, fn: Function) -> set[str]:
    """Library functions this one needs summaries for (first library
    function on every call path, looking through non-library callees)."""
    deps: set[str] = set()
    seen = {fn.name}

    def walk(f: Function) -> None:
        for ins in f.instructions():
            if not isinstance(ins, Call):
                continue
            callee = module.functions.get(ins.callee)
            if callee is None:
                continue
            if callee.is_library and callee.name != fn.name:
                deps.add(callee.name)
            elif callee.name not in seen:
                seen.add(callee.name)
                walk(callee)

    walk(fn)
    return deps


def summarize_library(module: Module, include_control_deps: bool = False,
                      ) -> tuple[dict[str, Summary], list[Diagnostic]]:
    """Summaries for every `library` function, callees before callers.

    Functions involved in recursion (directly or through their callees)
    are excluded with a diagnostic; at runtime they fall back to
    instruction-level tracking.
    """
    diags: list[Diagnostic] = []
    lib = {f.name: f for f in module.library_functions()}
    deps = {name: _library_deps(module, f) & set(lib) for name, f in lib.items()}

    order: list[str] = []
    placed: set[str] = set()
    excluded: set[str] = set()
    remaining = sorted(lib)
    while remaining:
        progress = False
        for name in list(remaining):
            if deps[name] & excluded:
                excluded.add(name)
                remaining.remove(name)
                diags.append(Diagnostic(
                    f"@{name} depends on an excluded library function"))
                progress = True
            elif deps[name] <= placed:
                order.append(name)
                placed.add(name)
                remaining.remove(name)
                progress = True
        if not progress:
            for name in remaining:
                diags.append(Diagnostic(
                    f"recursion cycle among library functions involving @{name};"
                    " excluded from summarization"))
                excluded.add(name)
            break

    summaries: dict[str, Summary] = {}
    for name in order:
        try:
            _, _, summary = summarize_function(
                module, lib[name], summaries, include_control_deps)
        except PdgError as e:
            diags.append(Diagnostic(f"@{name}: {e}"))
            continue
        summaries[name] = summary
    return summaries, diags


# ---------------------------------------------------------------------------
# Serialization helpers
# ---------------------------------------------------------------------------

def summary_to_text(s: Summary) -> str:
    return json.dumps(s.to_json(), indent=2) + "\n"


def summary_from_text(text: str) -> Summary:
    return Summary.from_json(json.loads(text))


def function_body_hash(fn: Function) -> str:
    m = Module(functions={fn.name: fn})
    return hashlib.sha256(print_module(m).encode()).hexdigest()[:16]

"""Per-function program dependency graphs.

A Pdg covers one root function plus any defined callees that lack
summaries (those are descended into and linked with parameter-passing
edges); callees that do have summaries contribute only call-site
ActualIn/ActualOut nodes and direct summary-induced dependency edges.

Edge vocabulary: cdep, d_gnrl, d_alias, def_use, raw, p_form, p_act,
p_fld, p_in, p_out, call.  Path traversal walks data edges plus the
parameter connectors; d_alias and call edges are never traversed, and
cdep only on request.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .ir import (
    Alloca, BinOp, Br, Call, ConstInt, Function, Gep, GlobalRef, Instr,
    Jmp, Load, Module, Operand, Ptr, Ret, Store, Temp, Type,
    is_struct_like, type_str,
)
from . import parser as _parser

TRAVERSABLE = frozenset(
    {"d_gnrl", "def_use", "raw", "p_form", "p_act", "p_fld", "p_in", "p_out"})
MAX_PATHS = 10_000
_EXIT = "<exit>"
_PTS_PATH_CAP = 6
_ANY = "*"


class PdgError(Exception):
    pass


@dataclass
class PdgNode:
    id: int
    kind: str                   # entry|formal_in|formal_out|actual_in|
                                # actual_out|field|global_value|call_site|
                                # return|general
    fn: str
    instr: Optional[str] = None
    param_index: Optional[int] = None
    arg_index: Optional[int] = None
    call_uid: Optional[str] = None
    global_name: Optional[str] = None
    field_path: tuple[str, ...] = ()
    ty: Optional[Type] = None
    label: str = ""


@dataclass(frozen=True)
class PdgEdge:
    src: int
    dst: int
    kind: str


@dataclass(frozen=True)
class Path:
    nodes: tuple[int, ...]
    kinds: tuple[str, ...]


class Pdg:
    """Built graph plus the lookup tables the summary derivation needs."""

    def __init__(self, module: Module, root: Function):
        self.module = module
        self.function_name = root.name
        self.root = root
        self.nodes: dict[int, PdgNode] = {}
        self.edges: list[PdgEdge] = []
        self.instr_index: dict[str, int] = {}
        self.included: dict[str, Function] = {}
        self.summarized_calls: dict[str, str] = {}   # call uid -> callee name
        self._edge_seen: set[tuple[int, int, str]] = set()
        self._entry: dict[str, int] = {}
        self._formal_in: dict[tuple[str, int], int] = {}
        self._formal_out: dict[tuple[str, int], int] = {}
        self._returns: dict[str, list[int]] = {}
        self._gv: dict[tuple[str, str], int] = {}
        self._ai: dict[tuple[str, int], int] = {}
        self._ao: dict[tuple[str, int, tuple[str, ...]], int] = {}
        self._ai_field: dict[tuple[str, int, tuple[str, ...]], int] = {}
        self._gout: dict[tuple[str, str, tuple[str, ...]], int] = {}
        self._attached: dict[str, list[int]] = {}    # instr uid -> node ids
        self._succ: dict[int, list[tuple[int, str]]] = {}

    # -- construction helpers ------------------------------------------------

    def _new_node(self, **kw) -> PdgNode:
        node = PdgNode(id=len(self.nodes), **kw)
        self.nodes[node.id] = node
        if node.instr is not None:
            self._attached.setdefault(node.instr, []).append(node.id)
        return node

    def _add_edge(self, src: int, dst: int, kind: str) -> None:
        key = (src, dst, kind)
        if key in self._edge_seen or src == dst:
            return
        self._edge_seen.add(key)
        self.edges.append(PdgEdge(src, dst, kind))
        self._succ.setdefault(src, []).append((dst, kind))

    # -- lookups --------------------------------------------------------------

    def entry_node(self, fn: Optional[str] = None) -> int:
        return self._entry[fn or self.function_name]

    def formal_in(self, i: int, fn: Optional[str] = None) -> int:
        return self._formal_in[(fn or self.function_name, i)]

    def return_nodes(self, fn: Optional[str] = None) -> list[int]:
        return list(self._returns.get(fn or self.function_name, []))

    def global_value_node(self, name: str, fn: Optional[str] = None) -> Optional[int]:
        return self._gv.get((fn or self.function_name, name))

    def actual_in(self, call_uid: str, arg: int) -> Optional[int]:
        return self._ai.get((call_uid, arg))

    def actual_outs(self, call_uid: str) -> list[int]:
        return [n for (cu, _, _), n in sorted(self._ao.items()) if cu == call_uid]

    def node_of_instr(self, uid: str) -> Optional[int]:
        return self.instr_index.get(uid)

    def successors(self, node_id: int) -> list[tuple[int, str]]:
        return self._succ.get(node_id, [])

    # -- traversal -------------------------------------------------------------

    def _allowed(self, include_control_deps: bool) -> frozenset[str]:
        if include_control_deps:
            return TRAVERSABLE | {"cdep"}
        return TRAVERSABLE

    def reachable_from(self, src: int, include_control_deps: bool = False) -> set[int]:
        """Brute-force-equivalent forward closure over traversable edges."""
        allowed = self._allowed(include_control_deps)
        seen = {src}
        stack = [src]
        while stack:
            n = stack.pop()
            for dst, kind in self._succ.get(n, ()):
                if kind in allowed and dst not in seen:
                    seen.add(dst)
                    stack.append(dst)
        seen.discard(src)
        return seen

    def find_path(self, src: int, dst: int, include_control_deps: bool = False,
                  max_paths: int = MAX_PATHS) -> list[Path]:
        """Depth-first enumeration of simple paths from src to dst.

        Stops after max_paths results; if the expansion budget runs out
        before any path materializes but dst is reachable, one shortest
        path is reconstructed so callers can still rely on nonemptiness.
        """
        if src == dst:
            return []
        allowed = self._allowed(include_control_deps)
        paths: list[Path] = []
        budget = max_paths * 20
        on_path: set[int] = set()

        def dfs(node: int, trail_nodes: list[int], trail_kinds: list[str]) -> bool:
            nonlocal budget
            if budget <= 0 or len(paths) >= max_paths:
                return False
            budget -= 1
            for nxt, kind in self._succ.get(node, ()):
                if kind not in allowed or nxt in on_path:
                    continue
                if nxt == dst:
                    paths.append(Path(tuple(trail_nodes + [nxt]),
                                      tuple(trail_kinds + [kind])))
                    if len(paths) >= max_paths:
                        return False
                    continue
                on_path.add(nxt)
                ok = dfs(nxt, trail_nodes + [nxt], trail_kinds + [kind])
                on_path.discard(nxt)
                if not ok:
                    return False
            return True

        on_path.add(src)
        dfs(src, [src], [])
        if not paths and dst in self.reachable_from(src, include_control_deps):
            paths.append(self._shortest_path(src, dst, allowed))
        return paths

    def _shortest_path(self, src: int, dst: int, allowed) -> Path:
        from collections import deque
        parent: dict[int, tuple[int, str]] = {}
        q = deque([src])
        while q:
            n = q.popleft()
            for nxt, kind in self._succ.get(n, ()):
                if kind in allowed and nxt not in parent and nxt != src:
                    parent[nxt] = (n, kind)
                    if nxt == dst:
                        q.clear()
                        break
                    q.append(nxt)
        nodes = [dst]
        kinds = []
        while nodes[-1] != src:
            p, k = parent[nodes[-1]]
            kinds.append(k)
            nodes.append(p)
        return Path(tuple(reversed(nodes)), tuple(reversed(kinds)))

    def find_next_use(self, instr_uid: str) -> Optional[str]:
        """Nearest later instruction (textual program order) using the
        temporary defined at instr_uid; None if the value is dead."""
        fn = self.included.get(instr_uid.split(":")[0])
        if fn is None:
            return None
        target = None
        for ins in fn.instructions():
            if ins.uid == instr_uid:
                target = ins.defined_temp()
                break
        if target is None:
            return None
        pos = fn.instr_positions()
        mypos = pos[instr_uid]
        best = None
        for ins in fn.instructions():
            if pos[ins.uid] <= mypos:
                continue
            if any(isinstance(op, Temp) and op.name == target
                   for op in ins.operands()):
                if best is None or pos[ins.uid] < pos[best]:
                    best = ins.uid
        return best

    # -- export ----------------------------------------------------------------

    def export_dot(self) -> str:
        lines = [f'digraph "{self.function_name}" {{',
                 '  node [shape=box, fontname="monospace"];']
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            label = n.label.replace("\\", "\\\\").replace('"', '\\"')
            lines.append(f'  n{nid} [label="{nid}: {label}"];')
        for e in sorted(self.edges, key=lambda e: (e.src, e.dst, e.kind)):
            lines.append(f'  n{e.src} -> n{e.dst} [label="{e.kind}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def export_json(self) -> dict:
        return {
            "function": self.function_name,
            "nodes": [
                {"id": nid, "kind": self.nodes[nid].kind,
                 "instr": self.nodes[nid].instr,
                 "label": self.nodes[nid].label}
                for nid in sorted(self.nodes)
            ],
            "edges": [
                {"src": e.src, "dst": e.dst, "kind": e.kind}
                for e in sorted(self.edges, key=lambda e: (e.src, e.dst, e.kind))
            ],
        }


# ---------------------------------------------------------------------------
# Flow-insensitive, field-sensitive points-to
# ---------------------------------------------------------------------------

def _pts_extend(path: tuple, indices: tuple[Operand, ...]) -> tuple:
    if path and path[-1] == _ANY:
        return path
    out = list(path)
    first = indices[0]
    if not (isinstance(first, ConstInt) and first.value == 0):
        out.append(None)            # shifted to a sibling object
    for idx in indices[1:]:
        out.append(idx.value if isinstance(idx, ConstInt) else None)
    if len(out) > _PTS_PATH_CAP:
        return (_ANY,)
    return tuple(out)


def _pts_compat(p1: tuple, p2: tuple) -> bool:
    if (p1 and p1[-1] == _ANY) or (p2 and p2[-1] == _ANY):
        p1 = p1[:-1] if p1 and p1[-1] == _ANY else p1
        p2 = p2[:-1] if p2 and p2[-1] == _ANY else p2
    for a, b in zip(p1, p2):
        if a is None or b is None or a == _ANY or b == _ANY:
            continue
        if a != b:
            return False
    return True


class _PointsTo:
    """pts: temp/param -> {(root, path)}; contents: root -> stored pointers.

    Roots: ("a", alloca uid), ("g", global), ("p", root param index).
    """

    def __init__(self, pdg: Pdg, module: Module):
        self.pdg = pdg
        self.module = module
        self.pts: dict[tuple[str, str], set] = {}
        self.contents: dict[tuple, set] = {}

    def _get(self, fn: str, name: str) -> set:
        return self.pts.setdefault((fn, name), set())

    def of_operand(self, fn: str, op: Operand) -> set:
        if isinstance(op, GlobalRef):
            return {(("g", op.name), ())}
        if isinstance(op, Temp):
            return self.pts.get((fn, op.name), set())
        return set()

    def solve(self) -> None:
        for i, (pname, pty) in enumerate(self.pdg.root.params):
            if isinstance(pty, Ptr):
                self._get(self.pdg.root.name, pname).add((("p", i), ()))
        changed = True
        while changed:
            changed = False
            for fn in self.pdg.included.values():
                for ins in fn.instructions():
                    changed |= self._transfer(fn, ins)

    def _union_into(self, dst: set, extra: Iterable) -> bool:
        before = len(dst)
        dst.update(extra)
        return len(dst) != before

    def _transfer(self, fn: Function, ins: Instr) -> bool:
        ch = False
        if isinstance(ins, Alloca):
            ch |= self._union_into(self._get(fn.name, ins.dest),
                                   {(("a", ins.uid), ())})
        elif isinstance(ins, Gep):
            base = self.of_operand(fn.name, ins.base)
            ext = {(r, _pts_extend(p, ins.indices)) for r, p in base}
            ch |= self._union_into(self._get(fn.name, ins.dest), ext)
        elif isinstance(ins, Load):
            src = set()
            for r, _ in self.of_operand(fn.name, ins.addr):
                src |= self.contents.get(r, set())
            if src:
                ch |= self._union_into(self._get(fn.name, ins.dest), src)
        elif isinstance(ins, Store):
            val = self.of_operand(fn.name, ins.value)
            if val:
                for r, _ in self.of_operand(fn.name, ins.addr):
                    ch |= self._union_into(self.contents.setdefault(r, set()), val)
        elif isinstance(ins, BinOp):
            blur = set()
            for op in (ins.lhs, ins.rhs):
                blur |= {(r, (_ANY,)) for r, _ in self.of_operand(fn.name, op)}
            if blur:
                ch |= self._union_into(self._get(fn.name, ins.dest), blur)
        elif isinstance(ins, Call):
            callee = self.module.functions.get(ins.callee)
            inlined = ins.uid not in self.pdg.summarized_calls and callee is not None
            if inlined:
                for j, (pname, _) in enumerate(callee.params):
                    if j < len(ins.args):
                        ch |= self._union_into(
                            self._get(callee.name, pname),
                            self.of_operand(fn.name, ins.args[j]))
                if ins.dest is not None:
                    rets = set()
                    for cins in callee.instructions():
                        if isinstance(cins, Ret) and cins.value is not None:
                            rets |= self.of_operand(callee.name, cins.value)
                    if rets:
                        ch |= self._union_into(self._get(fn.name, ins.dest), rets)
            elif ins.dest is not None:
                # a summarized callee may hand back any pointer argument
                ret = set()
                for a in ins.args:
                    ret |= self.of_operand(fn.name, a)
                if ret:
                    ch |= self._union_into(self._get(fn.name, ins.dest), ret)
        return ch

    def regions_compat(self, rs1: set, rs2: set) -> bool:
        for r1, p1 in rs1:
            for r2, p2 in rs2:
                if r1 == r2 and _pts_compat(p1, p2):
                    return True
        return False


# ---------------------------------------------------------------------------
# Control dependence
# ---------------------------------------------------------------------------

def _block_successors(fn: Function) -> dict[str, list[str]]:
    succ = {}
    for b in fn.blocks:
        term = b.instrs[-1]
        if isinstance(term, Br):
            succ[b.label] = [term.then_label, term.else_label]
        elif isinstance(term, Jmp):
            succ[b.label] = [term.label]
        else:
            succ[b.label] = [_EXIT]
    return succ


def postdominators(fn: Function) -> dict[str, set[str]]:
    """Iterative postdominator sets over the block CFG (virtual exit)."""
    succ = _block_successors(fn)
    labels = [b.label for b in fn.blocks]
    every = set(labels) | {_EXIT}
    pdom = {lbl: set(every) for lbl in labels}
    pdom[_EXIT] = {_EXIT}
    changed = True
    while changed:
        changed = False
        for lbl in reversed(labels):
            meet = set.intersection(*(pdom[s] for s in succ[lbl]))
            new = {lbl} | meet
            if new != pdom[lbl]:
                pdom[lbl] = new
                changed = True
    return pdom


def _ipdom(pdom: dict[str, set[str]], lbl: str) -> Optional[str]:
    strict = pdom[lbl] - {lbl}
    for s in strict:
        if pdom.get(s, set()) == strict:
            return s
    return None


def control_dependencies(fn: Function) -> dict[str, set[str]]:
    """Map block label -> set of controlling Br instruction uids, via the
    standard postdominator-frontier walk."""
    pdom = postdominators(fn)
    succ = _block_successors(fn)
    deps: dict[str, set[str]] = {b.label: set() for b in fn.blocks}
    for b in fn.blocks:
        term = b.instrs[-1]
        if not isinstance(term, Br):
            continue
        stop = _ipdom(pdom, b.label)
        for s in succ[b.label]:
            runner = s
            walked = set()
            while runner not in (stop, _EXIT, None) and runner not in walked:
                walked.add(runner)
                deps[runner].add(term.uid)
                runner = _ipdom(pdom, runner)
    return deps


# ---------------------------------------------------------------------------
# Builder
# ---------------------------------------------------------------------------

def _collect_included(module: Module, root: Function,
                      summaries: Mapping[str, object]) -> list[Function]:
    """Root plus transitive defined callees without summaries; rejects
    recursion and unresolvable callees."""
    order: list[Function] = []
    state: dict[str, int] = {}

    def visit(fn: Function, trail: list[str]) -> None:
        state[fn.name] = 1
        order.append(fn)
        for ins in fn.instructions():
            if not isinstance(ins, Call) or ins.callee in summaries:
                continue
            callee = module.functions.get(ins.callee)
            if callee is None:
                raise PdgError(
                    f"unresolved callee @{ins.callee} with no summary"
                    f" (called from @{fn.name} at {ins.uid})")
            if state.get(callee.name) == 1:
                raise PdgError(
                    "recursive call cycle: "
                    + " -> ".join(trail + [fn.name, callee.name]))
            if callee.name not in state:
                visit(callee, trail + [fn.name])
        state[fn.name] = 2

    visit(root, [])
    return order


def build_pdg(module: Module, fn: Function | str,
              callee_summaries: Optional[Mapping[str, object]] = None) -> Pdg:
    """Construct the dependency graph of `fn`, composing summarized callees
    at their call sites and descending into defined unsummarized ones."""
    if isinstance(fn, str):
        fn = module.functions[fn]
    summaries = dict(callee_summaries or {})
    summaries.pop(fn.name, None)     # never summarize the function itself
    g = Pdg(module, fn)

    for f in _collect_included(module, fn, summaries):
        g.included[f.name] = f
    for f in g.included.values():
        _build_function_nodes(g, f)
    for f in g.included.values():
        _build_call_sites(g, f, summaries)
    for f in g.included.values():
        _build_operand_edges(g, f)

    pts = _PointsTo(g, module)
    pts.solve()
    _build_memory_edges(g, pts)
    _build_control_edges(g)
    return g


def _label_for(ins: Instr) -> str:
    return _parser.instr_str(ins)


def _build_function_nodes(g: Pdg, fn: Function) -> None:
    entry = g._new_node(kind="entry", fn=fn.name,
                        label=f"<<ENTRY>> {fn.name}")
    g._entry[fn.name] = entry.id
    for i, (pname, pty) in enumerate(fn.params):
        fi = g._new_node(kind="formal_in", fn=fn.name, param_index=i, ty=pty,
                         label=f"FORMAL_IN: {i} {type_str(pty)}")
        fo = g._new_node(kind="formal_out", fn=fn.name, param_index=i, ty=pty,
                         label=f"FORMAL_OUT: {i} {type_str(pty)}")
        g._formal_in[(fn.name, i)] = fi.id
        g._formal_out[(fn.name, i)] = fo.id
        g._add_edge(entry.id, fi.id, "p_form")
        g._add_edge(fi.id, fo.id, "p_form")
        if is_struct_like(pty):
            sname = (pty.pointee if isinstance(pty, Ptr) else pty).name
            decl = g.module.structs.get(sname)
            for fidx, (fname, fty) in enumerate(decl.fields if decl else ()):
                fld = g._new_node(
                    kind="field", fn=fn.name, param_index=i,
                    field_path=(fname,), ty=fty,
                    label=f"{type_str(fty)} arg_pos: {i} -f_id: {fidx}")
                g._add_edge(fi.id, fld.id, "p_fld")

    for ins in fn.instructions():
        if isinstance(ins, Call):
            node = g._new_node(kind="call_site", fn=fn.name, instr=ins.uid,
                               call_uid=ins.uid, label=_label_for(ins))
        elif isinstance(ins, Ret):
            node = g._new_node(kind="return", fn=fn.name, instr=ins.uid,
                               ty=fn.ret_ty, label=_label_for(ins))
            g._returns.setdefault(fn.name, []).append(node.id)
        else:
            node = g._new_node(kind="general", fn=fn.name, instr=ins.uid,
                               label=_label_for(ins))
        g.instr_index[ins.uid] = node.id

    # one static value node per referenced global
    for ins in fn.instructions():
        for op in ins.operands():
            if isinstance(op, GlobalRef) and (fn.name, op.name) not in g._gv:
                _ensure_global_node(g, fn.name, op.name)


def _ensure_global_node(g: Pdg, fn_name: str, gname: str) -> int:
    key = (fn_name, gname)
    if key not in g._gv:
        decl = g.module.globals.get(gname)
        node = g._new_node(kind="global_value", fn=fn_name, global_name=gname,
                           ty=decl.ty if decl else None,
                           label=f"GLOBAL_VALUE:@{gname}")
        g._gv[key] = node.id
    return g._gv[key]


def _build_call_sites(g: Pdg, fn: Function, summaries: Mapping[str, object]) -> None:
    for ins in fn.instructions():
        if not isinstance(ins, Call):
            continue
        cs = g.instr_index[ins.uid]
        callee = g.module.functions.get(ins.callee)
        summary = summaries.get(ins.callee)
        arg_types: list[Optional[Type]] = []
        for j in range(len(ins.args)):
            if callee is not None and j < len(callee.params):
                arg_types.append(callee.params[j][1])
            else:
                arg_types.append(None)
        for j, a in enumerate(ins.args):
            # binding to the call site is recorded on the node; a call->arg
            # edge would conduct return-flow back into sibling arguments
            ai = g._new_node(
                kind="actual_in", fn=fn.name, instr=ins.uid, call_uid=ins.uid,
                arg_index=j, ty=arg_types[j],
                label=f"ACTUAL_IN: {j} @{ins.callee}")
            g._ai[(ins.uid, j)] = ai.id

        if summary is not None:
            g.summarized_calls[ins.uid] = ins.callee
            _apply_summary_edges(g, fn, ins, summary)
        elif callee is not None:
            _link_inlined_call(g, fn, ins, callee)


def _summary_out_node(g: Pdg, fn: Function, ins: Call, slot) -> int:
    cs = g.instr_index[ins.uid]
    if slot.kind == "ret":
        return cs
    if slot.kind == "param":
        key = (ins.uid, slot.index, slot.field_path)
        if key not in g._ao:
            node = g._new_node(
                kind="actual_out", fn=fn.name, instr=ins.uid, call_uid=ins.uid,
                arg_index=slot.index, field_path=slot.field_path, ty=slot.ty,
                label=f"ACTUAL_OUT: {slot.index} @{ins.callee}"
                      + ("." + ".".join(slot.field_path) if slot.field_path else ""))
            g._ao[key] = node.id
            ai = g._ai.get((ins.uid, slot.index))
            if ai is not None:
                g._add_edge(ai, node.id, "p_act")
        return g._ao[key]
    key = (ins.uid, slot.name, slot.field_path)
    if key not in g._gout:
        node = g._new_node(
            kind="global_value", fn=fn.name, instr=ins.uid, call_uid=ins.uid,
            global_name=slot.name, field_path=slot.field_path, ty=slot.ty,
            label=f"GLOBAL_VALUE:@{slot.name}"
                  + ("." + ".".join(slot.field_path) if slot.field_path else "")
                  + f" (out of @{ins.callee})")
        g._gout[key] = node.id
    return g._gout[key]


def _summary_in_node(g: Pdg, fn: Function, ins: Call, slot) -> Optional[int]:
    if slot.kind == "param":
        if slot.index >= len(ins.args):
            return None
        ai = g._ai[(ins.uid, slot.index)]
        if not slot.field_path:
            return ai
        key = (ins.uid, slot.index, slot.field_path)
        if key not in g._ai_field:
            node = g._new_node(
                kind="field", fn=fn.name, instr=ins.uid, call_uid=ins.uid,
                arg_index=slot.index, field_path=slot.field_path, ty=slot.ty,
                label=f"{type_str(slot.ty) if slot.ty else '?'} arg_pos:"
                      f" {slot.index} -f_id: {'.'.join(slot.field_path)}")
            g._ai_field[key] = node.id
            g._add_edge(ai, node.id, "p_fld")
        return g._ai_field[key]
    if slot.kind == "global":
        return _ensure_global_node(g, fn.name, slot.name)
    return None


def _apply_summary_edges(g: Pdg, fn: Function, ins: Call, summary) -> None:
    for out_slot, in_slots in summary.entries:
        dst = _summary_out_node(g, fn, ins, out_slot)
        for in_slot in in_slots:
            src = _summary_in_node(g, fn, ins, in_slot)
            if src is not None:
                g._add_edge(src, dst, "d_gnrl")


def _link_inlined_call(g: Pdg, fn: Function, ins: Call, callee: Function) -> None:
    cs = g.instr_index[ins.uid]
    g._add_edge(cs, g._entry[callee.name], "call")
    for j in range(min(len(ins.args), len(callee.params))):
        ai = g._ai[(ins.uid, j)]
        g._add_edge(ai, g._formal_in[(callee.name, j)], "p_in")
        if isinstance(callee.params[j][1], Ptr):
            key = (ins.uid, j, ())
            if key not in g._ao:
                node = g._new_node(
                    kind="actual_out", fn=fn.name, instr=ins.uid,
                    call_uid=ins.uid, arg_index=j, ty=callee.params[j][1],
                    label=f"ACTUAL_OUT: {j} @{ins.callee}")
                g._ao[key] = node.id
            ao = g._ao[key]
            g._add_edge(g._formal_out[(callee.name, j)], ao, "p_out")
            g._add_edge(ai, ao, "p_act")
    for ret_node in g._returns.get(callee.name, ()):
        g._add_edge(ret_node, cs, "d_gnrl")


def _def_sites(g: Pdg, fn: Function) -> dict[str, int]:
    sites: dict[str, int] = {}
    for i, (pname, _) in enumerate(fn.params):
        sites[pname] = g._formal_in[(fn.name, i)]
    for ins in fn.instructions():
        d = ins.defined_temp()
        if d is not None:
            sites[d] = g.instr_index[ins.uid]
    return sites


def _build_operand_edges(g: Pdg, fn: Function) -> None:
    """def-use for temporaries, d_gnrl for parameter and global operands.
    Call arguments attach to their ActualIn node, everything else to the
    instruction's own node."""
    defs = _def_sites(g, fn)
    params = set(fn.param_names())
    for ins in fn.instructions():
        if isinstance(ins, Call):
            targets = [(op, g._ai[(ins.uid, j)]) for j, op in enumerate(ins.args)]
        else:
            targets = [(op, g.instr_index[ins.uid]) for op in ins.operands()]
        for op, dst in targets:
            if isinstance(op, Temp):
                src = defs.get(op.name)
                if src is None:
                    continue
                kind = "d_gnrl" if op.name in params else "def_use"
                g._add_edge(src, dst, kind)
            elif isinstance(op, GlobalRef):
                src = _ensure_global_node(g, fn.name, op.name)
                g._add_edge(src, dst, "d_gnrl")


def _is_summary_out_node(g: Pdg, node_id: int) -> bool:
    """True for nodes that stand for a summarized callee's outputs."""
    n = g.nodes[node_id]
    if n.kind == "actual_out":
        return True
    if n.kind == "global_value" and n.call_uid is not None:
        return True
    return n.kind == "call_site" and n.instr in g.summarized_calls


def _build_memory_edges(g: Pdg, pts: _PointsTo) -> None:
    writers: list[tuple[int, set]] = []
    readers: list[tuple[int, set]] = []
    ptr_defs: list[tuple[int, set]] = []

    for f in g.included.values():
        for ins in f.instructions():
            if isinstance(ins, Store):
                regions = pts.of_operand(f.name, ins.addr)
                if regions:
                    writers.append((g.instr_index[ins.uid], regions))
            elif isinstance(ins, Load):
                regions = pts.of_operand(f.name, ins.addr)
                if regions:
                    readers.append((g.instr_index[ins.uid], regions))
            elif isinstance(ins, Call) and ins.uid in g.summarized_calls:
                for j, a in enumerate(ins.args):
                    regions = pts.of_operand(f.name, a)
                    if regions:
                        readers.append((g._ai[(ins.uid, j)], regions))
            d = ins.defined_temp()
            if d is not None:
                rs = pts.pts.get((f.name, d), set())
                if rs:
                    ptr_defs.append((g.instr_index[ins.uid], rs))

    for (cu, j, fp), nid in sorted(g._ao.items()):
        fn_name = g.nodes[nid].fn
        call = next(i for i in g.included[fn_name].instructions() if i.uid == cu)
        regions = pts.of_operand(fn_name, call.args[j])
        if regions:
            writers.append((nid, regions))
    for (cu, gname, fp), nid in sorted(g._gout.items()):
        writers.append((nid, {(("g", gname), ())}))
    # static global nodes read by a callee summary act as memory readers;
    # plain address uses (operand edges into geps/stores) do not qualify
    summary_reader_gvs = {
        e.src for e in g.edges
        if e.kind == "d_gnrl" and g.nodes[e.src].kind == "global_value"
        and g.nodes[e.src].call_uid is None and _is_summary_out_node(g, e.dst)
    }
    for nid in sorted(summary_reader_gvs):
        readers.append((nid, {(("g", g.nodes[nid].global_name), ())}))

    for wnode, wregs in writers:
        for rnode, rregs in readers:
            if wnode != rnode and pts.regions_compat(wregs, rregs):
                g._add_edge(wnode, rnode, "raw")

    for i in range(len(ptr_defs)):
        for j in range(i + 1, len(ptr_defs)):
            n1, r1 = ptr_defs[i]
            n2, r2 = ptr_defs[j]
            if n1 != n2 and pts.regions_compat(r1, r2):
                g._add_edge(min(n1, n2), max(n1, n2), "d_alias")


def _build_control_edges(g: Pdg) -> None:
    for f in g.included.values():
        deps = control_dependencies(f)
        by_block = {b.label: [ins.uid for ins in b.instrs] for b in f.blocks}
        for label, brs in deps.items():
            for br_uid in sorted(brs):
                br_node = g.instr_index[br_uid]
                for uid in by_block[label]:
                    for nid in g._attached.get(uid, ()):
                        g._add_edge(br_node, nid, "cdep")


# ---------------------------------------------------------------------------
# findNode: first instruction matching a quoted pattern, in program order
# ---------------------------------------------------------------------------

_OPCODE_CLASSES = {
    "alloca": Alloca, "load": Load, "store": Store, "gep": Gep, "call": Call,
}


def find_node(g: Pdg, pattern: str) -> Optional[int]:
    """Resolve patterns like 'FORMAL_IN: 0 ptr(void)', 'GLOBAL_VALUE:@stu',
    'ret i64', or opcode forms such as 'store i32, @stu' against the root
    function; returns the node id of the first match or None."""
    pat = pattern.strip()
    if pat.startswith("FORMAL_IN:") or pat.startswith("FORMAL_OUT:"):
        is_in = pat.startswith("FORMAL_IN:")
        rest = pat.split(":", 1)[1].split()
        idx = int(rest[0])
        table = g._formal_in if is_in else g._formal_out
        return table.get((g.function_name, idx))
    if pat.startswith("GLOBAL_VALUE:"):
        name = pat.split(":", 1)[1].strip().lstrip("@")
        return g.global_value_node(name)
    if pat.startswith("<<ENTRY>>"):
        return g._entry.get(g.function_name)

    toks = _parser._tokenize(pat)
    # strip a leading "%var =" if present
    if len(toks) >= 2 and toks[0][0] == "pct" and toks[1][1] == "=":
        toks = toks[2:]
    if not toks:
        return None
    opcode = toks[0][1]
    cur = _parser._Cursor(toks[1:], 0)
    want_ty = None
    if not cur.at_end() and cur.peek()[0] != "at":
        try:
            want_ty = _parser.parse_type(cur)
        except Exception:
            want_ty = None
    want_global = None
    for kind, text, _ in toks:
        if kind == "at":
            want_global = text[1:]

    def primary_type(ins: Instr) -> Optional[Type]:
        if isinstance(ins, (Load, Store, BinOp, Alloca)):
            return ins.ty
        if isinstance(ins, Gep):
            return ins.base_ty
        if isinstance(ins, Call):
            return ins.ret_ty
        if isinstance(ins, Ret):
            return ins.ty
        return None

    for ins in g.root.instructions():
        if opcode == "ret":
            if not isinstance(ins, Ret):
                continue
        elif opcode in _OPCODE_CLASSES:
            if not isinstance(ins, _OPCODE_CLASSES[opcode]):
                continue
        elif isinstance(ins, BinOp):
            if ins.op != opcode:
                continue
        else:
            continue
        if want_ty is not None and primary_type(ins) != want_ty:
            continue
        if want_global is not None:
            refs = {op.name for op in ins.operands() if isinstance(op, GlobalRef)}
            if isinstance(ins, Call) and ins.callee == want_global:
                refs.add(want_global)
            if want_global not in refs:
                continue
        return g.instr_index.get(ins.uid)
    return None

"""Dependency-graph construction, traversal predicates, and exports.

Reachability and control-dependence results are cross-checked against
brute-force recomputations that only look at the exported edge list and
the block CFG.
"""

from collections import deque

import pytest

from taintsum import build_pdg, corpus, find_node, parse_module
from taintsum.ir import Br, Jmp, Ret
from taintsum.pdg import (
    PdgError, TRAVERSABLE, control_dependencies, postdominators,
)


def _adjacency(g, kinds):
    adj = {}
    for e in g.edges:
        if e.kind in kinds:
            adj.setdefault(e.src, []).append(e.dst)
    return adj


def brute_force_reachable(g, src, include_cdeps=False):
    """Independent closure: BFS over the exported edge list restricted to
    data, parameter-connector, summary (d_gnrl) and optionally cdep kinds."""
    kinds = set(TRAVERSABLE) | ({"cdep"} if include_cdeps else set())
    adj = _adjacency(g, kinds)
    seen = {src}
    q = deque([src])
    while q:
        n = q.popleft()
        for nxt in adj.get(n, ()):
            if nxt not in seen:
                seen.add(nxt)
                q.append(nxt)
    seen.discard(src)
    return seen


def _simple_paths_blocks(succ, start, goal):
    out = []
    def dfs(b, trail):
        if b == goal:
            out.append(tuple(trail))
            return
        for s in succ.get(b, ()):
            if s not in trail:
                dfs(s, trail + [s])
    dfs(start, [start])
    return out


def brute_force_postdoms(fn):
    """Postdominance via simple-path enumeration on the block CFG."""
    succ = {}
    for b in fn.blocks:
        term = b.instrs[-1]
        if isinstance(term, Br):
            succ[b.label] = [term.then_label, term.else_label]
        elif isinstance(term, Jmp):
            succ[b.label] = [term.label]
        else:
            succ[b.label] = ["<exit>"]
    result = {}
    labels = [b.label for b in fn.blocks]
    for lbl in labels:
        paths = _simple_paths_blocks(succ, lbl, "<exit>")
        if not paths:
            result[lbl] = set(labels) | {"<exit>"}
            continue
        common = set(paths[0])
        for p in paths[1:]:
            common &= set(p)
        result[lbl] = common
    result["<exit>"] = {"<exit>"}
    return result


@pytest.fixture(scope="module")
def memcpy_pdg(libcorpus):
    return build_pdg(libcorpus, "memcpy", {})


@pytest.fixture(scope="module")
def student_pdg(libcorpus, lib_summaries):
    return build_pdg(libcorpus, "student_cpy",
                     {"memcpy": lib_summaries["memcpy"]})


class TestBuild:
    def test_memcpy_return_reachable_from_dest(self, memcpy_pdg):
        g = memcpy_pdg
        src = g.formal_in(0)
        ret = g.return_nodes()[0]
        assert ret in g.reachable_from(src)
        path = g.find_path(src, ret)[0]
        assert set(path.kinds) <= {"d_gnrl", "def_use", "raw"}

    def test_single_ret_void_gives_two_nodes_no_data_edges(self):
        m = parse_module("fn @t() -> void {\nentry:\n  ret\n}\n")
        g = build_pdg(m, "t", {})
        assert sorted(n.kind for n in g.nodes.values()) == ["entry", "return"]
        assert g.edges == []

    def test_summarized_call_keeps_callee_body_out(self, student_pdg, libcorpus):
        g = student_pdg
        assert set(g.included) == {"student_cpy"}
        # no node carries a memcpy instruction id
        assert all((n.instr or "").split(":")[0] != "memcpy"
                   for n in g.nodes.values())
        ai_ao = [(g.nodes[e.src].kind, g.nodes[e.dst].kind)
                 for e in g.edges
                 if g.nodes[e.src].kind == "actual_in"
                 and g.nodes[e.dst].kind == "actual_out"]
        assert ai_ao, "expected summary-induced ActualIn->ActualOut edges"

    def test_unresolved_callee_without_summary(self):
        m = parse_module(
            "fn @f() -> void {\nentry:\n  call void @mystery()\n  ret\n}\n")
        with pytest.raises(PdgError, match="unresolved callee"):
            build_pdg(m, "f", {})

    def test_recursive_cycle_rejected(self):
        src = ("fn @a() -> void {\nentry:\n  call void @b()\n  ret\n}\n"
               "fn @b() -> void {\nentry:\n  call void @a()\n  ret\n}\n")
        m = parse_module(src)
        with pytest.raises(PdgError, match="recursive call cycle"):
            build_pdg(m, "a", {})

    def test_instr_index_total(self, memcpy_pdg, libcorpus):
        fn = libcorpus.functions["memcpy"]
        for ins in fn.instructions():
            assert ins.uid in memcpy_pdg.instr_index

    def test_edge_endpoints_exist(self, student_pdg):
        for e in student_pdg.edges:
            assert e.src in student_pdg.nodes and e.dst in student_pdg.nodes


class TestFindNode:
    def test_formal_in(self, memcpy_pdg):
        n = find_node(memcpy_pdg, "FORMAL_IN: 0 ptr(void)")
        node = memcpy_pdg.nodes[n]
        assert node.kind == "formal_in" and node.param_index == 0

    def test_return(self, memcpy_pdg):
        n = find_node(memcpy_pdg, "ret ptr(void)")
        assert memcpy_pdg.nodes[n].kind == "return"

    def test_global_absent(self, memcpy_pdg):
        assert find_node(memcpy_pdg, "GLOBAL_VALUE:@stu") is None

    def test_global_present(self, student_pdg):
        n = find_node(student_pdg, "GLOBAL_VALUE:@stu")
        assert student_pdg.nodes[n].global_name == "stu"

    def test_store_to_global_pattern(self, student_pdg):
        n = find_node(student_pdg, "store i32, i32* %dscp")
        assert n is not None and "store" in student_pdg.nodes[n].label

    def test_first_match_in_program_order(self, memcpy_pdg, libcorpus):
        n = find_node(memcpy_pdg, "load i64")
        uid = memcpy_pdg.nodes[n].instr
        pos = libcorpus.functions["memcpy"].instr_positions()
        others = [ins.uid for ins in libcorpus.functions["memcpy"].instructions()
                  if ins.uid != uid and "load i64" in
                  memcpy_pdg.nodes[memcpy_pdg.instr_index[ins.uid]].label]
        assert all(pos[uid] < pos[o] for o in others)


class TestFindNextUse:
    def test_single_use(self, libcorpus, student_pdg):
        # %sscp = gep ... is immediately loaded
        fn = libcorpus.functions["student_cpy"]
        gep_uid = next(i.uid for i in fn.instructions()
                       if getattr(i, "dest", None) == "sscp")
        nxt = student_pdg.find_next_use(gep_uid)
        assert nxt == next(i.uid for i in fn.instructions()
                           if getattr(i, "dest", None) == "sc")

    def test_dead_definition(self):
        m = parse_module(
            "fn @f() -> void {\nentry:\n  %x = alloca i32\n  ret\n}\n")
        g = build_pdg(m, "f", {})
        uid = m.functions["f"].blocks[0].instrs[0].uid
        assert g.find_next_use(uid) is None

    def test_uses_in_two_blocks_take_earlier_block(self):
        src = """fn @f(%c: i64) -> i64 {
entry:
  %x = add i64 1, 2
  br %c, one, two
one:
  %a = add i64 %x, 1
  ret i64 %a
two:
  %b = add i64 %x, 2
  ret i64 %b
}
"""
        m = parse_module(src)
        g = build_pdg(m, "f", {})
        fn = m.functions["f"]
        x_uid = fn.blocks[0].instrs[0].uid
        a_uid = fn.blocks[1].instrs[0].uid
        assert g.find_next_use(x_uid) == a_uid


class TestFindPath:
    def test_src_param_to_store(self, memcpy_pdg, libcorpus):
        fn = libcorpus.functions["memcpy"]
        store_uid = next(i.uid for i in fn.instructions()
                         if type(i).__name__ == "Store"
                         and getattr(i.value, "name", None) == "ch")
        paths = memcpy_pdg.find_path(memcpy_pdg.formal_in(1),
                                     memcpy_pdg.instr_index[store_uid])
        assert paths

    def test_self_path_is_empty(self, memcpy_pdg):
        n = memcpy_pdg.formal_in(0)
        assert memcpy_pdg.find_path(n, n) == []

    def test_counting_loop_needs_control_deps(self, libcorpus):
        g = build_pdg(libcorpus, "strlen_a", {})
        src = g.formal_in(0)
        ret = g.return_nodes()[0]
        assert g.find_path(src, ret, include_control_deps=False) == []
        assert g.find_path(src, ret, include_control_deps=True)

    def test_no_alias_edges_and_no_repeats(self, memcpy_pdg):
        g = memcpy_pdg
        for src in [g.formal_in(i) for i in range(3)]:
            for dst in list(g.nodes)[:20]:
                for p in g.find_path(src, dst, include_control_deps=True,
                                     max_paths=200):
                    assert "d_alias" not in p.kinds
                    assert "call" not in p.kinds
                    assert len(set(p.nodes)) == len(p.nodes)

    def test_alias_edges_exist_but_are_skipped(self, memcpy_pdg):
        assert any(e.kind == "d_alias" for e in memcpy_pdg.edges)

    def test_enumeration_respects_path_cap(self):
        # twelve stacked diamonds: 2^12 distinct simple paths x -> sink
        lines = ["fn @f(%x: i64) -> i64 {", "entry:"]
        prev = "%x"
        for i in range(12):
            lines.append(f"  %a{i} = add i64 {prev}, 1")
            lines.append(f"  %b{i} = add i64 {prev}, 2")
            lines.append(f"  %m{i} = add i64 %a{i}, %b{i}")
            prev = f"%m{i}"
        lines += [f"  ret i64 {prev}", "}"]
        m = parse_module("\n".join(lines) + "\n")
        g = build_pdg(m, "f", {})
        src = g.formal_in(0)
        ret = g.return_nodes()[0]
        capped = g.find_path(src, ret, max_paths=10)
        assert len(capped) == 10
        full = g.find_path(src, ret, max_paths=10_000)
        assert 1 <= len(full) <= 10_000
        assert all(p.nodes[0] == src and p.nodes[-1] == ret for p in capped)


class TestClosureOracle:
    def test_reachability_matches_brute_force(self, libcorpus, lib_summaries):
        for name in sorted(corpus.DRIVERS):
            g = build_pdg(libcorpus, name,
                          {k: v for k, v in lib_summaries.items() if k != name})
            assert len(g.nodes) <= 200
            for cdeps in (False, True):
                for src in list(g.nodes):
                    got = g.reachable_from(src, cdeps)
                    want = brute_force_reachable(g, src, cdeps)
                    assert got == want, (name, src, cdeps)

    def test_find_path_nonempty_iff_reachable(self, memcpy_pdg):
        g = memcpy_pdg
        for src in [g.formal_in(i) for i in range(3)]:
            reach = g.reachable_from(src)
            for dst in list(g.nodes):
                if dst == src:
                    continue
                assert bool(g.find_path(src, dst)) == (dst in reach)


class TestControlDependence:
    def test_postdoms_match_brute_force(self, libcorpus):
        for name in ("memcpy", "strlen_a", "strcpy_a", "memset_a"):
            fn = libcorpus.functions[name]
            assert postdominators(fn) == brute_force_postdoms(fn)

    def test_cdep_satisfies_frontier_property(self, libcorpus):
        # X control-dependent on br at A  iff  X postdominates some
        # successor of A but does not strictly postdominate A
        for name in sorted(corpus.DRIVERS):
            fn = libcorpus.functions[name]
            pdom = postdominators(fn)
            deps = control_dependencies(fn)
            succ = {}
            for b in fn.blocks:
                term = b.instrs[-1]
                if isinstance(term, Br):
                    succ[term.uid] = (b.label, [term.then_label, term.else_label])
            for block_label, br_uids in deps.items():
                for br_uid in br_uids:
                    a_label, a_succs = succ[br_uid]
                    assert any(block_label in pdom[s] or block_label == s
                               for s in a_succs)
                    assert not (block_label != a_label
                                and block_label in pdom[a_label])
            # completeness
            for br_uid, (a_label, a_succs) in succ.items():
                for x in fn.blocks:
                    lbl = x.label
                    dominates_succ = any(
                        lbl == s or lbl in pdom.get(s, set()) for s in a_succs)
                    strictly_pdoms_a = lbl != a_label and lbl in pdom[a_label]
                    if dominates_succ and not strictly_pdoms_a:
                        assert br_uid in deps[lbl], (name, lbl, br_uid)

    def test_loop_body_depends_on_loop_branch(self, libcorpus):
        fn = libcorpus.functions["memcpy"]
        deps = control_dependencies(fn)
        br_uid = next(b.instrs[-1].uid for b in fn.blocks if b.label == "cond")
        assert br_uid in deps["body"]
        assert br_uid not in deps["done"]


class TestExports:
    def test_two_node_digraph(self):
        m = parse_module("fn @t() -> void {\nentry:\n  ret\n}\n")
        dot = build_pdg(m, "t", {}).export_dot()
        assert dot.startswith('digraph "t" {')
        assert dot.count("[label=") == 2
        assert " -> " not in dot

    def test_dot_is_deterministic(self, libcorpus, lib_summaries):
        a = build_pdg(libcorpus, "student_cpy",
                      {"memcpy": lib_summaries["memcpy"]}).export_dot()
        b = build_pdg(libcorpus, "student_cpy",
                      {"memcpy": lib_summaries["memcpy"]}).export_dot()
        assert a == b

    def test_dot_structure_is_well_formed(self, memcpy_pdg):
        import re
        dot = memcpy_pdg.export_dot()
        assert dot.rstrip().endswith("}")
        body = dot[dot.index("{") + 1:dot.rindex("}")]
        node_re = re.compile(r'^\s*n\d+ \[label=".*"\];$')
        edge_re = re.compile(r'^\s*n\d+ -> n\d+ \[label="\w+"\];$')
        default_re = re.compile(r"^\s*node \[.*\];$")
        for line in filter(None, map(str.strip, body.splitlines())):
            assert (node_re.match(line) or edge_re.match(line)
                    or default_re.match(line)), line

    def test_json_dump_field_names(self, memcpy_pdg):
        doc = memcpy_pdg.export_json()
        assert doc["function"] == "memcpy"
        assert {"id", "kind", "instr", "label"} <= set(doc["nodes"][0])
        assert {"src", "dst", "kind"} == set(doc["edges"][0])

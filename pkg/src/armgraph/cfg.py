"""Static control-flow and call graph recovery.

Recursive traversal over A32 code, seeded with every function entry that
can be identified cheaply (symbols, the entry point, push-lr prologues)
plus call targets found on the way. Indirect jumps are left unresolved,
which fragments the graph the same way fast static analyses do.

Libraries passed to :func:`recover_cfg` are rebased above the main image.
Calls into the main image's PLT are redirected to a library export when
the PLT slot carries an import symbol whose name a library defines;
otherwise the PLT block itself stands in for the import.
"""

from __future__ import annotations

import enum
import heapq
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import networkx as nx

from .arm import Instruction, Kind, decode_instruction, is_prologue
from .elf import BinaryImage, SymbolKind
from .errors import CoverageOutsideUniverse, NoExecutableSection

logger = logging.getLogger(__name__)

LIBRARY_ALIGN = 0x1000000


class JumpKind(str, enum.Enum):
    FALLTHROUGH = "fallthrough"
    JUMP = "jump"
    COND_JUMP = "cond_jump"
    CALL = "call"
    CALL_RETURN = "call_return"


INTRAPROCEDURAL = frozenset(
    {JumpKind.FALLTHROUGH, JumpKind.JUMP, JumpKind.COND_JUMP, JumpKind.CALL_RETURN})


class FunctionSource(str, enum.Enum):
    SYMBOL = "symbol"
    ENTRY_POINT = "entry_point"
    CALL_TARGET = "call_target"
    PROLOGUE_HEURISTIC = "prologue_heuristic"


_SOURCE_PRIORITY = {
    FunctionSource.SYMBOL: 0,
    FunctionSource.ENTRY_POINT: 1,
    FunctionSource.CALL_TARGET: 2,
    FunctionSource.PROLOGUE_HEURISTIC: 3,
}


@dataclass(frozen=True)
class BasicBlock:
    start: int
    byte_string: bytes = field(repr=False)
    instruction_count: int
    is_syscall: bool
    terminator: Kind

    @property
    def end(self) -> int:
        return self.start + 4 * self.instruction_count

    @property
    def addresses(self) -> range:
        return range(self.start, self.end, 4)


class Edge(NamedTuple):
    src: int
    dst: int
    kind: JumpKind


@dataclass
class ControlFlowGraph:
    nodes: dict[int, BasicBlock] = field(default_factory=dict)
    edges: frozenset[Edge] = frozenset()

    def sorted_edges(self) -> list[Edge]:
        return sorted(self.edges, key=lambda e: (e.src, e.dst, e.kind.value))

    def edge_kind_counts(self) -> dict[str, int]:
        counts = {k.value: 0 for k in JumpKind}
        for e in self.edges:
            counts[e.kind.value] += 1
        return counts

    def to_networkx(self) -> nx.MultiDiGraph:
        g = nx.MultiDiGraph()
        for start, block in sorted(self.nodes.items()):
            g.add_node(start, block=block)
        for e in self.sorted_edges():
            g.add_edge(e.src, e.dst, key=e.kind.value, jumpkind=e.kind.value)
        return g


@dataclass(frozen=True)
class FunctionInfo:
    entry: int
    name: str | None
    source: FunctionSource
    # soname of the library the function lives in; None for the main image
    library: str | None = None


@dataclass(frozen=True)
class CallGraph:
    nodes: tuple[int, ...] = ()
    edges: tuple[tuple[int, int], ...] = ()

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(self.edges)
        return g


class Recovery(NamedTuple):
    cfg: ControlFlowGraph
    callgraph: CallGraph
    functions: list[FunctionInfo]


@dataclass(frozen=True)
class GraphStats:
    node_count: int = 0
    edge_count: int = 0
    weak_component_count: int = 0
    syscall_node_count: int = 0
    covered_addresses: frozenset[int] = frozenset()
    edge_kind_counts: dict = field(default_factory=dict, compare=False)


def identify_functions(image: BinaryImage, call_targets=()) -> list[FunctionInfo]:
    """Union of symbol, entry-point, call-target and prologue function starts.

    Duplicates are merged by address keeping the strongest source
    (symbol > entry_point > call_target > prologue_heuristic). Thumb
    (odd) addresses are ignored.
    """
    found: dict[int, FunctionInfo] = {}

    def offer(entry, name, source):
        # the entry point is kept even when it is not backed by code
        if entry % 4 or (source is not FunctionSource.ENTRY_POINT and image.read_word(entry) is None):
            return
        old = found.get(entry)
        if old is None or _SOURCE_PRIORITY[source] < _SOURCE_PRIORITY[old.source]:
            found[entry] = FunctionInfo(entry, name or (old.name if old else None), source)

    imports = _import_names(image, 0)
    for sym in image.symbols:
        if sym.kind is SymbolKind.FUNCTION and sym.defined and sym.vaddr:
            offer(sym.vaddr, sym.name, FunctionSource.SYMBOL)
    if not image.is_shared_object or image.entry_point:
        offer(image.entry_point, None, FunctionSource.ENTRY_POINT)
    for target in sorted(call_targets):
        offer(target, imports.get(target), FunctionSource.CALL_TARGET)
    for sec in image.executable_sections:
        data = sec.data
        for off in range(0, len(data) - 3, 4):
            if is_prologue(int.from_bytes(data[off:off + 4], "little")):
                offer(sec.vaddr + off, None, FunctionSource.PROLOGUE_HEURISTIC)
    return [found[a] for a in sorted(found)]


def _import_names(image: BinaryImage, delta: int) -> dict[int, str]:
    """Import names keyed by PLT stub address.

    Undefined function symbols with a nonzero value name their stub
    directly. Other stubs are matched through the GOT slot they load from,
    found by evaluating the usual ``add ip, pc, #a; add ip, ip, #b;
    ldr pc, [ip, #c]!`` sequence.
    """
    out = {}
    for sym in image.symbols:
        if not sym.defined and sym.vaddr and sym.kind is SymbolKind.FUNCTION:
            out.setdefault(sym.vaddr + delta, sym.name)
    if image.jump_slots:
        slots = dict(image.jump_slots)
        for sec in image.executable_sections:
            if "plt" not in sec.name:
                continue
            for addr in range(sec.vaddr, sec.end - 11, 4):
                slot = plt_slot(image.read_word, addr)
                if slot is not None and slot in slots:
                    out.setdefault(addr + delta, slots[slot])
    return out


def _rotated_imm(word: int) -> int:
    imm8 = word & 0xFF
    rot = ((word >> 8) & 0xF) * 2
    return ((imm8 >> rot) | (imm8 << (32 - rot))) & 0xFFFFFFFF if rot else imm8


def plt_slot(read_word, addr: int) -> int | None:
    """GOT slot loaded by a PLT stub starting at ``addr``, if it is one."""
    ip = None
    for i in range(4):
        word = read_word(addr + 4 * i)
        if word is None or word >> 28 != 0xE:
            return None
        if (word & 0x0E00F000) == 0x0200C000:  # ADD/SUB ip, Rn, #imm
            opcode = (word >> 21) & 0xF
            rn = (word >> 16) & 0xF
            if rn == 15:
                base = addr + 4 * i + 8
            elif rn == 12 and ip is not None:
                base = ip
            else:
                return None
            if opcode == 0b0100:
                ip = (base + _rotated_imm(word)) & 0xFFFFFFFF
            elif opcode == 0b0010:
                ip = (base - _rotated_imm(word)) & 0xFFFFFFFF
            else:
                return None
        elif (word & 0x0F5FF000) == 0x051CF000 and ip is not None:  # LDR pc, [ip, #imm](!)
            imm = word & 0xFFF
            return (ip + imm if word & (1 << 23) else ip - imm) & 0xFFFFFFFF
        else:
            return None
    return None


@dataclass
class _Region:
    start: int
    end: int
    data: bytes
    library: str | None


class _AddressSpace:
    """Main image at its own addresses, libraries stacked above it."""

    def __init__(self, image: BinaryImage, libraries):
        self.regions: list[_Region] = []
        self.imports: dict[int, str] = _import_names(image, 0)
        self.exports: dict[str, tuple[int, str]] = {}
        self.library_symbols: dict[int, str] = {}
        for sec in image.executable_sections:
            self.regions.append(_Region(sec.vaddr, sec.end, sec.data, None))
        top = max((s.end for s in image.sections), default=0)
        for lib in libraries:
            lo = min((s.vaddr for s in lib.sections), default=0)
            base = -(-max(top, 1) // LIBRARY_ALIGN) * LIBRARY_ALIGN
            delta = base - lo
            for sec in lib.executable_sections:
                self.regions.append(_Region(sec.vaddr + delta, sec.end + delta, sec.data, lib.soname))
            for sym in lib.symbols:
                if sym.kind is SymbolKind.FUNCTION and sym.defined and sym.vaddr and sym.vaddr % 4 == 0:
                    self.exports.setdefault(sym.name, (sym.vaddr + delta, lib.soname))
                    self.library_symbols.setdefault(sym.vaddr + delta, sym.name)
            for addr, name in _import_names(lib, delta).items():
                self.imports.setdefault(addr, name)
            top = max((s.end + delta for s in lib.sections), default=base)
        self.regions.sort(key=lambda r: r.start)

    def region(self, addr: int) -> _Region | None:
        for r in self.regions:
            if r.start <= addr and addr + 4 <= r.end:
                return r
        return None

    def word(self, addr: int) -> int | None:
        r = self.region(addr)
        if r is None:
            return None
        off = addr - r.start
        return int.from_bytes(r.data[off:off + 4], "little")

    def redirect(self, target: int) -> int:
        name = self.imports.get(target)
        if name is not None and name in self.exports:
            return self.exports[name][0]
        return target


def recover_cfg(image: BinaryImage, libraries=(), seeds: str = "all") -> Recovery:
    """Recover the CFG and call graph of ``image``.

    ``seeds="all"`` starts from every identified function; ``"entry"``
    starts from the entry point only (reachability-style coverage).
    Returns ``(cfg, callgraph, functions)``.
    """
    if not image.executable_sections:
        raise NoExecutableSection(f"{image.path}: no executable section")
    space = _AddressSpace(image, libraries)

    if seeds == "all":
        initial = [f.entry for f in identify_functions(image)]
    elif seeds == "entry":
        initial = [image.entry_point]
    else:
        raise ValueError(f"unknown seed policy {seeds!r}")

    visited: dict[int, Instruction] = {}
    leaders: set[int] = set()
    call_targets: set[int] = set()
    resolved_calls: dict[int, int] = {}
    dropped: set[int] = set()
    heap: list[int] = []

    def push(addr, leader=False):
        if addr % 4 or space.region(addr) is None:
            if addr not in dropped:
                dropped.add(addr)
                logger.debug("%s: target %#x outside executable code; dropped", image.path, addr)
            return False
        if leader:
            leaders.add(addr)
        if addr not in visited:
            heapq.heappush(heap, addr)
        return True

    for addr in initial:
        push(addr, leader=True)

    while heap:
        addr = heapq.heappop(heap)
        if addr in visited:
            continue
        insn = decode_instruction(space.word(addr), addr)
        visited[addr] = insn
        nxt = addr + 4
        kind = insn.kind
        if kind in (Kind.FALLTHROUGH, Kind.SYSCALL):
            push(nxt)
        elif kind is Kind.BRANCH:
            push(insn.target, leader=True)
        elif kind is Kind.COND_BRANCH:
            push(insn.target, leader=True)
            push(nxt, leader=True)
        elif kind is Kind.CALL:
            target = space.redirect(insn.target)
            if push(target, leader=True):
                call_targets.add(target)
                resolved_calls[addr] = target
            push(nxt, leader=True)
        elif kind is Kind.INDIRECT_CALL:
            push(nxt, leader=True)
        elif insn.conditional:  # conditional return / indirect jump
            push(nxt, leader=True)

    blocks = _form_blocks(visited, leaders, space)
    edges = _block_edges(blocks, visited, resolved_calls)
    cfg = ControlFlowGraph(blocks, frozenset(edges))

    functions = _collect_functions(image, space, call_targets, initial)
    functions = [f for f in functions if f.entry in blocks]
    callgraph = _derive_callgraph(cfg, functions)
    return Recovery(cfg, callgraph, functions)


def _form_blocks(visited, leaders, space) -> dict[int, BasicBlock]:
    blocks: dict[int, BasicBlock] = {}
    current: list[Instruction] = []

    def close():
        if not current:
            return
        start = current[0].addr
        region = space.region(start)
        off = start - region.start
        data = region.data[off:off + 4 * len(current)]
        blocks[start] = BasicBlock(
            start=start,
            byte_string=data,
            instruction_count=len(current),
            is_syscall=any(i.kind is Kind.SYSCALL for i in current),
            terminator=current[-1].kind,
        )
        current.clear()

    prev = None
    for addr in sorted(visited):
        insn = visited[addr]
        if (prev is None or addr in leaders or prev.addr + 4 != addr
                or prev.kind.transfers_control
                or space.region(addr) is not space.region(prev.addr)):
            close()
        current.append(insn)
        prev = insn
    close()
    return blocks


def _block_edges(blocks, visited, resolved_calls) -> set[Edge]:
    edges = set()
    for block in blocks.values():
        last = visited[block.end - 4]
        nxt = block.end
        kind = last.kind

        def add(dst, jk):
            if dst in blocks:
                edges.add(Edge(block.start, dst, jk))

        if kind in (Kind.FALLTHROUGH, Kind.SYSCALL):
            add(nxt, JumpKind.FALLTHROUGH)
        elif kind is Kind.BRANCH:
            add(last.target, JumpKind.JUMP)
        elif kind is Kind.COND_BRANCH:
            add(last.target, JumpKind.COND_JUMP)
            add(nxt, JumpKind.FALLTHROUGH)
        elif kind is Kind.CALL:
            if last.addr in resolved_calls:
                add(resolved_calls[last.addr], JumpKind.CALL)
            add(nxt, JumpKind.CALL_RETURN)
        elif kind is Kind.INDIRECT_CALL:
            add(nxt, JumpKind.CALL_RETURN)
        elif last.conditional:
            add(nxt, JumpKind.FALLTHROUGH)
    return edges


def _collect_functions(image, space, call_targets, initial) -> list[FunctionInfo]:
    main_targets = {t for t in call_targets if space.region(t).library is None}
    functions = identify_functions(image, main_targets)
    known = {f.entry for f in functions}
    # entry-only traversal may start somewhere identify_functions rejects
    for addr in initial:
        if addr not in known and space.region(addr) is not None and space.region(addr).library is None:
            functions.append(FunctionInfo(addr, None, FunctionSource.ENTRY_POINT))
    for target in sorted(call_targets - main_targets):
        name = space.library_symbols.get(target)
        source = FunctionSource.SYMBOL if name else FunctionSource.CALL_TARGET
        functions.append(FunctionInfo(target, name, source, space.region(target).library))
    functions.sort(key=lambda f: f.entry)
    return functions


def function_blocks(cfg: ControlFlowGraph, functions) -> dict[int, set[int]]:
    """Blocks reachable from each entry over intraprocedural edges, stopping
    at other function entries."""
    entries = {f.entry for f in functions}
    succ: dict[int, list[int]] = {}
    for e in cfg.edges:
        if e.kind in INTRAPROCEDURAL:
            succ.setdefault(e.src, []).append(e.dst)
    members = {}
    for entry in sorted(entries):
        seen = {entry}
        stack = [entry]
        while stack:
            b = stack.pop()
            for d in succ.get(b, ()):
                if d not in seen and d not in entries:
                    seen.add(d)
                    stack.append(d)
        members[entry] = seen
    return members


def _derive_callgraph(cfg: ControlFlowGraph, functions) -> CallGraph:
    members = function_blocks(cfg, functions)
    owners: dict[int, list[int]] = {}
    for entry, blocks in members.items():
        for b in blocks:
            owners.setdefault(b, []).append(entry)

    edges = set()
    for e in cfg.edges:
        if e.kind is not JumpKind.CALL:
            continue
        candidates = owners.get(e.src)
        if not candidates:
            logger.debug("call block %#x belongs to no function", e.src)
            continue
        below = [c for c in candidates if c <= e.src]
        caller = max(below) if below else min(candidates)
        edges.add((caller, e.dst))
    return CallGraph(tuple(sorted(members)), tuple(sorted(edges)))


def compute_stats(cfg: ControlFlowGraph) -> GraphStats:
    g = nx.MultiDiGraph()
    g.add_nodes_from(cfg.nodes)
    g.add_edges_from((e.src, e.dst) for e in cfg.edges)
    covered = frozenset(a for b in cfg.nodes.values() for a in b.addresses)
    return GraphStats(
        node_count=len(cfg.nodes),
        edge_count=len(cfg.edges),
        weak_component_count=nx.number_weakly_connected_components(g) if cfg.nodes else 0,
        syscall_node_count=sum(b.is_syscall for b in cfg.nodes.values()),
        covered_addresses=covered,
        edge_kind_counts=cfg.edge_kind_counts(),
    )


def coverage_compare(a, b, universe) -> tuple[int, int, int, int]:
    """Split ``universe`` into (only_a, only_b, both, neither) counts.

    ``a`` and ``b`` are :class:`GraphStats` or plain address sets.
    """
    sa = set(getattr(a, "covered_addresses", a))
    sb = set(getattr(b, "covered_addresses", b))
    universe = set(universe)
    stray = (sa | sb) - universe
    if stray:
        raise CoverageOutsideUniverse(
            f"{len(stray)} covered addresses outside the universe, e.g. {min(stray):#x}")
    both = len(sa & sb)
    only_a = len(sa) - both
    only_b = len(sb) - both
    return only_a, only_b, both, len(universe) - only_a - only_b - both


def executable_addresses(image: BinaryImage) -> frozenset[int]:
    """Every word-aligned instruction address in the image's code sections."""
    return frozenset(
        a for sec in image.executable_sections
        for a in range(sec.vaddr + (-sec.vaddr % 4), sec.end - 3, 4))


def format_edge_list(graph) -> str:
    """``src dst kind`` lines for a CFG, or ``caller callee call`` for a call graph."""
    if isinstance(graph, ControlFlowGraph):
        rows = [(e.src, e.dst, e.kind.value) for e in graph.sorted_edges()]
    else:
        rows = [(s, d, "call") for s, d in graph.edges]
    return "".join(f"{s:#x} {d:#x} {k}\n" for s, d, k in rows)


def parse_edge_list(text: str) -> list[tuple[int, int, str]]:
    rows = []
    for line in text.splitlines():
        if line.strip():
            s, d, k = line.split()
            rows.append((int(s, 16), int(d, 16), k))
    return rows

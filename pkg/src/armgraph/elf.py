"""32-bit little-endian ARM ELF loader.

Only the pieces needed for control-flow recovery are read: allocated
sections (eagerly, with their bytes), static and dynamic symbols, and the
DT_NEEDED list. Anything that is not ELF32/LSB/ARM is rejected with a typed
error instead of being parsed on a best-effort basis.
"""

from __future__ import annotations

import enum
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    BadMagic,
    MalformedElf,
    MissingLibrary,
    Truncated,
    UnsupportedClass,
    UnsupportedEndianness,
    UnsupportedMachine,
)

logger = logging.getLogger(__name__)

ELF_MAGIC = b"\x7fELF"
ELFCLASS32 = 1
ELFDATA2LSB = 1
EM_ARM = 40

ET_EXEC = 2
ET_DYN = 3

SHT_NULL = 0
SHT_SYMTAB = 2
SHT_DYNAMIC = 6
SHT_NOBITS = 8
SHT_REL = 9
SHT_DYNSYM = 11

R_ARM_JUMP_SLOT = 22

SHF_WRITE = 0x1
SHF_ALLOC = 0x2
SHF_EXECINSTR = 0x4

PT_LOAD = 1
PT_DYNAMIC = 2
PT_INTERP = 3

PF_X = 0x1
PF_W = 0x2
PF_R = 0x4

DT_NULL = 0
DT_NEEDED = 1

STT_OBJECT = 1
STT_FUNC = 2

EHDR_SIZE = 52
SHDR_SIZE = 40
PHDR_SIZE = 32
SYM_SIZE = 16


class SymbolKind(str, enum.Enum):
    FUNCTION = "function"
    OBJECT = "object"
    OTHER = "other"


@dataclass(frozen=True)
class Section:
    name: str
    vaddr: int
    size: int
    flags: frozenset = frozenset()
    data: bytes = field(default=b"", repr=False)

    @property
    def executable(self) -> bool:
        return "executable" in self.flags

    @property
    def writable(self) -> bool:
        return "writable" in self.flags

    @property
    def loaded(self) -> bool:
        return len(self.data) == self.size

    @property
    def end(self) -> int:
        return self.vaddr + self.size

    def contains(self, addr: int) -> bool:
        return self.vaddr <= addr < self.vaddr + self.size


@dataclass(frozen=True)
class Symbol:
    name: str
    vaddr: int
    kind: SymbolKind = SymbolKind.OTHER
    size: int = 0
    defined: bool = True


@dataclass(frozen=True)
class BinaryImage:
    """Parsed ARM32 ELF image. Immutable; safe to share between threads."""

    path: str
    entry_point: int
    sections: tuple[Section, ...]
    symbols: tuple[Symbol, ...]
    needed_libraries: tuple[str, ...]
    is_dynamic: bool
    is_shared_object: bool = False
    # (GOT slot address, imported name) from R_ARM_JUMP_SLOT entries; names
    # PLT stubs without applying any relocation
    jump_slots: tuple[tuple[int, str], ...] = ()
    machine: str = "ARM32"
    endianness: str = "little"

    @property
    def executable_sections(self) -> tuple[Section, ...]:
        return tuple(s for s in self.sections if s.executable)

    @property
    def soname(self) -> str:
        return os.path.basename(self.path)

    def section_at(self, addr: int) -> Section | None:
        for sec in self.sections:
            if sec.contains(addr):
                return sec
        return None

    def read_word(self, addr: int) -> int | None:
        """Little-endian 32-bit word at ``addr`` in an executable section."""
        for sec in self.sections:
            if sec.executable and sec.vaddr <= addr and addr + 4 <= sec.end:
                off = addr - sec.vaddr
                return int.from_bytes(sec.data[off:off + 4], "little")
        return None


def _unpack(fmt: str, raw: bytes, offset: int, what: str):
    size = struct.calcsize(fmt)
    if offset < 0 or offset + size > len(raw):
        raise Truncated(f"{what} at offset {offset:#x} exceeds input length {len(raw)}")
    return struct.unpack_from(fmt, raw, offset)


def _slice(raw: bytes, offset: int, size: int, what: str) -> bytes:
    if offset < 0 or size < 0 or offset + size > len(raw):
        raise Truncated(
            f"{what} [{offset:#x}, {offset + size:#x}) exceeds input length {len(raw)}"
        )
    return raw[offset:offset + size]


def _cstr(table: bytes, offset: int) -> str:
    if offset >= len(table):
        return ""
    end = table.find(b"\0", offset)
    if end < 0:
        end = len(table)
    return table[offset:end].decode("utf-8", errors="replace")


@dataclass
class _RawSection:
    name_off: int
    type: int
    flags: int
    addr: int
    offset: int
    size: int
    link: int
    info: int
    entsize: int
    name: str = ""


def parse_executable(raw: bytes, path: str = "<memory>") -> BinaryImage:
    """Parse ``raw`` ELF bytes into a :class:`BinaryImage`.

    Raises one of the :class:`~armgraph.errors.ElfError` subclasses for any
    input that is not a well-formed ELF32 little-endian ARM file. The parser
    never indexes outside ``raw``.
    """
    raw = bytes(raw)
    if len(raw) < 4 or raw[:4] != ELF_MAGIC:
        raise BadMagic(f"{path}: not an ELF file")
    if len(raw) < 16:
        raise Truncated(f"{path}: ELF identification truncated")
    if raw[4] != ELFCLASS32:
        raise UnsupportedClass(f"{path}: ELF class {raw[4]} (only 32-bit supported)")
    if raw[5] != ELFDATA2LSB:
        raise UnsupportedEndianness(f"{path}: data encoding {raw[5]} (only little-endian)")

    (e_type, e_machine, _e_version, e_entry, e_phoff, e_shoff, _e_flags,
     _e_ehsize, e_phentsize, e_phnum, e_shentsize, e_shnum, e_shstrndx) = _unpack(
        "<HHIIIIIHHHHHH", raw, 16, "ELF header")
    if e_machine != EM_ARM:
        raise UnsupportedMachine(f"{path}: e_machine {e_machine} is not ARM")

    segments = []
    is_dynamic = False
    if e_phnum:
        if e_phentsize < PHDR_SIZE:
            raise MalformedElf(f"{path}: program header entry size {e_phentsize}")
        for i in range(e_phnum):
            p_type, p_offset, p_vaddr, _p_paddr, p_filesz, p_memsz, p_flags, _ = _unpack(
                "<IIIIIIII", raw, e_phoff + i * e_phentsize, "program header")
            if p_type in (PT_DYNAMIC, PT_INTERP):
                is_dynamic = True
            if p_type == PT_LOAD:
                segments.append((p_offset, p_vaddr, p_filesz, p_memsz, p_flags))

    raw_sections: list[_RawSection] = []
    if e_shnum:
        if e_shentsize < SHDR_SIZE:
            raise MalformedElf(f"{path}: section header entry size {e_shentsize}")
        for i in range(e_shnum):
            fields = _unpack("<IIIIIIIIII", raw, e_shoff + i * e_shentsize, "section header")
            raw_sections.append(_RawSection(*fields[:8], fields[9]))
        if e_shstrndx < len(raw_sections):
            names = raw_sections[e_shstrndx]
            strtab = _slice(raw, names.offset, names.size, "section name table")
            for sec in raw_sections:
                sec.name = _cstr(strtab, sec.name_off)

    sections = _build_sections(raw, raw_sections, segments, path)
    _check_overlap(sections, path)

    symbols = _read_symbols(raw, raw_sections, sections)
    needed = _read_needed(raw, raw_sections)
    jump_slots = _read_jump_slots(raw, raw_sections)
    if any(s.type == SHT_DYNAMIC for s in raw_sections):
        is_dynamic = True

    is_shared = e_type == ET_DYN
    image = BinaryImage(
        path=path,
        entry_point=e_entry,
        sections=tuple(sections),
        symbols=tuple(symbols),
        needed_libraries=tuple(needed),
        is_dynamic=is_dynamic,
        is_shared_object=is_shared,
        jump_slots=tuple(jump_slots),
    )
    if not is_shared and not any(s.executable and s.contains(e_entry) for s in sections):
        # entry outside code: keep the image, recovery will report it
        logger.debug("%s: entry point %#x outside executable sections", path, e_entry)
    return image


def _build_sections(raw, raw_sections, segments, path) -> list[Section]:
    sections = []
    for sec in raw_sections:
        if sec.type == SHT_NULL or not sec.flags & SHF_ALLOC:
            continue
        flags = {"readable"}
        if sec.flags & SHF_EXECINSTR:
            flags.add("executable")
        if sec.flags & SHF_WRITE:
            flags.add("writable")
        if sec.type == SHT_NOBITS:
            if "executable" in flags:
                raise MalformedElf(f"{path}: executable NOBITS section {sec.name!r}")
            data = b""
        else:
            data = _slice(raw, sec.offset, sec.size, f"section {sec.name!r}")
        sections.append(Section(sec.name, sec.addr, sec.size, frozenset(flags), data))

    if not raw_sections:
        # section-less binaries: fall back to loadable segments
        for i, (offset, vaddr, filesz, memsz, pflags) in enumerate(segments):
            flags = set()
            if pflags & PF_R:
                flags.add("readable")
            if pflags & PF_W:
                flags.add("writable")
            if pflags & PF_X:
                flags.add("executable")
            data = _slice(raw, offset, filesz, f"segment {i}")
            sections.append(Section(f"LOAD{i}", vaddr, filesz, frozenset(flags), data))
    return sections


def _check_overlap(sections, path):
    spans = sorted((s.vaddr, s.end, s.name) for s in sections if s.loaded and s.size)
    for (_, end_a, name_a), (start_b, _, name_b) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise MalformedElf(f"{path}: sections {name_a!r} and {name_b!r} overlap")


def _read_symbols(raw, raw_sections, sections) -> list[Symbol]:
    seen = set()
    out = []
    for table in raw_sections:
        if table.type not in (SHT_SYMTAB, SHT_DYNSYM) or table.link >= len(raw_sections):
            continue
        strsec = raw_sections[table.link]
        strtab = _slice(raw, strsec.offset, strsec.size, "symbol string table")
        data = _slice(raw, table.offset, table.size, f"symbol table {table.name!r}")
        for off in range(SYM_SIZE, len(data) - SYM_SIZE + 1, SYM_SIZE):
            st_name, st_value, st_size, st_info, _st_other, st_shndx = struct.unpack_from(
                "<IIIBBH", data, off)
            name = _cstr(strtab, st_name)
            # skip anonymous entries and ARM mapping symbols ($a, $d, $t)
            if not name or name.startswith("$"):
                continue
            stype = st_info & 0xF
            defined = st_shndx != 0
            home = next((s for s in sections if s.contains(st_value)), None)
            if st_value != 0 and home is None:
                continue
            if stype == STT_FUNC and (st_value == 0 or (home is not None and home.executable)):
                kind = SymbolKind.FUNCTION
            elif stype == STT_OBJECT:
                kind = SymbolKind.OBJECT
            else:
                kind = SymbolKind.OTHER
            key = (name, st_value)
            if key in seen:
                continue
            seen.add(key)
            out.append(Symbol(name, st_value, kind, st_size, defined))
    out.sort(key=lambda s: (s.vaddr, s.name))
    return out


def _read_needed(raw, raw_sections) -> list[str]:
    needed = []
    for dyn in raw_sections:
        if dyn.type != SHT_DYNAMIC or dyn.link >= len(raw_sections):
            continue
        strsec = raw_sections[dyn.link]
        strtab = _slice(raw, strsec.offset, strsec.size, "dynamic string table")
        data = _slice(raw, dyn.offset, dyn.size, "dynamic section")
        for off in range(0, len(data) - 7, 8):
            tag, val = struct.unpack_from("<iI", data, off)
            if tag == DT_NULL:
                break
            if tag == DT_NEEDED:
                needed.append(_cstr(strtab, val))
    return needed


def _read_jump_slots(raw, raw_sections) -> list[tuple[int, str]]:
    slots = []
    for rel in raw_sections:
        if rel.type != SHT_REL or rel.link >= len(raw_sections):
            continue
        symsec = raw_sections[rel.link]
        if symsec.type not in (SHT_DYNSYM, SHT_SYMTAB) or symsec.link >= len(raw_sections):
            continue
        strsec = raw_sections[symsec.link]
        strtab = _slice(raw, strsec.offset, strsec.size, "relocation string table")
        syms = _slice(raw, symsec.offset, symsec.size, "relocation symbol table")
        data = _slice(raw, rel.offset, rel.size, f"relocation section {rel.name!r}")
        for off in range(0, len(data) - 7, 8):
            r_offset, r_info = struct.unpack_from("<II", data, off)
            if r_info & 0xFF != R_ARM_JUMP_SLOT:
                continue
            sym_off = (r_info >> 8) * SYM_SIZE
            if sym_off + SYM_SIZE > len(syms):
                continue
            (st_name,) = struct.unpack_from("<I", syms, sym_off)
            name = _cstr(strtab, st_name)
            if name:
                slots.append((r_offset, name))
    return sorted(set(slots))


def load_executable(path) -> BinaryImage:
    """Read and parse the ELF file at ``path``."""
    path = Path(path)
    return parse_executable(path.read_bytes(), str(path))


def resolve_dependencies(image: BinaryImage, search_paths, strict: bool = True) -> list[BinaryImage]:
    """Load the transitive closure of ``image``'s DT_NEEDED libraries.

    Each name is looked up in ``search_paths`` in order and the first match
    wins. Libraries are returned in breadth-first discovery order and appear
    once. With ``strict`` a missing name raises :class:`MissingLibrary`;
    otherwise it is logged and skipped.
    """
    search_paths = [Path(p) for p in search_paths]
    loaded: dict[str, BinaryImage] = {}
    missing = set()
    queue = list(image.needed_libraries)
    while queue:
        name = queue.pop(0)
        if name in loaded or name in missing:
            continue
        found = next((d / name for d in search_paths if (d / name).is_file()), None)
        if found is None:
            if strict:
                raise MissingLibrary(name, search_paths)
            logger.warning("library %s not found; continuing without it", name)
            missing.add(name)
            continue
        lib = load_executable(found)
        loaded[name] = lib
        queue.extend(lib.needed_libraries)
    return list(loaded.values())

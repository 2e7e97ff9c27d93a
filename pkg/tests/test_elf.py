import shutil
import subprocess

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from armgraph.elf import SymbolKind, load_executable, parse_executable, resolve_dependencies
from armgraph.errors import (
    BadMagic,
    ElfError,
    MalformedElf,
    MissingLibrary,
    Truncated,
    UnsupportedClass,
    UnsupportedEndianness,
    UnsupportedMachine,
)
from conftest import MAIN, three_function_elf
from elfbuild import ElfSpec, Sec, Sym, build, text_elf, words

MINIMAL_CODE = words(0xE1A00000, 0xE1A00000, 0xE1A00000, 0xE12FFF1E)


def minimal(**kw):
    return text_elf(MINIMAL_CODE, addr=0x1000, **kw)


def test_bad_magic():
    with pytest.raises(BadMagic):
        parse_executable(b"\x00\x00\x00\x00" + b"\x00" * 60)


def test_empty_input_is_bad_magic():
    with pytest.raises(BadMagic):
        parse_executable(b"")


def test_minimal_image():
    img = parse_executable(minimal())
    assert img.entry_point == 0x1000
    assert [(s.name, s.vaddr, s.size, s.executable) for s in img.sections] == [(".text", 0x1000, 16, True)]
    assert img.sections[0].data == MINIMAL_CODE
    assert img.symbols == ()
    assert img.needed_libraries == ()
    assert not img.is_dynamic


def test_big_endian_rejected():
    with pytest.raises(UnsupportedEndianness):
        parse_executable(minimal(ei_data=2))


def test_64bit_rejected():
    with pytest.raises(UnsupportedClass):
        parse_executable(minimal(ei_class=2))


def test_non_arm_rejected():
    with pytest.raises(UnsupportedMachine):
        parse_executable(minimal(machine=3))


@pytest.mark.parametrize("cut", [10, 30, 60, 100])
def test_truncated(cut):
    raw = minimal()
    with pytest.raises(Truncated):
        parse_executable(raw[:cut])


def test_section_table_past_end():
    raw = bytearray(minimal())
    raw[32:36] = (len(raw) + 100).to_bytes(4, "little")  # e_shoff
    with pytest.raises(Truncated):
        parse_executable(bytes(raw))


def test_overlapping_sections_rejected():
    spec = ElfSpec([Sec(".a", 0x1000, words(0, 0)), Sec(".b", 0x1004, words(0, 0))], entry=0x1000)
    with pytest.raises(MalformedElf):
        parse_executable(build(spec))


def test_symbols_and_needed(three_fn_bytes):
    raw = build(ElfSpec(
        [Sec(".text", 0x1000, words(0xE12FFF1E) * 6), Sec(".data", 0x2000, b"\0" * 8, flags=3)],
        entry=MAIN,
        symbols=[Sym("foo", 0x1000), Sym("counter", 0x2000, kind="object", size=4),
                 Sym("puts", 0, undefined=True), Sym("main", MAIN)],
        needed=["libc.so", "libm.so"]))
    img = parse_executable(raw)
    by_name = {s.name: s for s in img.symbols}
    assert by_name["foo"].kind is SymbolKind.FUNCTION and by_name["foo"].defined
    assert by_name["counter"].kind is SymbolKind.OBJECT and by_name["counter"].size == 4
    assert not by_name["puts"].defined and by_name["puts"].vaddr == 0
    assert img.needed_libraries == ("libc.so", "libm.so")
    assert img.is_dynamic


def test_symbol_invariants(three_fn_bytes):
    img = parse_executable(three_fn_bytes)
    for sym in img.symbols:
        assert sym.vaddr == 0 or img.section_at(sym.vaddr) is not None
        if sym.kind is SymbolKind.FUNCTION and sym.vaddr:
            assert img.section_at(sym.vaddr).executable


def test_function_symbol_outside_code_is_not_a_function():
    raw = build(ElfSpec(
        [Sec(".text", 0x1000, words(0xE12FFF1E)), Sec(".data", 0x2000, b"\0" * 8, flags=3)],
        entry=0x1000, symbols=[Sym("fake", 0x2000, kind="func")]))
    (sym,) = parse_executable(raw).symbols
    assert sym.kind is SymbolKind.OTHER


def test_parse_is_deterministic(three_fn_bytes):
    assert parse_executable(three_fn_bytes) == parse_executable(three_fn_bytes)


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=400))
def test_arbitrary_bytes_never_crash(data):
    try:
        parse_executable(data)
    except ElfError:
        pass


@settings(max_examples=300, deadline=None)
@given(st.data())
def test_mutated_elf_never_crashes(data):
    raw = bytearray(three_function_elf())
    for _ in range(data.draw(st.integers(1, 8))):
        pos = data.draw(st.integers(0, len(raw) - 1))
        raw[pos] = data.draw(st.integers(0, 255))
    cut = data.draw(st.integers(0, len(raw)))
    try:
        parse_executable(bytes(raw[:cut]))
    except ElfError:
        pass


# -- cross-check against independent tools -------------------------------------

needs_readelf = pytest.mark.skipif(shutil.which("readelf") is None, reason="readelf not installed")


@needs_readelf
def test_builder_output_matches_readelf(tmp_path):
    raw = build(ElfSpec([Sec(".text", 0x1000, words(0xE12FFF1E) * 4)], entry=0x1004,
                        symbols=[Sym("foo", 0x1000), Sym("bar", 0x1004)], needed=["libc.so"]))
    path = tmp_path / "x.elf"
    path.write_bytes(raw)
    out = subprocess.run(["readelf", "-hSsdW", str(path)], capture_output=True, text=True, check=True).stdout
    img = load_executable(path)
    assert "Entry point address:               0x1004" in out
    assert "Shared library: [libc.so]" in out
    assert img.needed_libraries == ("libc.so",)
    for sym in img.symbols:
        assert f"{sym.vaddr:08x}" in out and sym.name in out


def test_toolchain_fixture(fixtures_dir):
    # built by clang + ld.lld from threefn.s; values confirmed with readelf -hSs
    img = load_executable(fixtures_dir / "threefn.elf")
    assert img.entry_point == 0x100C
    text = next(s for s in img.sections if s.name == ".text")
    assert (text.vaddr, text.size, text.executable) == (0x1000, 0x18, True)
    funcs = {s.name: s.vaddr for s in img.symbols if s.kind is SymbolKind.FUNCTION}
    assert funcs == {"foo": 0x1000, "bar": 0x1004, "main": 0x100C}


def test_toolchain_shared_library(fixtures_dir):
    lib = load_executable(fixtures_dir / "libgreet.so")
    assert lib.is_shared_object
    funcs = {s.name: s.vaddr for s in lib.symbols if s.kind is SymbolKind.FUNCTION}
    assert funcs == {"greet": 0x101CC, "helper": 0x101C8}
    exe = load_executable(fixtures_dir / "usegreet.elf")
    assert exe.needed_libraries == ("libgreet.so",)
    assert [name for _, name in exe.jump_slots] == ["greet"]


# -- dependency resolution -----------------------------------------------------

def _write(path, raw):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(raw)
    return path


def test_no_dependencies(three_fn_bytes, tmp_path):
    assert resolve_dependencies(parse_executable(three_fn_bytes), [tmp_path]) == []


def test_dependency_found_in_first_search_path(tmp_path):
    _write(tmp_path / "a" / "libc.so", text_elf(words(0xE12FFF1E), shared=True, entry=0))
    _write(tmp_path / "b" / "libc.so", text_elf(words(0xE12FFF1E, 0xE12FFF1E), shared=True, entry=0))
    exe = parse_executable(text_elf(words(0xE12FFF1E), needed=["libc.so"]))
    (lib,) = resolve_dependencies(exe, [tmp_path / "a", tmp_path / "b"], strict=True)
    assert lib.path == str(tmp_path / "a" / "libc.so")
    assert lib.is_shared_object


def test_missing_library_strict(tmp_path):
    exe = parse_executable(text_elf(words(0xE12FFF1E), needed=["libx.so"]))
    with pytest.raises(MissingLibrary):
        resolve_dependencies(exe, [tmp_path], strict=True)
    assert resolve_dependencies(exe, [tmp_path], strict=False) == []


def test_transitive_and_deduplicated(tmp_path):
    _write(tmp_path / "liba.so", text_elf(words(0xE12FFF1E), shared=True, needed=["libc.so"]))
    _write(tmp_path / "libb.so", text_elf(words(0xE12FFF1E), shared=True, needed=["libc.so", "liba.so"]))
    _write(tmp_path / "libc.so", text_elf(words(0xE12FFF1E), shared=True))
    exe = parse_executable(text_elf(words(0xE12FFF1E), needed=["liba.so", "libb.so"]))
    strict = resolve_dependencies(exe, [tmp_path], strict=True)
    names = [lib.soname for lib in strict]
    assert names == ["liba.so", "libb.so", "libc.so"]
    lax = resolve_dependencies(exe, [tmp_path], strict=False)
    assert [lib.soname for lib in lax] == names

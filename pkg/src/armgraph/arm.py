"""A32 instruction classifier.

This is not a disassembler. It only answers the question recovery needs:
does this word transfer control, and if so where. Thumb is not handled.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

COND_AL = 0xE
COND_UNCOND = 0xF

REG_SP = 13
REG_LR = 14
REG_PC = 15

MASK32 = 0xFFFFFFFF


class Kind(str, enum.Enum):
    FALLTHROUGH = "fallthrough"
    BRANCH = "branch"
    COND_BRANCH = "cond_branch"
    CALL = "call"
    INDIRECT_JUMP = "indirect_jump"
    INDIRECT_CALL = "indirect_call"
    RETURN = "return"
    SYSCALL = "syscall"

    @property
    def transfers_control(self) -> bool:
        return self not in (Kind.FALLTHROUGH, Kind.SYSCALL)


@dataclass(frozen=True)
class Instruction:
    addr: int
    word: int
    kind: Kind
    target: int | None = None
    # condition field is not AL; only matters for returns and indirect jumps,
    # where the not-taken path falls through
    conditional: bool = False

    @property
    def size(self) -> int:
        return 4


def branch_target(word: int, addr: int) -> int:
    imm24 = word & 0x00FFFFFF
    if imm24 & 0x00800000:
        imm24 -= 1 << 24
    return (addr + 8 + imm24 * 4) & MASK32


def _is_data_processing_pc_write(word: int) -> int | None:
    """Return the source register of a data-processing write to pc, or -1 for
    non-register sources; ``None`` when the word is not such a write."""
    if (word >> 26) & 0b11 != 0b00:
        return None
    imm = (word >> 25) & 1
    opcode = (word >> 21) & 0xF
    if not imm and (word >> 4) & 1 and (word >> 7) & 1:
        return None  # multiplies and extra load/store
    if 0b1000 <= opcode <= 0b1011:
        # S=1: TST/TEQ/CMP/CMN have no destination; S=0: MRS/MSR/BX/MOVW/MOVT
        return None
    if (word >> 12) & 0xF != REG_PC:
        return None
    if opcode == 0b1101 and not imm and (word & 0xFF0) == 0:
        return word & 0xF  # MOV pc, Rm with no shift
    return -1


def decode_instruction(word: int, addr: int) -> Instruction:
    """Classify ``word`` located at ``addr``. Total over all 32-bit values."""
    word &= MASK32
    cond = word >> 28
    conditional = cond not in (COND_AL, COND_UNCOND)

    def make(kind, target=None):
        return Instruction(addr, word, kind, target, conditional)

    if cond == COND_UNCOND:
        # BLX <imm> switches to Thumb; there is nothing A32 to follow there
        if (word >> 25) & 0b111 == 0b101:
            return make(Kind.INDIRECT_CALL)
        return make(Kind.FALLTHROUGH)

    op = (word >> 25) & 0b111

    if op == 0b101:
        target = branch_target(word, addr)
        if (word >> 24) & 1:
            return make(Kind.CALL, target)
        return make(Kind.COND_BRANCH if conditional else Kind.BRANCH, target)

    if (word >> 24) & 0xF == 0xF:
        return make(Kind.SYSCALL)

    if (word & 0x0FFFFFF0) == 0x012FFF10:
        rm = word & 0xF
        return make(Kind.RETURN if rm == REG_LR else Kind.INDIRECT_JUMP)
    if (word & 0x0FFFFFF0) == 0x012FFF30:
        return make(Kind.INDIRECT_CALL)

    src = _is_data_processing_pc_write(word)
    if src is not None:
        return make(Kind.RETURN if src == REG_LR else Kind.INDIRECT_JUMP)

    # LDR pc, [...] (single data transfer, load, Rd == pc)
    if (word >> 26) & 0b11 == 0b01 and not ((word >> 25) & 1 and (word >> 4) & 1):
        load = (word >> 20) & 1
        rd = (word >> 12) & 0xF
        if load and rd == REG_PC:
            # LDR pc, [sp], #4 is the canonical single-register pop
            if (word & 0x0FFFFFFF) == 0x049DF004:
                return make(Kind.RETURN)
            return make(Kind.INDIRECT_JUMP)
        return make(Kind.FALLTHROUGH)

    # LDM with pc in the register list
    if op == 0b100 and (word >> 20) & 1 and (word >> 15) & 1:
        rn = (word >> 16) & 0xF
        return make(Kind.RETURN if rn == REG_SP else Kind.INDIRECT_JUMP)

    return make(Kind.FALLTHROUGH)


def is_prologue(word: int) -> bool:
    """PUSH {..., lr} (STMDB sp!) or STR lr, [sp, #-4]!, unconditional."""
    if (word & 0xFFFF4000) == 0xE92D4000:
        return True
    return word == 0xE52DE004

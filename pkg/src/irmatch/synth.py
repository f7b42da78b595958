"""Deterministic generator of paired source-style / binary-style IR.

Each group gets a random straight-line + branch skeleton (entry block,
a compare-and-branch, two arms, a phi merge). The source variant prints
it with compiler-style names; binary variants re-print it with
decompiler-style names and apply lossy transforms scaled by
transform_strength: independent-instruction reordering, integer constants
flipping to float class, dead temporaries, and occasional opcode
substitutions. At strength 0 the variants normalize to identical token
streams; names alone never carry signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

_ARITH_POOL = ["add", "sub", "mul", "and", "or", "xor", "shl", "ashr", "lshr",
               "sdiv", "udiv", "srem", "urem"]
_INT_TYPES = ["i8", "i16", "i32", "i64"]
_PREDICATES = ["eq", "ne", "slt", "sgt", "sle", "sge", "ult", "ugt"]


@dataclass(frozen=True)
class SynthSpec:
    n_groups: int
    variants_per_group: int = 2
    seed: int = 0
    transform_strength: float = 0.5

    def __post_init__(self):
        if self.n_groups < 2:
            raise ValueError("need at least 2 groups")
        if self.variants_per_group < 2:
            raise ValueError("need at least 2 variants per group")
        if not 0.0 <= self.transform_strength <= 1.0:
            raise ValueError("transform_strength must be in [0, 1]")


@dataclass
class SynthDocument:
    doc_id: str
    origin: str
    group_id: str
    text: str


# One abstract instruction: ("arith", dst, op, a, b) with operands either
# ("reg", idx) or ("const", value); plus icmp/br/phi/load/store/call/ret.
@dataclass
class _Skeleton:
    int_type: str
    entry: list
    arm_a: list
    arm_b: list
    merge: list
    predicate: str
    cond_operand: tuple
    cond_const: int
    phi_sources: tuple
    phi_reg: int
    ret_reg: int
    n_regs: int
    uses_global: bool
    call_arity: Optional[int]


def _build_skeleton(rng: np.random.Generator) -> _Skeleton:
    # group signature: a main type plus an occasional secondary type, a
    # 3-5 opcode palette with skewed usage, and optional global/call use
    int_type = _INT_TYPES[rng.integers(0, len(_INT_TYPES))]
    alt_type = _INT_TYPES[rng.integers(0, len(_INT_TYPES))]
    palette_size = int(rng.integers(3, 6))
    palette = list(rng.choice(_ARITH_POOL, size=palette_size, replace=False))
    weights = rng.random(palette_size)
    weights /= weights.sum()
    uses_global = bool(rng.random() < 0.5)
    call_arity = int(rng.integers(1, 4)) if rng.random() < 0.4 else None

    next_reg = 2  # regs 0 and 1 are the arguments
    live = [0, 1]

    def operand():
        if rng.random() < 0.35:
            return ("const", int(rng.integers(0, 64)))
        return ("reg", int(live[rng.integers(0, len(live))]))

    def arith_block(n):
        nonlocal next_reg
        out = []
        for _ in range(n):
            op = palette[rng.choice(palette_size, p=weights)]
            ty = alt_type if rng.random() < 0.2 else int_type
            instr = ("arith", next_reg, op, operand(), operand(), ty)
            out.append(instr)
            live.append(next_reg)
            next_reg += 1
        return out

    entry = arith_block(int(rng.integers(3, 10)))
    if uses_global:
        entry.insert(int(rng.integers(0, len(entry) + 1)), ("load", next_reg))
        live.append(next_reg)
        next_reg += 1
    cond_operand = ("reg", int(live[rng.integers(0, len(live))]))
    predicate = _PREDICATES[rng.integers(0, len(_PREDICATES))]
    cond_const = int(rng.integers(0, 32))

    arm_a = arith_block(int(rng.integers(2, 6)))
    if call_arity is not None:
        arm_a.append(("call", next_reg, call_arity,
                      [operand() for _ in range(call_arity)]))
        live.append(next_reg)
        next_reg += 1
    phi_a = int(live[-1])

    arm_b = arith_block(int(rng.integers(2, 6)))
    phi_b = int(live[-1])

    phi_reg = next_reg
    next_reg += 1
    live.append(phi_reg)
    phi_reg_idx = phi_reg
    merge = arith_block(int(rng.integers(1, 4)))
    if uses_global:
        merge.append(("store", int(live[rng.integers(0, len(live))])))
    ret_reg = int(live[-1])

    return _Skeleton(
        int_type=int_type, entry=entry, arm_a=arm_a, arm_b=arm_b, merge=merge,
        predicate=predicate, cond_operand=cond_operand, cond_const=cond_const,
        phi_sources=(phi_a, phi_b), phi_reg=phi_reg_idx, ret_reg=ret_reg, n_regs=next_reg,
        uses_global=uses_global, call_arity=call_arity,
    )


def _transform(skel: _Skeleton, strength: float, rng: np.random.Generator) -> _Skeleton:
    """Decompiler-style lossy rewrite of a skeleton copy."""

    def rewrite_block(block: list) -> list:
        # swap adjacent independent arithmetic instructions
        idx = 0
        result = list(block)
        while idx + 1 < len(result):
            a, b = result[idx], result[idx + 1]
            if (a[0] == "arith" and b[0] == "arith"
                    and ("reg", a[1]) not in (b[3], b[4])
                    and rng.random() < 0.7 * strength):
                result[idx], result[idx + 1] = b, a
                idx += 2
            else:
                idx += 1
        # constant class flips and opcode substitutions
        flipped = []
        for instr in result:
            if instr[0] == "arith":
                kind, dst, op, x, y, ty = instr
                if rng.random() < 0.35 * strength:
                    op = _ARITH_POOL[rng.integers(0, len(_ARITH_POOL))]
                def flip(operand):
                    if operand[0] == "const" and rng.random() < 0.5 * strength:
                        return ("fconst", float(operand[1]))
                    return operand
                flipped.append((kind, dst, op, flip(x), flip(y), ty))
            else:
                flipped.append(instr)
        # dead temporaries
        with_temps = []
        for instr in flipped:
            with_temps.append(instr)
            if instr[0] == "arith" and rng.random() < 0.6 * strength:
                with_temps.append(("deadtemp", instr[1], instr[5]))
        return with_temps

    return _Skeleton(
        int_type=skel.int_type,
        entry=rewrite_block(skel.entry),
        arm_a=rewrite_block(skel.arm_a),
        arm_b=rewrite_block(skel.arm_b),
        merge=rewrite_block(skel.merge),
        predicate=skel.predicate,
        cond_operand=skel.cond_operand,
        cond_const=skel.cond_const,
        phi_sources=skel.phi_sources,
        phi_reg=skel.phi_reg,
        ret_reg=skel.ret_reg,
        n_regs=skel.n_regs,
        uses_global=skel.uses_global,
        call_arity=skel.call_arity,
    )


@dataclass
class _Namer:
    reg_fmt: str
    label_names: tuple[str, str, str, str]
    func_name: str
    global_name: str
    callee_name: str
    temp_counter: int = 0
    extra: dict = field(default_factory=dict)

    def reg(self, idx) -> str:
        return self.reg_fmt.format(idx)

    def temp(self) -> str:
        self.temp_counter += 1
        return self.reg_fmt.format(f"t{self.temp_counter}")


def _emit(skel: _Skeleton, namer: _Namer) -> str:
    ty = skel.int_type

    def operand(op) -> str:
        if op[0] == "reg":
            return namer.reg(op[1])
        if op[0] == "fconst":
            return f"{op[1]:.6e}"
        return str(op[1])

    lines = []

    def emit_block(block: list):
        for instr in block:
            if instr[0] == "arith":
                _, dst, op, x, y, instr_ty = instr
                lines.append(f"  {namer.reg(dst)} = {op} {instr_ty} {operand(x)}, {operand(y)}")
            elif instr[0] == "deadtemp":
                _, src, instr_ty = instr
                lines.append(f"  {namer.temp()} = add {instr_ty} {namer.reg(src)}, 0")
            elif instr[0] == "load":
                _, dst = instr
                lines.append(f"  {namer.reg(dst)} = load {ty}, {ty}* {namer.global_name}")
            elif instr[0] == "store":
                _, src = instr
                lines.append(f"  store {ty} {namer.reg(src)}, {ty}* {namer.global_name}")
            elif instr[0] == "call":
                _, dst, arity, args = instr
                arg_text = ", ".join(f"{ty} {operand(a)}" for a in args)
                lines.append(f"  {namer.reg(dst)} = call {ty} {namer.callee_name}({arg_text})")
            else:
                raise AssertionError(f"unknown synth instruction {instr[0]}")

    lbl_entry, lbl_a, lbl_b, lbl_merge = namer.label_names
    lines.append(
        f"define {ty} {namer.func_name}({ty} {namer.reg(0)}, {ty} {namer.reg(1)}) {{"
    )
    lines.append(f"{lbl_entry}:")
    emit_block(skel.entry)
    cond = namer.temp()
    lines.append(
        f"  {cond} = icmp {skel.predicate} {ty} {operand(skel.cond_operand)}, {skel.cond_const}"
    )
    lines.append(f"  br i1 {cond}, label %{lbl_a}, label %{lbl_b}")
    lines.append(f"{lbl_a}:")
    emit_block(skel.arm_a)
    lines.append(f"  br label %{lbl_merge}")
    lines.append(f"{lbl_b}:")
    emit_block(skel.arm_b)
    lines.append(f"  br label %{lbl_merge}")
    lines.append(f"{lbl_merge}:")
    phi_a, phi_b = skel.phi_sources
    lines.append(
        f"  {namer.reg(skel.phi_reg)} = phi {ty} [ {namer.reg(phi_a)}, %{lbl_a} ], [ {namer.reg(phi_b)}, %{lbl_b} ]"
    )
    emit_block(skel.merge)
    lines.append(f"  ret {ty} {namer.reg(skel.ret_reg)}")
    lines.append("}")
    body = "\n".join(lines)
    preamble = []
    if skel.uses_global:
        preamble.append(f"{namer.global_name} = global {ty} 0")
    if skel.call_arity is not None:
        arg_types = ", ".join([ty] * skel.call_arity)
        preamble.append(f"declare {ty} {namer.callee_name}({arg_types})")
    return "\n".join(preamble + [body]) + "\n"


def _source_namer(group_idx: int) -> _Namer:
    return _Namer(
        reg_fmt="%r{}",
        label_names=("entry", "if.then", "if.else", "if.end"),
        func_name=f"@group{group_idx}_impl",
        global_name="@shared_state",
        callee_name="@helper",
    )


def _binary_namer(group_idx: int, variant: int) -> _Namer:
    base = 0x401000 + 0x40 * group_idx + variant
    return _Namer(
        reg_fmt="%stack_var_{}",
        label_names=(
            f"dec_label_pc_{base:x}",
            f"dec_label_pc_{base + 0x10:x}",
            f"dec_label_pc_{base + 0x20:x}",
            f"dec_label_pc_{base + 0x30:x}",
        ),
        func_name=f"@function_{base:x}",
        global_name=f"@global_var_{base + 0x1000:x}",
        callee_name=f"@unknown_{base + 0x2000:x}",
    )


def generate(spec: SynthSpec) -> tuple[list[SynthDocument], list[tuple[str, str, str]]]:
    """All documents plus ground-truth (binary_id, source_id, group_id)
    pairs, fully determined by the spec."""
    documents: list[SynthDocument] = []
    pairs: list[tuple[str, str, str]] = []
    for g in range(spec.n_groups):
        group_id = f"g{g:04d}"
        skel_rng = np.random.default_rng([spec.seed, g, 0])
        skeleton = _build_skeleton(skel_rng)
        source_id = f"{group_id}_src"
        documents.append(SynthDocument(
            doc_id=source_id,
            origin="source",
            group_id=group_id,
            text=_emit(skeleton, _source_namer(g)),
        ))
        for variant in range(1, spec.variants_per_group):
            var_rng = np.random.default_rng([spec.seed, g, variant])
            transformed = _transform(skeleton, spec.transform_strength, var_rng)
            binary_id = f"{group_id}_bin{variant}"
            documents.append(SynthDocument(
                doc_id=binary_id,
                origin="binary",
                group_id=group_id,
                text=_emit(transformed, _binary_namer(g, variant)),
            ))
            pairs.append((binary_id, source_id, group_id))
    return documents, pairs

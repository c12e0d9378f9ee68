"""Abstract ISA descriptors, calling conventions and register maps.

Registers are identified by index; names are for display only.  A descriptor
carries its native :class:`CallingConvention`, so a descriptor alone is enough
to lower code for it.

Register roles used throughout:

* ``SP``/``FP`` - stack and frame pointer, never allocated;
* platform/reserved register - never allocated;
* two scratch registers - caller-saved, used only inside the lowering of a
  single IR instruction (never hold a value across instructions);
* value registers - everything in ``allocation_order``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

CISC = "cisc"
RISC = "risc"


class ISAError(ValueError):
    pass


@dataclass(frozen=True)
class CallingConvention:
    arg_registers: tuple[int, ...]
    return_register: int
    callee_saved: tuple[int, ...]
    caller_saved: tuple[int, ...]
    scratch_registers: tuple[int, int]
    allocation_order: tuple[int, ...]
    stack_alignment_bytes: int = 16

    @property
    def value_registers(self) -> tuple[int, ...]:
        return self.allocation_order

    def role(self, r: int) -> str:
        if r in self.arg_registers:
            tag = f"arg{self.arg_registers.index(r)}"
            return tag + "+ret" if r == self.return_register else tag
        if r == self.return_register:
            return "ret"
        if r in self.scratch_registers:
            return "scratch"
        if r in self.callee_saved:
            return "callee"
        if r in self.caller_saved:
            return "caller"
        return "special"

    def to_dict(self) -> dict:
        return {
            "arg_registers": list(self.arg_registers),
            "return_register": self.return_register,
            "callee_saved": list(self.callee_saved),
            "caller_saved": list(self.caller_saved),
            "scratch_registers": list(self.scratch_registers),
            "allocation_order": list(self.allocation_order),
            "stack_alignment_bytes": self.stack_alignment_bytes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CallingConvention":
        return cls(
            tuple(d["arg_registers"]),
            d["return_register"],
            tuple(sorted(d["callee_saved"])),
            tuple(sorted(d["caller_saved"])),
            tuple(d["scratch_registers"]),
            tuple(d["allocation_order"]),
            d.get("stack_alignment_bytes", 16),
        )


@dataclass(frozen=True)
class ISADescriptor:
    name: str
    style: str
    gpr_count: int
    register_names: tuple[str, ...]
    stack_pointer: int
    frame_pointer: int
    platform_register: int | None = None
    pointer_bits: int = 64
    convention: CallingConvention | None = field(default=None, compare=True)

    def reg_name(self, r: int) -> str:
        return self.register_names[r]

    @property
    def specials(self) -> tuple[int, ...]:
        s = (self.stack_pointer, self.frame_pointer)
        return s + ((self.platform_register,) if self.platform_register is not None else ())

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "style": self.style,
            "gpr_count": self.gpr_count,
            "register_names": list(self.register_names),
            "stack_pointer": self.stack_pointer,
            "frame_pointer": self.frame_pointer,
            "platform_register": self.platform_register,
            "pointer_bits": self.pointer_bits,
        }
        if self.convention is not None:
            d["convention"] = self.convention.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ISADescriptor":
        isa = cls(
            d["name"],
            d["style"],
            d["gpr_count"],
            tuple(d["register_names"]),
            d["stack_pointer"],
            d["frame_pointer"],
            d.get("platform_register"),
            d.get("pointer_bits", 64),
        )
        cc = CallingConvention.from_dict(d["convention"]) if "convention" in d else generic_convention(isa)
        isa = replace(isa, convention=cc)
        check_isa(isa)
        return isa

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def check_isa(isa: ISADescriptor) -> None:
    """Validate descriptor and convention invariants; raise ISAError on violation."""
    n = isa.gpr_count
    if isa.style not in (CISC, RISC):
        raise ISAError(f"unknown style {isa.style!r}")
    if isa.pointer_bits != 64:
        raise ISAError("only 64-bit pointers are supported")
    if len(isa.register_names) != n:
        raise ISAError("register_names length differs from gpr_count")
    specials = isa.specials
    if len(set(specials)) != len(specials) or any(not 0 <= r < n for r in specials):
        raise ISAError("SP, FP and platform register must be distinct and below gpr_count")
    cc = isa.convention
    if cc is None:
        return
    every = set(range(n))
    callee, caller = set(cc.callee_saved), set(cc.caller_saved)
    regs = set(cc.arg_registers) | callee | caller | set(cc.scratch_registers) | set(cc.allocation_order)
    if not regs <= every:
        raise ISAError("convention names registers outside the register file")
    if set(cc.arg_registers) & callee:
        raise ISAError("argument registers must not be callee-saved")
    if callee & caller:
        raise ISAError("a register cannot be both callee- and caller-saved")
    covered = callee | caller | {isa.stack_pointer}
    if isa.platform_register is not None:
        covered.add(isa.platform_register)
    if covered != every:
        raise ISAError(f"callee/caller-saved sets leave registers unassigned: {sorted(every - covered)}")
    if cc.return_register not in caller:
        raise ISAError("return register must be caller-saved")
    if isa.frame_pointer not in callee:
        raise ISAError("frame pointer must be callee-saved")
    if len(cc.scratch_registers) != 2 or len(set(cc.scratch_registers)) != 2:
        raise ISAError("exactly two distinct scratch registers are required")
    if not set(cc.scratch_registers) <= caller or set(cc.scratch_registers) & set(cc.arg_registers):
        raise ISAError("scratch registers must be caller-saved non-argument registers")
    order = cc.allocation_order
    if len(set(order)) != len(order):
        raise ISAError("allocation order repeats a register")
    if set(order) & (set(specials) | set(cc.scratch_registers)):
        raise ISAError("allocation order contains a special or scratch register")
    if cc.return_register not in order and cc.return_register not in cc.scratch_registers:
        raise ISAError("return register must be a value or scratch register")
    if cc.stack_alignment_bytes != 16:
        raise ISAError("stack alignment must be 16 bytes")


# ---------------------------------------------------------------------------
# Presets


def _x86like() -> ISADescriptor:
    names = ("rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi",
             "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15", "r16")
    cc = CallingConvention(
        arg_registers=(7, 6, 2, 1, 8, 9),
        return_register=0,
        callee_saved=(3, 5, 12, 13, 14, 15),
        caller_saved=(0, 1, 2, 6, 7, 8, 9, 10, 11, 16),
        scratch_registers=(11, 16),
        allocation_order=(0, 1, 2, 6, 7, 8, 9, 10, 3, 12, 13, 14, 15),
    )
    return ISADescriptor("x86like", CISC, 17, names, 4, 5, None, 64, cc)


def _armlike() -> ISADescriptor:
    names = tuple(f"x{i}" for i in range(31)) + ("sp",)
    caller = tuple(range(18)) + (30,)
    callee = tuple(range(19, 30))
    cc = CallingConvention(
        arg_registers=tuple(range(8)),
        return_register=0,
        callee_saved=callee,
        caller_saved=caller,
        scratch_registers=(16, 17),
        allocation_order=tuple(range(16)) + (30,) + tuple(range(19, 29)),
    )
    return ISADescriptor("armlike", RISC, 32, names, 31, 29, 18, 64, cc)


X86LIKE = _x86like()
ARMLIKE = _armlike()


# ---------------------------------------------------------------------------
# Generic role assignment


def _role_counts(k: int) -> tuple[int, int, int]:
    """Split ``k`` non-special registers into (args, callee-saved, temps); 2 go to scratch."""
    args = min(6, k - 2)
    callee = min(5, k - 2 - args)
    return args, callee, k - 2 - args - callee


def generic_convention(isa: ISADescriptor) -> CallingConvention:
    """Convention for a descriptor without one: roles handed out by ascending index."""
    free = [r for r in range(isa.gpr_count) if r not in isa.specials]
    if len(free) < 2:
        raise ISAError(f"{isa.name}: needs at least two registers besides SP/FP/platform")
    a, c, _ = _role_counts(len(free))
    scratch = (free[0], free[-1])
    rest = free[1:-1]
    args, callee, temps = rest[:a], rest[a:a + c], rest[a + c:]
    caller = sorted(set(free) - set(callee))
    return CallingConvention(
        arg_registers=tuple(args),
        return_register=scratch[0],
        callee_saved=tuple(sorted(callee + [isa.frame_pointer])),
        caller_saved=tuple(caller),
        scratch_registers=scratch,
        allocation_order=tuple(args + temps + callee),
    )


# ---------------------------------------------------------------------------
# Register maps


@dataclass(frozen=True)
class RegisterMap:
    """Index pairs between side A and side B; a bijection on its domain."""

    pairs: tuple[tuple[int, int], ...]
    names: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        a = [p[0] for p in self.pairs]
        b = [p[1] for p in self.pairs]
        if len(set(a)) != len(a) or len(set(b)) != len(b):
            raise ISAError("register map is not injective")

    def forward(self, r: int) -> int:
        for x, y in self.pairs:
            if x == r:
                return y
        raise ISAError(f"register {r} is not mapped (A->B)")

    def backward(self, r: int) -> int:
        for x, y in self.pairs:
            if y == r:
                return x
        raise ISAError(f"register {r} is not mapped (B->A)")

    def inverse(self) -> "RegisterMap":
        return RegisterMap(tuple((y, x) for x, y in self.pairs), tuple((y, x) for x, y in self.names))

    def is_identity(self) -> bool:
        return all(x == y for x, y in self.pairs)

    def to_dict(self) -> dict:
        return {"pairs": [list(p) for p in self.pairs], "names": [list(n) for n in self.names]}


def map_register(m: RegisterMap, r: int, direction: str = "a->b") -> int:
    if direction in ("a->b", "forward"):
        return m.forward(r)
    if direction in ("b->a", "backward"):
        return m.backward(r)
    raise ValueError(f"bad direction {direction!r}")


def identity_map(isa: ISADescriptor) -> RegisterMap:
    return RegisterMap(tuple((r, r) for r in range(isa.gpr_count)),
                       tuple((n, n) for n in isa.register_names))


def role_map(a: ISADescriptor, b: ISADescriptor) -> RegisterMap:
    """Pair registers of two targets by role (SP, FP, return, args, callee-saved, ...).

    Partial when the register files differ in size.
    """
    if a == b:
        return identity_map(a)
    ca, cb = a.convention, b.convention
    pairs: list[tuple[int, int]] = []
    used_a: set[int] = set()
    used_b: set[int] = set()

    def pair_lists(xs, ys):
        xs = [x for x in xs if x not in used_a]
        ys = [y for y in ys if y not in used_b]
        for x, y in zip(xs, ys):
            pairs.append((x, y))
            used_a.add(x)
            used_b.add(y)

    pair_lists([a.stack_pointer], [b.stack_pointer])
    pair_lists([a.frame_pointer], [b.frame_pointer])
    if a.platform_register is not None and b.platform_register is not None:
        pair_lists([a.platform_register], [b.platform_register])
    pair_lists([ca.return_register], [cb.return_register])
    pair_lists(ca.arg_registers, cb.arg_registers)
    pair_lists([r for r in ca.callee_saved if r != a.frame_pointer],
               [r for r in cb.callee_saved if r != b.frame_pointer])
    pair_lists(ca.scratch_registers, cb.scratch_registers)
    pair_lists(sorted(ca.caller_saved), sorted(cb.caller_saved))
    pairs.sort()
    return RegisterMap(tuple(pairs), tuple((a.reg_name(x), b.reg_name(y)) for x, y in pairs))


# ---------------------------------------------------------------------------
# Uniform ABI


def _pick_reserved(isa: ISADescriptor) -> int:
    if isa.platform_register is not None:
        return isa.platform_register
    cc = isa.convention
    taken = set(isa.specials) | set(cc.arg_registers) | {cc.return_register}
    temps = [r for r in cc.caller_saved if r not in taken]
    return max(temps) if temps else max(r for r in range(isa.gpr_count) if r not in taken)


def _uniform_side(isa: ISADescriptor, n: int, reserve: bool) -> tuple[list[int], dict]:
    """Choose which native registers of ``isa`` fill each uniform role."""
    cc = isa.convention or generic_convention(isa)
    isa = replace(isa, convention=cc)
    k = n - 2 - int(reserve)
    a, c, t = _role_counts(k)
    reserved = _pick_reserved(isa) if reserve else None
    used = {isa.stack_pointer, isa.frame_pointer}
    if reserved is not None:
        used.add(reserved)
    if isa.platform_register is not None:
        used.add(isa.platform_register)
    fallback = [r for r in range(isa.gpr_count)]

    def take(pool, count):
        got = []
        for r in list(pool) + fallback:
            if len(got) == count:
                break
            if r not in used:
                got.append(r)
                used.add(r)
        if len(got) < count:
            raise ISAError(f"{isa.name}: not enough registers for the uniform layout")
        return got

    ret = take([cc.return_register], 1)
    args = take(cc.arg_registers, a)
    callee = take(sorted(r for r in cc.callee_saved if r != isa.frame_pointer), c)
    temps = take(sorted(r for r in cc.caller_saved if r not in cc.scratch_registers), t)
    scratch1 = take(list(cc.scratch_registers), 1)
    order = ret + args + callee + temps + scratch1
    order += ([reserved] if reserved is not None else []) + [isa.frame_pointer, isa.stack_pointer]
    return order, {"args": a, "callee": c, "temps": t}


def uniform_convention(n: int, reserve: bool) -> CallingConvention:
    """The shared convention over canonical uniform indices for ``n`` registers."""
    k = n - 2 - int(reserve)
    a, c, t = _role_counts(k)
    args = list(range(1, 1 + a))
    callee = list(range(1 + a, 1 + a + c))
    temps = list(range(1 + a + c, 1 + a + c + t))
    scratch1 = 1 + a + c + t
    fp = n - 2
    return CallingConvention(
        arg_registers=tuple(args),
        return_register=0,
        callee_saved=tuple(callee + [fp]),
        caller_saved=tuple([0] + args + temps + [scratch1]),
        scratch_registers=(0, scratch1),
        allocation_order=tuple(args + temps + callee),
    )


def make_uniform_abi(a: ISADescriptor, b: ISADescriptor):
    """Return ``(ua, ub, shared_convention, register_map)`` with equal register depth.

    Both descriptors are renumbered into one canonical role order, so the
    shared convention is literally the same object on both sides and the
    register map pairs index ``i`` of A with index ``i`` of B.
    """
    n = min(a.gpr_count, b.gpr_count)
    if n < 4:
        raise ISAError(f"uniform ABI needs at least 4 GPRs, got {n}")
    if a == b:
        cc = a.convention or generic_convention(a)
        same = replace(a, convention=cc)
        return same, same, cc, identity_map(same)
    reserve = n >= 5 and (a.platform_register is not None or b.platform_register is not None)
    cc = uniform_convention(n, reserve)
    sides = []
    for isa in (a, b):
        order, _ = _uniform_side(isa, n, reserve)
        names = tuple(isa.reg_name(r) for r in order)
        sides.append(ISADescriptor(
            f"{isa.name}-uniform{n}", isa.style, n, names,
            stack_pointer=n - 1, frame_pointer=n - 2,
            platform_register=n - 3 if reserve else None,
            convention=cc,
        ))
    ua, ub = sides
    for s in sides:
        check_isa(s)
    rmap = RegisterMap(tuple((i, i) for i in range(n)),
                       tuple(zip(ua.register_names, ub.register_names)))
    return ua, ub, cc, rmap


def inject_convention_fault(isa: ISADescriptor) -> ISADescriptor:
    """Swap the roles of the first argument register and the first callee-saved register."""
    cc = isa.convention
    callee = [r for r in cc.callee_saved if r != isa.frame_pointer]
    if not cc.arg_registers or not callee:
        raise ISAError("fault injection needs an argument and a callee-saved register")
    x, y = cc.arg_registers[0], callee[0]
    swap = {x: y, y: x}
    s = lambda r: swap.get(r, r)  # noqa: E731
    bad = CallingConvention(
        arg_registers=tuple(map(s, cc.arg_registers)),
        return_register=s(cc.return_register),
        callee_saved=tuple(sorted(map(s, cc.callee_saved))),
        caller_saved=tuple(sorted(map(s, cc.caller_saved))),
        scratch_registers=tuple(map(s, cc.scratch_registers)),
        allocation_order=tuple(map(s, cc.allocation_order)),
    )
    out = replace(isa, name=isa.name + "-fault", convention=bad)
    check_isa(out)
    return out


# ---------------------------------------------------------------------------
# Register-depth restriction (for sweeps)


def restrict_registers(isa: ISADescriptor, n: int) -> ISADescriptor:
    """Keep ``n`` registers of ``isa``, renumbered compactly.

    Removal order: caller-saved temporaries, then argument registers (last
    first), then callee-saved registers (highest first).  Allocation prefers
    registers in reverse removal order, so an allocation that fits in the
    surviving registers is unchanged by the removal.  The platform register is
    kept while ``n >= 5``.
    """
    cc = isa.convention or generic_convention(isa)
    if n < 4:
        raise ISAError(f"infeasible register count {n} (< 4)")
    if n > isa.gpr_count:
        raise ISAError(f"{isa.name} has only {isa.gpr_count} registers")
    keep_platform = isa.platform_register is not None and n >= 5
    scratch = list(cc.scratch_registers)
    callee = sorted(r for r in cc.callee_saved if r != isa.frame_pointer)
    args = list(cc.arg_registers)
    temps = sorted(r for r in cc.allocation_order if r not in callee and r not in args)
    removal = temps[::-1] + args[::-1] + callee[::-1]
    if isa.platform_register is not None and not keep_platform:
        removal = [isa.platform_register] + removal
    drop = isa.gpr_count - n
    if drop > len(removal):
        raise ISAError(f"cannot restrict {isa.name} to {n} registers")
    removed = set(removal[:drop])
    survivors = [r for r in range(isa.gpr_count) if r not in removed]
    new = {r: i for i, r in enumerate(survivors)}
    ret = cc.return_register if cc.return_register not in removed else scratch[0]
    keep = lambda rs: [new[r] for r in rs if r not in removed]  # noqa: E731
    order = keep(callee) + keep(args) + keep(temps)
    caller = [new[r] for r in survivors if r in cc.caller_saved or (r == isa.platform_register and not keep_platform)]
    conv = CallingConvention(
        arg_registers=tuple(keep(args)),
        return_register=new[ret],
        callee_saved=tuple(sorted(keep(cc.callee_saved))),
        caller_saved=tuple(sorted(caller)),
        scratch_registers=tuple(new[r] for r in scratch),
        allocation_order=tuple(order),
    )
    out = ISADescriptor(
        f"{isa.name}-r{n}", isa.style, n,
        tuple(isa.reg_name(r) for r in survivors),
        new[isa.stack_pointer], new[isa.frame_pointer],
        new[isa.platform_register] if keep_platform else None,
        isa.pointer_bits, conv,
    )
    check_isa(out)
    return out


def _armlike_reduced() -> ISADescriptor:
    _, ub, _, _ = make_uniform_abi(X86LIKE, ARMLIKE)
    return replace(ub, name="armlike-reduced")


ARMLIKE_REDUCED = _armlike_reduced()

PRESETS = {"x86like": X86LIKE, "armlike": ARMLIKE, "armlike-reduced": ARMLIKE_REDUCED}


def load_isa(spec: str) -> ISADescriptor:
    """Resolve a preset name or a path to an ``isa.json`` file."""
    if spec in PRESETS:
        return PRESETS[spec]
    try:
        with open(spec, encoding="utf-8") as fh:
            return ISADescriptor.from_dict(json.load(fh))
    except FileNotFoundError:
        raise ISAError(f"unknown ISA {spec!r} (presets: {', '.join(PRESETS)})") from None


for _isa in PRESETS.values():
    check_isa(_isa)

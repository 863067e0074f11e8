"""Self-contained SMILES subset parser, circular fingerprints, Tanimoto similarity.

The parser covers the organic subset (B, C, N, O, P, S, F, Cl, Br, I),
bracket atoms with isotope/charge/explicit-H/class annotations, single,
double, triple and aromatic bonds, branches, ring closures (digits and
%nn), dot-separated components, and aromatic lowercase atoms. Stereo
markers (/, \\, @) are accepted and ignored. Implicit hydrogens for
organic-subset atoms follow standard valences (aromatic bonds count 1.5,
summed then rounded up); bracket atoms carry only their stated hydrogens.

Fingerprints are Morgan-style circular neighborhoods: every atom gets an
initial invariant from (element, charge, hydrogens, degree, aromaticity),
then ``radius`` rounds of hashing over sorted (bond order, neighbor code)
pairs; every per-atom per-round code sets one bit of an ``nbits``-wide
vector. The hash is a fixed, versioned blake2b digest, so fingerprints are
reproducible everywhere but intentionally not bit-compatible with any
external toolkit. Aromatic perception is syntactic: kekulized and aromatic
spellings of the same ring differ.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional

from .errors import ParseError, WidthMismatch

AROMATIC = 1.5  # bond order used for aromatic bonds

_ORGANIC_TWO = ("Cl", "Br")
_ORGANIC_ONE = ("B", "C", "N", "O", "P", "S", "F", "I")
_AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
_AROMATIC_BRACKET = ("b", "c", "n", "o", "p", "s", "se", "as")

_VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}

_BOND_CHARS = {"-": 1.0, "=": 2.0, "#": 3.0, ":": AROMATIC, "/": 1.0, "\\": 1.0}

_HASH_VERSION = b"morgan-v1"
DEFAULT_RADIUS = 2
DEFAULT_NBITS = 2048


@dataclass(frozen=True)
class Atom:
    element: str
    charge: int
    explicit_h: int
    aromatic: bool


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: float  # 1, 2, 3, or AROMATIC (1.5)


@dataclass(frozen=True)
class Molecule:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]

    def neighbors(self) -> list[list[tuple[float, int]]]:
        """Per-atom list of (bond order, neighbor index)."""
        adj: list[list[tuple[float, int]]] = [[] for _ in self.atoms]
        for bond in self.bonds:
            adj[bond.a].append((bond.order, bond.b))
            adj[bond.b].append((bond.order, bond.a))
        return adj


@dataclass(frozen=True)
class Fingerprint:
    nbits: int
    bits: frozenset[int]

    def __post_init__(self):
        if any(b < 0 or b >= self.nbits for b in self.bits):
            raise ValueError("bit positions out of range")


@dataclass(frozen=True)
class SimilarityReport:
    tanimoto: float
    a_bits: int
    b_bits: int
    common_bits: int
    valid: bool


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.i = 0
        self.atoms: list[dict] = []
        self.bonds: list[tuple[int, int, Optional[float]]] = []
        self.bond_keys: set[tuple[int, int]] = set()

    def error(self, message: str, pos: Optional[int] = None):
        raise ParseError(message, (self.i if pos is None else pos) + 1)

    def peek(self) -> str:
        return self.text[self.i] if self.i < len(self.text) else ""

    def parse(self) -> Molecule:
        prev: Optional[int] = None
        pending: Optional[float] = None
        pending_pos = 0
        branch_stack: list[tuple[int, int]] = []  # (atom index, '(' position)
        rings: dict[int, tuple[int, Optional[float], int]] = {}

        while self.i < len(self.text):
            ch = self.peek()
            if ch == "(":
                if prev is None:
                    self.error("branch before any atom")
                branch_stack.append((prev, self.i))
                self.i += 1
            elif ch == ")":
                if not branch_stack:
                    self.error("unbalanced ')'")
                if pending is not None:
                    self.error("dangling bond before ')'")
                prev, _ = branch_stack.pop()
                self.i += 1
            elif ch in _BOND_CHARS:
                if pending is not None:
                    self.error("two bond symbols in a row")
                pending = _BOND_CHARS[ch]
                pending_pos = self.i
                self.i += 1
            elif ch == ".":
                if pending is not None:
                    self.error("bond before '.'")
                prev = None
                self.i += 1
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    self.error("ring closure before any atom")
                num = self._read_ring_number()
                prev_after = self._close_ring(rings, num, prev, pending)
                pending = None
                prev = prev_after
            elif ch == "[":
                idx = self._read_bracket_atom()
                prev = self._attach(prev, idx, pending)
                pending = None
            else:
                idx = self._read_organic_atom()
                prev = self._attach(prev, idx, pending)
                pending = None

        if branch_stack:
            self.error("unclosed '('", pos=branch_stack[-1][1])
        if pending is not None:
            self.error("dangling bond at end of input", pos=pending_pos)
        if rings:
            num, (_, _, pos) = next(iter(rings.items()))
            self.error(f"unclosed ring closure {num}", pos=pos)
        if not self.atoms:
            self.error("no atoms", pos=0)
        return self._build()

    def _attach(self, prev: Optional[int], idx: int, pending: Optional[float]) -> int:
        if prev is not None:
            order = pending
            if order is None:
                order = (
                    AROMATIC
                    if self.atoms[prev]["aromatic"] and self.atoms[idx]["aromatic"]
                    else 1.0
                )
            self._add_bond(prev, idx, order)
        elif pending is not None:
            self.error("bond with no preceding atom")
        return idx

    def _add_bond(self, a: int, b: int, order: float):
        if a == b:
            self.error("ring closure bonds an atom to itself")
        key = (min(a, b), max(a, b))
        if key in self.bond_keys:
            self.error("duplicate bond between atoms")
        self.bond_keys.add(key)
        self.bonds.append((a, b, order))

    def _read_ring_number(self) -> int:
        if self.peek() == "%":
            start = self.i
            self.i += 1
            digits = self.text[self.i : self.i + 2]
            if len(digits) != 2 or not digits.isdigit():
                self.error("'%' ring closure needs two digits", pos=start)
            self.i += 2
            return int(digits)
        num = int(self.peek())
        self.i += 1
        return num

    def _close_ring(self, rings, num, atom, pending) -> int:
        if num in rings:
            other, open_bond, _ = rings.pop(num)
            order = None
            if open_bond is not None and pending is not None and open_bond != pending:
                self.error(f"conflicting bond orders for ring closure {num}")
            order = open_bond if open_bond is not None else pending
            if order is None:
                order = (
                    AROMATIC
                    if self.atoms[other]["aromatic"] and self.atoms[atom]["aromatic"]
                    else 1.0
                )
            self._add_bond(other, atom, order)
        else:
            rings[num] = (atom, pending, self.i - 1)
        return atom

    def _read_organic_atom(self) -> int:
        two = self.text[self.i : self.i + 2]
        if two in _ORGANIC_TWO:
            self.i += 2
            return self._new_atom(two, aromatic=False, bracket=False)
        ch = self.peek()
        if ch in _ORGANIC_ONE:
            self.i += 1
            return self._new_atom(ch, aromatic=False, bracket=False)
        if ch in _AROMATIC_ORGANIC:
            self.i += 1
            return self._new_atom(ch.upper(), aromatic=True, bracket=False)
        self.error(f"unknown symbol {ch!r}")

    def _read_bracket_atom(self) -> int:
        start = self.i
        self.i += 1  # consume '['
        # isotope (ignored)
        while self.peek().isdigit():
            self.i += 1
        elem, aromatic = self._read_bracket_symbol(start)
        # chirality (ignored)
        while self.peek() == "@":
            self.i += 1
        hydrogens = 0
        if self.peek() == "H":
            self.i += 1
            hydrogens = 1
            digits = ""
            while self.peek().isdigit():
                digits += self.peek()
                self.i += 1
            if digits:
                hydrogens = int(digits)
        charge = 0
        if self.peek() in "+-":
            sign = 1 if self.peek() == "+" else -1
            symbol = self.peek()
            count = 0
            while self.peek() == symbol:
                count += 1
                self.i += 1
            digits = ""
            while self.peek().isdigit():
                digits += self.peek()
                self.i += 1
            charge = sign * (int(digits) if digits else count)
        if self.peek() == ":":
            self.i += 1
            if not self.peek().isdigit():
                self.error("atom class expects digits")
            while self.peek().isdigit():
                self.i += 1
        if self.peek() != "]":
            self.error("expected ']'", pos=start)
        self.i += 1
        return self._new_atom(
            elem, aromatic=aromatic, bracket=True, hydrogens=hydrogens, charge=charge
        )

    def _read_bracket_symbol(self, start: int) -> tuple[str, bool]:
        two = self.text[self.i : self.i + 2]
        if two.lower() == two and two in _AROMATIC_BRACKET:
            self.i += 2
            return two.capitalize(), True
        ch = self.peek()
        if ch in _AROMATIC_BRACKET:
            self.i += 1
            return ch.upper(), True
        if ch.isupper():
            self.i += 1
            if self.peek().islower() and self.peek() not in ("",):
                nxt = self.peek()
                # Two-letter element, e.g. Cl, Br, Se, Si, Na.
                self.i += 1
                return ch + nxt, False
            return ch, False
        self.error("expected element symbol in brackets", pos=start)

    def _new_atom(self, element, aromatic, bracket, hydrogens=0, charge=0) -> int:
        self.atoms.append(
            {
                "element": element,
                "aromatic": aromatic,
                "bracket": bracket,
                "hydrogens": hydrogens,
                "charge": charge,
            }
        )
        return len(self.atoms) - 1

    def _build(self) -> Molecule:
        order_sum = [0.0] * len(self.atoms)
        for a, b, order in self.bonds:
            order_sum[a] += order
            order_sum[b] += order
        atoms = []
        for idx, raw in enumerate(self.atoms):
            h = raw["hydrogens"]
            if not raw["bracket"]:
                h = self._implicit_h(raw["element"], order_sum[idx])
            atoms.append(
                Atom(
                    element=raw["element"],
                    charge=raw["charge"],
                    explicit_h=h,
                    aromatic=raw["aromatic"],
                )
            )
        bonds = tuple(Bond(a=a, b=b, order=order) for a, b, order in self.bonds)
        return Molecule(atoms=tuple(atoms), bonds=bonds)

    @staticmethod
    def _implicit_h(element: str, order_sum: float) -> int:
        valences = _VALENCES.get(element)
        if valences is None:
            return 0
        degree = int(math.ceil(order_sum - 1e-9))
        for v in valences:
            if v >= degree:
                return v - degree
        return 0


def parse_smiles(text: str) -> Molecule:
    """Parse a SMILES string; raises ParseError with a 1-based position."""
    if not text or not text.strip():
        raise ParseError("empty SMILES", 1)
    return _Parser(text.strip()).parse()


def _stable_hash(payload: str) -> int:
    digest = hashlib.blake2b(payload.encode("utf-8"), key=_HASH_VERSION, digest_size=8)
    return int.from_bytes(digest.digest(), "big")


def morgan_fingerprint(
    mol: Molecule, radius: int = DEFAULT_RADIUS, nbits: int = DEFAULT_NBITS
) -> Fingerprint:
    """Circular fingerprint: one bit per (atom, round) neighborhood code."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if nbits < 1:
        raise ValueError("nbits must be >= 1")
    adj = mol.neighbors()
    codes = [
        _stable_hash(
            f"atom|{a.element}|{a.charge}|{a.explicit_h}|{len(adj[i])}|{int(a.aromatic)}"
        )
        for i, a in enumerate(mol.atoms)
    ]
    bits = {c % nbits for c in codes}
    for _ in range(radius):
        nxt = []
        for i in range(len(mol.atoms)):
            env = sorted((order, codes[j]) for order, j in adj[i])
            payload = f"round|{codes[i]}|" + "|".join(f"{o}:{c}" for o, c in env)
            nxt.append(_stable_hash(payload))
        codes = nxt
        bits.update(c % nbits for c in codes)
    return Fingerprint(nbits=nbits, bits=frozenset(bits))


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|A n B| / |A u B|; two empty fingerprints count as identical (1.0)."""
    if a.nbits != b.nbits:
        raise WidthMismatch(f"fingerprint widths differ: {a.nbits} vs {b.nbits}")
    common = len(a.bits & b.bits)
    union = len(a.bits) + len(b.bits) - common
    if union == 0:
        return 1.0
    return common / union


def tanimoto_from_smiles(
    pred: str, gt: str, radius: int = DEFAULT_RADIUS, nbits: int = DEFAULT_NBITS
) -> SimilarityReport:
    """Parse both strings and compare fingerprints; any parse failure scores 0."""
    try:
        mol_a = parse_smiles(pred)
        mol_b = parse_smiles(gt)
    except ParseError:
        return SimilarityReport(tanimoto=0.0, a_bits=0, b_bits=0, common_bits=0, valid=False)
    fp_a = morgan_fingerprint(mol_a, radius=radius, nbits=nbits)
    fp_b = morgan_fingerprint(mol_b, radius=radius, nbits=nbits)
    return SimilarityReport(
        tanimoto=tanimoto(fp_a, fp_b),
        a_bits=len(fp_a.bits),
        b_bits=len(fp_b.bits),
        common_bits=len(fp_a.bits & fp_b.bits),
        valid=True,
    )

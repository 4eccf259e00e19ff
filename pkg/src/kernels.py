# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Coagulation and fragmentation kernels satisfying detailed balance.

A kernel is the triple (a_i, C(i, j), F(i, j)) with C(i, j)·a_i·a_j = F(i, j)·a_{i+j}. Rates are
evaluated lazily as exact rationals; the consumers that need dense tables (pair chains and the
simulator) build and keep them.
"""
import json
import logging
from abc import ABC, abstractmethod
from fractions import Fraction
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from jsonschema import exceptions, validate
from pydantic import BaseModel, ValidationError, root_validator, validator

from constants import DETAILED_BALANCE_TOLERANCE, KERNEL_FAMILIES
from errors import InvalidArgumentError, KernelSpecError
from numeric import Number, NumericMode, as_float, format_number, to_fraction
from utils import digest

logger = logging.getLogger(__name__)

_NUMBER_JSON_SCHEMA = {"type": ["number", "string"]}

KERNEL_SPEC_JSON_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "$id": "https://cfp.local/kernel-spec.json",
    "type": "object",
    "title": "Kernel specification",
    "properties": {
        "family": {"type": "string", "enum": KERNEL_FAMILIES},
        "a": _NUMBER_JSON_SCHEMA,
        "M": {"type": "integer", "minimum": 1},
        "tables": {
            "type": "object",
            "properties": {
                "a": {"type": "array", "minItems": 1, "items": _NUMBER_JSON_SCHEMA},
                "C": {"type": "array", "items": {"type": "array", "items": _NUMBER_JSON_SCHEMA}},
                "F": {"type": "array", "items": {"type": "array", "items": _NUMBER_JSON_SCHEMA}},
            },
            "required": ["a", "C", "F"],
            "additionalProperties": False,
        },
    },
    "required": ["family"],
    "additionalProperties": False,
    "examples": [
        {"family": "constant", "a": 1},
        {"family": "bounded", "a": "1e-5", "M": 4},
        {
            "family": "tabulated",
            "tables": {"a": [1, 1], "C": [[1, 0], [0, 0]], "F": [[1, 0], [0, 0]]},
        },
    ],
}


def _fraction_matrix(value) -> List[List[Fraction]]:
    return [[to_fraction(item) for item in row] for row in value]


class KernelTables(BaseModel):
    """Explicit weights and rate tables of a tabulated kernel, indexed from size 1."""

    a: List[Fraction]
    C: List[List[Fraction]]
    F: List[List[Fraction]]

    class Config:
        allow_mutation = False
        arbitrary_types_allowed = True

    @validator("a", pre=True)
    def weights_validator(cls, value):
        """Convert the weights to rationals."""
        weights = [to_fraction(item) for item in value]
        if any(weight < 0 for weight in weights):
            raise ValueError("weights must be non-negative")
        return weights

    @validator("C", "F", pre=True)
    def rates_validator(cls, value):
        """Convert the rate tables to rationals."""
        matrix = _fraction_matrix(value)
        if any(rate < 0 for row in matrix for rate in row):
            raise ValueError("rates must be non-negative")
        return matrix

    @root_validator(skip_on_failure=True)
    def completeness_validator(cls, values):
        """Both rate tables must be square and as large as the weight list."""
        size = len(values["a"])
        for name in ("C", "F"):
            matrix = values[name]
            if len(matrix) != size or any(len(row) != size for row in matrix):
                raise ValueError(f"table {name} must be {size}x{size} to match the weights")
        return values

    @root_validator(skip_on_failure=True)
    def symmetry_validator(cls, values):
        """C and F are symmetric and clusters of zero weight do not fragment."""
        size = len(values["a"])
        for name in ("C", "F"):
            matrix = values[name]
            for i in range(size):
                for j in range(i + 1, size):
                    if matrix[i][j] != matrix[j][i]:
                        raise ValueError(f"table {name} is not symmetric at ({i + 1}, {j + 1})")
        for i in range(1, size):
            for j in range(1, size + 1 - i):
                if values["a"][i + j - 1] == 0 and values["F"][i - 1][j - 1] != 0:
                    raise ValueError(f"F({i}, {j}) must vanish since a_{i + j} = 0")
        return values

    @property
    def size(self) -> int:
        """Largest cluster size covered by the tables."""
        return len(self.a)


class KernelSpec(BaseModel):
    """Configuration surface of a kernel: family, parameter a, size bound, tables."""

    family: str
    a: Optional[Fraction] = None
    M: Optional[int] = None
    tables: Optional[KernelTables] = None

    class Config:
        allow_mutation = False
        arbitrary_types_allowed = True

    @validator("a", pre=True)
    def a_validator(cls, value):
        """Keep the parameter as an exact rational."""
        if value is None:
            return None
        return to_fraction(value)

    @root_validator(skip_on_failure=True)
    def family_validator(cls, values):
        """Check the presence of the family-specific parameters."""
        family = values.get("family")
        a = values.get("a")
        if family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family '{family}'")
        if family == "tabulated":
            if values.get("tables") is None:
                raise ValueError("the tabulated family requires tables")
            return values
        if a is None:
            raise ValueError(f"the {family} family requires the parameter a")
        if family == "bounded":
            if values.get("M") is None:
                raise ValueError("the bounded family requires M")
            # a = 0 is the nucleation endpoint, only meaningful for the simulator.
            if a < 0:
                raise ValueError("a must be non-negative")
        elif a <= 0:
            raise ValueError("a must be positive")
        return values

    def to_dict(self) -> Dict[str, Any]:
        """JSON representation with exact numbers as strings."""
        result: Dict[str, Any] = {"family": self.family}
        if self.a is not None:
            result["a"] = format_number(self.a)
        if self.M is not None:
            result["M"] = self.M
        if self.tables is not None:
            result["tables"] = {
                "a": [format_number(weight) for weight in self.tables.a],
                "C": [[format_number(rate) for rate in row] for row in self.tables.C],
                "F": [[format_number(rate) for rate in row] for row in self.tables.F],
            }
        return result

    def digest(self) -> str:
        """Stable hash of the specification, embedded in output metadata."""
        return digest(self.to_dict())


def parse_kernel_spec(content: Dict[str, Any]) -> KernelSpec:
    """Validate a kernel specification document against the schema and the model.

    Raises:
        KernelSpecError: when the document is malformed.
    """
    try:
        validate(instance=content, schema=KERNEL_SPEC_JSON_SCHEMA)
    except exceptions.ValidationError as e:
        raise KernelSpecError(f"Invalid kernel specification: {e.message}")
    try:
        return KernelSpec(**content)
    except (ValidationError, InvalidArgumentError) as e:
        raise KernelSpecError(f"Invalid kernel specification: {e}")


def load_kernel_spec(path: str) -> KernelSpec:
    """Read and validate a kernel specification file.

    Raises:
        KernelSpecError: on unreadable JSON or an invalid document.
    """
    try:
        with open(path) as file:
            content = json.load(file)
    except json.JSONDecodeError as e:
        raise KernelSpecError(f"Kernel specification {path} is not valid JSON: {e}")
    logger.debug(f"Loaded kernel specification from {path}")
    return parse_kernel_spec(content)


class Kernel(ABC):
    """Detailed-balance kernel; rates are exact rationals."""

    family = ""

    def __init__(self, spec: KernelSpec):
        self.spec = spec
        self.a = spec.a
        self.max_size: Optional[int] = None

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec.to_dict()})"

    @property
    def unit_coagulation(self) -> bool:
        """Whether C(i, j) = 1 on every pair."""
        return False

    def check_size(self, n: int) -> None:
        """Raise when the kernel cannot describe systems of n particles."""

    @abstractmethod
    def weight(self, i: int) -> Fraction:
        """Detailed-balance weight a_i."""

    @abstractmethod
    def coag(self, i: int, j: int) -> Fraction:
        """Coagulation rate C(i, j)."""

    @abstractmethod
    def frag(self, i: int, j: int) -> Fraction:
        """Fragmentation rate F(i, j) of a cluster of size i + j into i and j."""

    def dissociation(self, n: int) -> Fraction:
        """Total dissociation rate d(n), summed over the ordered splits."""
        return sum((self.frag(i, n - i) for i in range(1, n)), Fraction(0))

    def coag_table(self, n: int) -> np.ndarray:
        """Dense float table of C(i, j) for 1 <= i, j <= n (row and column 0 unused)."""
        self.check_size(n)
        table = np.zeros((n + 1, n + 1))
        for i in range(1, n + 1):
            for j in range(1, n + 1 - i):
                table[i, j] = as_float(self.coag(i, j))
        return table

    def frag_table(self, n: int) -> np.ndarray:
        """Dense float table of F(i, j) for i + j <= n (row and column 0 unused)."""
        self.check_size(n)
        table = np.zeros((n + 1, n + 1))
        for i in range(1, n):
            for j in range(1, n + 1 - i):
                table[i, j] = as_float(self.frag(i, j))
        return table


class ConstantKernel(Kernel):
    """a_i = a, C(i, j) = 1, F(i, j) = a."""

    family = "constant"

    @property
    def unit_coagulation(self) -> bool:
        """Constant coagulation is unit."""
        return True

    def weight(self, i: int) -> Fraction:
        """a_i = a."""
        return self.a

    def coag(self, i: int, j: int) -> Fraction:
        """C(i, j) = 1."""
        return Fraction(1)

    def frag(self, i: int, j: int) -> Fraction:
        """F(i, j) = a."""
        return self.a

    def dissociation(self, n: int) -> Fraction:
        """d(n) = (n - 1)·a."""
        return (n - 1) * self.a


class BoundedKernel(ConstantKernel):
    """Constant kernel restricted to clusters of at most M particles."""

    family = "bounded"

    def __init__(self, spec: KernelSpec):
        super().__init__(spec)
        self.max_size = spec.M

    @property
    def unit_coagulation(self) -> bool:
        """Coagulation is cut off above M."""
        return False

    def weight(self, i: int) -> Fraction:
        """a_i = a for i <= M, 0 above."""
        return self.a if i <= self.max_size else Fraction(0)

    def coag(self, i: int, j: int) -> Fraction:
        """C(i, j) = 1 when the merged cluster fits, 0 otherwise."""
        return Fraction(1) if i + j <= self.max_size else Fraction(0)

    def frag(self, i: int, j: int) -> Fraction:
        """F(i, j) = a when i + j <= M, 0 otherwise."""
        return self.a if i + j <= self.max_size else Fraction(0)

    def dissociation(self, n: int) -> Fraction:
        """d(n) = (n - 1)·a for n <= M."""
        return (n - 1) * self.a if n <= self.max_size else Fraction(0)


class LinearKernel(Kernel):
    """a_i = a·i, C(i, j) = 1, F(i, j) = a·i·j/(i + j)."""

    family = "linear"

    @property
    def unit_coagulation(self) -> bool:
        """Linear-weight kernels keep unit coagulation."""
        return True

    def weight(self, i: int) -> Fraction:
        """a_i = a·i."""
        return self.a * i

    def coag(self, i: int, j: int) -> Fraction:
        """C(i, j) = 1."""
        return Fraction(1)

    def frag(self, i: int, j: int) -> Fraction:
        """F(i, j) = a·i·j/(i + j)."""
        return self.a * Fraction(i * j, i + j)

    def dissociation(self, n: int) -> Fraction:
        """d(n) = a(n² - 1)/6."""
        return self.a * Fraction(n * n - 1, 6)


class TabulatedKernel(Kernel):
    """Kernel given by explicit weights and rate tables."""

    family = "tabulated"

    def __init__(self, spec: KernelSpec):
        super().__init__(spec)
        self.tables = spec.tables

    def check_size(self, n: int) -> None:
        """Tables must cover every cluster size up to n."""
        if n > self.tables.size:
            raise InvalidArgumentError(
                f"The tabulated kernel covers sizes up to {self.tables.size}, N={n} requested"
            )

    def weight(self, i: int) -> Fraction:
        """Tabulated a_i."""
        return self.tables.a[i - 1]

    def coag(self, i: int, j: int) -> Fraction:
        """Tabulated C(i, j)."""
        return self.tables.C[i - 1][j - 1]

    def frag(self, i: int, j: int) -> Fraction:
        """Tabulated F(i, j)."""
        return self.tables.F[i - 1][j - 1]


_FAMILIES = {
    kernel.family: kernel
    for kernel in (ConstantKernel, BoundedKernel, LinearKernel, TabulatedKernel)
}


def build_kernel(spec: KernelSpec) -> Kernel:
    """Instantiate the kernel of a specification."""
    return _FAMILIES[spec.family](spec)


def kernel_from_options(
    family: str, a=None, m: Optional[int] = None, path: Optional[str] = None
) -> Kernel:
    """Build a kernel from command-line style options.

    Args:
        family: a built-in family or "spec-file".
        a: the parameter a (number or decimal string).
        m: the size bound of the bounded family.
        path: the kernel specification file for the "spec-file" family.

    Raises:
        KernelSpecError: when the options do not describe a valid kernel.
    """
    if family == "spec-file":
        if not path:
            raise KernelSpecError("--kernel spec-file requires --kernel-file")
        return build_kernel(load_kernel_spec(path))
    content: Dict[str, Any] = {"family": family}
    if a is not None:
        content["a"] = str(a)
    if m is not None:
        content["M"] = m
    return build_kernel(parse_kernel_spec(content))


class DetailedBalanceReport:
    """Worst relative violation of detailed balance and where it happens."""

    def __init__(self, max_violation: Number, pair: Optional[Tuple[int, int]], tol: Number):
        self.max_violation = max_violation
        self.pair = pair
        self.tol = tol

    @property
    def ok(self) -> bool:
        """Whether the worst violation is within tolerance."""
        return self.max_violation <= self.tol

    def to_dict(self) -> Dict[str, Any]:
        """JSON representation."""
        return {
            "max_violation": format_number(self.max_violation),
            "pair": list(self.pair) if self.pair else None,
            "ok": self.ok,
        }


def verify_detailed_balance(
    kernel: Kernel, n: int, tol=None, mode: NumericMode = NumericMode.EXACT
) -> DetailedBalanceReport:
    """Check C(i, j)·a_i·a_j = F(i, j)·a_{i+j} over 1 <= i <= j, i + j <= n.

    The violation of a pair is |C a_i a_j - F a_{i+j}| / max(1, |F a_{i+j}|).

    Args:
        kernel: the kernel to check.
        n: largest cluster size considered.
        tol: accepted violation, 0 in exact mode and 1e-12 in floating mode by default.
        mode: arithmetic of the check.
    """
    if n < 2:
        raise InvalidArgumentError(f"Detailed balance needs N >= 2, got {n}")
    kernel.check_size(n)
    if tol is None:
        tol = 0 if mode.is_exact else DETAILED_BALANCE_TOLERANCE
    tol = mode.number(tol)
    worst = mode.zero()
    worst_pair = None
    for i in range(1, n // 2 + 1):
        for j in range(i, n + 1 - i):
            left = mode.number(kernel.coag(i, j) * kernel.weight(i) * kernel.weight(j))
            right = mode.number(kernel.frag(i, j) * kernel.weight(i + j))
            violation = abs(left - right) / max(mode.one(), abs(right))
            if violation > worst:
                worst = violation
                worst_pair = (i, j)
    if worst > tol:
        logger.warning(f"Detailed balance violated by {as_float(worst):.3g} at {worst_pair}")
    return DetailedBalanceReport(worst, worst_pair, tol)


def total_dissociation(kernel: Kernel, n: int) -> Fraction:
    """Total dissociation rate d(n) = Σ_{i=1}^{n-1} F(i, n - i); d(1) = 0."""
    if n < 1:
        raise InvalidArgumentError(f"Cluster size must be positive, got {n}")
    return kernel.dissociation(n)

"""Kubernetes style resource quantities.

CPU is held in millicores, memory in mebibytes. The dimension is carried by
the field a quantity sits in, never by the quantity itself.
"""
import math
import re
from typing import Optional

from pydantic import BaseModel, Field

from remedbench.exceptions import QuantityError

_CPU_RE = re.compile(r"^(\d+(?:\.\d+)?)(m?)$")
_MEM_RE = re.compile(r"^(\d+(?:\.\d+)?)(Ki|Mi|Gi|K|M|G)?$")

_MEM_FACTORS = {
    "Ki": 1 / 1024,
    "Mi": 1,
    "Gi": 1024,
    "K": 1000 / 1024 / 1024,
    "M": 1000 * 1000 / 1024 / 1024,
    "G": 1000 * 1000 * 1000 / 1024 / 1024,
    None: 1 / 1024 / 1024,  # plain bytes
}


class ResourceQuantity(BaseModel):
    millis: int = Field(ge=0)
    # spelling the quantity was written with; "1000m" stays "1000m"
    text: Optional[str] = None

    def __eq__(self, other):
        if isinstance(other, ResourceQuantity):
            return self.millis == other.millis
        return NotImplemented

    def __hash__(self):
        return hash(self.millis)


def parse_cpu(text: str) -> ResourceQuantity:
    match = _CPU_RE.match(str(text).strip())
    if not match:
        raise QuantityError(f"invalid cpu quantity: {text!r}")
    number, milli = match.groups()
    value = float(number) if milli else float(number) * 1000
    if milli and not value.is_integer():
        raise QuantityError(f"invalid cpu quantity: {text!r}")
    return ResourceQuantity(millis=int(round(value)), text=str(text).strip())


def parse_memory(text: str) -> ResourceQuantity:
    match = _MEM_RE.match(str(text).strip())
    if not match:
        raise QuantityError(f"invalid memory quantity: {text!r}")
    number, suffix = match.groups()
    value = float(number) * _MEM_FACTORS[suffix]
    return ResourceQuantity(millis=int(math.ceil(value - 1e-9)), text=str(text).strip())


def format_cpu(quantity: ResourceQuantity) -> str:
    if quantity.text is not None:
        return quantity.text
    if quantity.millis % 1000 == 0:
        return str(quantity.millis // 1000)
    return f"{quantity.millis}m"


def format_memory(quantity: ResourceQuantity) -> str:
    if quantity.text is not None:
        return quantity.text
    if quantity.millis and quantity.millis % 1024 == 0:
        return f"{quantity.millis // 1024}Gi"
    return f"{quantity.millis}Mi"

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict


@dataclass(frozen=True)
class RougeScore:
    """Precision / recall / F for one ROUGE variant, each in [0, 1]."""
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: int, candidate_total: int, reference_total: int) -> "RougeScore":
        """Exact rational P, R and F = 2PR / (P + R); empty sides score 0."""
        p = Fraction(overlap, candidate_total) if candidate_total else Fraction(0)
        r = Fraction(overlap, reference_total) if reference_total else Fraction(0)
        f = 2 * p * r / (p + r) if p + r > 0 else Fraction(0)
        return cls(float(p), float(r), float(f))

    @classmethod
    def zero(cls) -> "RougeScore":
        return cls(0.0, 0.0, 0.0)

    def to_dict(self) -> Dict[str, float]:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}

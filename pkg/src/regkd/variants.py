"""Student-training recipes."""

from dataclasses import asdict, dataclass, replace

TAGS = (
    "teacher",
    "student-l1",
    "student-mse",
    "ours-full",
    "only-ld",
    "only-tor",
    "l1-tbr",
    "robust",
)
STUDENT_TAGS = TAGS[1:]
_NEEDS_TEACHER = frozenset({"ours-full", "only-ld", "only-tor", "l1-tbr"})
_USES_TOR = frozenset({"ours-full", "only-tor"})


@dataclass(frozen=True)
class MethodVariant:
    """One training recipe plus the hyper-parameters that identify it.

    ``epsilon`` pins the outlier threshold directly; otherwise it comes from
    ``alpha`` and a scale that is ``sigma`` when given, else the MAD
    estimate of the teacher residuals.
    """

    tag: str
    c_tor: float = 1.0
    c_d: float = 1.0
    alpha: float = 1.0
    margin: float = 0.0
    tbr_weight: float = 1.0
    epsilon: float | None = None
    sigma: float | None = None
    penalty: str = "sqrt-abs"
    ld_loss: str = "l1"

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown variant {self.tag!r}; expected one of {TAGS}")
        if self.c_tor < 0 or self.c_d < 0 or (self.c_tor == 0 and self.c_d == 0):
            raise ValueError("loss weights must be non-negative and not both zero")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.ld_loss not in ("l1", "mse"):
            raise ValueError(f"ld_loss must be 'l1' or 'mse', got {self.ld_loss!r}")

    @property
    def heads(self):
        if self.tag == "ours-full":
            return ("tor", "d")
        if self.tag == "only-ld":
            return ("d",)
        if self.tag == "only-tor":
            return ("tor",)
        return ("out",)

    @property
    def needs_teacher(self):
        return self.tag in _NEEDS_TEACHER

    @property
    def uses_tor(self):
        return self.tag in _USES_TOR

    def with_(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)

    def identity(self):
        """Fields that distinguish one aggregation cell from another."""
        d = {"variant": self.tag}
        if self.uses_tor:
            d.update(alpha=self.alpha, epsilon=self.epsilon, sigma=self.sigma, penalty=self.penalty)
        if self.tag == "ours-full":
            d.update(c_tor=self.c_tor, c_d=self.c_d)
        if self.tag == "l1-tbr":
            d.update(margin=self.margin, tbr_weight=self.tbr_weight)
        return d


def as_variant(value):
    if isinstance(value, MethodVariant):
        return value
    if isinstance(value, str):
        return MethodVariant(value)
    return MethodVariant(**value)

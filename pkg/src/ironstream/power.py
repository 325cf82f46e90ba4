"""Battery runtime estimate from capacity and average current draw."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DomainError

# Average supply current per component, mA. The converter figure is its
# 42 mW rating at 5 V; the rest is an illustrative split (not measured)
# chosen so the total is 133.33 mA.
DEFAULT_COMPONENTS = {
    "adc": 8.4,
    "mcu": 55.0,
    "radio": 55.0,
    "sensors_misc": 14.93,
}


@dataclass(frozen=True)
class Budget:
    capacity_mah: float
    draw_ma: float
    hours: float
    components: dict = field(default_factory=dict)

    def table(self) -> str:
        lines = [f"{'component':<14}{'mA':>10}"]
        lines += [f"{name:<14}{ma:>10.2f}" for name, ma in self.components.items()]
        lines.append(f"{'total':<14}{self.draw_ma:>10.2f}")
        lines.append(f"{self.capacity_mah:g} mAh / {self.draw_ma:g} mA = {self.hours:.2f} h")
        return "\n".join(lines)


def budget(capacity_mah: float, draw_ma: float | None = None, components: dict | None = None) -> Budget:
    """Hours of operation, ``capacity_mah / draw_ma``.

    ``draw_ma`` defaults to the sum of ``components``.
    """
    components = dict(DEFAULT_COMPONENTS if components is None else components)
    if draw_ma is None:
        draw_ma = round(sum(components.values()), 6)
    if not capacity_mah > 0:
        raise DomainError("capacity must be positive")
    if not draw_ma > 0:
        raise DomainError("draw must be positive")
    return Budget(capacity_mah, draw_ma, capacity_mah / draw_ma, components)

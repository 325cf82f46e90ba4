"""
Battery runtime
===============

Hours = capacity / average draw. The per-component split is illustrative;
only the total matters.
"""

from ironstream.power import budget

print(budget(1200).table())
print()
for capacity in (600, 1200, 2000):
    b = budget(capacity, 133.33)
    print(f"{capacity:5d} mAh -> {b.hours:5.2f} h")

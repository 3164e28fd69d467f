"""Desk-scale simulation of shared autonomous electric vehicle (SAEV) fleets.

The package couples three pieces:

* exact facility-location solvers (max-coverage and p-median) that pick
  charging / battery-swap station cells on a hexagonal demand grid,
* a deterministic discrete-event fleet simulator (dispatch with ridesharing,
  state-of-charge bookkeeping, charger queues, battery swapping),
* a day-iteration loop in which traveler mode choice reacts to the waiting
  times experienced on previous days.

Everything is seeded and single-threaded per run: identical configs produce
byte-identical output bundles.
"""

__version__ = "0.1.0"

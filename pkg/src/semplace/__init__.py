"""semplace: semantics-preserving avatar placement across dissimilar rooms.

Given a person's position and heading in one furnished scene, find the
placement in a different scene whose learned similarity to the original is
highest.  Submodules: scene (geometry + scene model), features (placement
descriptors), dataset (triplet construction), simnet (similarity network),
trainer (optimization), solver (grid + swarm placement search), evaluation
(ranking metrics, heatmaps), cli (command line entry point).
"""

__version__ = "0.1.0"

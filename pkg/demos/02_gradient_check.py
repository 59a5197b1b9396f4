"""Check every analytic gradient against central differences."""

from litefbcn.checks import TOLERANCE, head_checks, layer_checks
from litefbcn.nn import BackboneSpec

# each layer kind on its own, in float64
for kind, err in layer_checks(seed=0).items():
    print(f"{kind:22s} {err:.2e}")

# all four heads end to end on a small backbone; the loss includes the l2 penalty
spec = BackboneSpec.from_widths((12, 12, 1), [8, 16], [1, 2])
for variant, rep in head_checks(spec, num_classes=3, gamma=2).items():
    print(f"{variant:12s} max error {rep.max_rel_error:.2e} over {rep.n_checked} entries "
          f"({rep.n_kinks} kink probes skipped)")

# the same run with one gradient deliberately scaled by 1.5 must fail
bad = head_checks(spec, num_classes=3, gamma=2, corrupt=True, variants=("FastBCNN",))["FastBCNN"]
print("corrupted gradient caught:", not bad.passed(TOLERANCE))

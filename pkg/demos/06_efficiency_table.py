"""Cost table (parameters, FLOPs, latency) for every head on the default backbone."""

from litefbcn import BackboneSpec, HeadConfig
from litefbcn.analysis import efficiency_report, flops_reduction_holds, format_report

backbone = BackboneSpec.desk_default()
configs = [(backbone, HeadConfig("BaselineGAP", num_classes=5)),
           (backbone, HeadConfig("FastBCNN", num_classes=5)),
           (backbone, HeadConfig("BCNNDual", num_classes=5))]
configs += [(backbone, HeadConfig("LiteFBCN", gamma=g, num_classes=5)) for g in (2, 4, 8)]

# latency is single-threaded wall time per image; a few reps keep the demo quick
print(format_report(efficiency_report(configs, reps=20, warmup=3)))

# the reducer pays for itself whenever K(C + K) < C^2 with K = C / gamma
for c in (64, 256, 1024):
    print(c, [flops_reduction_holds(c, g) for g in (2, 4, 8)])

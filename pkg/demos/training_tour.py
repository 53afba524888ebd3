"""The three toy trainers on synthetic data.

Shell equivalents::

    reidlab train-scm --epochs 20
    reidlab train-daprh --two-domain --jaccard --epochs 10
    reidlab train-vitc --epochs 20 --eps 0.5
"""

from dataclasses import replace

import numpy as np

from reidlab import ClusterConfig, RunConfig, preset, synth_dataset
from reidlab.pipelines.daprh import pretrain_source, train_daprh_stage2
from reidlab.pipelines.scm import train_scm
from reidlab.pipelines.vitc import train_vitc
from reidlab.synthetic import split_samples, synth_two_domain

# supervised: rank-1 before and after
data = synth_dataset(preset("easy"))
train, test = split_samples(data, 0.5, np.random.default_rng(0))
_, _, log = train_scm(train, RunConfig(epochs=20), test=test)
print("scm rank1", log.of("eval")[0]["rank1"], "->", log.of("eval")[-1]["rank1"])

# domain adaptation: pretrain on source, self-train on target pseudo-labels
cfg = RunConfig(epochs=10, cluster=ClusterConfig(use_jaccard=True))
source, target = synth_two_domain(preset("easy"))
student = pretrain_source(source, replace(cfg, epochs=30))
_, teacher, log = train_daprh_stage2(target, cfg, student=student)
print("daprh ARI", [round(r["ari"], 3) for r in log.of("cluster")])

# camera-aware unsupervised training, with and without the proxy term
data = synth_dataset(preset("camera"))
cfg = RunConfig(epochs=20, cluster=ClusterConfig(eps=0.5))
for lam in (0.7, 0.0):
    _, log = train_vitc(data, cfg, lambda_cap=lam)
    c = log.of("cluster")
    print("vitc lambda_cap", lam, "ARI", round(c[0]["ari"], 3), "->", round(c[-1]["ari"], 3),
          "rank1", log.of("eval")[-1]["rank1"])

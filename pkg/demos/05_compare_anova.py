"""Compare methods fold by fold with a repeated-measures ANOVA."""

import numpy as np

from litefbcn.analysis import confusion, metrics, rm_anova

# per-class metrics from a confusion matrix (rows are true classes)
cm = confusion(np.array([0, 0, 1, 1, 2, 2, 2]), np.array([0, 0, 1, 0, 2, 2, 1]), 3)
rep = metrics(cm)
print(cm)
print(f"accuracy {rep.accuracy:.3f}  macro precision {rep.precision:.3f}  macro recall {rep.recall:.3f}")

# rows are folds, columns are methods; folds are the repeated subjects
scores = np.array([[0.97, 0.95, 0.93, 0.60],
                   [0.98, 0.96, 0.92, 0.55],
                   [0.96, 0.97, 0.94, 0.62],
                   [0.99, 0.95, 0.91, 0.58],
                   [0.97, 0.96, 0.95, 0.61]])
res = rm_anova(scores)
print(f"F({res.df_treatment}, {res.df_error}) = {res.f:.2f}, p = {res.p:.2e}, significant: {res.significant}")

# without the weak baseline the F statistic drops sharply, though the gap still shows
res = rm_anova(scores[:, :3])
print(f"F({res.df_treatment}, {res.df_error}) = {res.f:.2f}, p = {res.p:.3f}, significant: {res.significant}")

"""Per-subset metrics and their averages, from confusion counts to a printed table.

Run:  python demos/04_table_arithmetic.py
"""
# %%
from ctscan_tl.evaluation import ConfusionMatrix, EvaluationReport, SubsetResult, per_class_metrics
from ctscan_tl.report import render_table

# %% [markdown]
# Rows are true classes and columns predictions; the counts are illustrative.
# In the first subset 246 of 266 COVID scans are right and 36 normal scans are
# called COVID.

# %%
names = ["covid", "normal"]
matrices = [[[246, 20], [36, 277]],
            [[271, 0], [60, 263]],
            [[268, 0], [47, 276]]]
subsets = []
for counts in matrices:
    cm = ConfusionMatrix(counts, names)
    metrics, accuracy = per_class_metrics(cm)
    subsets.append(SubsetResult(cm, metrics, accuracy))

# %% [markdown]
# In the two-class case the specificity of one class is the recall of the
# other, which is why those rows always mirror each other.

# %%
report = EvaluationReport(names, subsets)
text, _ = render_table(report)
print(text)

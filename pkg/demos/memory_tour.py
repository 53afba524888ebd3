"""Momentum memories and the EMA teacher."""

import numpy as np

from reidlab import MemoryBank, TeacherState, init_memory, teacher_update

# c <- 0.2 c + 0.8 q
bank = MemoryBank(np.array([[1.0, 0.0]]), momentum=0.2, normalized=False)
bank.update([0.0, 1.0], 0)
print(bank.centroids)

# the normalized variant stays on the unit sphere
bank = init_memory(np.array([[3.0, 4.0]]))
bank.update([1.0, 0.0], 0)
print(bank.centroids, np.linalg.norm(bank.centroids))

# teacher under a fixed student: the gap shrinks by w each step
t, student = TeacherState([1.0, 1.0], 0.99), np.zeros(2)
for step in range(1, 501):
    t = teacher_update(t, student)
    if step in (1, 100, 500):
        print(step, t.params[0], 0.99 ** step)

"""Arch defect on a clamped-clamped beam.

A sinusoidal arch whose mid-span rise equals the beam thickness is added
with amplitude ``xi``. One DpROM built on the nominal mesh is evaluated for
every ``xi`` and compared with the full model on the defected mesh.

Run with ``python3 demos/beam_arch_study.py``; it takes about a minute.
"""
import time

import numpy as np

from dprom.basis import build_reduction_basis
from dprom.defects import arch_sine
from dprom.full_model import linear_stiffness, mass_matrix, rayleigh_from_Q
from dprom.mesh import build_rect_beam_mesh
from dprom.models import ReducedModel, fom_d, probe_at, reduced_load
from dprom.solvers import backbone, continue_frf
from dprom.tensors import assemble_dprom

THICKNESS = 0.05

mesh = build_rect_beam_mesh(2.0, THICKNESS, 20, 2, thickness=0.2)
arch = arch_sine(mesh)
probe = probe_at(mesh, "mid_v", (1.0, 0.025), 1)
alpha, beta = rayleigh_from_Q(mass_matrix(mesh), linear_stiffness(mesh), 100, 100)
print(f"mesh: {mesh.n_elements} quad8 elements, {mesh.n_free} free dofs")

# offline: one basis (VMs, MDs, DSs) and one tensor set per strain variant
t = time.perf_counter()
basis = build_reduction_basis(mesh, arch, n_vm=5)
tensors = {v: assemble_dprom(mesh, basis, arch, v) for v in ("N1", "N1t", "N0")}
print(f"basis of {basis.m} vectors and 3 tensor sets in {time.perf_counter() - t:.1f} s")

# linear check: the first eigenfrequency against the defected full model
print("\nfirst eigenfrequency, relative error against FOM-d")
print(f"{'xi':>5} {'FOM-d [Hz]':>11} {'N1':>9} {'N1t':>9} {'N0':>9}")
for xi in (0.0, 0.25, 0.5, 0.75, 1.0):
    w = fom_d(mesh, arch, [xi]).eigenfrequencies(1)[0]
    errs = [ReducedModel.from_tensors(T, [xi], mesh=mesh, U=arch).eigenfrequencies(1)[0] / w - 1
            for T in tensors.values()]
    print(f"{xi:5.2f} {w / (2 * np.pi):11.3f} " + " ".join(f"{e:9.1e}" for e in errs))

# nonlinear: the backbone bends right for the straight beam and left for the arch
print("\nbackbone of the first mode, Omega / Omega_0 against mid-span amplitude / thickness")
for xi in (0.0, 0.5, 1.0):
    m = ReducedModel.from_tensors(tensors["N1"], [xi], mesh=mesh, U=arch, probes=[probe])
    bb = backbone(m, 5, (1e-4, THICKNESS), anchor=m.probe_matrix[0], n_points=20)
    A = bb.probe_amplitude()[:, 0] / THICKNESS
    picks = [np.argmin(abs(A - a)) for a in (0.25, 0.5, 1.0)]
    row = ", ".join(f"{A[i]:.2f}: {bb.Omega[i] / bb.Omega[0]:.3f}" for i in picks)
    print(f"  xi={xi:4.2f}  {row}")

# forced response around the first resonance
print("\nfrequency response peak for a 4 kN mid-span force")
for xi in (0.0, 0.5, 1.0):
    m = ReducedModel.from_tensors(tensors["N1"], [xi], alpha, beta, mesh, arch, [probe])
    F = reduced_load(m, mesh, probe.node, 1, 4000.0)
    w0 = m.eigenfrequencies(1)[0]
    t = time.perf_counter()
    frf = continue_frf(m, 5, F, (0.8 * w0, 1.4 * w0))
    Op, Ap = frf.peak()
    print(f"  xi={xi:4.2f}  peak at {Op / w0:.3f} w0, amplitude {Ap / THICKNESS:.3f} t "
          f"({len(frf)} points, {time.perf_counter() - t:.1f} s)")

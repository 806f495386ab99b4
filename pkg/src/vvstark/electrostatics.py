"""Gate electrostatics of a back-grounded SiC membrane.

Coordinates are in micrometres with ``x, y`` in the plane of the top surface
and ``z`` the depth below it (``z = 0`` is the gated surface, ``z = t`` the
back plane).  Potentials are in volts, so ``V/um`` is numerically ``MV/m``.

Internal fields are screened by a uniform ``1/eps`` factor, the same estimate
used for the uniform-field model.  Space charge from ionized donors is not
included in the Laplace solve, so field magnitudes are an upper bound.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy.constants import elementary_charge, epsilon_0
from scipy.interpolate import RegularGridInterpolator

BREAKDOWN_FIELD = 300.0  # MV/m, 4H-SiC

_CM3_TO_M3 = 1e6
_UM = 1e-6


class ConvergenceError(RuntimeError):
    """Raised when the Laplace solve misses its residual target."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class GatePatch:
    """Rectangular electrode on the top surface (um) held at ``voltage``."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    voltage: float = 0.0

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(f"gate extent must have positive area: {self}")

    def overlaps(self, other: "GatePatch") -> bool:
        return (self.x_min < other.x_max and other.x_min < self.x_max
                and self.y_min < other.y_max and other.y_min < self.y_max)

    def distance_to(self, x, y, depth):
        """Euclidean distance from a point to the patch (um)."""
        dx = max(self.x_min - x, 0.0, x - self.x_max)
        dy = max(self.y_min - y, 0.0, y - self.y_max)
        return math.sqrt(dx * dx + dy * dy + depth * depth)

    def with_voltage(self, voltage):
        return GatePatch(self.x_min, self.x_max, self.y_min, self.y_max, voltage)


def four_gate_layout(v_z=0.0, v_x=0.0, v_y=0.0, *, inner=40.0, outer=100.0,
                     half_width=30.0):
    """Four pads around the device centre.

    The pads along ``x`` sit at ``v_z +/- v_x/2`` and the pads along ``y`` at
    ``v_z +/- v_y/2``, so ``v_z`` is the common-mode bias and ``v_x, v_y``
    are differential.  ``inner`` is the distance from the centre to each
    pad's inner edge.
    """
    return (
        GatePatch(inner, outer, -half_width, half_width, v_z + v_x / 2),
        GatePatch(-outer, -inner, -half_width, half_width, v_z - v_x / 2),
        GatePatch(-half_width, half_width, inner, outer, v_z + v_y / 2),
        GatePatch(-half_width, half_width, -outer, -inner, v_z - v_y / 2),
    )


@dataclass(frozen=True)
class DeviceGeometry:
    """Membrane, dielectric and electrode description.

    ``lateral_extent`` is the full width of the simulated domain in ``x``
    (and ``y`` for 3D solves), centred on the origin.
    """

    membrane_thickness: float = 120.0  # um
    dielectric_constant: float = 9.6
    donor_density: float = 2.5e14  # cm^-3
    gates: tuple = field(default_factory=four_gate_layout)
    back_plane_voltage: float = 0.0
    lateral_extent: float = 240.0  # um

    def __post_init__(self):
        if not self.membrane_thickness > 0:
            raise ValueError("membrane_thickness must be positive")
        if not self.dielectric_constant >= 1:
            raise ValueError("dielectric_constant must be >= 1")
        if not self.donor_density > 0:
            raise ValueError("donor_density must be positive")
        if not self.lateral_extent > 0:
            raise ValueError("lateral_extent must be positive")
        object.__setattr__(self, "gates", tuple(self.gates))
        for i, a in enumerate(self.gates):
            for b in self.gates[i + 1:]:
                if a.overlaps(b):
                    raise ValueError(f"gates overlap: {a} and {b}")

    def with_gate_voltages(self, voltages):
        if len(voltages) != len(self.gates):
            raise ValueError("one voltage per gate required")
        gates = tuple(g.with_voltage(v) for g, v in zip(self.gates, voltages))
        return DeviceGeometry(self.membrane_thickness, self.dielectric_constant,
                              self.donor_density, gates, self.back_plane_voltage,
                              self.lateral_extent)

    def nearest_gate(self, position):
        """Return ``(gate, distance)`` for the electrode closest to ``position``."""
        if not self.gates:
            return None, math.inf
        x, y, depth = position
        dists = [g.distance_to(x, y, depth) for g in self.gates]
        i = int(np.argmin(dists))
        return self.gates[i], dists[i]


@dataclass(frozen=True)
class BandParameters:
    """Metal/SiC band alignment and bias convention.

    ``bulk_fermi_depth`` is ``E_c - E_F`` far from any gate (eV).
    ``bias_polarity`` is the sign ``s`` with which a gate bias adds to the
    built-in barrier, ``phi = phi_bi + s * V``.
    """

    electron_affinity: float = 4.17
    metal_work_function: float = 4.3
    band_gap: float = 3.26
    bulk_fermi_depth: float = 1.16
    bias_polarity: int = 1

    def __post_init__(self):
        if self.bias_polarity not in (1, -1):
            raise ValueError("bias_polarity must be +1 or -1")
        if not 0 <= self.bulk_fermi_depth <= self.band_gap:
            raise ValueError("bulk Fermi level must lie inside the band gap")

    @property
    def built_in_barrier(self):
        return self.metal_work_function - self.electron_affinity

    def barrier(self, v_gate):
        """Signed barrier height (V) under gate bias ``v_gate``."""
        return self.built_in_barrier + self.bias_polarity * v_gate


@dataclass(frozen=True)
class FieldVector:
    """Screened internal field in MV/m; ``f_parallel`` points along +depth."""

    f_parallel: float = 0.0
    f_perp_x: float = 0.0
    f_perp_y: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.f_parallel, self.f_perp_x, self.f_perp_y)):
            raise ValueError(f"non-finite field component: {self}")

    @property
    def perp_magnitude(self):
        return math.hypot(self.f_perp_x, self.f_perp_y)

    @property
    def magnitude(self):
        return math.sqrt(self.f_parallel**2 + self.f_perp_x**2 + self.f_perp_y**2)

    def __add__(self, other):
        return FieldVector(self.f_parallel + other.f_parallel,
                           self.f_perp_x + other.f_perp_x,
                           self.f_perp_y + other.f_perp_y)

    def __mul__(self, k):
        return FieldVector(k * self.f_parallel, k * self.f_perp_x, k * self.f_perp_y)

    __rmul__ = __mul__


def uniform_vertical_field(v_gate, geometry: DeviceGeometry) -> FieldVector:
    """Field of a gate bias dropped uniformly across the membrane.

    Examples
    --------
    >>> round(uniform_vertical_field(-300.0, DeviceGeometry()).f_parallel, 4)
    -0.2604
    """
    if not math.isfinite(v_gate):
        raise ValueError("gate voltage must be finite")
    f = (v_gate - geometry.back_plane_voltage) / (
        geometry.membrane_thickness * geometry.dielectric_constant)
    if abs(f) >= BREAKDOWN_FIELD:
        raise ValueError(f"{f:.3g} MV/m exceeds the dielectric breakdown field")
    return FieldVector(f, 0.0, 0.0)


def _depletion_coefficient(geometry):
    """``w_d / sqrt(|phi|)`` in um per sqrt(volt)."""
    eps = geometry.dielectric_constant * epsilon_0
    n_d = geometry.donor_density * _CM3_TO_M3
    return math.sqrt(2 * eps / (elementary_charge * n_d)) / _UM


def depletion_width(barrier_height, geometry: DeviceGeometry):
    """Schottky depletion width ``sqrt(2 eps eps0 |phi| / (e N_d))`` in um."""
    if not np.all(np.isfinite(barrier_height)):
        raise ValueError("barrier height must be finite")
    return _depletion_coefficient(geometry) * np.sqrt(np.abs(barrier_height))


def transition_voltage_for_distance(distance, geometry: DeviceGeometry,
                                    bands: BandParameters = BandParameters()):
    """Gate bias at which the depletion edge reaches ``distance`` (um).

    Inverts :func:`depletion_width` on the branch ``phi_bi + s*V >= 0``.
    """
    distance = np.asarray(distance, dtype=float)
    if np.any(distance <= 0):
        raise ValueError("distance must be positive")
    phi = (distance / _depletion_coefficient(geometry)) ** 2
    v = (phi - bands.built_in_barrier) / bands.bias_polarity
    return float(v) if v.ndim == 0 else v


@dataclass(frozen=True)
class GridSpec:
    """Node grid resolution; ``ny=None`` selects the 2D ``(x, z)`` section."""

    nx: int = 256
    nz: int = 128
    ny: int | None = None

    def __post_init__(self):
        if self.nx < 2 or self.nz < 2 or (self.ny is not None and self.ny < 2):
            raise ValueError("grid needs at least 2 cells per axis")

    def refined(self, factor=2):
        return GridSpec(self.nx * factor, self.nz * factor,
                        None if self.ny is None else self.ny * factor)


@dataclass(frozen=True, eq=False)
class FieldSolution:
    """Potential on a regular node grid, axes ordered ``(x, [y,] z)``."""

    potential: np.ndarray
    axes: tuple
    dirichlet: np.ndarray
    dielectric_constant: float
    residual: float
    iterations: int = 0

    def __post_init__(self):
        self.potential.setflags(write=False)
        self.dirichlet.setflags(write=False)
        spacing = tuple(a[1] - a[0] for a in self.axes)
        grads = np.gradient(self.potential, *self.axes, edge_order=2)
        fields = [-g / self.dielectric_constant for g in grads]
        interps = [RegularGridInterpolator(self.axes, f, method="linear") for f in fields]
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "_fields", fields)
        object.__setattr__(self, "_interps", interps)

    @property
    def is_3d(self):
        return len(self.axes) == 3

    @property
    def x(self):
        return self.axes[0]

    @property
    def z(self):
        return self.axes[-1]

    def field_grids(self):
        """Screened field components on the grid, ordered like ``axes``."""
        return tuple(self._fields)

    def field_at(self, position) -> FieldVector:
        return field_at(self, position)

    def section(self):
        """Potential, ``f_x`` and depth field on the ``y = 0`` (x, depth) plane."""
        phi = self.potential
        fx, fz = self._fields[0], self._fields[-1]
        if self.is_3d:
            j = int(np.argmin(np.abs(self.axes[1])))
            phi, fx, fz = phi[:, j, :], fx[:, j, :], fz[:, j, :]
        return phi, fx, fz

    def write_csv(self, path, header_lines: Sequence[str] = ()):
        """Export the ``y = 0`` section as (x, z, potential, f_x, f_z)."""
        phi, fx, fz = self.section()
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write("# units: x_um, z_um (depth), potential_V, f_x_MV_per_m, f_z_MV_per_m (screened)\n")
            w = csv.writer(fh)
            w.writerow(["x_um", "z_um", "potential_V", "f_x_MV_per_m", "f_z_MV_per_m"])
            for i, xv in enumerate(self.x):
                for k, zv in enumerate(self.z):
                    w.writerow([f"{xv:.6g}", f"{zv:.6g}", f"{phi[i, k]:.9g}",
                                f"{fx[i, k]:.9g}", f"{fz[i, k]:.9g}"])


def _axis_operators(n, h):
    """1D stiffness (natural Neumann ends) and lumped mass for ``n`` cells."""
    main = np.full(n + 1, 2.0)
    main[0] = main[-1] = 1.0
    off = -np.ones(n)
    stiff = sps.diags([off, main, off], [-1, 0, 1], format="csr") / h
    mass_diag = np.full(n + 1, h)
    mass_diag[0] = mass_diag[-1] = h / 2
    return stiff, sps.diags(mass_diag, format="csr")


def _assemble(axes):
    ops = [_axis_operators(len(a) - 1, a[1] - a[0]) for a in axes]
    total = None
    for d in range(len(ops)):
        term = None
        for e, (stiff, mass) in enumerate(ops):
            factor = stiff if e == d else mass
            term = factor if term is None else sps.kron(term, factor, format="csr")
        total = term if total is None else total + term
    return total.tocsr()


def _covered(axis, lo, hi):
    tol = 1e-9 * max(1.0, abs(axis[-1] - axis[0]))
    return (axis >= lo - tol) & (axis <= hi + tol)


def solve_laplace(geometry: DeviceGeometry, grid: GridSpec = GridSpec(), *,
                  method="auto", tol=1e-8, max_iter=10**6,
                  cross_section_y=0.0) -> FieldSolution:
    """Solve Laplace's equation in the membrane.

    Dirichlet conditions hold on gate-covered top-surface nodes and on the
    back plane; the ungated top surface and the side walls are insulating.
    The 2D solve is the ``(x, z)`` section at ``y = cross_section_y``.

    Parameters
    ----------
    method : {"auto", "direct", "cg"}
        Sparse LU with iterative refinement, or Jacobi-preconditioned
        conjugate gradients capped at ``max_iter`` iterations.  ``"auto"``
        uses LU in 2D and CG in 3D, where LU fill-in becomes costly.
    tol : float
        Target relative residual ``||b - A u|| / ||b||``.

    Raises
    ------
    ConvergenceError
        If the residual target is not met.
    """
    t = geometry.membrane_thickness
    half = geometry.lateral_extent / 2
    x = np.linspace(-half, half, grid.nx + 1)
    z = np.linspace(0.0, t, grid.nz + 1)
    dx = x[1] - x[0]
    if grid.ny is None:
        axes = (x, z)
        gates = [g for g in geometry.gates if g.y_min <= cross_section_y <= g.y_max]
        for g in gates:
            if (g.x_max - g.x_min) < 4 * dx - 1e-9:
                raise ValueError(f"grid does not resolve gate {g} with 4 cells")
    else:
        y = np.linspace(-half, half, grid.ny + 1)
        axes = (x, y, z)
        gates = list(geometry.gates)
        dy = y[1] - y[0]
        for g in gates:
            if (g.x_max - g.x_min) < 4 * dx - 1e-9 or (g.y_max - g.y_min) < 4 * dy - 1e-9:
                raise ValueError(f"grid does not resolve gate {g} with 4 cells")

    shape = tuple(len(a) for a in axes)
    values = np.zeros(shape)
    pinned = np.zeros(shape, dtype=bool)
    top = (..., 0)
    for g in gates:
        if grid.ny is None:
            mask = _covered(x, g.x_min, g.x_max)
            values[mask, 0] = g.voltage
            pinned[mask, 0] = True
        else:
            mask = np.outer(_covered(x, g.x_min, g.x_max), _covered(axes[1], g.y_min, g.y_max))
            values[top][mask] = g.voltage
            pinned[top][mask] = True
    values[..., -1] = geometry.back_plane_voltage
    pinned[..., -1] = True

    A = _assemble(axes)
    flat_pin = pinned.ravel()
    free = ~flat_pin
    u = values.ravel().copy()
    A_ff = A[free][:, free]
    b = -(A[free][:, flat_pin] @ u[flat_pin])
    b_norm = np.linalg.norm(b)

    if method == "auto":
        method = "direct" if grid.ny is None else "cg"
    iterations = 0
    if b_norm == 0.0:
        u_f = np.zeros(free.sum())
        rel = 0.0
    elif method == "direct":
        lu = spla.splu(A_ff.tocsc())
        u_f = lu.solve(b)
        rel = np.linalg.norm(b - A_ff @ u_f) / b_norm
        while rel > tol and iterations < 5:
            u_f = u_f + lu.solve(b - A_ff @ u_f)
            rel = np.linalg.norm(b - A_ff @ u_f) / b_norm
            iterations += 1
    elif method == "cg":
        diag = A_ff.diagonal()
        precond = spla.LinearOperator(A_ff.shape, matvec=lambda r: r / diag)
        counter = [0]

        def _count(_):
            counter[0] += 1

        u_f, _info = spla.cg(A_ff, b, rtol=0.5 * tol, maxiter=max_iter, M=precond,
                             callback=_count)
        iterations = counter[0]
        rel = np.linalg.norm(b - A_ff @ u_f) / b_norm
    else:
        raise ValueError(f"unknown method {method!r}")

    if rel > tol:
        raise ConvergenceError(f"Laplace solve ({method}) did not converge", rel)
    u[free] = u_f
    return FieldSolution(u.reshape(shape), axes, pinned, geometry.dielectric_constant,
                         float(rel), iterations)


def field_at(solution: FieldSolution, position) -> FieldVector:
    """Screened field ``-grad(phi)/eps`` at ``position = (x, y, depth)`` in um.

    The 2D section ignores ``y`` and reports ``f_perp_y = 0``.
    """
    x, y, depth = (float(c) for c in position)
    point = (x, y, depth) if solution.is_3d else (x, depth)
    for value, axis in zip(point, solution.axes):
        if not axis[0] - 1e-9 <= value <= axis[-1] + 1e-9:
            raise ValueError(f"position {position} outside the solved domain")
    point = tuple(min(max(v, a[0]), a[-1]) for v, a in zip(point, solution.axes))
    comps = [float(np.squeeze(f(point))) for f in solution._interps]
    if solution.is_3d:
        return FieldVector(comps[2], comps[0], comps[1])
    return FieldVector(comps[1], comps[0], 0.0)


@dataclass(frozen=True, eq=False)
class FieldBasis:
    """Unit-voltage Laplace solutions, one per gate plus the back plane.

    The Laplace problem is linear, so any bias setting is a weighted sum.
    """

    geometry: DeviceGeometry
    solutions: tuple
    back: FieldSolution

    def field_at(self, position, gate_voltages, back_voltage=0.0) -> FieldVector:
        total = back_voltage * field_at(self.back, position)
        for v, sol in zip(gate_voltages, self.solutions):
            if v:
                total = total + v * field_at(sol, position)
        return total


def laplace_basis(geometry: DeviceGeometry, grid: GridSpec = GridSpec(), **kwargs) -> FieldBasis:
    n = len(geometry.gates)
    sols = []
    for i in range(n):
        volts = [0.0] * n
        volts[i] = 1.0
        g = geometry.with_gate_voltages(volts)
        g = DeviceGeometry(g.membrane_thickness, g.dielectric_constant, g.donor_density,
                           g.gates, 0.0, g.lateral_extent)
        sols.append(solve_laplace(g, grid, **kwargs))
    zero = geometry.with_gate_voltages([0.0] * n)
    zero = DeviceGeometry(zero.membrane_thickness, zero.dielectric_constant,
                          zero.donor_density, zero.gates, 1.0, zero.lateral_extent)
    back = solve_laplace(zero, grid, **kwargs)
    return FieldBasis(geometry, tuple(sols), back)

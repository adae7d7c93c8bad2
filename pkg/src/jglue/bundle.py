"""Generalized dbar operators on line bundles over the sphere.

Sections of the bundle with Chern number d are held as angular-mode radial
profiles on two polar charts, f on the finite chart and g at infinity, tied
by g(w) = w^d f(1/w) along |z| = 1.  The operator d/dzbar + a couples modes
in chains: the complex-linear part sends angular mode m to m+1 through the
radial operator (d/dr - m/r)/2, the anti-linear term scatters mode m to
q - m for each mode q of a.  Radial profiles live on the positive half of a
Chebyshev extreme grid; collocation happens at interlaced points so each
chain is one equation short of square, which realizes the index.
"""

from __future__ import annotations

from dataclasses import dataclass, field as _dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .projective import smoothstep

_DENSE_LIMIT = 1300
_SEAM_TOL = 1e-10
_GAP_FACTOR = 10.0


@dataclass(frozen=True)
class LineBundle:
    """Holomorphic line bundle over the sphere, indexed by its Chern number."""

    chern: int

    @property
    def transition_exponent(self) -> int:
        # sections pick up z**(-chern) when passing to the chart at infinity
        return -self.chern

    @property
    def section_space_dim(self) -> int:
        return max(0, self.chern + 1)


def _radial_nodes(n: int) -> np.ndarray:
    j = np.arange(n)
    return np.cos(j * np.pi / (2 * n - 1))


def _interlaced_nodes(n: int) -> np.ndarray:
    j = np.arange(n - 1)
    return np.cos((j + 0.5) * np.pi / (2 * n - 1))


def _bary_weights(x: np.ndarray) -> np.ndarray:
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    w = 1.0 / np.prod(diff, axis=1)
    return w / np.max(np.abs(w))


def _eval_matrix(x, w, y) -> np.ndarray:
    """Barycentric evaluation of the interpolant at off-node points y."""
    d = y[:, None] - x[None, :]
    quot = w[None, :] / d
    E = quot / np.sum(quot, axis=1)[:, None]
    # interpolation of constants must be exact: fold the defect into the
    # nearest node's entry
    nearest = np.argmin(np.abs(d), axis=1)
    E[np.arange(y.size), nearest] += 1.0 - np.sum(E, axis=1)
    return E


def _deriv_matrix(x, w, y) -> np.ndarray:
    """Derivative of the interpolant evaluated at off-node points y."""
    d = y[:, None] - x[None, :]
    quot = w[None, :] / d
    D0 = np.sum(quot, axis=1)
    S = np.sum(quot / d, axis=1)
    A = (quot / d) * (-1.0 / D0[:, None]) + quot * (S / D0**2)[:, None]
    # constants must differentiate to exact zero
    nearest = np.argmin(np.abs(d), axis=1)
    A[np.arange(y.size), nearest] -= np.sum(A, axis=1)
    return A


def _point_eval_row(x, w, r: float) -> np.ndarray:
    """Row functional: value of the radial interpolant at radius r."""
    hit = np.abs(x - r) < 1e-14
    row = np.zeros(x.size)
    if np.any(hit):
        row[np.argmax(hit)] = 1.0
        return row
    d = r - x
    quot = w / d
    row = quot / np.sum(quot)
    row[np.argmin(np.abs(d))] += 1.0 - np.sum(row)
    return row


class GeneralizedDbarOperator:
    """Discretized d/dzbar + a acting on sections of O(chern)."""

    def __init__(self, bundle: LineBundle, a=None, resolution: int = 64):
        if resolution < 16 or resolution % 2:
            raise ValueError("resolution must be an even integer >= 16")
        self.bundle = bundle
        self.resolution = int(resolution)
        self.a = a
        d = bundle.chern
        self.harmonics = resolution // 4
        self.n_radial = resolution // 4
        M, nr = self.harmonics, self.n_radial
        if abs(d) > M:
            raise ValueError("Chern number exceeds the angular bandwidth")
        self.chains = tuple(range(max(-M, d - M), min(M, d + M) + 1))
        self.x = _radial_nodes(nr)
        self.y = _interlaced_nodes(nr)
        self.w = _bary_weights(self.x)
        self.E = _eval_matrix(self.x, self.w, self.y)
        self.D = _deriv_matrix(self.x, self.w, self.y)
        self.a_modes = self._sample_a_modes()
        self._matrix = None

    # -- zeroth-order term ---------------------------------------------------

    def _sample_a_modes(self):
        if self.a is None:
            return {}
        n_theta = max(64, 4 * self.harmonics)
        theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
        ring = np.exp(1j * theta)
        seam = np.concatenate(
            [self.a(ring), self.a(0.97 * ring), self.a(1.1 * ring)]
        )
        if np.max(np.abs(seam)) > _SEAM_TOL:
            raise ValueError("zeroth-order term must vanish near the chart seam")
        samples = self.a(self.y[:, None] * ring[None, :])
        spectrum = np.fft.fft(samples, axis=1) / n_theta
        modes = {}
        for q in range(-self.harmonics, self.harmonics + 1):
            col = spectrum[:, q % n_theta]
            if np.max(np.abs(col)) > 1e-13:
                modes[q] = col
        return modes

    # -- assembly ------------------------------------------------------------

    def _chain_col(self, m: int) -> int:
        return self.chains.index(m) * 2 * self.n_radial

    def assemble(self) -> sp.csr_matrix:
        """Real matrix of the operator, [Re; Im] stacking of complex data."""
        if self._matrix is not None:
            return self._matrix
        nr = self.n_radial
        d = self.bundle.chern
        ncols = len(self.chains) * 2 * nr
        lin_rows = []  # (row block, col offset) complex-linear entries
        anti_rows = []
        row_off = 0

        def put(rows, block, r0, c0):
            rows.append((np.atleast_2d(block), r0, c0))

        for m in self.chains:
            c_f = self._chain_col(m)
            c_g = c_f + nr
            # finite-chart collocation of (f' - m f / r) / 2 at interlaced radii
            Bf = 0.5 * (self.D - m * (self.E / self.y[:, None]))
            put(lin_rows, Bf, row_off, c_f)
            # anti-linear coupling: output mode m+1 takes a_q * conj(f_{q-m-1})
            for q, prof in self.a_modes.items():
                src = q - m - 1
                if src in self.chains:
                    put(
                        anti_rows,
                        prof[:, None] * self.E,
                        row_off,
                        self._chain_col(src),
                    )
            row_off += nr - 1
            # infinity-chart collocation, mode d - m
            Bg = 0.5 * (self.D - (d - m) * (self.E / self.y[:, None]))
            put(lin_rows, Bg, row_off, c_g)
            row_off += nr - 1
            # seam matching g_{d-m}(1) = f_m(1); node 0 sits at radius 1
            row = np.zeros((1, ncols))
            row[0, c_f] = 1.0
            row[0, c_g] = -1.0
            put(lin_rows, row, row_off, 0)
            row_off += 1
            # regularity: kill radial profiles of negative angular index,
            # which solve the chain ODE but blow up at the puncture
            if m < 0:
                put(lin_rows, _point_eval_row(self.x, self.w, 0.0), row_off, c_f)
                row_off += 1
            if d - m < 0:
                put(lin_rows, _point_eval_row(self.x, self.w, 0.0), row_off, c_g)
                row_off += 1

        nrows = row_off
        K = sp.lil_matrix((nrows, ncols))
        for block, r0, c0 in lin_rows:
            K[r0 : r0 + block.shape[0], c0 : c0 + block.shape[1]] += block
        A = sp.lil_matrix((nrows, ncols), dtype=complex)
        for block, r0, c0 in anti_rows:
            A[r0 : r0 + block.shape[0], c0 : c0 + block.shape[1]] += block
        K = K.tocsr()
        Ar, Ai = A.tocsr().real, A.tocsr().imag
        # real layout [Re x; Im x]; complex-linear K is block diagonal, the
        # anti-linear part flips the imaginary column sign
        top = sp.hstack([K + Ar, Ai], format="csr")
        bottom = sp.hstack([Ai, K - Ar], format="csr")
        self._matrix = sp.vstack([top, bottom], format="csr")
        return self._matrix

    def monomial_section(self, m: int) -> np.ndarray:
        """Complex coefficient vector of the section z^m, 0 <= m <= chern."""
        d = self.bundle.chern
        if not 0 <= m <= d:
            raise ValueError("monomial exponent outside the holomorphic range")
        vec = np.zeros(len(self.chains) * 2 * self.n_radial, dtype=complex)
        c = self._chain_col(m)
        vec[c : c + self.n_radial] = self.x**m
        vec[c + self.n_radial : c + 2 * self.n_radial] = self.x ** (d - m)
        return vec

    def to_real_vector(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=complex)
        return np.concatenate([vec.real, vec.imag])


def _count_below(svals: np.ndarray, threshold: float) -> int:
    return int(np.count_nonzero(svals < threshold))


def _gap_guard(svals: np.ndarray, threshold: float):
    below = svals[svals < threshold]
    above = svals[svals >= threshold]
    if below.size and above.size:
        top = np.max(below)
        if top <= 0.0:
            return
        if np.min(above) / top < _GAP_FACTOR:
            raise ValueError("ill-separated spectrum; refine the grid")


def _norm_estimate(matrix) -> float:
    rng = np.random.default_rng(0)
    v = rng.normal(size=matrix.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(40):
        u = matrix @ v
        v = matrix.T @ u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        est = np.sqrt(nv / np.linalg.norm(u) ** 2) * np.linalg.norm(u)
        v /= nv
    return float(np.sqrt(np.linalg.norm(matrix.T @ (matrix @ v))))


def _equilibrate_rows(matrix: sp.csr_matrix) -> sp.csr_matrix:
    norms = spla.norm(matrix, axis=1)
    norms[norms == 0.0] = 1.0
    scale = sp.diags(1.0 / norms)
    return (scale @ matrix).tocsr()


def _null_dims_sparse(matrix: sp.csr_matrix, threshold: float, scale: float, expect: int):
    """Real null dimensions of a sparse matrix and of its transpose.

    Works on the symmetric pencil [[0, A], [A^T, 0]], whose spectrum is the
    plus/minus singular-value pairs of A padded with one zero per null vector
    on either side.  Resolving it directly keeps tiny singular values at full
    accuracy; forming A^T A would square them below machine precision.
    """
    nrows, ncols = matrix.shape
    pencil = sp.bmat([[None, matrix], [matrix.T, None]], format="csc")
    dim = pencil.shape[0]
    sigma = -max(1e-10 * scale, 1e-300)
    k = max(2 * expect + 8, 16)
    while True:
        k_eff = min(k, dim - 1)
        vals = spla.eigsh(
            pencil,
            k=k_eff,
            sigma=sigma,
            which="LM",
            mode="normal",
            v0=np.ones(dim),
            return_eigenvectors=False,
        )
        svals = np.sort(np.abs(vals))
        total = _count_below(svals, threshold)
        if total < svals.size or k_eff >= dim - 1:
            _gap_guard(svals, threshold)
            diff = ncols - nrows
            null_cols = (total + diff) // 2
            null_rows = total - null_cols
            if (total + diff) % 2 or null_cols < 0 or null_rows < 0:
                raise RuntimeError(
                    "index consistency check failed: unbalanced null counts "
                    f"(total {total}, shape difference {diff})"
                )
            return null_cols, null_rows
        k *= 2
        if k > 192:
            raise ValueError("ill-separated spectrum; refine the grid")


def kernel_cokernel_dims(op: GeneralizedDbarOperator, rank_tolerance: float = 1e-6):
    """(ker, coker) complex dimensions of the assembled operator."""
    matrix = _equilibrate_rows(op.assemble())
    nrows, ncols = matrix.shape
    if min(nrows, ncols) <= _DENSE_LIMIT:
        svals = np.linalg.svd(matrix.toarray(), compute_uv=False)
        threshold = rank_tolerance * svals[0]
        _gap_guard(svals, threshold)
        rank = int(np.count_nonzero(svals >= threshold))
        ker_r, coker_r = ncols - rank, nrows - rank
    else:
        smax = _norm_estimate(matrix)
        threshold = rank_tolerance * smax
        expect = 2 * abs(op.bundle.chern + 1) + 2
        ker_r, coker_r = _null_dims_sparse(matrix, threshold, smax, expect)
    if ker_r % 2 or coker_r % 2:
        raise RuntimeError(
            "index consistency check failed: odd real dimensions "
            f"(ker {ker_r}, coker {coker_r})"
        )
    ker, coker = ker_r // 2, coker_r // 2
    if ker - coker != op.bundle.chern + 1:
        raise RuntimeError(
            "index consistency check failed: "
            f"ker {ker} - coker {coker} != {op.bundle.chern + 1}"
        )
    return ker, coker


def _evaluation_rows(op: GeneralizedDbarOperator, point) -> np.ndarray:
    """Complex row functional: section value at a point of the sphere."""
    nr = op.n_radial
    ncols = len(op.chains) * 2 * nr
    row = np.zeros(ncols, dtype=complex)
    if point is None or (isinstance(point, float) and np.isinf(point)) or (
        isinstance(point, complex) and not np.isfinite(point)
    ):
        # value at infinity is the zeroth infinity-chart mode at radius 0
        m = op.bundle.chern
        if m not in op.chains:
            raise ValueError("Chern number exceeds the angular bandwidth")
        c = op._chain_col(m) + nr
        row[c : c + nr] = _point_eval_row(op.x, op.w, 0.0)
        return row
    z = complex(point)
    r, theta = abs(z), np.angle(z)
    if r > 1.0 + 1e-12:
        raise ValueError("vanishing points must lie in the closed unit disk")
    radial = _point_eval_row(op.x, op.w, min(r, 1.0))
    for m in op.chains:
        c = op._chain_col(m)
        phase = np.exp(1j * m * theta) if r > 0.0 else (1.0 if m == 0 else 0.0)
        if phase != 0.0:
            row[c : c + nr] = phase * radial
    return row


def constrained_surjectivity(
    op: GeneralizedDbarOperator, vanishing_points, rank_tolerance: float = 1e-6
) -> bool:
    """Whether the operator stays onto after pinning sections at given points."""
    points = list(vanishing_points)
    keyed = [
        (np.inf if (p is None or not np.isfinite(complex(p))) else complex(p))
        for p in points
    ]
    for i in range(len(keyed)):
        for j in range(i + 1, len(keyed)):
            a, b = keyed[i], keyed[j]
            same = (a is np.inf and b is np.inf) or (
                a is not np.inf and b is not np.inf and abs(a - b) < 1e-12
            )
            if same:
                raise ValueError("vanishing points must be distinct")
    k = len(points)
    base = _equilibrate_rows(op.assemble())
    extra = []
    for p in points:
        crow = _evaluation_rows(op, p)
        crow = crow / np.linalg.norm(crow)
        extra.append(np.concatenate([crow.real, -crow.imag]))
        extra.append(np.concatenate([crow.imag, crow.real]))
    aug = sp.vstack([base, sp.csr_matrix(np.array(extra))], format="csr")
    nrows, ncols = aug.shape
    if min(nrows, ncols) <= _DENSE_LIMIT:
        svals = np.linalg.svd(aug.toarray(), compute_uv=False)
        threshold = rank_tolerance * svals[0]
        _gap_guard(svals, threshold)
        null_dim = ncols - int(np.count_nonzero(svals >= threshold))
    else:
        smax = _norm_estimate(aug)
        threshold = rank_tolerance * smax
        expect = 2 * abs(op.bundle.chern + 1) + 2
        null_dim, _ = _null_dims_sparse(aug, threshold, smax, expect)
    return null_dim == 2 * (op.bundle.chern + 1) - 2 * k


def random_zeroth_order(rng, sup_bound: float = 0.5, bandlimit: int = 4):
    """Smooth random anti-linear term supported away from the chart seam."""
    qs = np.arange(-bandlimit, bandlimit + 1)
    c1 = rng.normal(size=qs.size) + 1j * rng.normal(size=qs.size)
    c2 = rng.normal(size=qs.size) + 1j * rng.normal(size=qs.size)
    target = sup_bound * rng.uniform(0.3, 1.0)

    def raw(z):
        z = np.asarray(z, dtype=complex)
        r = np.abs(z)
        theta = np.angle(z)
        cut = 1.0 - smoothstep((r - 0.55) / 0.35, 3)
        out = np.zeros(z.shape, dtype=complex)
        for q, u, v in zip(qs, c1, c2):
            out += u * r ** abs(q) * (1.0 + 0.4 * v * r**2) * np.exp(1j * q * theta)
        return out * cut

    rr, tt = np.meshgrid(np.linspace(0.0, 0.95, 60), np.linspace(0.0, 2 * np.pi, 80))
    peak = np.max(np.abs(raw(rr * np.exp(1j * tt))))
    scale = target / peak if peak > 0 else 0.0

    def a(z):
        return scale * raw(z)

    return a

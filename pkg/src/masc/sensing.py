"""Hybrid sensing precoder: coverage-maximising alternating design.

The optimiser alternates a digital step (least-squares beams through the
analog subspace plus a greedy threshold-power allocation over grid cells), a
target-precoder step (steering beams at the highest-priority cells) and the
constant-modulus projection of the analog matrix. An accept/reject rule on
the coverage ratio makes the iterate sequence monotone non-decreasing.

The fully-digital comparison arm is the conventional orthogonal-waveform
probing design (isotropic transmit covariance), which spends the same power
without directional concentration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .orbit import VisibleRegion, VisibilityError, slant_range
from .scenario import ScenarioConfig, SceneFields, build_scene_fields, sensing_echo_range_m


@dataclass(frozen=True)
class HybridPrecoder:
    """Analog (constant-modulus) and digital precoder pair at a power budget."""

    analog: np.ndarray           # (n_t, n_rf), unit-modulus entries
    digital: np.ndarray          # (n_rf, m)
    power_budget_w: float
    eta_cov: float = 0.0
    converged: bool = True
    diagnostics: tuple = ()

    @property
    def effective(self) -> np.ndarray:
        """Composite transmit matrix analog @ digital, carrying the power."""
        return self.analog @ self.digital

    def validate(self, tol: float = 1e-9) -> None:
        if np.max(np.abs(np.abs(self.analog) - 1.0)) > 1e-12:
            raise ValueError("analog entries must be unit modulus")
        power = float(np.linalg.norm(self.effective) ** 2)
        if power > self.power_budget_w * (1.0 + tol):
            raise ValueError("precoder exceeds its power budget")


@dataclass(frozen=True)
class CoverageMap:
    """Per-cell sensing SNR with the threshold test and weighted ratio."""

    grid: VisibleRegion
    snr_linear: np.ndarray       # (n_cells,)
    covered: np.ndarray          # (n_cells,) bool
    eta_cov: float


def beamforming_gain(precoder, steering: np.ndarray) -> np.ndarray:
    """Per-direction gain sum_m |a^H W[:, m]|^2 of a power-carrying precoder.

    ``steering`` holds a(theta, phi) rows; the conjugate is applied here.
    """
    w = precoder.effective if isinstance(precoder, HybridPrecoder) else np.asarray(precoder)
    if w.ndim == 1:
        w = w[:, None]
    proj = np.conj(steering) @ w
    return np.sum(np.abs(proj) ** 2, axis=-1)


def sensing_snr(direction: tuple[float, float], precoder, scene: ScenarioConfig) -> float:
    """Sensing SNR toward one direction: P1 * G_BF * G_ant * rcs / (L_prop * N).

    The beamforming gain of the power-carrying precoder already contains the
    transmit power, so the SNR is linear in the precoder's power budget.
    """
    theta, phi = direction
    lam = scene.wavelength_m
    d_slant = slant_range(scene.orbit, theta)  # raises outside the cone
    d_echo = float(sensing_echo_range_m(scene, d_slant))
    ell = ch.dust_path_length(d_slant, theta, scene.dust.d_max_m)
    g_dust = ch.dust_gain(scene.dust_alpha_db_per_km, 0.0, ell, np.inf)
    l_prop = ch.fspl_two_way(d_echo, lam) / (g_dust ** 2) / scene.l_other_linear
    a = ch.steering_vector(scene.array, theta, phi, lam)
    g_bf = beamforming_gain(precoder, a[None, :])[0]
    return float(
        g_bf
        * scene.sensing_ant_gain_linear
        * scene.ground.rcs_m2
        / (l_prop * scene.noise_power_w)
    )


def coverage_from_snr(grid: VisibleRegion, snr: np.ndarray, gamma: float) -> CoverageMap:
    weight = grid.weight_sr.ravel()
    covered = snr >= gamma
    eta = float(np.sum(weight[covered]) / np.sum(weight))
    return CoverageMap(grid=grid, snr_linear=snr, covered=covered, eta_cov=eta)


def evaluate_coverage(precoder, scene: ScenarioConfig,
                      grid: VisibleRegion | None = None,
                      fields: SceneFields | None = None) -> CoverageMap:
    """Threshold test of the per-cell sensing SNR under a precoder."""
    fields = fields or build_scene_fields(scene, grid)
    snr = fields.snr_unit * beamforming_gain(precoder, fields.steering) / scene.p1_w
    return coverage_from_snr(fields.grid, snr, scene.gamma_sens_linear)


def dft_codebook_init(arr: ch.ArrayConfig, lambda_m: float = 0.15,
                      theta_max_rad: float = math.pi / 2.0) -> np.ndarray:
    """Initial analog matrix: 2-D DFT beams nearest the visible cone.

    Columns are Kronecker products of horizontal/vertical DFT vectors whose
    beam directions (u, v) = (k*lambda/(N*d)) are sorted by distance from
    broadside, so the first n_rf columns tile the cone from the centre out.
    With n_rf = n_t the full (orthogonal) 2-D DFT is returned.
    """
    if arr.n_rf > arr.n_elements:
        raise ValueError("n_rf cannot exceed the element count")
    ks = np.arange(arr.n_h) - arr.n_h // 2
    ls = np.arange(arr.n_v) - arr.n_v // 2
    u_k = ks * lambda_m / (arr.n_h * arr.spacing_h_m)
    v_l = ls * lambda_m / (arr.n_v * arr.spacing_v_m)
    sin_max = math.sin(theta_max_rad)
    order = sorted(
        ((uk * uk + vl * vl, int(k), int(l)) for k, uk in zip(ks, u_k) for l, vl in zip(ls, v_l)),
        key=lambda t: (t[0] > sin_max ** 2, t[0], t[1], t[2]),
    )
    m_idx = np.arange(arr.n_h)
    n_idx = np.arange(arr.n_v)
    cols = []
    for _, k, l in order[: arr.n_rf]:
        col_h = np.exp(1j * 2.0 * math.pi * k * m_idx / arr.n_h)
        col_v = np.exp(1j * 2.0 * math.pi * l * n_idx / arr.n_v)
        cols.append(np.kron(col_h, col_v))
    return np.column_stack(cols)


def project_constant_modulus(target: np.ndarray) -> np.ndarray:
    """Entrywise phase projection onto the unit-modulus manifold.

    Minimises ||W - target||_F over unit-modulus W; zero entries map to 1.
    Entries already on the manifold (within a few ulp) pass through
    unchanged so the projection is exactly idempotent.
    """
    target = np.asarray(target, dtype=complex)
    mag = np.abs(target)
    on_manifold = np.abs(mag - 1.0) <= 4.0 * np.finfo(float).eps
    safe = np.where((mag > 0.0) & ~on_manifold, mag, 1.0)
    out = np.where(mag > 0.0, target / safe, 1.0 + 0.0j)
    return np.where(on_manifold, target, out)


@dataclass
class _DigitalDesign:
    w_bb: np.ndarray             # (n_rf, m), scaled to the full budget
    beam_powers: np.ndarray      # (m,) allocated shares before the final upscale
    rank_deficient: bool


def _ls_beams(analog: np.ndarray, steering_targets: np.ndarray) -> tuple[np.ndarray, bool]:
    """Per-target least-squares beams through the analog subspace.

    Returns digital columns x_m with || analog @ x_m || = 1; flags a
    rank-deficient analog Gram (regularised solve).
    """
    gram = analog.conj().T @ analog
    n_rf = gram.shape[0]
    scale = float(np.trace(gram).real) / n_rf
    rank_def = bool(np.linalg.matrix_rank(gram, tol=1e-9 * scale) < n_rf)
    reg = 1e-10 * scale * np.eye(n_rf)
    rhs = analog.conj().T @ steering_targets.T  # (n_rf, m): transmit beams
    x = np.linalg.solve(gram + reg, rhs)
    eff = analog @ x
    norms = np.linalg.norm(eff, axis=0)
    norms = np.where(norms > 0.0, norms, 1.0)
    return x / norms, rank_def


def _allocate_threshold_power(
    gain: np.ndarray,           # (n_cells, m) unit-power beam gains
    snr_unit: np.ndarray,       # (n_cells,)
    weight: np.ndarray,         # (n_cells,)
    gamma: float,
    p_total: float,
) -> np.ndarray:
    """Beam-power allocation covering every cell whose price fits the budget.

    Cells are served by their strongest beam; each beam must pay the largest
    per-cell power requirement it serves. A binary search finds the largest
    requirement threshold R such that the summed per-beam prices stay within
    the budget, which covers exactly the cells with requirement <= R.
    """
    n_cells, m = gain.shape
    serve = np.argmax(gain, axis=1)
    best_gain = np.take_along_axis(gain, serve[:, None], axis=1).ravel()
    with np.errstate(divide="ignore", over="ignore"):
        req = gamma / (snr_unit * np.maximum(best_gain, 1e-300))

    per_beam = []
    for b in range(m):
        reqs = np.sort(req[serve == b])
        per_beam.append(reqs[np.isfinite(reqs)])

    def price(threshold: float) -> np.ndarray:
        p = np.zeros(m)
        for b, reqs in enumerate(per_beam):
            k = np.searchsorted(reqs, threshold, side="right")
            if k > 0:
                p[b] = reqs[k - 1]
            # weight by: largest requirement at or below the threshold
        return p

    finite = np.sort(req[np.isfinite(req)])
    if finite.size == 0:
        return np.zeros(m)
    lo, hi = 0, finite.size - 1
    if price(finite[hi]).sum() <= p_total:
        lo = hi
    else:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if price(finite[mid]).sum() <= p_total:
                lo = mid
            else:
                hi = mid
        if price(finite[lo]).sum() > p_total:
            # not even the cheapest cell fits: spend everything on it anyway
            powers = np.zeros(m)
            powers[serve[int(np.argmin(req))]] = p_total
            return powers
    return price(finite[lo])


def optimize_digital(
    analog: np.ndarray,
    scene: ScenarioConfig,
    grid: VisibleRegion | None = None,
    fields: SceneFields | None = None,
    targets: np.ndarray | None = None,
    n_streams: int | None = None,
) -> np.ndarray:
    """Digital precoder for a fixed analog matrix, rescaled to the full budget.

    Forms least-squares steering beams through the analog subspace toward the
    target directions (cells of the visible grid by default), allocates beam
    powers greedily to maximise threshold-covered solid angle, and rescales
    so ||analog @ digital||_F^2 = P1 exactly.
    """
    fields = fields or build_scene_fields(scene, grid)
    m = n_streams or scene.array.n_rf
    if targets is None:
        targets = _select_targets(
            fields, np.zeros(fields.theta.size, dtype=bool), m, scene
        )
    a_t = ch.steering_vector(
        scene.array, targets[:, 0], targets[:, 1], scene.wavelength_m
    )
    x, _ = _ls_beams(analog, a_t)
    gain = np.abs(np.conj(fields.steering) @ (analog @ x)) ** 2
    powers = _allocate_threshold_power(
        gain, fields.snr_unit / scene.p1_w, fields.weight,
        scene.gamma_sens_linear, scene.p1_w,
    )
    w_bb = x * np.sqrt(powers)[None, :]
    norm_sq = float(np.linalg.norm(analog @ w_bb) ** 2)
    if norm_sq <= 0.0:
        w_bb = x / math.sqrt(max(x.shape[1], 1))
        norm_sq = float(np.linalg.norm(analog @ w_bb) ** 2)
    return w_bb * math.sqrt(scene.p1_w / norm_sq)


def _beam_radius(arr: ch.ArrayConfig, lambda_m: float) -> float:
    return 0.5 * lambda_m / (arr.n_h * arr.spacing_h_m)


def _select_targets(fields: SceneFields, covered: np.ndarray, m: int,
                    scene: ScenarioConfig) -> np.ndarray:
    """Greedy disk-cover seeding of beam directions on the (u, v) plane.

    Value concentrates on currently-uncovered cells (covered ones keep a
    retention discount so serving beams are not abandoned); each chosen
    centre suppresses its beam-radius neighbourhood. Scores are accumulated
    on a coarse raster so no pairwise distance matrix is formed.
    """
    uv = np.column_stack([
        np.sin(fields.theta) * np.cos(fields.phi),
        np.sin(fields.theta) * np.sin(fields.phi),
    ])
    r_beam = _beam_radius(scene.array, scene.wavelength_m)
    value = fields.weight * np.where(covered, 0.25, 1.0)

    # raster bins of half a beam radius; disk score = sum over nearby bins
    bin_w = 0.5 * r_beam
    ij = np.floor((uv + 1.0) / bin_w).astype(int)
    n_bins = int(math.ceil(2.0 / bin_w)) + 1
    flat = ij[:, 0] * n_bins + ij[:, 1]
    reach = int(math.ceil(r_beam / bin_w))
    offsets = [
        di * n_bins + dj
        for di in range(-reach, reach + 1)
        for dj in range(-reach, reach + 1)
        if (di * di + dj * dj) * bin_w * bin_w <= (r_beam + bin_w) ** 2
    ]

    total = float(np.sum(value))
    centres = []
    for _ in range(m):
        if np.sum(value) < 5e-3 * total:
            break  # cone tiled: surplus RF chains add no further beams
        sums = np.bincount(flat, weights=value, minlength=n_bins * n_bins)
        scores = np.zeros_like(value)
        for off in offsets:
            idx = flat + off
            valid = (idx >= 0) & (idx < sums.size)
            scores[valid] += sums[idx[valid]]
        c = int(np.argmax(scores))
        centres.append(c)
        hit = np.sum((uv - uv[c]) ** 2, axis=1) <= r_beam ** 2
        value = np.where(hit, 0.0, value)
    return np.column_stack([fields.theta[centres], fields.phi[centres]])


def hybrid_precoding_design(
    scene: ScenarioConfig,
    max_iter: int = 50,
    delta: float = 1e-4,
    grid: VisibleRegion | None = None,
    fields: SceneFields | None = None,
    init_analog: np.ndarray | None = None,
) -> tuple[HybridPrecoder, CoverageMap]:
    """Alternating coverage maximisation under the hybrid constraints.

    Starts from a DFT-codebook analog matrix, then loops digital allocation,
    steering-target refresh, constant-modulus projection and coverage
    evaluation. Updates that lower the coverage ratio are rejected, so the
    accepted sequence is monotone; iteration stops once the accepted
    improvement falls below ``delta`` or ``max_iter`` is reached.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    fields = fields or build_scene_fields(scene, grid)
    arr = scene.array
    lam = scene.wavelength_m
    p1 = scene.p1_w
    m = arr.n_rf

    analog = init_analog if init_analog is not None else dft_codebook_init(
        arr, lam, scene.orbit.theta_max_rad
    )
    w_bb = np.eye(arr.n_rf, m, dtype=complex)
    w_bb *= math.sqrt(p1) / np.linalg.norm(analog @ w_bb)
    cov = evaluate_coverage(HybridPrecoder(analog, w_bb, p1), scene, fields=fields)

    best = (analog, w_bb, cov)
    diagnostics = [(0, cov.eta_cov, float(np.sum(fields.weight[cov.covered])))]
    converged = False

    for k in range(1, max_iter + 1):
        b_analog, b_wbb, b_cov = best
        targets = _select_targets(fields, b_cov.covered, m, scene)
        a_t = ch.steering_vector(arr, targets[:, 0], targets[:, 1], lam)

        # digital step on the current analog matrix
        wbb_1 = optimize_digital(b_analog, scene, fields=fields, targets=targets)
        cov_1 = evaluate_coverage(HybridPrecoder(b_analog, wbb_1, p1), scene, fields=fields)

        # unconstrained target precoder: steering beams at the allocated powers
        p_m = np.sum(np.abs(b_analog @ wbb_1) ** 2, axis=0)
        p_m = np.maximum(p_m, 0.01 * p1 / m)
        w_target = (a_t.T / math.sqrt(arr.n_elements)) * np.sqrt(p_m)[None, :]

        # constant-modulus projection, then re-optimise the digital stage
        analog_2 = project_constant_modulus(w_target @ wbb_1.conj().T)
        wbb_2 = optimize_digital(analog_2, scene, fields=fields, targets=targets)
        cov_2 = evaluate_coverage(HybridPrecoder(analog_2, wbb_2, p1), scene, fields=fields)

        if cov_2.eta_cov >= cov_1.eta_cov:
            cand = (analog_2, wbb_2, cov_2)
        else:
            cand = (b_analog, wbb_1, cov_1)

        improvement = cand[2].eta_cov - b_cov.eta_cov
        if improvement >= 0.0:
            best = cand
        diagnostics.append(
            (k, best[2].eta_cov, float(np.sum(fields.weight[best[2].covered])))
        )
        if k >= 2 and improvement < delta:
            converged = True
            break

    analog, w_bb, cov = best
    norm_sq = float(np.linalg.norm(analog @ w_bb) ** 2)
    w_bb = w_bb * math.sqrt(p1 / norm_sq)
    precoder = HybridPrecoder(
        analog=analog,
        digital=w_bb,
        power_budget_w=p1,
        eta_cov=cov.eta_cov,
        converged=converged,
        diagnostics=tuple(diagnostics),
    )
    cov = evaluate_coverage(precoder, scene, fields=fields)
    return precoder, cov


def fully_digital_baseline(
    scene: ScenarioConfig,
    grid: VisibleRegion | None = None,
    fields: SceneFields | None = None,
) -> tuple[np.ndarray, CoverageMap]:
    """Conventional fully-digital probing arm at the same power budget.

    Orthogonal per-element waveforms (isotropic transmit covariance
    R = P1/N_t * I): every direction sees unit beamforming gain, trading the
    hybrid design's concentration for uniform illumination.
    """
    fields = fields or build_scene_fields(scene, grid)
    n_t = scene.array.n_elements
    w = math.sqrt(scene.p1_w / n_t) * np.eye(n_t, dtype=complex)
    cov = evaluate_coverage(w, scene, fields=fields)
    return w, cov

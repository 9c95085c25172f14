"""Three-layer builders sharing the window/clip machinery.

Common structure: a direction projects the points onto a line; layer 1
places one HardTanh "window" neuron per consecutive group of sorted points,
so that exactly the group's points land in the linear region and everything
else saturates.  Layer-2 neurons read the window outputs; each is obtained
by solving a small linear system that pins designated samples to exact
values while a free null-space direction, scaled up far enough, clips all
other samples into activation regions with known constant output.

Four builds:
  grid     4 ceil(sqrt(K))          HardTanh second layer + constant cancellation
  bump     2 ceil(sqrt(K)) + 3N     one Bump neuron per tuned sample
  sparse   6 ceil(sqrt(3N+2))       WindowLinear second layer over the reduced set
  compact  4N + 4                   single TailCut neuron over tuned-singleton groups
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

from .builders2 import BuildReport
from .instance import Direction, FineTuneInstance, direction_along, find_direction
from .linsolve import solve_exact, solve_float
from .network import Layer, Network, verify_finetune, zero_network
from .numerics import Scalar, all_exact, exact_div, exact_dot, is_exact
from .partition import reduced_index_set
from .pwl import bump, hardtanh, identity, tailcut, windowlinear

_HT = hardtanh()

LAMBDA_BUDGET = 60  # doublings; lambda caps at 2**60


def _window_outputs(cs, params, edges, orientations) -> List[List[Scalar]]:
    """Window neuron outputs at each projection in cs (rows) x neuron.

    A position outside [B/2, A/2] sits in a saturated tail, so the output is
    +-o_j by comparison alone; only interior positions pay for the affine map.
    """
    out = []
    for cv in cs:
        c2 = cv + cv
        row: List[Scalar] = []
        for (a, b), (A, B), o in zip(params, edges, orientations):
            if c2 <= B:
                row.append(-o)
            elif c2 >= A:
                row.append(o)
            else:
                row.append(_HT(a * cv + b))
        out.append(row)
    return out


class BuildError(RuntimeError):
    pass


class ClipRankError(BuildError):
    pass


class SignPatternError(BuildError):
    pass


class LambdaSearchError(BuildError):
    pass


class CancellationError(BuildError):
    pass


class SandwichError(BuildError):
    pass


class BuildVerificationError(BuildError):
    pass


class TargetRangeError(ValueError):
    pass


class TargetCollisionError(ValueError):
    pass


def _sgn(x) -> int:
    return (x > 0) - (x < 0)


# ---------------------------------------------------------------------------
# Group schemes and the window layer
# ---------------------------------------------------------------------------


@dataclass
class GroupScheme:
    """Consecutive groups over a sorted working list of projections.

    The working list may extend the real samples with virtual trailing
    projections (spaced by epsilon) so that groups come out uniform; virtual
    slots only ever contribute zero-target rows to clip systems.
    """

    c_work: List[Scalar]
    n_real: int
    groups: List[Tuple[int, int]]     # inclusive 1-based position ranges
    orientations: List[int]           # +1 / -1 per group
    epsilon: Scalar
    # working position -> sorted sample position, None for virtual slots;
    # identity when virtual slots only pad the tail
    real_of: Optional[List[Optional[int]]] = None

    @property
    def G(self) -> int:
        return len(self.groups)

    def real_position(self, pos: int) -> Optional[int]:
        if self.real_of is not None:
            return self.real_of[pos - 1]
        return pos if pos <= self.n_real else None

    def work_position(self, real: int) -> int:
        if self.real_of is None:
            return real
        return self.real_of.index(real) + 1

    def members(self, g: int) -> List[int]:
        lo, hi = self.groups[g]
        return list(range(lo, hi + 1))

    def group_of(self, pos: int) -> int:
        for g, (lo, hi) in enumerate(self.groups):
            if lo <= pos <= hi:
                return g
        raise KeyError(pos)

    def window_edges(self) -> List[Tuple[Scalar, Scalar]]:
        """Per group j: (A_j, B_j); the identity region is [B/2, A/2]."""
        c = self.c_work
        edges = []
        for j, (lo, hi) in enumerate(self.groups):
            prev_max = c[self.groups[j - 1][1] - 1] if j > 0 else c[0] - self.epsilon
            next_min = (
                c[self.groups[j + 1][0] - 1] if j + 1 < self.G else c[-1] + self.epsilon
            )
            edges.append((c[hi - 1] + next_min, prev_max + c[lo - 1]))
        return edges

    def window_params(self) -> List[Tuple[Scalar, Scalar]]:
        """Per neuron j: (a_j, b_j) with preactivation a_j * c + b_j.

        The linear region covers exactly [mid-gap before group j, mid-gap
        after group j]; orientation flips the slope sign only.
        """
        params = []
        for (A, B), o in zip(self.window_edges(), self.orientations):
            a = exact_div(4 * o, A - B)
            b = -o * exact_div(A + B, A - B)
            params.append((a, b))
        return params

    def beta_matrix(self) -> List[List[Scalar]]:
        """HardTanh window outputs for every working position (rows) x neuron."""
        return _window_outputs(
            self.c_work, self.window_params(), self.window_edges(), self.orientations
        )

    def window_ranks(self) -> Dict[int, int]:
        """Position -> 1-based rank of its preactivation within its group."""
        ranks: Dict[int, int] = {}
        for g, (lo, hi) in enumerate(self.groups):
            pos = list(range(lo, hi + 1))
            ordered = sorted(pos, key=lambda p: self.c_work[p - 1])
            if self.orientations[g] < 0:
                ordered.reverse()
            for r, p in enumerate(ordered, start=1):
                ranks[p] = r
        return ranks

    def transversal(self, j: int) -> List[int]:
        """Rank-j member of every group (requires uniform group size >= j)."""
        ranks = self.window_ranks()
        out = []
        for g in range(self.G):
            sel = [p for p in self.members(g) if ranks[p] == j]
            if len(sel) != 1:
                raise ValueError(f"group {g} has no unique rank-{j} member")
            out.append(sel[0])
        return out


def balanced_scheme(
    c_sorted: Sequence[Scalar], epsilon: Scalar, G: int, M: int
) -> GroupScheme:
    """G consecutive groups of exactly M slots, padding with virtual points."""
    n_real = len(c_sorted)
    total = G * M
    if total < n_real:
        raise ValueError("G*M must cover the samples")
    c_work = list(c_sorted) + [
        c_sorted[-1] + (k + 1) * epsilon for k in range(total - n_real)
    ]
    groups = [(g * M + 1, (g + 1) * M) for g in range(G)]
    orientations = [1 if g % 2 == 0 else -1 for g in range(G)]
    return GroupScheme(c_work, n_real, groups, orientations, epsilon)


def compact_scheme(
    c_sorted: Sequence[Scalar], epsilon: Scalar, tuned_positions: Sequence[int]
) -> GroupScheme:
    """Tuned singletons alternating with filler runs, 2N+1 groups total.

    A filler with no samples (adjacent tuned positions, or a tuned sample at
    either end) is materialized as a virtual zero-target slot at the midpoint
    of the surrounding gap.  That keeps the orientation alternation intact;
    dropping the group instead puts two same-orientation singletons next to
    each other and breaks the null vector's sign pattern.
    """
    K = len(c_sorted)
    c_work: List[Scalar] = []
    real_of: List[Optional[int]] = []
    groups: List[Tuple[int, int]] = []
    orientations: List[int] = []

    def emit_real(lo: int, hi: int):
        start = len(c_work) + 1
        for p in range(lo, hi + 1):
            c_work.append(c_sorted[p - 1])
            real_of.append(p)
        groups.append((start, len(c_work)))

    def emit_virtual(c_value: Scalar):
        c_work.append(c_value)
        real_of.append(None)
        groups.append((len(c_work), len(c_work)))

    prev = 1
    for t in tuned_positions:
        if prev <= t - 1:
            emit_real(prev, t - 1)
        elif t == 1:
            emit_virtual(c_sorted[0] - epsilon)
        else:
            emit_virtual(exact_div(c_sorted[t - 2] + c_sorted[t - 1], 2))
        orientations.append(1)
        emit_real(t, t)
        orientations.append(-1)
        prev = t + 1
    if prev <= K:
        emit_real(prev, K)
    else:
        emit_virtual(c_sorted[-1] + epsilon)
    orientations.append(1)
    return GroupScheme(c_work, K, groups, orientations, epsilon, real_of=real_of)


def window_layer(
    scheme: GroupScheme, direction: Direction
) -> Layer:
    """Lift the 1-D window neurons to d dimensions along the direction."""
    params = scheme.window_params()
    v = direction.vector
    W = [[a * vk for vk in v] for (a, _) in params]
    b = [bv for (_, bv) in params]
    return Layer(W, b, hardtanh())


# ---------------------------------------------------------------------------
# Clip systems
# ---------------------------------------------------------------------------


@dataclass
class ClipSystem:
    matrix: List[List[Scalar]]        # G x (G+1), trailing 1s column
    targets: List[Scalar]
    mu: List[Scalar]
    nu: List[Scalar]
    lam: Scalar
    margin: Scalar

    @property
    def weights(self) -> List[Scalar]:
        return [m + self.lam * n for m, n in zip(self.mu, self.nu)]

    def to_json(self) -> dict:
        return {
            "lambda": float(self.lam),
            "margin": float(self.margin),
            "mu": [_float_or_str(v) for v in self.mu],
            "nu": [_float_or_str(v) for v in self.nu],
        }


def _float_or_str(v: Scalar):
    try:
        return float(v)
    except OverflowError:
        return str(v)


def _row_value(row: Sequence[Scalar], w: Sequence[Scalar]) -> Scalar:
    if all_exact(row) and all_exact(w):
        return exact_dot(row, w, w[-1])
    acc = w[-1]
    for r, wk in zip(row, w):
        acc = acc + r * wk
    return acc


def solve_clip_system(
    rows: Sequence[Sequence[Scalar]],
    targets: Sequence[Scalar],
    off_rows: Sequence[Sequence[Scalar]] = (),
    off_sides: Optional[Sequence[int]] = None,
    clip_level: Scalar = 1,
    margin: Scalar = Fraction(1, 2),
    one_sided: bool = False,
    positive_weights: bool = False,
    lambda_sign: int = 1,
    exact: bool = False,
    difference_rows: bool = False,
) -> ClipSystem:
    """Pin the designated rows to their targets; clip everything else.

    Solves [rows | 1] w = targets (G equations, G+1 unknowns), requiring rank
    G and a one-dimensional null space whose first G coordinates share a
    sign.  lambda is the smallest value in {0, s, 2s, 4s, ...} (s =
    lambda_sign) for which every off row lands at least margin beyond
    clip_level on its required side (off_sides entry +1/-1, or 0 for either
    side; one_sided forces +1 everywhere).

    difference_rows solves [row_2-row_1, ..., row_G-row_{G-1}, row_1] with
    in-order pivoting instead.  A row operation leaves rank, null direction,
    and the solution set untouched, but when consecutive rows agree in most
    coordinates (adjacent window groups saturate identically) it keeps the
    exact elimination sparse, which is what makes large systems affordable.
    """
    G = len(rows)
    if len(targets) != G:
        raise ValueError("one target per designated row")
    M = [list(r) + [1] for r in rows]
    sys_rows, sys_rhs = M, list(targets)
    if difference_rows and G > 1:
        sys_rows = [
            [a - b for a, b in zip(M[j + 1], M[j])] for j in range(G - 1)
        ]
        sys_rows.append(list(M[0]))
        sys_rhs = [targets[j + 1] - targets[j] for j in range(G - 1)]
        sys_rhs.append(targets[0])
    res = (
        solve_exact(sys_rows, sys_rhs, ordered_pivots=difference_rows)
        if exact
        else solve_float(sys_rows, sys_rhs)
    )
    if res.rank != G:
        raise ClipRankError(f"clip system rank {res.rank}, expected {G}")
    if not res.consistent or len(res.nullspace) != 1:
        raise ClipRankError("clip system lacks a unique null direction")
    mu = list(res.particular)
    nu = list(res.nullspace[0])
    head = nu[:G]
    if all(v > 0 for v in head):
        pass
    elif all(v < 0 for v in head):
        nu = [-v for v in nu]
    else:
        bad = [i for i, v in enumerate(head) if v <= 0]
        raise SignPatternError(
            f"null vector has non-positive coordinates at {bad} before normalization"
        )
    # A null direction is only defined up to positive scale; pinning its
    # smallest head coordinate to 1 makes lambda measure clip pressure in
    # data units.  Without this the elimination's arbitrary scale can spread
    # coordinates over enough orders of magnitude that no single lambda
    # within budget clears every off row.
    low = min(nu[:G])
    if low != 1:
        nu = [exact_div(v, low) for v in nu]

    if off_sides is None:
        off_sides = [1 if one_sided else 0] * len(off_rows)
    if len(off_sides) != len(off_rows):
        raise ValueError("one side per off row")

    # off-row values are affine in lambda; one dot product pair per row
    # instead of one per candidate lambda
    off_base = [_row_value(row, mu) for row in off_rows]
    off_gain = [_row_value(row, nu) for row in off_rows]
    need = clip_level + margin

    def admissible(lam: Scalar) -> bool:
        if positive_weights and not all(
            m + lam * n > 0 for m, n in zip(mu[:G], nu[:G])
        ):
            return False
        for b0, g0, side in zip(off_base, off_gain, off_sides):
            val = b0 + lam * g0
            if side == 0:
                if not (val >= need or val <= -need):
                    return False
            elif side * val < need:
                return False
        return True

    lam: Scalar = 0
    if not admissible(lam):
        lam = lambda_sign
        steps = 0
        while not admissible(lam):
            lam = lam * 2
            steps += 1
            if steps > LAMBDA_BUDGET:
                raise LambdaSearchError(
                    f"no admissible lambda up to 2^{LAMBDA_BUDGET}"
                )
    return ClipSystem(M, list(targets), mu, nu, lam, margin)


def _assert_row_structure(
    s_rows: Sequence[Sequence[Scalar]],
    off_rows: Sequence[Sequence[Scalar]],
    off_groups: Sequence[int],
):
    """Off rows must match their group's designated row except in that group's
    own coordinate (every other window saturates the whole group together)."""
    for row, g in zip(off_rows, off_groups):
        ref = s_rows[g]
        for k, (a, b) in enumerate(zip(row, ref)):
            if k != g and a != b:
                raise BuildError(
                    f"window structure violated: off row differs from its group "
                    f"representative in foreign coordinate {k}"
                )


# ---------------------------------------------------------------------------
# Shared preamble
# ---------------------------------------------------------------------------


def _check_target_range(inst: FineTuneInstance):
    for z in inst.targets:
        if not (-1 <= z <= 1):
            raise TargetRangeError("targets must lie in [-1, 1] for 3-layer builds")


def _prep(inst: FineTuneInstance, direction: Optional[Direction]):
    """Lift to exact arithmetic and sort along the direction.

    Floats are dyadic rationals, so the lift changes nothing about the
    instance; it buys exact clip solves whose weights satisfy the pinning
    equations identically instead of up to a lambda-amplified epsilon.
    """
    if not inst.exact:
        inst = inst.as_exact()
        if direction is not None:
            direction = direction_along(inst, direction.vector)
    if direction is None:
        direction = find_direction(inst, seed=inst.seed or 0)
    order = direction.order
    c_sorted = direction.sorted_projections()
    z_sorted = [inst.targets[i] for i in order]
    inv = {orig: pos for pos, orig in enumerate(order)}
    tuned_pos = sorted(inv[t - 1] + 1 for t in inst.tune_set)
    return inst, direction, c_sorted, z_sorted, tuned_pos


def _margin(exact: bool) -> Scalar:
    return Fraction(1, 2) if exact else 0.5


def _verify_gate(net: Network, inst: FineTuneInstance, method: str):
    rep = verify_finetune(net, inst)
    if not rep.passed:
        raise BuildVerificationError(
            f"{method} build failed verification: on-T err {rep.max_err_on_T}, "
            f"off-T err {rep.max_err_off_T}"
        )


# ---------------------------------------------------------------------------
# Grid build: 4 ceil(sqrt(K))
# ---------------------------------------------------------------------------


def build_grid(
    inst: FineTuneInstance, direction: Optional[Direction] = None
) -> Tuple[Network, BuildReport]:
    """Memorization-grade build: one window group per ~sqrt(K) samples, one
    second-layer neuron per within-group rank, saturation constants
    cancelled into the output bias."""
    _check_target_range(inst)
    inst, direction, c_sorted, z_sorted, _ = _prep(inst, direction)
    K = inst.K
    exact = inst.exact
    margin = _margin(exact)
    G = math.isqrt(K - 1) + 1 if K > 1 else 1
    M = -(-K // G)
    scheme = balanced_scheme(c_sorted, direction.epsilon, G, M)
    beta = scheme.beta_matrix()
    ranks = scheme.window_ranks()

    last_error: Optional[Exception] = None
    for sign0 in (1, -1):
        d = [sign0 * (1 if j % 2 == 0 else -1) for j in range(M)]
        try:
            systems: List[ClipSystem] = []
            trans: List[List[int]] = []
            for j in range(1, M + 1):
                S = scheme.transversal(j)
                rows = [beta[p - 1] for p in S]
                targets = [z_sorted[p - 1] if p <= K else 0 for p in S]
                off_pos = [p for p in range(1, K + 1) if p not in set(S)]
                off_rows = [beta[p - 1] for p in off_pos]
                off_groups = [scheme.group_of(p) for p in off_pos]
                _assert_row_structure(rows, off_rows, off_groups)
                sides = [d[j - 1] * _sgn(ranks[p] - j) for p in off_pos]
                systems.append(
                    solve_clip_system(
                        rows,
                        targets,
                        off_rows,
                        off_sides=sides,
                        margin=margin,
                        lambda_sign=d[j - 1],
                        exact=exact,
                    )
                )
                trans.append(S)
            # saturation constant must be sample-independent to cancel
            consts = set()
            for p in range(1, K + 1):
                rp = ranks[p]
                consts.add(
                    sum(d[j - 1] * _sgn(rp - j) for j in range(1, M + 1) if j != rp)
                )
            if len(consts) > 1:
                raise CancellationError(
                    f"saturation constants not uniform: {sorted(consts)}"
                )
            C = consts.pop() if consts else 0
            layer1 = window_layer(scheme, direction)
            W2 = [cs.weights[:G] for cs in systems]
            b2 = [cs.weights[G] for cs in systems]
            layer2 = Layer(W2, b2, hardtanh())
            out = Layer([[1] * M], [0], identity())
            net = Network(inst.d, [layer1, layer2, out], -C)
            _verify_gate(net, inst, "grid")
            bound = 4 * (math.isqrt(K - 1) + 1 if K > 1 else 1)
            report = BuildReport(
                "grid",
                K,
                inst.N,
                net.declared_neuron_count,
                bound,
                bound_parts={"formula": 4 * math.sqrt(K), "ceiling": bound},
                direction=list(direction.vector),
                permutation=list(direction.order),
                extras={
                    "groups": G,
                    "rows": M,
                    "lambda_signs": d,
                    "lambdas": [float(cs.lam) for cs in systems],
                    "saturation_constant": int(C),
                    "transversals": trans,
                },
            )
            return net, report
        except (CancellationError, LambdaSearchError, SignPatternError) as err:
            last_error = err
            continue
    raise last_error


# ---------------------------------------------------------------------------
# Bump build: 2 ceil(sqrt(K)) + 3N
# ---------------------------------------------------------------------------


def build_bump(
    inst: FineTuneInstance, direction: Optional[Direction] = None
) -> Tuple[Network, BuildReport]:
    """Grid first layer plus one Bump neuron per tuned sample with z != 0."""
    _check_target_range(inst)
    inst, direction, c_sorted, z_sorted, tuned_pos = _prep(inst, direction)
    K = inst.K
    exact = inst.exact
    margin = _margin(exact)
    G = math.isqrt(K - 1) + 1 if K > 1 else 1
    M = -(-K // G)
    scheme = balanced_scheme(c_sorted, direction.epsilon, G, M)
    beta = scheme.beta_matrix()
    ranks = scheme.window_ranks()
    layer1 = window_layer(scheme, direction)

    effective = [p for p in tuned_pos if z_sorted[p - 1] != 0]
    if not effective:
        out = Layer([[0] * G], [0], identity())
        net = Network(inst.d, [layer1, out], 0)
        _verify_gate(net, inst, "bump")
        bound = 2 * G + 3 * inst.N
        report = BuildReport(
            "bump", K, inst.N, net.declared_neuron_count, bound,
            bound_parts={"formula": 2 * math.sqrt(K) + 3 * inst.N, "ceiling": bound},
            direction=list(direction.vector),
            permutation=list(direction.order),
            extras={"groups": G, "bumps": 0},
        )
        return net, report

    # quarter of the smallest gap among distinct target values and zero
    levels = sorted(set(z_sorted) | {0})
    min_gap = min(b - a for a, b in zip(levels, levels[1:]))
    delta = exact_div(min_gap, 4)
    clip_level = 1 + delta

    def solve_row(j: int, targets_by_pos: Dict[int, Scalar]) -> ClipSystem:
        S = scheme.transversal(j)
        rows = [beta[p - 1] for p in S]
        targets = [targets_by_pos.get(p, 0) for p in S]
        off_pos = [p for p in range(1, K + 1) if p not in set(S)]
        off_rows = [beta[p - 1] for p in off_pos]
        _assert_row_structure(rows, off_rows, [scheme.group_of(p) for p in off_pos])
        return solve_clip_system(
            rows, targets, off_rows, clip_level=clip_level, margin=margin, exact=exact
        )

    by_row: Dict[int, List[int]] = {}
    for p in effective:
        by_row.setdefault(ranks[p], []).append(p)

    neurons: List[Tuple[List[Scalar], Scalar, Scalar]] = []  # (w, b, center)
    solves = 0
    collisions = 0
    for j, members in sorted(by_row.items()):
        zs = [z_sorted[p - 1] for p in members]
        if len(set(zs)) == len(zs):
            # shared row: every tuned member pinned to its own level
            cs = solve_row(j, {p: z_sorted[p - 1] for p in members})
            solves += 1
            for p in members:
                neurons.append((cs.weights[:G], cs.weights[G], z_sorted[p - 1]))
        else:
            # colliding levels in one row: re-solve per sample so the other
            # colliding samples sit at 0, outside the bump window
            collisions += 1
            for p in members:
                cs = solve_row(j, {p: z_sorted[p - 1]})
                solves += 1
                neurons.append((cs.weights[:G], cs.weights[G], z_sorted[p - 1]))

    layer2 = Layer(
        [w for w, _, _ in neurons],
        [b for _, b, _ in neurons],
        [bump(center, delta) for _, _, center in neurons],
    )
    out = Layer([[1] * len(neurons)], [0], identity())
    net = Network(inst.d, [layer1, layer2, out], 0)
    _verify_gate(net, inst, "bump")
    bound = 2 * G + 3 * inst.N
    report = BuildReport(
        "bump",
        K,
        inst.N,
        net.declared_neuron_count,
        bound,
        bound_parts={"formula": 2 * math.sqrt(K) + 3 * inst.N, "ceiling": bound},
        direction=list(direction.vector),
        permutation=list(direction.order),
        extras={
            "groups": G,
            "bumps": len(neurons),
            "delta": float(delta),
            "row_solves": solves,
            "collision_rows": collisions,
        },
    )
    return net, report


# ---------------------------------------------------------------------------
# Sparse build: 6 ceil(sqrt(3N+2))
# ---------------------------------------------------------------------------


def build_sparse(
    inst: FineTuneInstance, direction: Optional[Direction] = None
) -> Tuple[Network, BuildReport]:
    """Window/clip grid over the reduced index set with WindowLinear readout.

    Interior points of untuned runs are dropped from the working set; lambda
    escalation clips them (and every non-designated kept sample) into the
    WindowLinear zero region, so the plain sum of second-layer outputs meets
    the contract with no cancellation constant.
    """
    _check_target_range(inst)
    if inst.N == 0:
        bound = 6 * _ceil_sqrt(2)
        report = BuildReport(
            "sparse", inst.K, 0, 0, bound,
            bound_parts={"formula": 6 * math.sqrt(2), "ceiling": bound},
        )
        return zero_network(inst.d), report
    inst, direction, c_sorted, z_sorted, tuned_pos = _prep(inst, direction)
    K = inst.K
    exact = inst.exact
    margin = _margin(exact)
    delta = exact_div(margin, 4)
    clip_level = 1 + delta

    reduced = reduced_index_set(K, set(tuned_pos))
    J = list(reduced.kept)
    n = len(J)
    c_J = [c_sorted[p - 1] for p in J]
    Gs = _ceil_sqrt(n)
    Ms = -(-n // Gs)
    scheme = balanced_scheme(c_J, direction.epsilon, Gs, Ms)
    params = scheme.window_params()
    # window outputs for every real sample (kept or removed) and virtual slot
    beta_all = _window_outputs(
        c_sorted, params, scheme.window_edges(), scheme.orientations
    )
    beta_work = scheme.beta_matrix()
    ranks = scheme.window_ranks()

    removed = list(reduced.removed)
    kept_of_slot = {slot: p for slot, p in enumerate(J, start=1)}

    systems: List[ClipSystem] = []
    for j in range(1, Ms + 1):
        S = scheme.transversal(j)
        rows = [beta_work[s - 1] for s in S]
        targets = [
            z_sorted[kept_of_slot[s] - 1] if s <= n else 0 for s in S
        ]
        s_set = set(S)
        off_rows = []
        off_slots_kept = [s for s in range(1, n + 1) if s not in s_set]
        off_rows.extend(beta_work[s - 1] for s in off_slots_kept)
        _assert_row_structure(
            rows,
            off_rows,
            [scheme.group_of(s) for s in off_slots_kept],
        )
        off_rows.extend(beta_all[p - 1] for p in removed)
        systems.append(
            solve_clip_system(
                rows,
                targets,
                off_rows,
                clip_level=clip_level,
                margin=margin,
                positive_weights=True,
                exact=exact,
            )
        )

    _check_sandwich(J, removed, beta_all, K)

    layer1 = window_layer(scheme, direction)
    W2 = [cs.weights[:Gs] for cs in systems]
    b2 = [cs.weights[Gs] for cs in systems]
    layer2 = Layer(W2, b2, windowlinear(delta))
    out = Layer([[1] * Ms], [0], identity())
    net = Network(inst.d, [layer1, layer2, out], 0)
    _verify_gate(net, inst, "sparse")
    bound = 6 * _ceil_sqrt(3 * inst.N + 2)
    report = BuildReport(
        "sparse",
        K,
        inst.N,
        net.declared_neuron_count,
        bound,
        bound_parts={"formula": 6 * math.sqrt(3 * inst.N + 2), "ceiling": bound},
        direction=list(direction.vector),
        permutation=list(direction.order),
        extras={
            "reduced_size": n,
            "groups": Gs,
            "rows": Ms,
            "delta": float(delta),
            "lambdas": [float(cs.lam) for cs in systems],
            "removed": removed,
        },
    )
    return net, report


def _check_sandwich(
    J: List[int], removed: List[int], beta_all: List[List[Scalar]], K: int
):
    """Every removed sample's window outputs lie weakly between those of its
    neighboring kept samples (windows are monotone along the projection)."""
    kept_sorted = J
    for p in removed:
        lo = max(s for s in kept_sorted if s < p)
        hi = min(s for s in kept_sorted if s > p)
        row_p, row_lo, row_hi = beta_all[p - 1], beta_all[lo - 1], beta_all[hi - 1]
        for a, b, c in zip(row_lo, row_p, row_hi):
            if not (min(a, c) <= b <= max(a, c)):
                raise SandwichError(
                    f"removed sample {p} escapes the [{lo}, {hi}] envelope"
                )


def _ceil_sqrt(v: int) -> int:
    if v <= 1:
        return v
    return math.isqrt(v - 1) + 1


# ---------------------------------------------------------------------------
# Compact build: 4N + 4
# ---------------------------------------------------------------------------


def build_compact(
    inst: FineTuneInstance, direction: Optional[Direction] = None
) -> Tuple[Network, BuildReport]:
    """Tuned-singleton windows plus a single TailCut readout neuron.

    Designated samples (group minima) are pinned exactly; every other sample
    is clipped upward past the TailCut zero threshold, which is why the
    clipping here must be one-sided.
    """
    _check_target_range(inst)
    effective = [t for t in inst.tune_set if inst.targets[t - 1] != 0]
    zs = [inst.targets[t - 1] for t in effective]
    if len(set(zs)) != len(zs):
        raise TargetCollisionError("tuned targets must be pairwise distinct")
    if not effective:
        net = zero_network(inst.d)
        report = BuildReport(
            "compact", inst.K, inst.N, 0, 4 * inst.N + 4,
            bound_parts={"formula": 4 * inst.N + 4, "ceiling": 4 * inst.N + 4},
        )
        return net, report

    inst, direction, c_sorted, z_sorted, _ = _prep(inst, direction)
    K = inst.K
    exact = inst.exact
    margin = _margin(exact)
    delta_t = exact_div(margin, 4)
    inv = {orig: pos for pos, orig in enumerate(direction.order)}
    eff_pos = sorted(inv[t - 1] + 1 for t in effective)

    scheme = compact_scheme(c_sorted, direction.epsilon, eff_pos)
    beta = scheme.beta_matrix()
    G = scheme.G
    n_work = len(scheme.c_work)
    S = [lo for (lo, _) in scheme.groups]
    s_set = set(S)
    rows = [beta[p - 1] for p in S]
    targets = []
    for p in S:
        real = scheme.real_position(p)
        targets.append(z_sorted[real - 1] if real is not None else 0)
    off_pos = [
        p
        for p in range(1, n_work + 1)
        if p not in s_set and scheme.real_position(p) is not None
    ]
    off_rows = [beta[p - 1] for p in off_pos]
    _assert_row_structure(rows, off_rows, [scheme.group_of(p) for p in off_pos])
    cs = solve_clip_system(
        rows,
        targets,
        off_rows,
        one_sided=True,
        margin=margin,
        exact=exact,
        difference_rows=True,
    )

    layer1 = window_layer(scheme, direction)
    layer2 = Layer([cs.weights[:G]], [cs.weights[G]], tailcut(delta_t))
    out = Layer([[1]], [0], identity())
    net = Network(inst.d, [layer1, layer2, out], 0)
    _verify_gate(net, inst, "compact")
    N_eff = len(effective)
    bound = 4 * inst.N + 4
    report = BuildReport(
        "compact",
        K,
        inst.N,
        net.declared_neuron_count,
        bound,
        bound_parts={"formula": bound, "ceiling": bound, "effective_N": N_eff},
        direction=list(direction.vector),
        permutation=list(direction.order),
        extras={
            "groups": [
                [scheme.real_position(p) for p in scheme.members(g)]
                for g in range(G)
            ],
            "orientations": scheme.orientations,
            "representatives": [scheme.real_position(p) for p in S],
            "virtual_slots": sum(1 for r in scheme.real_of if r is None),
            "lambda": float(cs.lam),
            "delta": float(delta_t),
            "clip": cs.to_json(),
        },
    )
    return net, report


# ---------------------------------------------------------------------------
# Branch selection
# ---------------------------------------------------------------------------


def three_layer_auto(
    inst: FineTuneInstance, direction: Optional[Direction] = None
) -> Tuple[Network, BuildReport]:
    """Pick the branch minimizing the real-valued width formulas."""
    _check_target_range(inst)
    K, N = inst.K, inst.N
    if N == 0:
        net = zero_network(inst.d)
        report = BuildReport(
            "auto:zero", K, 0, 0, 0,
            bound_parts=_branch_formulas(K, 0),
        )
        return net, report
    formulas = _branch_formulas(K, N)
    best = min(("grid", "bump", "sparse"), key=lambda name: formulas[name])
    builder = {"grid": build_grid, "bump": build_bump, "sparse": build_sparse}[best]
    net, report = builder(inst, direction)
    report.method = f"auto:{best}"
    report.bound_parts.update(formulas)
    return net, report


def _branch_formulas(K: int, N: int) -> dict:
    return {
        "grid": 4 * math.sqrt(K),
        "bump": 2 * math.sqrt(K) + 3 * N,
        "sparse": 6 * math.sqrt(3 * N + 2),
    }

"""Symbolic regression by genetic programming.

Expressions are nested tuples over variables, float constants, the unary
operators sin/tanh/square/cube and the binary operators +/-/*.  Two
structural constraints are enforced on every stored expression: total node
count <= 90, and, for each operator node, at most 4 operator nodes along any
root-to-leaf path of its subtree (the nesting predicate is isolated in
``operator_depth`` so it can be swapped).  Evolution keeps a Pareto archive
of the best expression per complexity and never lets its best loss regress.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from distillkit._backend import kernels
from distillkit.core import DistillkitError, FeatureSchema, PerOutputPolicy
from distillkit.trees import _as_matrix

log = logging.getLogger(__name__)

UNARY_OPS = ("sin", "tanh", "square", "cube")
BINARY_OPS = ("add", "sub", "mul")
MAX_COMPLEXITY = 90
MAX_OPERATOR_DEPTH = 4
PARSIMONY = 1e-3

DEFAULT_ITERATIONS = 20
DEFAULT_POPULATION = 1000
TOURNAMENT_SIZE = 5
P_CROSSOVER = 0.7
OFFSPRING_RETRIES = 8

_OPCODE = {"var": 0, "const": 1, "add": 2, "sub": 3, "mul": 4,
           "sin": 5, "tanh": 6, "square": 7, "cube": 8}
_INFIX_BINARY = {"add": "+", "sub": "-", "mul": "*"}


# ---------------------------------------------------------------------------
# expression basics
# ---------------------------------------------------------------------------

def complexity(expr) -> int:
    """Total node count: variables, constants and operators count 1 each."""
    kind = expr[0]
    if kind in ("var", "const"):
        return 1
    return 1 + sum(complexity(c) for c in expr[1:])


def operator_depth(expr) -> int:
    """Maximum number of operator nodes along any root-to-leaf path."""
    kind = expr[0]
    if kind in ("var", "const"):
        return 0
    return 1 + max(operator_depth(c) for c in expr[1:])


def satisfies_constraints(expr) -> bool:
    return (complexity(expr) <= MAX_COMPLEXITY
            and operator_depth(expr) <= MAX_OPERATOR_DEPTH)


def validate_expression(expr, n_features: int) -> None:
    kind = expr[0]
    if kind == "var":
        if not 0 <= expr[1] < n_features:
            raise DistillkitError(f"variable index {expr[1]} out of range")
    elif kind == "const":
        if not math.isfinite(expr[1]):
            raise DistillkitError("non-finite constant")
    elif kind in UNARY_OPS:
        validate_expression(expr[1], n_features)
    elif kind in BINARY_OPS:
        validate_expression(expr[1], n_features)
        validate_expression(expr[2], n_features)
    else:
        raise DistillkitError(f"unknown node kind {kind!r}")


def evaluate(expr, x) -> float:
    """Recursive single-observation interpreter (the batch VM's reference)."""
    kind = expr[0]
    if kind == "var":
        return float(x[expr[1]])
    if kind == "const":
        return float(expr[1])
    if kind == "add":
        return evaluate(expr[1], x) + evaluate(expr[2], x)
    if kind == "sub":
        return evaluate(expr[1], x) - evaluate(expr[2], x)
    if kind == "mul":
        return evaluate(expr[1], x) * evaluate(expr[2], x)
    if kind == "sin":
        return math.sin(evaluate(expr[1], x))
    if kind == "tanh":
        return math.tanh(evaluate(expr[1], x))
    if kind == "square":
        v = evaluate(expr[1], x)
        return v * v
    v = evaluate(expr[1], x)
    return v * v * v


def compile_program(expr):
    """Postfix (code, arg, consts, max_stack) arrays for the batch VM."""
    code, arg, consts = [], [], []
    depth = 0
    max_stack = 0

    def walk(node):
        nonlocal depth, max_stack
        kind = node[0]
        if kind == "var":
            code.append(_OPCODE["var"])
            arg.append(node[1])
            depth += 1
        elif kind == "const":
            code.append(_OPCODE["const"])
            arg.append(len(consts))
            consts.append(float(node[1]))
            depth += 1
        elif kind in UNARY_OPS:
            walk(node[1])
            code.append(_OPCODE[kind])
            arg.append(-1)
        else:
            walk(node[1])
            walk(node[2])
            code.append(_OPCODE[kind])
            arg.append(-1)
            depth -= 1
        max_stack = max(max_stack, depth)

    walk(expr)
    return (np.asarray(code, dtype=np.int32), np.asarray(arg, dtype=np.int32),
            np.asarray(consts, dtype=np.float64), max_stack)


def eval_batch(expr, X) -> np.ndarray:
    X = _as_matrix(X)
    code, arg, consts, max_stack = compile_program(expr)
    return kernels.eval_program(code, arg, consts, X, max_stack)


def to_infix(expr, names=None) -> str:
    kind = expr[0]
    if kind == "var":
        return names[expr[1]] if names else f"x{expr[1]}"
    if kind == "const":
        return format(expr[1], ".6g")
    if kind in UNARY_OPS:
        return f"{kind}({to_infix(expr[1], names)})"
    return (f"({to_infix(expr[1], names)} {_INFIX_BINARY[kind]} "
            f"{to_infix(expr[2], names)})")


def to_prefix(expr) -> str:
    """S-expression serialization, parse_prefix's inverse."""
    kind = expr[0]
    if kind == "var":
        return f"x{expr[1]}"
    if kind == "const":
        return repr(float(expr[1]))
    parts = " ".join(to_prefix(c) for c in expr[1:])
    return f"({kind} {parts})"


def parse_prefix(text: str):
    tokens = text.replace("(", " ( ").replace(")", " ) ").split()

    def parse(pos):
        tok = tokens[pos]
        if tok == "(":
            kind = tokens[pos + 1]
            if kind not in UNARY_OPS and kind not in BINARY_OPS:
                raise DistillkitError(f"unknown operator {kind!r}")
            children = []
            pos += 2
            while tokens[pos] != ")":
                child, pos = parse(pos)
                children.append(child)
            return (kind, *children), pos + 1
        if tok.startswith("x") and tok[1:].isdigit():
            return ("var", int(tok[1:])), pos + 1
        return ("const", float(tok)), pos + 1

    expr, pos = parse(0)
    if pos != len(tokens):
        raise DistillkitError("trailing tokens in expression text")
    return expr


# ---------------------------------------------------------------------------
# random generation and variation
# ---------------------------------------------------------------------------

def _random_leaf(rng, n_features):
    if rng.random() < 0.8:
        return ("var", int(rng.integers(n_features)))
    return ("const", float(rng.uniform(-2.0, 2.0)))


def _random_expr(rng, n_features, budget, full):
    """Random tree with at most `budget` nested operators (grow or full)."""
    if budget <= 0 or (not full and rng.random() < 0.3):
        return _random_leaf(rng, n_features)
    if rng.random() < 0.5:
        op = UNARY_OPS[int(rng.integers(len(UNARY_OPS)))]
        return (op, _random_expr(rng, n_features, budget - 1, full))
    op = BINARY_OPS[int(rng.integers(len(BINARY_OPS)))]
    return (op, _random_expr(rng, n_features, budget - 1, full),
            _random_expr(rng, n_features, budget - 1, full))


def _paths(expr, prefix=()):
    """All subtree positions as child-index tuples, preorder."""
    out = [prefix]
    if expr[0] in UNARY_OPS:
        out += _paths(expr[1], prefix + (1,))
    elif expr[0] in BINARY_OPS:
        out += _paths(expr[1], prefix + (1,))
        out += _paths(expr[2], prefix + (2,))
    return out


def _get(expr, path):
    for i in path:
        expr = expr[i]
    return expr


def _replace(expr, path, new):
    if not path:
        return new
    i = path[0]
    parts = list(expr)
    parts[i] = _replace(parts[i], path[1:], new)
    return tuple(parts)


def _perturb_constants(expr, rng):
    kind = expr[0]
    if kind == "const":
        c = expr[1]
        return ("const", float(c + rng.normal() * (0.1 * abs(c) + 0.01)))
    if kind == "var":
        return expr
    return (kind, *[_perturb_constants(c, rng) for c in expr[1:]])


def _mutate(expr, rng, n_features):
    """One of: point mutation, subtree replacement, hoist, constant jitter."""
    roll = rng.random()
    paths = _paths(expr)
    path = paths[int(rng.integers(len(paths)))]
    target = _get(expr, path)
    if roll < 0.3:  # point mutation: swap node kind, keep children
        kind = target[0]
        if kind in UNARY_OPS:
            new = (UNARY_OPS[int(rng.integers(len(UNARY_OPS)))], target[1])
        elif kind in BINARY_OPS:
            new = (BINARY_OPS[int(rng.integers(len(BINARY_OPS)))],
                   target[1], target[2])
        else:
            new = _random_leaf(rng, n_features)
        return _replace(expr, path, new)
    if roll < 0.6:  # subtree replacement
        new = _random_expr(rng, n_features, int(rng.integers(1, 3)),
                           full=False)
        return _replace(expr, path, new)
    if roll < 0.8:  # hoist: promote a subtree (counters bloat)
        return target
    return _perturb_constants(expr, rng)


def _crossover(a, b, rng):
    pa = _paths(a)
    pb = _paths(b)
    path_a = pa[int(rng.integers(len(pa)))]
    path_b = pb[int(rng.integers(len(pb)))]
    return _replace(a, path_a, _get(b, path_b))


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------

class ArchiveMember:
    def __init__(self, expr, complexity_, loss):
        self.expr = expr
        self.complexity = complexity_
        self.loss = loss  # selection-batch MSE during evolution
        self.train_loss = math.inf  # full-data MSE, filled at the end
        self.val_loss = math.inf

    def __repr__(self):
        return (f"ArchiveMember(c={self.complexity}, loss={self.loss:.3g}, "
                f"{to_infix(self.expr)})")


class ParetoArchive:
    """Best expression per complexity; exports the non-dominated front."""

    def __init__(self):
        self._by_complexity: dict[int, ArchiveMember] = {}
        self.best_loss_history: list[float] = []
        self.no_op_generations = 0

    def offer(self, expr, loss: float) -> None:
        if not math.isfinite(loss):
            return
        c = complexity(expr)
        cur = self._by_complexity.get(c)
        if cur is None or loss < cur.loss:
            self._by_complexity[c] = ArchiveMember(expr, c, loss)

    def best(self) -> ArchiveMember:
        if not self._by_complexity:
            raise DistillkitError("archive is empty")
        return min(self._by_complexity.values(),
                   key=lambda m: (m.loss, m.complexity))

    def members(self) -> list[ArchiveMember]:
        """Non-dominated front, complexity ascending."""
        out = []
        best = math.inf
        for c in sorted(self._by_complexity):
            m = self._by_complexity[c]
            if m.loss < best:
                out.append(m)
                best = m.loss
        return out

    def expressions(self) -> list:
        return [m.expr for m in self._by_complexity.values()]


def _batch_mse(expr, X, y) -> float:
    code, arg, consts, max_stack = compile_program(expr)
    return kernels.mse_of_program(code, arg, consts, X, y, max_stack)


def evolve(X, y, iterations: int = DEFAULT_ITERATIONS,
           population_size: int = DEFAULT_POPULATION, seed: int = 0,
           X_val=None, y_val=None, batch_size: int | None = None,
           initial_population=None) -> ParetoArchive:
    """Evolve expressions minimizing MSE with parsimony pressure.

    Selection fitness is MSE * (1 + PARSIMONY * complexity) on a fixed
    evaluation batch (the whole dataset unless batch_size subsamples it
    once, seeded).  The archive keeps the best raw batch MSE per complexity
    tier, so its best loss is non-increasing across generations; elites
    re-enter every generation.  Offspring violating the structural
    constraints are retried a few times, then the parent is kept.
    """
    X = _as_matrix(X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, d = X.shape
    if iterations < 1 or n < 2 or population_size < 2:
        raise DistillkitError("need iterations >= 1, n >= 2, population >= 2")
    rng = np.random.default_rng(seed)

    if batch_size is not None and batch_size < n:
        idx = rng.choice(n, size=batch_size, replace=False)
        Xb = np.ascontiguousarray(X[idx])
        yb = np.ascontiguousarray(y[idx])
    else:
        Xb, yb = X, y

    pop = []
    if initial_population:
        pop = [e for e in initial_population if satisfies_constraints(e)]
        pop = pop[:population_size]
    pop += [("var", j) for j in range(min(d, population_size - len(pop)))]
    budgets = [1, 2, 3, 4]
    k = 0
    while len(pop) < population_size:
        pop.append(_random_expr(rng, d, budgets[k % 4], full=(k % 2 == 0)))
        k += 1

    archive = ParetoArchive()
    for gen in range(iterations):
        losses = np.array([_batch_mse(e, Xb, yb) for e in pop])
        fitness = losses * (1.0 + PARSIMONY
                            * np.array([complexity(e) for e in pop]))
        for e, loss in zip(pop, losses):
            archive.offer(e, float(loss))
        archive.best_loss_history.append(archive.best().loss)

        if gen == iterations - 1:
            break

        elites = [m.expr for m in archive.members()]
        next_pop = elites[:population_size]
        made_offspring = False

        def tournament():
            best_i = -1
            best_f = math.inf
            for _ in range(TOURNAMENT_SIZE):
                i = int(rng.integers(population_size))
                f = fitness[i] if math.isfinite(fitness[i]) else math.inf
                if best_i < 0 or f < best_f:
                    best_i, best_f = i, f
            return pop[best_i]

        while len(next_pop) < population_size:
            parent = tournament()
            child = None
            for _ in range(OFFSPRING_RETRIES):
                if rng.random() < P_CROSSOVER:
                    cand = _crossover(parent, tournament(), rng)
                else:
                    cand = _mutate(parent, rng, d)
                if satisfies_constraints(cand):
                    child = cand
                    break
            if child is None:
                child = parent  # keep the parent when every retry failed
            else:
                made_offspring = True
            next_pop.append(child)
        if not made_offspring:
            archive.no_op_generations += 1
            log.warning("generation %d produced no valid offspring", gen)
        pop = next_pop

    if X_val is None:
        X_val, y_val = X, y
    else:
        X_val = _as_matrix(X_val)
        y_val = np.ascontiguousarray(y_val, dtype=np.float64)
    for m in archive._by_complexity.values():
        m.train_loss = _batch_mse(m.expr, X, y)
        m.val_loss = _batch_mse(m.expr, X_val, y_val)
    return archive


def select_policy_expression(archive: ParetoArchive) -> ArchiveMember:
    """Archive member with the lowest validation MSE; ties prefer simpler."""
    members = archive.members()
    if not members:
        raise DistillkitError("archive is empty")
    return min(members, key=lambda m: (m.val_loss, m.complexity))


# ---------------------------------------------------------------------------
# policy wrapper
# ---------------------------------------------------------------------------

class SymbolicModel:
    """One selected expression acting as a scalar regressor."""

    def __init__(self, expr, n_features: int):
        validate_expression(expr, n_features)
        self.expr = expr
        self.n_features = n_features
        self._program = compile_program(expr)

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        code, arg, consts, max_stack = self._program
        return kernels.eval_program(code, arg, consts, X, max_stack)

    def predict_row(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_features,):
            raise DistillkitError(
                f"expected {self.n_features} features, got shape {x.shape}")
        return float(self.predict(x[None, :])[0])

    def to_json(self) -> dict:
        return {"expression": to_prefix(self.expr),
                "n_features": self.n_features}

    @classmethod
    def from_json(cls, obj: dict) -> "SymbolicModel":
        return cls(parse_prefix(obj["expression"]), obj["n_features"])


class SymbolicPolicy(PerOutputPolicy):
    def __init__(self, models: list[SymbolicModel], schema: FeatureSchema,
                 action_names, archives: list[ParetoArchive] | None = None):
        super().__init__("symbolic", models, schema, action_names)
        self.archives = archives

    def infix_expressions(self) -> list[str]:
        return [to_infix(m.expr, list(self.schema.names))
                for m in self.models]

    def to_json(self) -> dict:
        return {"family": "symbolic", "schema": self.schema.to_json(),
                "action_names": list(self.action_names),
                "models": [m.to_json() for m in self.models]}

    @classmethod
    def from_json(cls, obj: dict) -> "SymbolicPolicy":
        return cls([SymbolicModel.from_json(m) for m in obj["models"]],
                   FeatureSchema.from_json(obj["schema"]),
                   tuple(obj["action_names"]))


def fit_symbolic_policy(X, Y, schema: FeatureSchema, action_names,
                        seed: int = 0, warm_archives=None,
                        **params) -> SymbolicPolicy:
    """Evolve one expression per action dimension.

    `warm_archives` (from a previous fit) seeds each output's population so
    repeated refits extend earlier search instead of restarting it.
    """
    X = _as_matrix(X, schema.dim)
    Y = np.asarray(Y, dtype=np.float64)
    models, archives = [], []
    for o in range(Y.shape[1]):
        warm = None
        if warm_archives is not None:
            warm = warm_archives[o].expressions()
        archive = evolve(X, Y[:, o], seed=seed + o,
                         initial_population=warm, **params)
        member = select_policy_expression(archive)
        models.append(SymbolicModel(member.expr, schema.dim))
        archives.append(archive)
    return SymbolicPolicy(models, schema, action_names, archives)

"""A small arithmetic language for data fields given on the command line.

Expressions are parsed with :mod:`ast` and only a whitelist of node types is
accepted.  Variables are ``x1, x2, x3``, the position ``x`` and the unit
normal ``nu``; vectors are written ``[a, b, c]``.  Builtins::

    sin cos tan exp log sqrt tanh abs      (elementwise)
    dot(a, b)  cross(a, b)  norm(a)  P(a)  (P projects onto the tangent plane)

Example: ``P(cross([0, 0, 1], x)) + 0.5 * P([0, 0, x3])``.
"""
from __future__ import annotations

import ast
import math
from typing import Callable

import numpy as np


class ExpressionError(ValueError):
    pass


_UNARY = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
          "sqrt": np.sqrt, "tanh": np.tanh, "abs": np.abs}
_CALLS = set(_UNARY) | {"dot", "cross", "norm", "P"}
_NAMES = {"x1", "x2", "x3", "x", "nu", "pi", "e"}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
           ast.Div: np.divide, ast.Pow: np.power}


def _check(node, uses: set) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body, uses)
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            raise ExpressionError(f"unsupported constant {node.value!r}")
    elif isinstance(node, ast.Name):
        if node.id not in _NAMES:
            raise ExpressionError(f"unknown name {node.id!r}")
        uses.add(node.id)
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ExpressionError(f"unsupported operator {type(node.op).__name__}")
        _check(node.left, uses)
        _check(node.right, uses)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            raise ExpressionError("unsupported unary operator")
        _check(node.operand, uses)
    elif isinstance(node, ast.List):
        if len(node.elts) != 3:
            raise ExpressionError("vectors need exactly three components")
        for e in node.elts:
            _check(e, uses)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _CALLS:
            raise ExpressionError(f"unknown function in {ast.unparse(node)!r}")
        if node.keywords:
            raise ExpressionError("keyword arguments are not allowed")
        nargs = 2 if node.func.id in ("dot", "cross") else 1
        if len(node.args) != nargs:
            raise ExpressionError(f"{node.func.id} takes {nargs} argument(s)")
        if node.func.id == "P":
            uses.add("nu")
        for a in node.args:
            _check(a, uses)
    else:
        raise ExpressionError(f"unsupported syntax: {type(node).__name__}")


class Expression:
    """Compiled expression; calling it on points (n, 3) returns (n,) or (n, 3)."""

    def __init__(self, text: str, normal: Callable | None = None):
        self.text = text
        try:
            self.tree = ast.parse(text.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
        self.uses: set = set()
        _check(self.tree, self.uses)
        if "nu" in self.uses and normal is None:
            raise ExpressionError("nu and P() need an analytic surface")
        self.normal = normal

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        env = {"x": pts, "x1": pts[:, 0], "x2": pts[:, 1], "x3": pts[:, 2],
               "pi": math.pi, "e": math.e}
        if "nu" in self.uses:
            env["nu"] = self.normal(pts)
        out = np.asarray(self._eval(self.tree.body, env), dtype=float)
        n = len(pts)
        if out.ndim == 0:
            return np.full(n, float(out))
        if out.shape == (3,):
            return np.broadcast_to(out, (n, 3)).copy()
        return out

    def is_vector(self) -> bool:
        return self(np.array([[0.3, -0.2, 0.9]])).ndim == 2

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.BinOp):
            a, b = self._eval(node.left, env), self._eval(node.right, env)
            a, b = _align(a, b)
            return _BINOPS[type(node.op)](a, b)
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.List):
            n = len(env["x"])
            comps = [np.broadcast_to(np.asarray(self._eval(e, env), dtype=float), (n,)) for e in node.elts]
            return np.stack(comps, axis=1)
        name = node.func.id
        args = [self._eval(a, env) for a in node.args]
        if name in _UNARY:
            return _UNARY[name](args[0])
        if name == "dot":
            return np.sum(_vec(args[0]) * _vec(args[1]), axis=-1)
        if name == "cross":
            return np.cross(_vec(args[0]), _vec(args[1]))
        if name == "norm":
            return np.linalg.norm(_vec(args[0]), axis=-1)
        v = _vec(args[0])
        nu = env["nu"]
        return v - np.sum(v * nu, axis=-1, keepdims=True) * nu


def _vec(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0 or a.shape[-1] != 3 or a.ndim > 2:
        raise ExpressionError("expected a vector argument")
    return a


def _align(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    # scalar fields (n,) against vector fields (n, 3)
    if a.ndim == 1 and b.ndim == 2:
        a = a[:, None]
    elif b.ndim == 1 and a.ndim == 2:
        b = b[:, None]
    return a, b


def compile_expression(text: str, surface=None) -> Expression:
    normal = None
    if surface is not None and getattr(surface, "exact", False):
        normal = surface.normal
    return Expression(text, normal)

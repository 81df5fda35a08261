"""Workload DSL: one statement per line, ``#`` starts a comment.

Top level::

    name fig1
    page_shift 12
    var x = 0 @ 0          # shared integer on page 0 (page defaults to a fresh one)
    mutex m
    sem s = 1
    barrier b 3            # arity
    cond c
    thread 1               # body runs until the next ``thread`` line
    thread 3 spawned       # starts only when another thread runs ``spawn 3``

Thread bodies::

    local v = <expr>       # thread-private, never traced
    x = <expr>             # store (loads for every shared name read)
    write x = <expr>       # same as above
    read x                 # load only
    if <expr> / else / end
    loop <expr> / end      # fixed trip count evaluated once
    lock m | unlock m | sem_wait s | sem_post s | barrier b
    cond_wait c m | cond_signal c | cond_broadcast c
    spawn 3 | join 3
    map_input <name> <var> [<var> ...]

Expressions use Python syntax restricted to integers, ``+ - * / %``,
comparisons, ``and``/``or``/``not`` and names. ``/`` and ``%`` truncate
toward zero like C.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field
from pathlib import Path

from ..types import DEFAULT_PAGE_SHIFT

SYNC_PRIMS = {
    # name -> (object kinds of the arguments, number of acquire/release steps)
    "lock": (("mutex",), 1),
    "unlock": (("mutex",), 1),
    "sem_wait": (("semaphore",), 1),
    "sem_post": (("semaphore",), 1),
    "barrier": (("barrier",), 2),
    "cond_wait": (("condvar", "mutex"), 3),
    "cond_signal": (("condvar",), 1),
    "cond_broadcast": (("condvar",), 1),
    "spawn": (("thread",), 1),
    "join": (("thread",), 1),
}


class DslError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass(frozen=True)
class Expr:
    text: str
    tree: ast.expr

    def names(self) -> list[str]:
        return [n.id for n in ast.walk(self.tree) if isinstance(n, ast.Name)]


@dataclass(frozen=True)
class Instr:
    op: str  # assign, local, read, if, jump, loop_init, loop_test, sync, exit, map_input
    line: int
    target: str | None = None
    expr: Expr | None = None
    jump: int | None = None
    prim: str | None = None
    args: tuple = ()

    @property
    def label(self) -> str:
        return f"L{self.line}"


@dataclass
class ThreadCode:
    tid: int
    spawned: bool
    code: list[Instr] = field(default_factory=list)


@dataclass
class Program:
    name: str
    page_shift: int
    globals: dict[str, tuple[int, int]]  # name -> (initial value, page)
    objects: dict[str, tuple[str, int]]  # name -> (kind, parameter)
    threads: dict[int, ThreadCode]

    @property
    def t(self) -> int:
        return max(self.threads, default=0)

    def page(self, var: str) -> int:
        return self.globals[var][1]

    def handle(self, tid: int) -> str:
        return f"h{tid}"


_ALLOWED = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Compare, ast.BoolOp, ast.Name, ast.Load,
    ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.FloorDiv, ast.Mod, ast.USub,
    ast.UAdd, ast.Not, ast.Eq, ast.NotEq, ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.And, ast.Or,
)


def parse_expr(text: str, line: int | None = None) -> Expr:
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise DslError(f"bad expression {text.strip()!r}: {exc.msg}", line) from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise DslError(f"unsupported syntax {type(node).__name__} in {text.strip()!r}", line)
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, bool)):
            raise DslError(f"only integer constants allowed in {text.strip()!r}", line)
    return Expr(text.strip(), tree.body)


def _cdiv(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("division by zero")
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: _cdiv,
    ast.FloorDiv: _cdiv,
    ast.Mod: lambda a, b: a - b * _cdiv(a, b),
}
_CMPS = {
    ast.Eq: lambda a, b: a == b,
    ast.NotEq: lambda a, b: a != b,
    ast.Lt: lambda a, b: a < b,
    ast.LtE: lambda a, b: a <= b,
    ast.Gt: lambda a, b: a > b,
    ast.GtE: lambda a, b: a >= b,
}


def evaluate(node: ast.expr, lookup) -> int:
    """Evaluate left to right; ``lookup(name)`` is called once per name occurrence."""
    if isinstance(node, ast.Constant):
        return int(node.value)
    if isinstance(node, ast.Name):
        return lookup(node.id)
    if isinstance(node, ast.BinOp):
        left = evaluate(node.left, lookup)
        return _BINOPS[type(node.op)](left, evaluate(node.right, lookup))
    if isinstance(node, ast.UnaryOp):
        v = evaluate(node.operand, lookup)
        if isinstance(node.op, ast.Not):
            return int(not v)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Compare):
        left = evaluate(node.left, lookup)
        for op, comp in zip(node.ops, node.comparators):
            right = evaluate(comp, lookup)
            if not _CMPS[type(op)](left, right):
                return 0
            left = right
        return 1
    if isinstance(node, ast.BoolOp):
        is_and = isinstance(node.op, ast.And)
        v = 0
        for operand in node.values:
            v = evaluate(operand, lookup)
            if bool(v) != is_and:
                return int(bool(v))
        return int(bool(v))
    raise TypeError(f"unexpected node {type(node).__name__}")


_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_VAR_DECL = re.compile(rf"^var\s+({_IDENT})\s*=\s*(-?\d+)(?:\s*@\s*(\d+))?$")
_ASSIGN = re.compile(rf"^(?:write\s+)?({_IDENT})\s*=\s*(.+)$")
_LOCAL = re.compile(rf"^local\s+({_IDENT})\s*=\s*(.+)$")


class _Parser:
    def __init__(self, text: str, default_name: str):
        self.name = default_name
        self.page_shift = DEFAULT_PAGE_SHIFT
        self.globals: dict[str, tuple[int, int]] = {}
        self.objects: dict[str, tuple[str, int]] = {}
        self.threads: dict[int, ThreadCode] = {}
        self.lines = text.splitlines()

    def parse(self) -> Program:
        cur: ThreadCode | None = None
        blocks: list[tuple[str, int, int]] = []  # (kind, instr index, line)
        locals_: set[str] = set()
        for lineno, raw in enumerate(self.lines, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            word, _, rest = text.partition(" ")
            rest = rest.strip()
            if word == "thread":
                self._close_thread(cur, blocks)
                cur, locals_ = self._thread(rest, lineno), set()
                continue
            if cur is None:
                self._top(word, rest, text, lineno)
                continue
            self._stmt(cur, word, rest, text, lineno, blocks, locals_)
        self._close_thread(cur, blocks)
        self._check_spawns()
        return Program(self.name, self.page_shift, self.globals, self.objects, dict(sorted(self.threads.items())))

    def _top(self, word, rest, text, lineno):
        if word == "name":
            self.name = rest
        elif word == "page_shift":
            self.page_shift = self._int(rest, lineno)
        elif word == "var":
            m = _VAR_DECL.match(text)
            if not m:
                raise DslError(f"bad var declaration {text!r}", lineno)
            var = m.group(1)
            self._fresh(var, lineno)
            page = int(m.group(3)) if m.group(3) is not None else self._next_page()
            self.globals[var] = (int(m.group(2)), page)
        elif word == "mutex":
            self._object(rest, "mutex", 0, lineno)
        elif word == "cond":
            self._object(rest, "condvar", 0, lineno)
        elif word == "sem":
            m = re.match(rf"^({_IDENT})\s*=\s*(\d+)$", rest)
            if not m:
                raise DslError(f"bad semaphore declaration {text!r}", lineno)
            self._object(m.group(1), "semaphore", int(m.group(2)), lineno)
        elif word == "barrier":
            parts = rest.split()
            if len(parts) != 2:
                raise DslError("barrier declaration needs a name and an arity", lineno)
            arity = self._int(parts[1], lineno)
            if arity < 1:
                raise DslError("barrier arity must be positive", lineno)
            self._object(parts[0], "barrier", arity, lineno)
        else:
            raise DslError(f"unknown declaration {word!r}", lineno)

    def _stmt(self, cur, word, rest, text, lineno, blocks, locals_):
        code = cur.code
        if word == "if":
            blocks.append(("if", len(code), lineno))
            code.append(Instr("if", lineno, expr=self._expr(rest, lineno, locals_)))
        elif word == "else":
            if not blocks or blocks[-1][0] != "if":
                raise DslError("else without if", lineno)
            _, at, ln = blocks.pop()
            blocks.append(("else", len(code), lineno))
            code.append(Instr("jump", lineno))
            code[at] = _with_jump(code[at], len(code))
        elif word == "loop":
            slot = f"__loop{lineno}"
            code.append(Instr("loop_init", lineno, target=slot, expr=self._expr(rest, lineno, locals_)))
            blocks.append(("loop", len(code), lineno))
            code.append(Instr("loop_test", lineno, target=slot))
        elif word == "end":
            if not blocks:
                raise DslError("end without open block", lineno)
            kind, at, _ = blocks.pop()
            if kind == "loop":
                code.append(Instr("jump", lineno, jump=at))
            code[at] = _with_jump(code[at], len(code))
        elif word == "local":
            m = _LOCAL.match(text)
            if not m:
                raise DslError(f"bad local declaration {text!r}", lineno)
            var = m.group(1)
            if var in self.globals:
                raise DslError(f"local {var!r} shadows a shared variable", lineno)
            code.append(Instr("local", lineno, target=var, expr=self._expr(m.group(2), lineno, locals_)))
            locals_.add(var)
        elif word == "read":
            self._shared(rest, lineno)
            code.append(Instr("read", lineno, target=rest))
        elif word == "map_input":
            parts = rest.split()
            if len(parts) < 2:
                raise DslError("map_input needs an input name and at least one variable", lineno)
            for v in parts[1:]:
                self._shared(v, lineno)
            code.append(Instr("map_input", lineno, target=parts[0], args=tuple(parts[1:])))
        elif word in SYNC_PRIMS:
            code.append(self._sync(word, rest.split(), lineno))
        else:
            m = _ASSIGN.match(text)
            if not m:
                raise DslError(f"unknown statement {text!r}", lineno)
            var = m.group(1)
            if var not in self.globals and var not in locals_:
                raise DslError(f"assignment to undeclared variable {var!r}", lineno)
            code.append(Instr("assign", lineno, target=var, expr=self._expr(m.group(2), lineno, locals_)))

    def _sync(self, prim, args, lineno) -> Instr:
        kinds, _ = SYNC_PRIMS[prim]
        if len(args) != len(kinds):
            raise DslError(f"{prim} takes {len(kinds)} argument(s)", lineno)
        checked = []
        for a, kind in zip(args, kinds):
            if kind == "thread":
                checked.append(self._int(a, lineno))
                continue
            found = self.objects.get(a)
            if found is None:
                raise DslError(f"undeclared {kind} {a!r}", lineno)
            if found[0] != kind:
                raise DslError(f"{a!r} is a {found[0]}, {prim} needs a {kind}", lineno)
            checked.append(a)
        return Instr("sync", lineno, prim=prim, args=tuple(checked))

    def _thread(self, rest, lineno) -> ThreadCode:
        parts = rest.split()
        if not parts or len(parts) > 2 or (len(parts) == 2 and parts[1] != "spawned"):
            raise DslError("expected 'thread <id> [spawned]'", lineno)
        tid = self._int(parts[0], lineno)
        if tid < 1:
            raise DslError("thread ids start at 1", lineno)
        if tid in self.threads:
            raise DslError(f"thread {tid} declared twice", lineno)
        tc = ThreadCode(tid, len(parts) == 2)
        self.threads[tid] = tc
        return tc

    def _close_thread(self, cur, blocks):
        if blocks:
            raise DslError(f"unterminated {blocks[-1][0]} block", blocks[-1][2])
        if cur is not None:
            cur.code.append(Instr("exit" if cur.spawned else "end", len(self.lines) + 1))

    def _check_spawns(self):
        tids = sorted(self.threads)
        if tids != list(range(1, len(tids) + 1)):
            raise DslError(f"thread ids must be dense from 1, got {tids}")
        targets = []
        for tc in self.threads.values():
            for ins in tc.code:
                if ins.op == "sync" and ins.prim in ("spawn", "join"):
                    child = self.threads.get(ins.args[0])
                    if child is None or not child.spawned:
                        raise DslError(f"{ins.prim} of thread {ins.args[0]} which is not declared 'spawned'", ins.line)
                    if ins.prim == "spawn":
                        targets.append(ins.args[0])
        if len(targets) != len(set(targets)):
            raise DslError("a thread is spawned by more than one statement")

    def _expr(self, text, lineno, locals_) -> Expr:
        e = parse_expr(text, lineno)
        for n in e.names():
            if n not in self.globals and n not in locals_:
                raise DslError(f"undeclared name {n!r}", lineno)
        return e

    def _shared(self, var, lineno):
        if var not in self.globals:
            raise DslError(f"{var!r} is not a shared variable", lineno)

    def _fresh(self, name, lineno):
        if name in self.globals or name in self.objects:
            raise DslError(f"{name!r} declared twice", lineno)

    def _object(self, name, kind, param, lineno):
        if not re.fullmatch(_IDENT, name or ""):
            raise DslError(f"bad {kind} name {name!r}", lineno)
        self._fresh(name, lineno)
        self.objects[name] = (kind, param)

    def _next_page(self) -> int:
        return max((p for _, p in self.globals.values()), default=-1) + 1

    @staticmethod
    def _int(text, lineno) -> int:
        try:
            return int(text)
        except ValueError:
            raise DslError(f"expected an integer, got {text!r}", lineno) from None


def _with_jump(ins: Instr, target: int) -> Instr:
    return Instr(ins.op, ins.line, ins.target, ins.expr, target, ins.prim, ins.args)


def parse_program(text: str, name: str = "program") -> Program:
    return _Parser(text, name).parse()


def load_program(path: str | Path) -> Program:
    path = Path(path)
    return parse_program(path.read_text(encoding="utf-8"), path.stem)

"""Sequentially consistent reference interpreter.

Used to check the release-consistent machine: each thread's code up to a
sync step runs atomically against one global store, in the given sync
order, and whatever follows a thread's last sync step runs at the end in
thread-id order. No private views, diffs or clocks are involved.
"""

from __future__ import annotations

from .dsl import SYNC_PRIMS, Program, evaluate


def sequential_replay(program: Program, sync_order) -> dict[str, int]:
    mem = {v: init for v, (init, _) in program.globals.items()}
    pcs = {t: 0 for t in program.threads}
    phases = {t: 0 for t in program.threads}
    local = {t: {} for t in program.threads}

    def value(tid, expr):
        env = local[tid]
        return evaluate(expr.tree, lambda n: env[n] if n in env else mem[n])

    def advance(tid):
        """Run local code; stop at a sync step or the end of the thread."""
        code = program.threads[tid].code
        env = local[tid]
        while True:
            ins = code[pcs[tid]]
            op = ins.op
            if op in ("sync", "exit", "end"):
                return ins
            nxt = pcs[tid] + 1
            if op == "assign":
                v = value(tid, ins.expr)
                if ins.target in env:
                    env[ins.target] = v
                else:
                    mem[ins.target] = v
            elif op in ("local", "loop_init"):
                env[ins.target] = value(tid, ins.expr)
            elif op == "if":
                if not value(tid, ins.expr):
                    nxt = ins.jump
            elif op == "jump":
                nxt = ins.jump
            elif op == "loop_test":
                if env[ins.target] <= 0:
                    nxt = ins.jump
                else:
                    env[ins.target] -= 1
            pcs[tid] = nxt

    for tid in sync_order:
        ins = advance(tid)
        if ins.op == "end":
            raise ValueError(f"thread {tid} has no sync step left")
        steps = 1 if ins.op == "exit" else SYNC_PRIMS[ins.prim][1]
        phases[tid] += 1
        if phases[tid] == steps:
            phases[tid] = 0
            pcs[tid] += 1
    for tid in sorted(program.threads):
        if pcs[tid] < len(program.threads[tid].code):
            advance(tid)
    return mem

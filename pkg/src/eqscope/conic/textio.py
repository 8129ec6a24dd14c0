"""Deterministic text dump of conic programs, used for golden-file tests.

One record per line::

    program <name>
    var <id> <name> <kind> <rows> <cols> <offset>
    lin <rel> <rhs> [<tag>] | <expr>
    soc [<tag>] | <t> ; <x0> ; <x1> ...
    psd <size> [<tag>] | <m00> ; <m01> ; ...   (row-major)
    obj <sense> | <linear> ; <w> <r> ; ...

An expression is ``<const> <slot>:<coef> ...`` with slots ascending and
floats written with ``repr`` so the dump round-trips exactly.
"""

from __future__ import annotations

from .ir import (Affine, ConicProgram, LinearConstraint, Objective, PsdConstraint,
                 Relation, Sense, SocConstraint, VariableHandle, VarKind)


def _fmt_expr(e: Affine) -> str:
    parts = [repr(float(e.const))]
    for k in sorted(e.terms):
        v = e.terms[k]
        if v != 0.0:
            parts.append(f"{k}:{float(v)!r}")
    return " ".join(parts)


def _parse_expr(s: str) -> Affine:
    toks = s.split()
    terms = {}
    for t in toks[1:]:
        k, v = t.split(":")
        terms[int(k)] = float(v)
    return Affine(terms, float(toks[0]))


def _tag(tag: str) -> str:
    return f" [{tag}]" if tag else ""


def _split_head(head: str) -> tuple[list[str], str]:
    tag = ""
    if "[" in head:
        head, rest = head.split("[", 1)
        tag = rest.rsplit("]", 1)[0]
    return head.split(), tag


def dumps(p: ConicProgram) -> str:
    lines = [f"program {p.name}"]
    for h in p.variables:
        lines.append(f"var {h.id} {h.name} {h.kind.value} {h.rows} {h.cols} {h.offset}")
    for c in p.linear:
        lines.append(f"lin {c.relation.value} {float(c.rhs)!r}{_tag(c.tag)} | {_fmt_expr(c.expr)}")
    for c in p.soc:
        body = " ; ".join(_fmt_expr(e) for e in [c.t] + c.x)
        lines.append(f"soc{_tag(c.tag)} | {body}")
    for c in p.psd:
        body = " ; ".join(_fmt_expr(e) for row in c.matrix for e in row)
        lines.append(f"psd {c.size}{_tag(c.tag)} | {body}")
    obj = p.objective
    body = " ; ".join([_fmt_expr(obj.linear)]
                      + [f"{w!r} {_fmt_expr(r)}" for w, r in obj.squares])
    lines.append(f"obj {obj.sense.value} | {body}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> ConicProgram:
    p = ConicProgram()
    for raw in text.splitlines():
        if not raw.strip():
            continue
        head, _, body = raw.partition(" | ")
        fields, tag = _split_head(head)
        kind = fields[0]
        if kind == "program":
            p.name = " ".join(fields[1:])
        elif kind == "var":
            vid, name, vk, rows, cols, off = fields[1:7]
            h = VariableHandle(int(vid), name, VarKind(vk), int(rows), int(cols), int(off))
            p.variables.append(h)
            p.n = max(p.n, h.offset + h.size)
        elif kind == "lin":
            p.linear.append(LinearConstraint(_parse_expr(body), Relation(fields[1]),
                                             float(fields[2]), tag))
        elif kind == "soc":
            exprs = [_parse_expr(s) for s in body.split(" ; ")]
            p.soc.append(SocConstraint(exprs[0], exprs[1:], tag))
        elif kind == "psd":
            size = int(fields[1])
            exprs = [_parse_expr(s) for s in body.split(" ; ")]
            rows = [exprs[i * size:(i + 1) * size] for i in range(size)]
            p.psd.append(PsdConstraint(rows, tag))
        elif kind == "obj":
            chunks = body.split(" ; ")
            squares = []
            for ch in chunks[1:]:
                w, rest = ch.split(" ", 1)
                squares.append((float(w), _parse_expr(rest)))
            p.objective = Objective(Sense(fields[1]), _parse_expr(chunks[0]), squares)
        else:
            raise ValueError(f"unknown record {kind!r}")
    return p

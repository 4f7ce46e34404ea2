"""Refinement of every handshake template and how many of its one-edge
commit mutants the check rejects."""

from reohandshake import automata as am
from reohandshake import handshake as hs
from reohandshake import verify as v


def main():
    print(f"{'template':<28}{'states':>7}{'edges':>7}  refines  mutants caught")
    for kind, variant in v.primitive_cases():
        t = hs.handshake_template(kind, variant=variant)
        ok = v.check_primitive_refinement(kind, variant).passed
        caught = total = 0
        for edge, m in v.mutants(t.taca):
            if any(a.kind in (am.BLOCK, am.UNBLOCK) for a in edge.label):
                total += 1
                caught += not v.check_primitive_refinement(kind, variant, template=m).passed
        name = kind + (f"/{variant}" if variant else "")
        print(f"{name:<28}{len(t.taca.states):>7}{len(t.taca.transitions):>7}  "
              f"{'yes' if ok else 'NO':<8} {caught}/{total}")


if __name__ == "__main__":
    main()

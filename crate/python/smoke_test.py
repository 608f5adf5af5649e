"""Smoke test for the `locco` extension module.

Build and install first, e.g.

    cd crates/py && maturin build -o ../../target/wheels
    pip install ../../target/wheels/locco-*.whl

then run `python python/smoke_test.py`.
"""

import math
import os
import tempfile

import locco


def main():
    form = locco.Form.parse("(lambda $0 e (loc:t ap0 $0))", "sexpr")
    assert form.parts() == ["(lambda $0 e (loc:t ap0 $0))", "(loc:t ap0 $0)"], form.parts()
    assert form.linearize() == "<SE> lambda $0 e <SE> loc:t ap0 $0 </SE> </SE>"

    triples = locco.Form.parse("<S> Aarhus Airport <R> city served <O> Aarhus")
    assert triples.kind == "triples" and len(triples.parts()) == 1

    prior = locco.Prior(1.0)
    prior.observe(locco.Form.parse("<S> a <R> r <O> b <S> c <R> r <O> d"))
    prior.observe(locco.Form.parse("<S> a <R> r <O> b"))
    assert prior.total == 5.0 and len(prior) == 2
    lp = prior.logprob(locco.Form.parse("<S> a <R> r <O> b"))
    assert abs(lp - math.log(3 / 5)) < 1e-12

    assert locco.normalize([2.0, 2.0]) == [0.0, 0.0]
    assert locco.clipped_weight(1.5, 1.0, 0.2) == 1.2
    assert locco.group_weights([-1.0, -3.0], [-1.0, -2.0], [-1.0, -2.0], "unit") == [1.0, 1.0]

    gold = [triples, form]
    assert locco.exact_match([triples, None], gold) == 0.5
    f1, precision, recall = locco.triple_f1([triples, None], gold)
    assert precision == 1.0 and recall == 0.5

    sup, unl, val, test = locco.toy_splits(5, 10, 3, 3, seed=1)
    assert len(sup) == 5 and len(unl) == 10
    texts = [t for t, _ in sup] + [z for _, z in sup] + unl
    model = locco.Model(texts, embed=8, hidden=8, max_len=16, seed=2)
    x, z = sup[0]
    before = model.logprob(x, z)
    model.weighted_update([(x, z, 1.0)], 0.05)
    assert model.logprob(x, z) > before

    draws = model.sample(x, n=4, seed=3)
    assert draws == model.sample(x, n=4, seed=3)
    assert all(logq <= 0.0 for _, logq, _ in draws)
    assert model.greedy(x) == model.sample(x, n=1, top_p=1e-12)[0]

    frozen = model.clone_frozen()
    try:
        frozen.weighted_update([(x, z, 1.0)], 0.05)
    except ValueError:
        pass
    else:
        raise AssertionError("frozen model accepted an update")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.ckpt")
        model.save(path)
        assert locco.Model.load(path).fingerprint() == model.fingerprint()

    print("locco smoke test passed")


if __name__ == "__main__":
    main()

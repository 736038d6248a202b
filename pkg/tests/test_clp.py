import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clane.aggnorm import NormalizedVector, normalize_vector, to_graded
from clane.clp import (
    FloatPrototypeStore,
    Outcome,
    PrototypeStore,
    clp_float_reference_step,
    infer,
    learn_step,
    quantize_prototype,
)

D = 64


def unit(i, d=D):
    x = np.zeros(d, dtype=np.int64)
    x[i] = 1
    return normalize_vector(x)


def nv(real):
    return normalize_vector(to_graded(np.asarray(real)))


class TestInfer:
    def test_empty_store(self):
        pred = infer(PrototypeStore(D), unit(0))
        assert pred.winner is None and pred.label is None and pred.similarity is None

    def test_orthonormal(self):
        store = PrototypeStore(D)
        learn_step(store, unit(0), 7)
        learn_step(store, unit(1), 9)
        pred = infer(store, unit(0))
        assert pred.label == 7
        assert pred.similarity == pytest.approx(1.0, abs=2**-7)

    def test_tie_goes_to_lowest_index(self):
        store = PrototypeStore(D)
        store.weights = np.array([[0, 5] + [0] * (D - 2), [0, 5] + [0] * (D - 2)], dtype=np.int8)
        store.labels, store.birth_steps = [3, 4], [0, 1]
        assert infer(store, unit(1)).winner == 0

    def test_matches_float_argmax(self):
        rng = np.random.default_rng(0)
        protos = rng.normal(size=(20, 256))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        store = PrototypeStore(256)
        store.weights = np.stack([quantize_prototype(nv(p)) for p in protos])
        store.labels, store.birth_steps = list(range(20)), list(range(20))
        queries = rng.normal(size=(100, 256))
        hits = sum(infer(store, nv(q)).winner == int(np.argmax(protos @ q)) for q in queries)
        assert hits >= 99

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            infer(PrototypeStore(D), unit(0, D + 1))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 50))
    def test_argmax_scale_invariant(self, seed, k):
        rng = np.random.default_rng(seed)
        store = PrototypeStore(D)
        store.weights = rng.integers(-127, 128, (6, D)).astype(np.int8)
        store.labels, store.birth_steps = list(range(6)), list(range(6))
        x = NormalizedVector(rng.integers(-1000, 1000, D).astype(np.int32), 15)
        pred = infer(store, x)
        assert int(np.argmax(pred.scores * k)) == pred.winner


class TestLearnStep:
    def test_empty_store_allocates(self):
        store, _, ev = learn_step(PrototypeStore(D), unit(0), 1)
        assert (len(store), ev.outcome, ev.allocated) == (1, Outcome.NOVEL_ALLOCATED, 0)
        assert store.labels == [1] and store.birth_steps == [0]

    def test_correct_is_noop(self):
        store = PrototypeStore(D)
        learn_step(store, unit(0), 1)
        before = store.weights.copy()
        _, _, ev = learn_step(store, unit(0), 1)
        assert ev.outcome == Outcome.CORRECT and ev.allocated is None
        np.testing.assert_array_equal(store.weights, before)

    def test_orthogonal_is_novel(self):
        store = PrototypeStore(D)
        learn_step(store, unit(0), 1)
        _, _, ev = learn_step(store, unit(1), 2)
        assert ev.outcome == Outcome.NOVEL_ALLOCATED
        assert len(store) == 2

    def test_familiar_wrong_label_is_error(self):
        store = PrototypeStore(D)
        learn_step(store, unit(0), 1)
        _, _, ev = learn_step(store, unit(0), 2)
        assert ev.outcome == Outcome.ERROR_ALLOCATED
        assert store.labels == [1, 2]

    def test_novelty_checked_before_label(self):
        # similarity 0.2 < 0.3 with the right label still allocates as novel
        store = PrototypeStore(D)
        learn_step(store, nv([1.0] + [0.0] * (D - 1)), 1)
        x = np.zeros(D)
        x[0], x[1] = 0.2, np.sqrt(1 - 0.04)
        _, pred, ev = learn_step(store, nv(x), 1)
        assert pred.label == 1
        assert ev.outcome == Outcome.NOVEL_ALLOCATED

    def test_capacity_full(self):
        store = PrototypeStore(D, capacity=2)
        for i in range(2):
            learn_step(store, unit(i), i)
        before = store.weights.copy()
        _, _, ev = learn_step(store, unit(5), 5)
        assert ev.outcome == Outcome.ERROR_CAPACITY_FULL and ev.allocated is None
        assert len(store) == 2
        np.testing.assert_array_equal(store.weights, before)

    def test_prototype_norm_after_imprint(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            w = quantize_prototype(nv(rng.normal(size=D))) / 127
            assert abs(np.linalg.norm(w) - 1) <= 2**-4

    def test_novelty_threshold_range(self):
        with pytest.raises(ValueError):
            PrototypeStore(D, novelty_threshold=1.0)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        xs = [nv(rng.normal(size=D)) for _ in range(60)]
        labels = rng.integers(0, 5, 60)
        a, b = PrototypeStore(D), PrototypeStore(D)
        for x, y in zip(xs, labels):
            learn_step(a, x, int(y))
            learn_step(b, x, int(y))
        assert a.dumps() == b.dumps()


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(3)
        store = PrototypeStore(D)
        for _ in range(30):
            learn_step(store, nv(rng.normal(size=D)), int(rng.integers(0, 4)))
        back = PrototypeStore.loads(store.dumps())
        np.testing.assert_array_equal(back.weights, store.weights)
        assert back.labels == store.labels and back.birth_steps == store.birth_steps
        assert back.dumps() == store.dumps()

    def test_layout(self):
        store = PrototypeStore(4)
        learn_step(store, unit(2, 4), 9)
        data = store.dumps()
        assert data[:4] == b"CLPS"
        assert len(data) == 4 + 2 + 4 + 4 + (4 + 8 + 4)
        assert data[-4:] == bytes([0, 0, 127, 0])

    @pytest.mark.parametrize("mutate", [lambda d: b"XXXX" + d[4:], lambda d: d[:-1]])
    def test_corrupt(self, mutate):
        store = PrototypeStore(4)
        learn_step(store, unit(0, 4), 1)
        with pytest.raises(ValueError):
            PrototypeStore.loads(mutate(store.dumps()))


class TestFloatReference:
    def test_zero_lr_matches_allocation_policy(self):
        rng = np.random.default_rng(4)
        fstore, qstore = FloatPrototypeStore(D, lr=0.0), PrototypeStore(D)
        for _ in range(100):
            c = int(rng.integers(0, 4))
            x = np.eye(D)[c] + 0.05 * rng.normal(size=D)
            x /= np.linalg.norm(x)
            before = fstore.weights.copy()
            pred, ev = fstore.learn(x, c)
            _, qev = qstore.learn(nv(x), c)
            assert ev.outcome == qev.outcome
            if ev.outcome == Outcome.CORRECT:
                np.testing.assert_array_equal(fstore.weights, before)

    def test_fixed_point(self):
        store = FloatPrototypeStore(D, lr=0.5)
        x = np.eye(D)[0]
        clp_float_reference_step(store, x, 1)
        clp_float_reference_step(store, x, 1)
        np.testing.assert_array_equal(store.weights[0], x)

    def test_norm_drift_bounded(self):
        rng = np.random.default_rng(5)
        eta = 0.1
        for _ in range(500):
            w = rng.normal(size=D)
            w /= np.linalg.norm(w)
            x = w + rng.normal(size=D) * rng.uniform(0, 1)
            x /= np.linalg.norm(x)
            store = FloatPrototypeStore(D, novelty_threshold=0.01, lr=eta, weights=w[None].copy(), labels=[0])
            if store.infer(x).similarity < 0.01:
                continue
            clp_float_reference_step(store, x, 0)
            assert abs(np.linalg.norm(store.weights[0]) - 1) <= eta**2

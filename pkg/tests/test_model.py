import numpy as np
import pytest

from topolens import PersistenceDiagram, PersistencePoint
from topolens.errors import InvalidInputError
from topolens.model import (
    ArchitectureSpec,
    ModelParams,
    TrainConfig,
    adam_step,
    batch_triplet_loss,
    build_network,
    class_scores,
    classify,
    diagram_to_input,
    embed,
    fit_prototypes,
    load_model,
    sample_triplet,
    save_model,
    train_model,
    triplet_loss,
)
from topolens.neural import grad_check
from topolens.rng import stream
from topolens.vectorize import PersistenceImageSpec, WeightSpec
from topolens import io as tio


def tiny_arch(in_channels=1, hw=(16, 16)):
    return ArchitectureSpec(
        channels=(2, 2, 3, 3, 4, 4),
        strides=(1, 1, 2, 1, 2, 1),
        simam_sites=(3, 5, 6),
        embedding_dim=6,
        dropout_rate=0.5,
        in_channels=in_channels,
        input_hw=hw,
    )


def tiny_spec():
    return PersistenceImageSpec(
        resolution=(16, 16), extents=(0.0, 1.0, 0.0, 1.0), sigma=0.1,
        weight=WeightSpec("uniform"),
    )


def tiny_dataset(seed=0, per_class=6, n_noise=12):
    spec = tio.default_two_class_spec(seed=seed, per_class=per_class, n_noise=n_noise)
    return tio.synth_generate(spec)


# ------------------------------------------------------------- architecture


def test_default_arch_final_map_10x10():
    arch = ArchitectureSpec()
    assert arch.spatial_sizes() == [(40, 40), (40, 40), (20, 20), (20, 20), (10, 10), (10, 10)]
    assert arch.flat_dim() == 128 * 10 * 10


def test_build_network_tap_is_last_simam():
    net, tap = build_network(ArchitectureSpec(), seed=0)
    from topolens.neural import SimAM

    assert isinstance(net.layers[tap], SimAM)
    assert all(not isinstance(l, SimAM) for l in net.layers[tap + 1 :])


# ------------------------------------------------------------- triplet loss


def test_triplet_loss_quoted_formula_cases():
    eT = np.array([1.0, 0.0])
    eP = np.array([1.0, 0.0])
    eN = np.array([0.0, 1.0])
    assert triplet_loss(eT, eP, eN, 0.1, "squared_euclidean") == 0.0
    assert triplet_loss(
        np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 0.0]),
        0.1, "squared_euclidean",
    ) == pytest.approx(2.1)
    e = np.array([0.3, 0.4])
    assert triplet_loss(e, e, e, 0.1, "squared_euclidean") == pytest.approx(0.1)
    assert triplet_loss(e, e, e, 0.1, "cosine") == pytest.approx(0.1)


def test_triplet_loss_nonnegative_and_zero_iff_separated():
    rng = np.random.default_rng(0)
    for _ in range(50):
        eT, eP, eN = rng.normal(size=(3, 5))
        for mode in ("cosine", "squared_euclidean"):
            val = triplet_loss(eT, eP, eN, 0.1, mode)
            assert val >= 0.0
            ml, _, *_ = batch_triplet_loss(eT, eP, eN, 0.1, mode)
            dp = ml[0] == 0.0
            # zero iff d(T,N) - d(T,P) >= margin
            from topolens.model import _cosine_dist_and_grads, _sqeuclid_dist_and_grads

            f = _cosine_dist_and_grads if mode == "cosine" else _sqeuclid_dist_and_grads
            dtp = f(eT[None], eP[None])[0][0]
            dtn = f(eT[None], eN[None])[0][0]
            assert dp == (dtn - dtp >= 0.1)


def test_cosine_scale_invariance():
    rng = np.random.default_rng(1)
    eT, eP, eN = rng.normal(size=(3, 8))
    base = triplet_loss(eT, eP, eN, 0.1, "cosine")
    scaled = triplet_loss(3.7 * eT, 0.2 * eP, 11.0 * eN, 0.1, "cosine")
    assert scaled == pytest.approx(base, rel=1e-12)


def test_cosine_rejects_zero_vector():
    with pytest.raises(InvalidInputError):
        triplet_loss(np.zeros(4), np.ones(4), np.ones(4), 0.1, "cosine")


def test_triplet_gradients_match_fd():
    rng = np.random.default_rng(2)
    for mode in ("cosine", "squared_euclidean"):
        eT, eP, eN = rng.normal(size=(3, 6))
        _, _, gT, gP, gN = batch_triplet_loss(eT, eP, eN, 0.5, mode, reg_coeff=1e-3)
        h = 1e-6
        for vec, g in ((eT, gT), (eP, gP), (eN, gN)):
            for i in range(6):
                orig = vec[i]
                vec[i] = orig + h
                lp = triplet_loss(eT, eP, eN, 0.5, mode, reg_coeff=1e-3)
                vec[i] = orig - h
                lm = triplet_loss(eT, eP, eN, 0.5, mode, reg_coeff=1e-3)
                vec[i] = orig
                num = (lp - lm) / (2 * h)
                assert abs(num - g[0, i]) <= 1e-4 * max(1.0, abs(num))


# ----------------------------------------------------------------- sampling


def test_sample_triplet_constraints():
    data = [(f"item{i}", f"c{i % 2}") for i in range(10)]
    rng = stream(0, "test", 1)
    for _ in range(100):
        tr = sample_triplet(data, rng)
        ti = int(tr.target[4:])
        pi = int(tr.positive[4:])
        ni = int(tr.negative[4:])
        assert ti % 2 == pi % 2 != ni % 2
        assert ti != pi


def test_sample_triplet_fixed_seed_fixed_sequence():
    data = [(i, f"c{i % 2}") for i in range(8)]
    a = [sample_triplet(data, stream(5, "test", 0)).target for _ in range(1)]
    b = [sample_triplet(data, stream(5, "test", 0)).target for _ in range(1)]
    assert a == b


def test_sample_triplet_uniform_positives():
    # target class c0 members 0,2,4,6,8; given target, positives uniform
    data = [(i, f"c{i % 2}") for i in range(10)]
    rng = stream(1, "test", 2)
    counts = {}
    n = 10_000
    for _ in range(n):
        tr = sample_triplet(data, rng)
        counts[(tr.target, tr.positive)] = counts.get((tr.target, tr.positive), 0) + 1
    # each (target, positive) ordered pair among same-class distinct pairs:
    # 2 classes * 5 members * 4 positives = 40 equally likely pairs
    expect = n / 40
    sigma = (n * (1 / 40) * (39 / 40)) ** 0.5
    for c in counts.values():
        assert abs(c - expect) <= 3 * sigma


def test_sample_triplet_degenerate():
    with pytest.raises(InvalidInputError):
        sample_triplet([(1, "a"), (2, "a")], stream(0, "test", 3))
    with pytest.raises(InvalidInputError):
        sample_triplet([(1, "a"), (2, "a"), (3, "b")], stream(0, "test", 3))


# --------------------------------------------------------------------- adam


def test_adam_first_step_closed_form():
    p = {"w": np.zeros(1)}
    g = {"w": np.full(1, 0.5)}
    adam_step(p, g, {}, lr=0.001, t=1)
    assert p["w"][0] == pytest.approx(-0.001 * 0.5 / (0.5 + 1e-8), abs=1e-12)
    assert p["w"][0] == pytest.approx(-0.000999998, abs=1e-8)


def test_adam_zero_grad_no_move():
    p = {"w": np.array([1.5])}
    adam_step(p, {"w": np.zeros(1)}, {}, lr=0.1, t=1)
    assert p["w"][0] == 1.5


def test_adam_symmetry():
    p = {"w": np.zeros(2)}
    adam_step(p, {"w": np.array([0.3, 0.3])}, {}, lr=0.01, t=1)
    assert p["w"][0] == p["w"][1]


# ----------------------------------------------------------- embed & scores


def make_model(seed=0, dtype=np.float64):
    arch = tiny_arch()
    net, tap = build_network(arch, seed=seed, dtype=dtype)
    protos = np.eye(2, arch.embedding_dim)
    m = ModelParams(
        arch=arch,
        image_spec=tiny_spec(),
        classes=["a", "b"],
        network=net,
        prototypes=protos,
        tau=0.1,
    )
    m._tap_index = tap
    return m


def test_embed_shape_and_determinism():
    m = make_model()
    x = np.random.default_rng(3).random((1, 16, 16))
    e1 = embed(m, x)
    e2 = embed(m, x)
    assert e1.shape == (6,)
    assert np.array_equal(e1, e2)


def test_embed_zero_net_zero_vector():
    m = make_model
    m = make_model()
    for _, arr in m.network.param_items():
        arr[...] = 0.0
    e = embed(m, np.zeros((1, 16, 16)))
    assert not e.any()


def test_embed_spec_mismatch():
    m = make_model()
    with pytest.raises(Exception):
        embed(m, np.zeros((1, 8, 8)))


def test_class_scores_sum_to_one_and_uniform_on_ties():
    m = make_model()
    x = np.random.default_rng(4).random((1, 16, 16))
    s = class_scores(m, x)
    assert s.sum() == pytest.approx(1.0, abs=1e-12)
    # equal similarities: prototypes identical -> uniform
    m.prototypes = np.tile(m.prototypes[0], (2, 1))
    s = class_scores(m, x)
    assert s[0] == pytest.approx(s[1], abs=1e-12)


def test_prototype_mode_picks_matching_class():
    m = make_model()
    x = np.random.default_rng(5).random((1, 16, 16))
    e = embed(m, x)
    m.prototypes = np.stack([e / np.linalg.norm(e), -e / np.linalg.norm(e)])
    assert classify(m, x, mode="prototype") == "a"
    s = class_scores(m, x, tau=1e-3)
    assert int(np.argmax(s)) == 0 and s[0] > 0.999


def test_fit_prototypes():
    e = np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 4.0]])
    protos = fit_prototypes(e, ["a", "b", "b"], ["a", "b"])
    assert np.allclose(protos[0], [1.0, 0.0])
    assert np.allclose(protos[1], [0.0, 1.0])
    with pytest.raises(InvalidInputError):
        fit_prototypes(np.array([[1.0, 0], [-1.0, 0]]), ["a", "a"], ["a"])


# ------------------------------------------------- end-to-end gradient check


def test_end_to_end_triplet_gradcheck():
    arch = tiny_arch()
    net, _ = build_network(arch, seed=7, dtype=np.float64)
    rng = np.random.default_rng(8)
    for name, arr in net.param_items():
        if name.endswith(".b"):
            arr += rng.uniform(0.01, 0.05, size=arr.shape)
    x = rng.random((3, 1, 16, 16))  # rows: target, positive, negative

    def loss_fn(network, x_):
        emb = network.forward(x_, train=False)
        ml, tl, gT, gP, gN = batch_triplet_loss(
            emb[0], emb[1], emb[2], margin=0.5, mode="cosine", reg_coeff=1e-4
        )
        network.backward(np.concatenate([gT, gP, gN]))
        return float(tl[0])

    report = grad_check(net, loss_fn, x, h=1e-5, samples_per_tensor=8, seed=1)
    assert max(v["max_rel_err"] for v in report.values()) <= 1e-4
    assert all(v["checked"] > 0 for v in report.values())


# ----------------------------------------------------------------- training


def train_tiny(seed=0, epochs=4, patience=None):
    data = tiny_dataset(seed=1)
    cfg = TrainConfig(
        batch_size=6, epochs=epochs, seed=seed, patience=patience, dtype="float64"
    )
    return train_model(data, cfg, arch=tiny_arch(), image_spec=tiny_spec())


def test_train_history_length_and_progress():
    model, history = train_tiny(epochs=4)
    assert len(history["triplet"]) == 4
    assert len(history["total"]) == 4
    assert model.prototypes.shape == (2, 6)


def test_train_deterministic_model_bytes(tmp_path):
    m1, _ = train_tiny(seed=3, epochs=2)
    m2, _ = train_tiny(seed=3, epochs=2)
    p1, p2 = tmp_path / "m1.tlns", tmp_path / "m2.tlns"
    save_model(p1, m1)
    save_model(p2, m2)
    assert p1.read_bytes() == p2.read_bytes()
    m3, _ = train_tiny(seed=4, epochs=2)
    save_model(tmp_path / "m3.tlns", m3)
    assert (tmp_path / "m3.tlns").read_bytes() != p1.read_bytes()


def test_model_file_roundtrip(tmp_path):
    model, _ = train_tiny(epochs=2)
    path = tmp_path / "model.tlns"
    save_model(path, model)
    loaded = load_model(path)
    assert loaded.classes == model.classes
    assert np.array_equal(loaded.prototypes, model.prototypes)
    for (n1, a1), (n2, a2) in zip(
        model.network.param_items(), loaded.network.param_items()
    ):
        assert n1 == n2 and np.array_equal(a1, a2)
    x = np.random.default_rng(9).random((1, 16, 16))
    assert np.array_equal(embed(model, x), embed(loaded, x))
    assert loaded.image_spec.extents == model.image_spec.extents


def test_knn_classifies_training_member_as_own_label():
    model, _ = train_tiny(epochs=2)
    data = tiny_dataset(seed=1)
    d0, label0 = data[0]
    x = diagram_to_input(d0, model.image_spec, model.arch.in_channels)
    assert classify(model, x, mode="knn", k=1) == label0


def test_train_rejects_single_class():
    data = [(d, "same") for d, _ in tiny_dataset()]
    with pytest.raises(InvalidInputError):
        train_model(data, TrainConfig(epochs=1), arch=tiny_arch(), image_spec=tiny_spec())

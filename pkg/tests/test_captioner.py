import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from curionav import tensor as T
from curionav.captioner import (CaptionConfig, CaptionModel, Vocabulary, attention, beam_search, build_regions,
                                decode_step, default_vocabulary, generate_synthetic_dataset, greedy_decode, load_model,
                                save_model, teacher_forced_accuracy, template_caption, train_ce)
from curionav.captioner.data import EMPTY_KEEP, CaptionPair, caption_for, encode_pairs
from curionav.captioner.model import DecoderLayer, EncoderLayer, sinusoid_positions
from curionav.captioner.regions import FEATURE_DIM, MAX_REGIONS, RegionSet, ranked_categories, region_row
from curionav.captioner.train import batch_loss, noam_rate, split_pairs
from curionav.errors import CheckpointVersionError, ContractError, DependencyError, DimensionError
from curionav.tensor import Tensor
from curionav.world import CATEGORIES, AgentPose, Observation

SMALL = CaptionConfig(d=16, heads=2, layers=1, ff=32, epochs=6, batch=32, warmup=50, dataset_size=900)
VOCAB = default_vocabulary()


@pytest.fixture(scope="module")
def dataset():
    return generate_synthetic_dataset(range(4), 900, seed=0)


@pytest.fixture(scope="module")
def trained(dataset):
    train, held = split_pairs(dataset, 0.1)
    model = CaptionModel(len(VOCAB), SMALL)
    report = train_ce(model, train, VOCAB, heldout=held, seed=0)
    return model, report, held


def random_regions(rng, n):
    rows = [region_row(int(rng.integers(15)), float(rng.random()), float(rng.random()), float(rng.random()))
            for _ in range(n - 1)]
    rows.append(region_row(None, 0.3, 0.5, 0.5))
    return np.stack(rows)


# --- vocabulary ---------------------------------------------------------------


def test_vocabulary_contract(tmp_path):
    v = VOCAB
    assert v.tokens[:3] == ["<pad>", "<bos>", "<eos>"] and len(v) <= 256
    assert {v.links[c] for c in CATEGORIES} == set(range(15))
    assert v.decode(v.encode(["a", "room", "with", "a", "bed"]) + [v.eos, v.index["sofa"]]) == ["a", "room", "with", "a", "bed"]
    assert v.nouns_in(v.encode(["a", "room", "with", "a", "bed"])) == ["room", "bed"]
    with pytest.raises(ContractError):
        v.encode(["spaceship"])
    v.save(tmp_path / "v.tsv")
    back = Vocabulary.load(tmp_path / "v.tsv")
    assert back.tokens == v.tokens and back.nouns == v.nouns and back.links == v.links
    with pytest.raises(DependencyError):
        Vocabulary.load(tmp_path / "missing.tsv")
    (tmp_path / "bad.tsv").write_text("a\tmaybe\t\n")
    with pytest.raises(ContractError):
        Vocabulary.load(tmp_path / "bad.tsv")
    with pytest.raises(ContractError):
        Vocabulary(["<pad>", "<bos>", "<eos>", "x"], {"<pad>"}, {})


# --- regions and data ---------------------------------------------------------


def test_regions_from_observation():
    sem = np.zeros(64, np.int64)
    sem[10:20] = 4
    sem[40:42] = 7
    obs = Observation(np.zeros(64), np.full(64, 4.0), sem, [(4, 2, 10 / 64), (7, 5, 2 * 0.2 / 64)], 8.0)
    r = build_regions(obs)
    assert len(r) == 2 and r.categories == (2,)      # instance 7 falls under the minimum area
    assert r.features[0, 2] == 1.0 and r.features[-1, -1] == 1.0
    assert r.features[0, 15] == pytest.approx(10 / 64)
    assert r.features[0, 17] == pytest.approx(15 / 64)
    with pytest.raises(ContractError):
        RegionSet(np.zeros((0, FEATURE_DIM), np.float32), (), ())
    with pytest.raises(ContractError):
        RegionSet(np.zeros((MAX_REGIONS + 1, FEATURE_DIM), np.float32), (), ())


def test_template_captions():
    rng = np.random.default_rng(0)
    assert template_caption([], rng) == ("an", "empty", "room")
    bed = CATEGORIES.index("bed")
    assert "bed" in template_caption([bed], rng)
    words = template_caption([0, 1, 2, 3], np.random.default_rng(1))
    assert [w for w in words if w in CATEGORIES] == ["bed", "chair", "sofa"]


def test_dataset_sweep_has_no_oov(dataset):
    assert len(dataset) == 900
    lengths = []
    for p in dataset:
        ids = VOCAB.encode(p.words)
        lengths.append(len(ids))
        nouns = [w for w in p.words if w in CATEGORIES]
        assert nouns == [CATEGORIES[c] for c in ranked_categories(p.regions)[:3]]
    assert max(lengths) + 1 <= 20
    empty = sum(1 for p in dataset if not p.categories)
    assert 0 < empty < len(dataset) / 2


def test_dataset_is_deterministic():
    a = generate_synthetic_dataset([0], 50, seed=3)
    b = generate_synthetic_dataset([0], 50, seed=3)
    assert [p.words for p in a] == [p.words for p in b]
    assert all(np.array_equal(x.regions.features, y.regions.features) for x, y in zip(a, b))


def test_encode_pairs_layout(dataset):
    feats, mask, inputs, targets = encode_pairs(dataset[:5], VOCAB, 20)
    assert (inputs[:, 0] == VOCAB.bos).all()
    for i, p in enumerate(dataset[:5]):
        n = len(p.words)
        assert targets[i, n] == VOCAB.eos and (targets[i, n + 1:] == VOCAB.pad).all()
        assert np.array_equal(inputs[i, 1:n + 1], targets[i, :n])
        assert mask[i].sum() == len(p.regions)


# --- attention and layers -----------------------------------------------------


def test_attention_examples(rng):
    v = rng.standard_normal((1, 3))
    q = rng.standard_normal((2, 3))
    assert np.array_equal(attention(q, rng.standard_normal((1, 3)), v).data, np.repeat(v, 2, 0).astype(np.float32))
    k = np.tile(rng.standard_normal(3), (4, 1))
    vals = rng.standard_normal((4, 3))
    assert np.allclose(attention(q, k, vals).data, vals.mean(0), atol=1e-6)
    with pytest.raises(ContractError):
        attention(q, np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(DimensionError):
        attention(q, k, vals[:3])


def test_attention_matches_naive_loops(rng):
    q, k, v = rng.standard_normal((3, 5)), rng.standard_normal((4, 5)), rng.standard_normal((4, 2))
    ref = np.zeros((3, 2))
    for i in range(3):
        s = [math.fsum(q[i, j] * k[t, j] for j in range(5)) / math.sqrt(5) for t in range(4)]
        m = max(s)
        e = [math.exp(x - m) for x in s]
        z = math.fsum(e)
        for c in range(2):
            ref[i, c] = math.fsum(e[t] / z * v[t, c] for t in range(4))
    with T.precision(np.float64):
        assert np.allclose(attention(T.tensor(q), T.tensor(k), T.tensor(v)).data, ref, atol=1e-12)


def test_layer_gradients(rng):
    cfg = CaptionConfig(d=4, heads=2, layers=1, ff=6)
    with T.precision(np.float64):
        store = T.ParamStore()
        enc = EncoderLayer(store, "e", cfg, rng)
        dec = DecoderLayer(store, "d", cfg, rng)
        ident = lambda x: x
        proj = rng.standard_normal((1, 3, 4))
        mask = np.array([True, True, False])[None, None, None, :]
        causal = np.tril(np.ones((3, 3), bool))[None, None]
        mem = Tensor(rng.standard_normal((1, 3, 4)))
        f_enc = lambda x: T.tsum(T.mul(enc(x, mask, ident), proj))
        f_dec = lambda y: T.tsum(T.mul(dec(y, mem, causal, mask, ident), proj))
        assert T.grad_check(f_enc, rng.standard_normal((1, 3, 4))) < 1e-4
        assert T.grad_check(f_dec, rng.standard_normal((1, 3, 4))) < 1e-4
        x = Tensor(rng.standard_normal((1, 3, 4)))
        params = list(store.params.values())
        assert T.directional_check(lambda: f_enc(x), params, rng) < 1e-4
        assert T.directional_check(lambda: f_dec(x), params, rng) < 1e-4


def test_norm_outputs_are_standardised(rng):
    model = CaptionModel(len(VOCAB), SMALL)
    enc = model.encode_regions(random_regions(rng, 6))
    s = enc.states.data.astype(np.float64)
    # fresh norms have unit gain and zero shift
    assert np.all(np.abs(s.mean(-1)) < 1e-3)
    assert np.all(np.abs(s.var(-1) - 1) < 1e-3)


@pytest.mark.parametrize("n", [1, 5, 16])
def test_encoder_preserves_cardinality(n, rng):
    model = CaptionModel(len(VOCAB), SMALL)
    assert len(model.encode_regions(random_regions(rng, n))) == n


@given(st.integers(2, 16), st.integers(0, 10_000))
def test_encoder_permutation_equivariance_is_bit_exact(n, seed):
    rng = np.random.default_rng(seed)
    model = CaptionModel(len(VOCAB), CaptionConfig(layers=2))
    feats = random_regions(rng, n)
    perm = rng.permutation(n)
    a = model.encode_regions(feats).states.data[0]
    b = model.encode_regions(feats[perm]).states.data[0]
    assert np.array_equal(a[perm], b)


@given(st.integers(0, 10_000), st.integers(1, 18))
def test_decoder_prefix_invariance_is_bit_exact(seed, pos):
    rng = np.random.default_rng(seed)
    model = CaptionModel(len(VOCAB), CaptionConfig(layers=2))
    enc = model.encode_regions(random_regions(rng, 4))
    toks = np.r_[VOCAB.bos, rng.integers(3, len(VOCAB), 19)]
    other = toks.copy()
    other[pos:] = rng.integers(3, len(VOCAB), 20 - pos)
    a = model.log_probs(toks, enc)[0]
    b = model.log_probs(other, enc)[0]
    assert np.array_equal(a[:pos], b[:pos])


def test_decode_step_contract(rng):
    model = CaptionModel(len(VOCAB), SMALL)
    enc = model.encode_regions(random_regions(rng, 3))
    p = decode_step(model, [VOCAB.bos, 5, 6], enc)
    assert p.shape == (len(VOCAB),) and abs(p.sum() - 1) < 1e-6
    with pytest.raises(ContractError):
        decode_step(model, [5], enc)
    with pytest.raises(ContractError):
        decode_step(model, [VOCAB.bos] * 21, enc)


def test_positions_and_schedule():
    pe = sinusoid_positions(4, 6)
    assert pe[0].tolist() == [0, 1, 0, 1, 0, 1]
    assert pe[3, 0] == pytest.approx(math.sin(3))
    assert noam_rate(1, 64, 400) < noam_rate(400, 64, 400)
    assert noam_rate(1600, 64, 400) == pytest.approx(64 ** -0.5 * 1600 ** -0.5)


# --- training and decoding ----------------------------------------------------


def test_fresh_loss_is_near_uniform(dataset):
    model = CaptionModel(len(VOCAB), SMALL)
    loss = float(batch_loss(model, dataset[:64], VOCAB).data)
    assert abs(loss - math.log(len(VOCAB))) < 0.15 * math.log(len(VOCAB))


def test_training_loss_falls_each_epoch(trained):
    _, report, _ = trained
    losses = report.epoch_losses[:5]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert report.heldout_accuracy > 0.6


def test_overfit_one_scene_reproduces_template(dataset):
    pair = next(p for p in dataset if len(p.categories) == 1)
    model = CaptionModel(len(VOCAB), SMALL)
    train_ce(model, [pair] * 64, VOCAB, epochs=30, seed=0)
    cap = greedy_decode(model, model.encode_regions(pair.regions))
    assert VOCAB.decode(cap.tokens) == list(pair.words)
    assert cap.tokens[-1] == VOCAB.eos


def test_beam_one_equals_greedy(trained, rng):
    model, _, held = trained
    for p in held[:20]:
        enc = model.encode_regions(p.regions)
        g = greedy_decode(model, enc)
        b = beam_search(model, enc, beam=1)
        assert g.tokens == b.tokens and g.logprob == pytest.approx(b.logprob, abs=1e-9)


def test_beam_dominates_greedy_and_terminates(trained):
    model, _, held = trained
    for p in held[:100]:
        enc = model.encode_regions(p.regions)
        g = greedy_decode(model, enc)
        b = beam_search(model, enc, beam=5)
        assert b.logprob >= g.logprob - 1e-9
        assert b.tokens[-1] == VOCAB.eos or len(b.tokens) == 19
        assert beam_search(model, enc, beam=5) == b


def test_untrained_beam_still_terminates(rng):
    model = CaptionModel(len(VOCAB), SMALL, seed=5)
    for _ in range(5):
        cap = beam_search(model, model.encode_regions(random_regions(rng, 4)), beam=3, max_len=8)
        assert cap.tokens[-1] == VOCAB.eos or len(cap.tokens) == 7


def test_checkpoint_round_trip(trained, tmp_path):
    model, _, held = trained
    save_model(tmp_path / "c.ckpt", model)
    back = load_model(tmp_path / "c.ckpt", VOCAB, SMALL)
    for k, v in model.state().items():
        assert back.state()[k].tobytes() == v.tobytes()
    enc_a = model.encode_regions(held[0].regions)
    enc_b = back.encode_regions(held[0].regions)
    assert beam_search(model, enc_a) == beam_search(back, enc_b)
    # architecture comes from the checkpoint, not the caller
    assert load_model(tmp_path / "c.ckpt", VOCAB, CaptionConfig()).cfg.d == SMALL.d
    bigger = Vocabulary(VOCAB.tokens + ["extra"], VOCAB.nouns, VOCAB.links)
    with pytest.raises(ContractError):
        load_model(tmp_path / "c.ckpt", bigger, SMALL)
    from curionav import checkpoint
    checkpoint.save(tmp_path / "bare.ckpt", {"x": np.zeros(1)})
    with pytest.raises(CheckpointVersionError):
        load_model(tmp_path / "bare.ckpt", VOCAB, SMALL)


def test_config_validation():
    for bad in (dict(d=30, heads=4), dict(layers=4), dict(keep=0), dict(heldout=1.0)):
        with pytest.raises(ContractError):
            CaptionConfig(**bad).validate()

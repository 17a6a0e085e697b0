import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coherent_embed.checkpoint import load_checkpoint, save_checkpoint
from coherent_embed.data import SyntheticSpec, generate_synthetic, load_all, stack_of_differences, to_chw
from coherent_embed.encoder import EncoderConfig, conv_forward
from coherent_embed.evaluation import (Classifier, DatasetError, EvalConfig, build_classifier, classifier_checkpoint,
                                       classifier_from_checkpoint, evaluate_video, export_embeddings, finetune,
                                       inflate_first_layer, read_embedding_table, sample_indices, segment_indices, top1)
from coherent_embed.checkpoint import read_tensor
from coherent_embed.trainer import encoder_from_checkpoint, random_init_checkpoint

ENC = EncoderConfig(widths=[4, 8], dim=8)


@given(st.integers(1, 200), st.integers(1, 40))
def test_sample_indices_formula(T, S):
    idx = sample_indices(T, S)
    assert len(idx) == S and idx[0] == 0
    if S > 1:
        assert idx == [i * (T - 1) // (S - 1) for i in range(S)] and idx[-1] == T - 1
    assert idx == sorted(idx) and max(idx) < T


def test_sample_indices_example():
    assert sample_indices(37, 19) == list(range(0, 37, 2))
    assert sample_indices(5, 3) == [0, 2, 4]


@given(st.integers(6, 60), st.integers(0, 1000), st.sampled_from(["rgb", "stack"]))
def test_segment_indices_in_thirds(T, seed, mode):
    idx = segment_indices(T, np.random.default_rng(seed), mode)
    usable = T - 5 if mode == "stack" else T
    assert len(idx) == 3 and all(0 <= i < usable for i in idx)
    assert idx == sorted(idx)


def test_inflated_layer_reproduces_rgb_response_on_constant_motion():
    rng = np.random.default_rng(0)
    w, b = rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    base, d = rng.random((8, 8, 3)), rng.standard_normal((8, 8, 3))
    frames = [base + t * d for t in range(6)]
    stacked, _ = conv_forward(stack_of_differences(frames)[None].astype(np.float64), inflate_first_layer(w), b)
    single, _ = conv_forward(to_chw(d)[None].astype(np.float64), w, b)
    np.testing.assert_allclose(stacked, single, rtol=1e-6, atol=1e-9)


def test_build_classifier_modes():
    ck = random_init_checkpoint(ENC, seed=0)
    rgb = build_classifier(ck, 4, EvalConfig())
    assert rgb.trainable == ["head.weight", "head.bias"]
    assert not any(k.startswith(("proj.", "rot.", "embed_bn.")) for k in rgb.params)
    st_ = build_classifier(ck, 4, EvalConfig(input_mode="stack", mode="fine-tune"))
    assert st_.params["conv0.weight"].shape == (4, 15, 3, 3)
    assert "head.weight" in st_.trainable and "conv0.weight" in st_.trainable
    with pytest.raises(ValueError):
        build_classifier(ck, 4, EvalConfig(input_mode="stack", inflate=False))
    with pytest.raises(ValueError):
        build_classifier(ck, 1, EvalConfig())


def test_ties_go_to_lowest_class():
    clf = build_classifier(random_init_checkpoint(ENC, 0), 3, EvalConfig())
    clf.params["head.weight"][...] = 0
    pred, probs = evaluate_video(clf, np.random.default_rng(0).random((7, 8, 8, 3)), EvalConfig(samples=4))
    assert pred == 0 and probs == pytest.approx([1 / 3] * 3)
    with pytest.raises(ValueError):
        evaluate_video(build_classifier(random_init_checkpoint(ENC, 0), 3, EvalConfig(input_mode="stack")),
                       np.zeros((5, 8, 8, 3)), EvalConfig(input_mode="stack"))


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    index = generate_synthetic(SyntheticSpec(videos_per_class=3, frames_per_video=8, image_size=16, seed=2),
                               tmp_path_factory.mktemp("d"))
    return index, load_all(index)


@pytest.mark.parametrize("mode,input_mode", [("linear-probe", "rgb"), ("fine-tune", "stack")])
def test_finetune_smoke_and_checkpoint(tiny, tmp_path, mode, input_mode):
    index, videos = tiny
    cfg = EvalConfig(mode=mode, input_mode=input_mode, epochs=2, samples=3, dropout=0.2 if mode == "fine-tune" else 0)
    clf = build_classifier(random_init_checkpoint(ENC, 0), 4, cfg)
    train, held = [i for i in range(12) if i % 3], [i for i in range(12) if i % 3 == 0]
    res = finetune(clf, videos, index.labels, cfg, train, held)
    assert [h[0] for h in res.history] == [1, 2]
    assert res.best_top1 == max(h[2] for h in res.history)
    assert res.best_top1 == top1(res.classifier, [videos[i] for i in held], index.labels[held], cfg)
    save_checkpoint(classifier_checkpoint(res.classifier, cfg), tmp_path / "c.ckpt")
    back = classifier_from_checkpoint(load_checkpoint(tmp_path / "c.ckpt"))
    assert isinstance(back, Classifier) and back.mode == mode and back.input_mode == input_mode
    assert top1(back, [videos[i] for i in held], index.labels[held], cfg) == res.best_top1
    with pytest.raises(DatasetError):
        finetune(clf, videos, index.labels, cfg, [i for i in train if index.labels[i] != 3], held)


def test_export_embeddings(tiny, tmp_path):
    _, videos = tiny
    ck = random_init_checkpoint(ENC, 0)
    tsv, tceb = export_embeddings(ck, videos[0], tmp_path / "e.tsv")
    table, binary = read_embedding_table(tsv), read_tensor(tceb)
    assert binary.shape == (8, 8)
    np.testing.assert_array_equal(table.astype(np.float32), binary)
    np.testing.assert_array_equal(binary, encoder_from_checkpoint(ck).encode(to_chw(videos[0].frames)))

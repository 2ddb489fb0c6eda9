"""Attention kernels and the forward pass: causality, caching, greedy loop."""
import numpy as np
import pytest

from vgalab.errors import CapacityError, InvalidInput, ShapeError
from vgalab.mllm import (
    GuidanceRow,
    KvCache,
    SequenceLayout,
    attention_explicit,
    attention_fused,
    build_random_model,
    decode_step,
    forward_rows_count,
    full_logits,
    greedy_generate,
    prefill,
    reset_forward_rows,
)

KERNEL_TOL = 1e-10
LOGIT_TOL = 1e-8


def random_qkv(rng, tq, tk, heads, d_head):
    q = rng.normal(size=(tq, heads, d_head))
    k = rng.normal(size=(tk, heads, d_head))
    v = rng.normal(size=(tk, heads, d_head))
    return q, k, v


def test_fused_matches_explicit_without_guidance():
    rng = np.random.default_rng(0)
    for _ in range(40):
        tq = int(rng.integers(1, 9))
        tk = tq + int(rng.integers(0, 70))  # spans multiple key blocks
        heads = int(rng.integers(1, 5))
        d_head = int(rng.integers(2, 9))
        q, k, v = random_qkv(rng, tq, tk, heads, d_head)
        z_ref, alpha = attention_explicit(q, k, v)
        z_fused = attention_fused(q, k, v)
        assert np.allclose(z_fused, z_ref, rtol=0, atol=KERNEL_TOL)
        assert np.allclose(alpha.sum(axis=-1), 1.0, atol=1e-9)


def test_attention_is_causal():
    rng = np.random.default_rng(1)
    q, k, v = random_qkv(rng, 4, 6, 2, 3)
    z_base, _ = attention_explicit(q, k, v)
    # query row i sits at position tk - tq + i = 2 + i; perturbing the last
    # key/value must leave every earlier row untouched
    k2, v2 = k.copy(), v.copy()
    k2[-1] += 10.0
    v2[-1] -= 5.0
    z_pert, _ = attention_explicit(q, k2, v2)
    assert np.allclose(z_pert[:-1], z_base[:-1], atol=1e-12)
    assert not np.allclose(z_pert[-1], z_base[-1])


def test_attention_shape_errors():
    rng = np.random.default_rng(2)
    q, k, v = random_qkv(rng, 3, 5, 2, 4)
    with pytest.raises(ShapeError):
        attention_explicit(q[:, :, :2], k, v)
    with pytest.raises(ShapeError):
        attention_fused(k, q, q)  # more queries than keys
    with pytest.raises(ShapeError):
        attention_explicit(q, k, v[:4])


def test_guidance_row_splice_and_span_checks():
    rng = np.random.default_rng(3)
    q, k, v = random_qkv(rng, 2, 8, 2, 4)
    g = GuidanceRow(
        weights=np.full(4, 0.25),
        beta=0.5,
        gamma=np.array([1.0, 0.5]),
        rho=1.0,
        span=(1, 5),
    )
    _, alpha = attention_explicit(q, k, v, guidance=g)
    sums = alpha[:, -1, :].sum(axis=-1)
    assert np.allclose(sums, 1.0 + g.head_scales(), atol=1e-12)
    with pytest.raises(ShapeError):
        attention_explicit(q, k, v, guidance=GuidanceRow(
            weights=np.full(3, 1 / 3), beta=0.5, gamma=np.ones(2), rho=1.0, span=(1, 5)
        ))
    with pytest.raises(ShapeError):
        attention_explicit(q, k, v, guidance=GuidanceRow(
            weights=np.full(4, 0.25), beta=0.5, gamma=np.ones(2), rho=1.0, span=(5, 9)
        ))


def test_kv_cache_capacity_and_views(tiny_model):
    cache = KvCache(tiny_model.config)
    assert cache.length == 0
    rows = np.ones((2, tiny_model.config.n_heads, tiny_model.config.d_head))
    cache.write(0, 0, rows, rows)
    cache.advance(2)
    assert cache.length == 2
    k, v = cache.view(0, 2)
    assert k.shape[0] == 2
    with pytest.raises(CapacityError):
        cache.write(0, cache.capacity - 1, rows, rows)


def scene_layout(model, rng):
    n_patches = model.config.n_patches
    patch_pool = list(model.vocab.patch_token_ids) + list(model.vocab.background_ids)
    patches = [patch_pool[int(rng.integers(len(patch_pool)))] for _ in range(n_patches)]
    word = model.vocab.object_ids[int(rng.integers(model.vocab.n_objects))]
    ids = [model.vocab.bos_id] + patches + [word, model.vocab.qmark_id]
    return SequenceLayout(token_ids=tuple(ids), visual_start=1, visual_end=1 + n_patches)


def test_prefill_matches_full_logits(tiny_model):
    rng = np.random.default_rng(4)
    for _ in range(10):
        layout = scene_layout(tiny_model, rng)
        result = prefill(tiny_model, layout)
        whole = full_logits(tiny_model, layout)
        assert np.allclose(result.last_logits, whole[-1], atol=LOGIT_TOL)
        assert np.allclose(
            result.visual_logits,
            whole[layout.visual_start : layout.visual_end],
            atol=LOGIT_TOL,
        )


def test_decode_step_extends_cache_consistently(tiny_model):
    rng = np.random.default_rng(5)
    layout = scene_layout(tiny_model, rng)
    result = prefill(tiny_model, layout)
    tok = int(np.argmax(result.last_logits))
    stepped = decode_step(tiny_model, result.cache, tok)
    extended = SequenceLayout(
        token_ids=layout.token_ids + (tok,),
        visual_start=layout.visual_start,
        visual_end=layout.visual_end,
    )
    assert np.allclose(stepped, full_logits(tiny_model, extended)[-1], atol=LOGIT_TOL)


def test_prefill_rejects_overlong_prompt(tiny_model):
    ids = tuple([tiny_model.vocab.bos_id] * (tiny_model.config.max_seq_len + 1))
    layout = SequenceLayout(token_ids=ids, visual_start=0, visual_end=4)
    with pytest.raises(CapacityError):
        prefill(tiny_model, layout)


def test_forward_rejects_out_of_vocab(tiny_model):
    layout = SequenceLayout(
        token_ids=(0, tiny_model.vocab.size, 1), visual_start=0, visual_end=1
    )
    with pytest.raises(InvalidInput):
        full_logits(tiny_model, layout)


def test_greedy_is_deterministic_and_bounded(tiny_model):
    rng = np.random.default_rng(6)
    layout = scene_layout(tiny_model, rng)
    first = greedy_generate(tiny_model, layout, max_len=7)
    second = greedy_generate(tiny_model, layout, max_len=7)
    assert first == second
    assert 1 <= len(first) <= 7
    with pytest.raises(InvalidInput):
        greedy_generate(tiny_model, layout, max_len=0)


def test_greedy_stops_at_eos(clean_model, scenes12):
    from vgalab.evalkit import build_vqa_layout

    q = scenes12[0].questions[0]
    layout = build_vqa_layout(clean_model, scenes12[0], q.word)
    tokens = greedy_generate(clean_model, layout, max_len=32)
    assert tokens[-1] == clean_model.vocab.eos_id
    assert len(tokens) < 32


def test_forward_row_counter_tracks_rows(tiny_model):
    rng = np.random.default_rng(7)
    layout = scene_layout(tiny_model, rng)
    reset_forward_rows()
    prefill(tiny_model, layout)
    assert forward_rows_count() == layout.length
    reset_forward_rows()
    assert forward_rows_count() == 0


def test_record_attention_profiles_every_layer(tiny_model):
    rng = np.random.default_rng(8)
    layout = scene_layout(tiny_model, rng)
    result = prefill(tiny_model, layout, record_attention=True)
    assert result.bos_attention is not None
    assert len(result.bos_attention) == tiny_model.config.n_layers
    assert all(0.0 <= a <= 1.0 for a in result.bos_attention)


def test_random_models_vary_with_seed():
    a = build_random_model(1)
    b = build_random_model(2)
    assert not np.allclose(a.embed_tok, b.embed_tok)

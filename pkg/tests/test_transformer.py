"""Transformer branch: attention oracles, equivariance, PUP shapes."""

import numpy as np
import pytest

from lesionseg import reference
from lesionseg.cnn import ConfigError
from lesionseg.tensor import Tensor, DimensionError
from lesionseg.transformer import (MultiHeadSelfAttention, PatchEmbed,
                                   PupDecoder, TokenSequence,
                                   TransformerBranch, TransformerConfig,
                                   TransformerEncoder, attention)
from support import fd_param_max_rel_err


@pytest.fixture
def rng():
    return np.random.default_rng(31)


class TestPatchEmbed:
    def test_paper_token_count(self, rng):
        pe = PatchEmbed(TransformerConfig.toy(), (192, 256), rng)
        seq = pe(Tensor(rng.standard_normal((1, 3, 192, 256))))
        assert seq.tokens.shape == (1, 192, 64)
        assert seq.grid == (12, 16)

    def test_zero_image_zero_weights_yields_positional_embedding(self, rng):
        pe = PatchEmbed(TransformerConfig.toy(), (32, 32), rng)
        pe.proj.weight.data[...] = 0.0
        pe.proj.bias.data[...] = 0.0
        seq = pe(Tensor(np.zeros((2, 3, 32, 32))))
        expect = np.broadcast_to(pe.pos_embed.data, (2, 4, 64))
        assert np.array_equal(seq.tokens.data, expect)

    def test_single_patch_image(self, rng):
        pe = PatchEmbed(TransformerConfig.toy(), (16, 16), rng)
        seq = pe(Tensor(rng.standard_normal((1, 3, 16, 16))))
        assert seq.tokens.shape[1] == 1

    def test_indivisible_input_rejected(self, rng):
        with pytest.raises(ConfigError):
            PatchEmbed(TransformerConfig.toy(), (30, 32), rng)

    def test_patch_flattening_matches_manual_slice(self, rng):
        cfg = TransformerConfig(patch_size=16, embed_dim=8, depth=1, heads=2)
        pe = PatchEmbed(cfg, (32, 48), rng)
        img = rng.standard_normal((1, 3, 32, 48))
        seq = pe(Tensor(img))
        # token (row 1, col 2) comes from patch img[:, :, 16:32, 32:48]
        patch = img[0, :, 16:32, 32:48].reshape(3 * 16 * 16)
        expect = patch @ pe.proj.weight.data + pe.proj.bias.data \
            + pe.pos_embed.data[1 * 3 + 2]
        assert np.allclose(seq.tokens.data[0, 5], expect, atol=1e-12)


class TestAttention:
    def test_single_key_returns_value(self, rng):
        q = Tensor(rng.standard_normal((1, 1, 4)))
        k = Tensor(rng.standard_normal((1, 1, 4)))
        v = Tensor(rng.standard_normal((1, 1, 4)))
        out = attention(q, k, v)
        assert np.allclose(out.data, v.data, atol=1e-15)

    def test_identical_value_rows_collapse(self, rng):
        row = rng.standard_normal(4)
        v = Tensor(np.tile(row, (1, 5, 1)))
        out = attention(Tensor(rng.standard_normal((1, 3, 4))),
                        Tensor(rng.standard_normal((1, 5, 4))), v)
        assert np.allclose(out.data, np.tile(row, (1, 3, 1)), atol=1e-12)

    def test_matches_scalar_reference(self, rng):
        q = rng.standard_normal((1, 3, 4))
        k = rng.standard_normal((1, 3, 4))
        v = rng.standard_normal((1, 3, 4))
        out = attention(Tensor(q), Tensor(k), Tensor(v))
        assert np.abs(out.data
                      - reference.naive_attention(q, k, v)).max() < 1e-12

    def test_head_dim_mismatch_rejected(self, rng):
        with pytest.raises(DimensionError):
            attention(Tensor(np.zeros((1, 2, 4))),
                      Tensor(np.zeros((1, 2, 5))),
                      Tensor(np.zeros((1, 2, 5))))


class TestMsa:
    def test_permutation_equivariance(self, rng):
        msa = MultiHeadSelfAttention(16, 4, rng)
        x = rng.standard_normal((2, 7, 16))
        perm = rng.permutation(7)
        out = msa(Tensor(x)).data
        out_perm = msa(Tensor(x[:, perm])).data
        assert np.abs(out_perm - out[:, perm]).max() < 1e-9

    def test_single_head_equals_attention_plus_projection(self, rng):
        msa = MultiHeadSelfAttention(8, 1, rng)
        x = Tensor(rng.standard_normal((1, 5, 8)))
        composed = attention(msa.q_proj(x), msa.k_proj(x), msa.v_proj(x))
        expect = msa.out_proj(composed)
        assert np.abs(msa(x).data - expect.data).max() < 1e-12

    def test_single_token_attention_weight_is_one(self, rng):
        msa = MultiHeadSelfAttention(8, 2, rng)
        msa(Tensor(rng.standard_normal((1, 1, 8))))
        assert np.array_equal(msa.last_attn,
                              np.ones_like(msa.last_attn))


class TestEncoder:
    def _tokens(self, rng, b=1, n=6, d=16):
        return Tensor(rng.standard_normal((b, n, d)))

    def test_permutation_equivariance_without_pos_embedding(self, rng):
        cfg = TransformerConfig(patch_size=16, embed_dim=16, depth=2, heads=4)
        enc = TransformerEncoder(cfg, rng)
        x = self._tokens(rng)
        perm = rng.permutation(6)
        out = enc(TokenSequence(x, (2, 3))).tokens.data
        out_perm = enc(TokenSequence(
            Tensor(x.data[:, perm]), (2, 3))).tokens.data
        assert np.abs(out_perm - out[:, perm]).max() < 1e-9

    def test_pos_embedding_breaks_equivariance(self, rng):
        cfg = TransformerConfig(patch_size=16, embed_dim=16, depth=1, heads=2)
        pe = PatchEmbed(cfg, (32, 48), rng)
        enc = TransformerEncoder(cfg, rng)
        img = rng.standard_normal((1, 3, 32, 48))
        tokens = pe(Tensor(img)).tokens.data

        perm = np.array([3, 1, 4, 0, 5, 2])
        img_perm = img.reshape(1, 3, 2, 16, 3, 16) \
            .transpose(0, 2, 4, 1, 3, 5).reshape(1, 6, 3, 16, 16)
        img_perm = img_perm[:, perm].reshape(1, 2, 3, 3, 16, 16) \
            .transpose(0, 3, 1, 4, 2, 5).reshape(1, 3, 32, 48)
        tokens_perm = pe(Tensor(img_perm)).tokens.data

        out = enc(TokenSequence(Tensor(tokens), (2, 3))).tokens.data
        out_perm = enc(TokenSequence(Tensor(tokens_perm), (2, 3))).tokens.data
        assert np.abs(out_perm - out[:, perm]).max() > 1e-6

    def test_attention_rows_sum_to_one_every_layer(self, rng):
        cfg = TransformerConfig(patch_size=16, embed_dim=16, depth=3, heads=4)
        enc = TransformerEncoder(cfg, rng)
        enc(TokenSequence(self._tokens(rng, n=9), (3, 3)))
        for block in enc.blocks:
            sums = block.attn.last_attn.sum(axis=-1)
            assert np.abs(sums - 1.0).max() < 1e-9


class TestPupDecoder:
    def test_paper_scale_chain(self, rng):
        branch = TransformerBranch(TransformerConfig.toy(), (192, 256),
                                   (64, 32, 16), rng).eval()
        t = branch(Tensor(rng.standard_normal((1, 3, 192, 256))))
        assert t.t0.shape == (1, 64, 12, 16)
        assert t.t1.shape == (1, 32, 24, 32)
        assert t.t2.shape == (1, 16, 48, 64)

    def test_constant_tokens_yield_constant_maps(self, rng):
        cfg = TransformerConfig.toy()
        dec = PupDecoder(cfg, (64, 32, 16), rng).eval()
        for stage in (dec.stage1, dec.stage2):
            stage.conv.weight.data[...] = 0.0
            stage.conv.bias.data[...] = 0.7
        tokens = Tensor(np.full((1, 4, cfg.embed_dim), 1.3))
        t = dec(TokenSequence(tokens, (2, 2)))
        for fmap in (t.t0, t.t1, t.t2):
            per_channel = fmap.data.reshape(fmap.shape[1], -1)
            assert np.array_equal(per_channel,
                                  np.tile(per_channel[:, :1],
                                          (1, per_channel.shape[1])))

    def test_gradient_reaches_patch_embedding(self, rng):
        cfg = TransformerConfig(patch_size=16, embed_dim=8, depth=1, heads=2)
        branch = TransformerBranch(cfg, (32, 32), (4, 4, 4), rng).eval()
        img = Tensor(rng.standard_normal((1, 3, 32, 32)))

        params = [branch.patch_embed.proj.weight, branch.patch_embed.pos_embed]
        err = fd_param_max_rel_err(lambda: branch(img).t2.sum(), params, rng,
                                   n_coords=30)
        assert err < 1e-3

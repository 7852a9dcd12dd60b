import pytest
import torch

from hybridtrack.vit import Attention, EncoderBlock, PatchEmbed, VisionTransformer, VitConfig, zero_block_


def test_token_count_for_default_crops():
    emb = PatchEmbed(8, 16, 128, 256)
    out = emb(torch.rand(1, 3, 128, 128), torch.rand(1, 3, 256, 256))
    assert out.shape == (1, 8, 64 + 256)


def test_zero_images_and_positions_give_zero_tokens():
    emb = PatchEmbed(8, 16, 32, 64)
    torch.nn.init.zeros_(emb.pos_z)
    torch.nn.init.zeros_(emb.pos_x)
    assert not emb(torch.zeros(2, 3, 32, 32), torch.zeros(2, 3, 64, 64)).any()


def test_permuting_search_patches_permutes_search_tokens():
    emb = PatchEmbed(8, 16, 32, 64)
    torch.nn.init.zeros_(emb.pos_x)
    z, x = torch.rand(1, 3, 32, 32), torch.rand(1, 3, 64, 64)
    # swap the first two 16x16 patches of the search image
    x2 = x.clone()
    x2[..., :16, :16], x2[..., :16, 16:32] = x[..., :16, 16:32], x[..., :16, :16]
    a, b = emb(z, x), emb(z, x2)
    torch.testing.assert_close(a[..., :4], b[..., :4])
    torch.testing.assert_close(a[..., 4], b[..., 5])
    torch.testing.assert_close(a[..., 5], b[..., 4])
    torch.testing.assert_close(a[..., 6:], b[..., 6:])


def test_patch_embed_rejects_wrong_sizes():
    emb = PatchEmbed(8, 16, 32, 64)
    with pytest.raises(ValueError):
        emb(torch.rand(1, 3, 48, 48), torch.rand(1, 3, 64, 64))
    with pytest.raises(ValueError):
        PatchEmbed(8, 16, 30, 60)


def test_zeroed_block_is_identity():
    blk = EncoderBlock(8, 2)
    zero_block_(blk)
    x = torch.randn(2, 8, 5)
    torch.testing.assert_close(blk(x), x)
    a, m = blk.forward_stages(x)
    torch.testing.assert_close(a, x)
    torch.testing.assert_close(m, x)


def test_attention_rows_sum_to_one():
    blk = EncoderBlock(8, 2)
    blk(torch.randn(2, 8, 6))
    torch.testing.assert_close(blk.attn.last_attn.sum(-1), torch.ones(2, 2, 6))


def test_single_token_attention_is_value_projection():
    att = Attention(8, 2)
    x = torch.randn(3, 1, 8)
    v = torch.nn.functional.linear(x, att.qkv.weight[16:], att.qkv.bias[16:])
    torch.testing.assert_close(att(x), att.proj(v))


def test_forward_stages_wiring():
    blk = EncoderBlock(8, 2)
    x = torch.randn(2, 8, 5)
    a, m = blk.forward_stages(x)
    torch.testing.assert_close(a, x + blk.msa(x))
    torch.testing.assert_close(m, a + blk.mlp(a))
    torch.testing.assert_close(blk(x), m)


def test_shapes_preserved_through_transformer():
    vit = VisionTransformer(VitConfig(depth=2, embed_dim=16, heads=4), 32, 64)
    assert vit(torch.rand(2, 3, 32, 32), torch.rand(2, 3, 64, 64)).shape == (2, 16, 4 + 16)


def test_vit_config_validation():
    with pytest.raises(ValueError):
        VitConfig(embed_dim=10, heads=4)


def test_block_gradient_matches_finite_differences():
    torch.manual_seed(0)
    blk = EncoderBlock(8, 2).double()
    for p in blk.parameters():
        torch.nn.init.normal_(p, std=0.3)
    x = torch.randn(1, 8, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda t: blk(t), (x,), eps=1e-6, atol=1e-7, rtol=1e-4)
    # parameters as well
    params = [p for p in blk.parameters()]
    names = [n for n, _ in blk.named_parameters()]

    def f(*ps):
        state = dict(zip(names, ps))
        return torch.func.functional_call(blk, state, (x.detach(),))

    assert torch.autograd.gradcheck(f, tuple(p.detach().clone().requires_grad_(True) for p in params),
                                    eps=1e-6, atol=1e-7, rtol=1e-4)

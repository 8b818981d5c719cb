import numpy as np
import pytest

from src.autodiff import ops
from src.autodiff.gradcheck import gradcheck_report
from src.autodiff.tensor import Tensor
from src.models import (
    AutoencoderModel,
    ClassifierModel,
    EncoderConfig,
    SiameseModel,
    build_model,
    classify,
    classify_batch,
    encode,
    encode_batch,
    encoder_parameter_count,
    predict_interval,
    predict_pairs,
    reconstruct,
    transfer_encoder,
)
from src.utils.errors import ArchitectureMismatchError, BatchNormStateError, ConfigError, ShapeError

# A conv bias feeding batchnorm has an analytic gradient of exactly 0 while its finite difference
# is rounding noise, so whole networks use a 1e-4 denominator floor and skip kinks crossed by h.
NETWORK_GRADCHECK = dict(h=1e-5, floor=1e-4, skip_nonsmooth=True, kink_tol=1e-5, max_entries=4)


def _images(rng, n, size=(16, 16)):
    return rng.random((n, *size))


def _warm_up(model, images):
    """One train-mode pass so batchnorm has running statistics."""
    encode_batch(images, model, mode="train")


# ── configuration ────────────────────────────────────────────────────────────


@pytest.mark.parametrize("bad", [
    dict(variant="resnet"),
    dict(block_channels=[4, 8]),
    dict(input_size=(20, 16)),
    dict(input_size=(8, 8)),
    dict(layers_per_block=0),
])
def test_encoder_config_rejects_invalid_values(bad):
    with pytest.raises(ConfigError):
        EncoderConfig(**bad)


def test_dense_variant_widens_block_inputs(toy_dense_config, toy_encoder_config):
    assert toy_encoder_config.block_input_channels() == [1, 4, 8, 8]
    assert toy_dense_config.block_input_channels() == [1, 5, 13, 21]


@pytest.mark.parametrize("fixture", ["toy_encoder_config", "toy_dense_config"])
def test_parameter_count_matches_built_encoder(request, fixture):
    config = request.getfixturevalue(fixture)
    model = SiameseModel(config)
    assert model.encoder.num_parameters() == encoder_parameter_count(config)


# ── forward shapes ───────────────────────────────────────────────────────────


def test_encoder_embeds_batch_and_single_image(rng, toy_encoder_config):
    model = SiameseModel(toy_encoder_config)
    assert encode_batch(_images(rng, 3), model, mode="train").shape == (3, 16)
    _warm_up(model, _images(rng, 4))
    emb = encode(_images(rng, 1)[0], model, scan_id="s1", bscan_index=2, t=6.0)
    assert len(emb) == 16
    assert (emb.scan_id, emb.bscan_index, emb.t) == ("s1", 2, 6.0)


def test_encoder_rejects_wrong_image_size(rng, toy_encoder_config):
    with pytest.raises(ShapeError):
        encode_batch(rng.random((2, 24, 16)), SiameseModel(toy_encoder_config), mode="train")


def test_siamese_outputs_one_interval_per_pair(rng, toy_encoder_config):
    model = SiameseModel(toy_encoder_config)
    a = Tensor(_images(rng, 3)[..., None])
    b = Tensor(_images(rng, 3)[..., None])
    assert model(a, b).shape == (3,)
    with pytest.raises(ShapeError):
        model(a, Tensor(_images(rng, 2)[..., None]))


def test_predict_interval_matches_batched_prediction(rng, toy_dense_config):
    model = SiameseModel(toy_dense_config, seed=4)
    _warm_up(model, _images(rng, 6))
    a, b = _images(rng, 2), _images(rng, 2)
    batched = predict_pairs(a, b, model)
    single = predict_interval(encode(a[1], model), encode(b[1], model), model)
    assert single == pytest.approx(batched[1], abs=1e-12)


def test_predict_interval_is_not_forced_antisymmetric(rng, toy_encoder_config):
    model = SiameseModel(toy_encoder_config, seed=1)
    _warm_up(model, _images(rng, 4))
    h1, h2 = encode(_images(rng, 1)[0], model), encode(_images(rng, 1)[0], model)
    assert predict_interval(h1, h2, model) != pytest.approx(-predict_interval(h2, h1, model))


def test_classifier_probabilities_sum_to_one(rng, toy_encoder_config):
    model = ClassifierModel(toy_encoder_config, hidden=8, dropout=0.5)
    probs = model(Tensor(_images(rng, 5)[..., None])).numpy()
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    assert np.all((probs > 0) & (probs < 1))
    images = _images(rng, 5)
    scores = classify_batch(images, model)
    assert scores.shape == (5,)
    assert classify(images[2], model) == pytest.approx(scores[2])
    assert model.training


def test_autoencoder_reconstructs_input_shape(rng, toy_encoder_config):
    model = AutoencoderModel(toy_encoder_config)
    model(Tensor(_images(rng, 4)[..., None]))
    image = _images(rng, 1)[0]
    assert reconstruct(image, model).shape == image.shape


def test_eval_before_any_training_pass_raises(rng, toy_encoder_config):
    with pytest.raises(BatchNormStateError):
        encode_batch(_images(rng, 2), SiameseModel(toy_encoder_config), mode="eval")


# ── state and transfer ───────────────────────────────────────────────────────


def test_build_model_restores_architecture(toy_encoder_config):
    for model in (SiameseModel(toy_encoder_config, head_hidden=8),
                  ClassifierModel(toy_encoder_config, hidden=12, dropout=0.5),
                  AutoencoderModel(toy_encoder_config)):
        rebuilt = build_model(model.architecture(), seed=9)
        assert type(rebuilt) is type(model)
        assert {k: v.shape for k, v in rebuilt.state_dict().items()} == \
               {k: v.shape for k, v in model.state_dict().items()}


def test_build_model_unknown_kind_raises(toy_encoder_config):
    with pytest.raises(ConfigError):
        build_model({"model": "gan", "encoder": toy_encoder_config.descriptor()})


def test_state_dict_includes_running_statistics(toy_encoder_config):
    state = SiameseModel(toy_encoder_config).state_dict()
    assert "encoder.block1.conv1.bn.stats.running_mean" in state
    assert state["encoder.block1.conv1.bn.stats.updates"][0] == 0.0


def test_load_state_dict_rejects_unknown_entries(toy_encoder_config):
    model = SiameseModel(toy_encoder_config)
    state = model.state_dict()
    state["encoder.extra"] = np.zeros(1)
    with pytest.raises(ArchitectureMismatchError) as exc:
        model.load_state_dict(state)
    assert exc.value.parameter == "encoder.extra"


def test_transfer_encoder_copies_weights_bit_exactly(rng, toy_encoder_config):
    source = SiameseModel(toy_encoder_config, seed=3)
    _warm_up(source, _images(rng, 4))
    target = ClassifierModel(toy_encoder_config, hidden=8, seed=5)
    head_before = {k: v.data.copy() for k, v in target.head_parameters().items()}

    transfer_encoder(source, target)

    src_state, dst_state = source.encoder.state_dict(), target.encoder.state_dict()
    assert src_state.keys() == dst_state.keys()
    for name in src_state:
        np.testing.assert_array_equal(src_state[name], dst_state[name])
    for name, p in target.head_parameters().items():
        np.testing.assert_array_equal(p.data, head_before[name])
    assert all(p.requires_grad for p in target.parameters().values())


def test_transfer_encoder_from_full_state_dict(toy_encoder_config):
    source = AutoencoderModel(toy_encoder_config, seed=2)
    target = transfer_encoder(source.state_dict(), ClassifierModel(toy_encoder_config))
    np.testing.assert_array_equal(target.encoder.embed.weight.data, source.encoder.embed.weight.data)


def test_transfer_encoder_names_mismatched_parameter(toy_encoder_config):
    wider = EncoderConfig(block_channels=[4, 8, 16], layers_per_block=2, embedding_dim=16, input_size=(16, 16))
    with pytest.raises(ArchitectureMismatchError) as exc:
        transfer_encoder(SiameseModel(wider), ClassifierModel(toy_encoder_config))
    assert exc.value.parameter.startswith("encoder.block3")


def test_transfer_encoder_rejects_other_variant(toy_encoder_config, toy_dense_config):
    with pytest.raises(ArchitectureMismatchError):
        transfer_encoder(SiameseModel(toy_dense_config), ClassifierModel(toy_encoder_config))


# ── whole-network gradients ──────────────────────────────────────────────────


@pytest.mark.parametrize("fixture", ["toy_encoder_config", "toy_dense_config"])
def test_siamese_network_gradients(request, rng, fixture):
    model = SiameseModel(request.getfixturevalue(fixture), seed=0, head_hidden=8)
    a, b = Tensor(_images(rng, 2)[..., None]), Tensor(_images(rng, 2)[..., None])
    target = np.array([0.5, -0.25])
    report = gradcheck_report(lambda: ops.l2_loss(model(a, b), target), model.parameters(), **NETWORK_GRADCHECK)
    assert report.checked >= 30
    assert report.max_rel_error <= 1e-5


def test_autoencoder_network_gradients(rng, toy_encoder_config):
    model = AutoencoderModel(toy_encoder_config, seed=0)
    x = Tensor(_images(rng, 2)[..., None])
    report = gradcheck_report(lambda: ops.mse(model(x), x.data), model.parameters(), **NETWORK_GRADCHECK)
    assert report.checked >= 30
    assert report.max_rel_error <= 1e-5


def test_classifier_network_gradients(rng, toy_encoder_config):
    model = ClassifierModel(toy_encoder_config, hidden=8, dropout=0.0, seed=0)
    x = Tensor(_images(rng, 3)[..., None])
    labels = np.array([1, 0, 1])
    report = gradcheck_report(lambda: ops.cross_entropy(model(x), labels), model.parameters(), **NETWORK_GRADCHECK)
    assert report.checked >= 30
    assert report.max_rel_error <= 1e-5

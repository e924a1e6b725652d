import numpy as np
import pytest

from gradcheck import check_joint, jitter_biases
from ppseg.model import StageError, build_model_spec, flatten_params, forward, init_params, loss_fn, plan_scan
from ppseg.projection import ConfigError
from ppseg.synthetic import synthetic_scan

VARIANTS = ["pointnet", "spidercnn", "pointconv"]


def test_default_architecture():
    m = build_model_spec({})
    assert m.n_stages == 4 and m.n_classes == 19
    assert m.level_shapes() == [(64, 512), (32, 256), (16, 128), (8, 64), (4, 32)]
    assert [st.sa.c_out for st in m.stages] == [32, 64, 128, 256]
    assert [st.grouping.radius for st in m.stages] == [0.5, 1.0, 2.0, 4.0]
    assert [st.fp.c_out for st in m.stages] == [32, 32, 64, 128]
    assert m.head.widths == (32, 128, 19)


def test_config_errors():
    with pytest.raises(ConfigError):
        build_model_spec({"sa1.out_height": "5"})
    with pytest.raises(ConfigError):
        build_model_spec({"model.variant": "transformer"})
    with pytest.raises(ConfigError):
        build_model_spec({"sa1.k": "four"})
    with pytest.raises(ConfigError):
        build_model_spec({"model.k": "4"})


@pytest.mark.parametrize("variant", VARIANTS)
def test_forward_contract(tiny_config, variant):
    m = build_model_spec({**tiny_config, "model.variant": variant})
    params = init_params(m)
    cloud = synthetic_scan(0, m.projection, azimuth_oversample=2)
    a = forward(m, params, cloud)
    assert a.logits.shape == (3, 16, 128)
    assert a.point_pred.shape == (cloud.n,) and a.pixel_pred.shape == (16, 128)
    b = forward(m, params, cloud)
    np.testing.assert_array_equal(a.point_pred, b.point_pred)
    assert a.logits.tobytes() == b.logits.tobytes()
    k = forward(m, params, cloud, knn={"window": 3, "k": 3, "sigma": 1.0})
    assert k.point_pred.shape == (cloud.n,)


@pytest.mark.parametrize("variant", VARIANTS)
def test_random_init_is_not_degenerate(tiny_config, variant):
    cloud = synthetic_scan(50, build_model_spec(tiny_config).projection)
    varied = 0
    for seed in range(10):
        m = build_model_spec({**tiny_config, "model.variant": variant, "model.seed": str(seed)})
        p = forward(m, init_params(m), cloud)
        varied += len(np.unique(p.pixel_pred[p.image.valid])) > 1
    assert varied >= 8


def test_stage_errors_carry_stage_name(tiny_config):
    m = build_model_spec(tiny_config)
    params = init_params(m)
    params["sa2.mlp"]["w0"].data = np.zeros((3, 3))
    with pytest.raises(StageError) as info:
        forward(m, params, synthetic_scan(0, m.projection))
    assert info.value.stage == "sa2"


@pytest.mark.parametrize("variant", VARIANTS)
def test_end_to_end_gradient(variant):
    flat = {
        "proj.height": "8",
        "proj.width": "32",
        "model.n_stages": "2",
        "model.num_classes": "3",
        "model.variant": variant,
        "sa1.mlp": "6",
        "sa2.mlp": "8",
        "sa1.c_mid": "2",
        "sa2.c_mid": "2",
        "fp1.c_mid": "2",
        "fp2.c_mid": "2",
        "sa1.radius": "3.0",
        "sa2.radius": "6.0",
        "model.k": "3",
        "head.mlp": "6",
    }
    m = build_model_spec(flat)
    params = jitter_biases(init_params(m), seed=1)
    plan = plan_scan(m, synthetic_scan(3, m.projection))
    flat_params = flatten_params(params)
    err = check_joint(lambda: loss_fn(m, params, plan), flat_params.values())
    assert err < 1e-3
    # every stage has at least one parameter receiving gradient
    for stage in ("sa1", "sa2", "fp1", "fp2", "head"):
        assert any(np.any(t.grad) for n, t in flat_params.items() if n.startswith(stage))

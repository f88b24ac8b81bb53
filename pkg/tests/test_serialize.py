import struct

import numpy as np
import pytest

from prunebench.nn import (ModelFormatError, ModelVersionError, build_enet_mini, dumps_model, load_model,
                           loads_model, parse_model, save_model)


@pytest.mark.parametrize("k,m,seed", [(2, 1 / 16, 0), (4, 0.25, 1), (20, 0.5, 2), (7, 1, 3)])
def test_roundtrip_bitwise(tmp_path, k, m, seed):
    g = build_enet_mini(k, m, seed=seed)
    save_model(g, tmp_path / "m.pbm")
    h = load_model(tmp_path / "m.pbm")
    assert h.same_as(g)
    assert dumps_model(h) == dumps_model(g)


def test_payload_is_four_bytes_per_param():
    g = build_enet_mini(5, 0.5)
    _, payload = parse_model(dumps_model(g))
    assert payload == 4 * g.param_count()


def test_truncated_file():
    raw = dumps_model(build_enet_mini(3, 1 / 8))
    for cut in (2, 10, len(raw) // 2, len(raw) - 1):
        with pytest.raises(ModelFormatError) as info:
            loads_model(raw[:cut])
        assert "byte" in str(info.value) and info.value.offset <= cut


def test_trailing_bytes():
    raw = dumps_model(build_enet_mini(3, 1 / 8))
    with pytest.raises(ModelFormatError):
        loads_model(raw + b"\0")


def test_version_mismatch():
    raw = dumps_model(build_enet_mini(3, 1 / 8))
    with pytest.raises(ModelVersionError):
        loads_model(b"PBM2" + raw[4:])
    with pytest.raises(ModelFormatError):
        loads_model(b"XXXX" + raw[4:])


def test_unknown_layer_tag():
    raw = bytearray(dumps_model(build_enet_mini(3, 1 / 8)))
    assert raw[16] == 1  # first layer record follows the 16-byte header
    raw[16] = 9
    with pytest.raises(ModelVersionError, match="unknown layer tag 9"):
        loads_model(bytes(raw))


def test_header_layout():
    g = build_enet_mini(3, 1 / 8)
    raw = dumps_model(g)
    assert raw[:4] == b"PBM1"
    assert struct.unpack_from("<3I", raw, 4) == (len(g.layers), 3, 3)

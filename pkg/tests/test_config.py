from typing import Optional

import pytest

from interformer.config import build_dataclass, coerce, format_lines, parse_lines, parse_override, read_config_file
from interformer.errors import ConfigError
from interformer.model import BlockConfig


def test_parse_lines_skips_comments_and_blanks():
    text = "# header\nblock.d = 16\n\n  block.fusion_mode=add   # trailing\n"
    assert parse_lines(text) == {"block.d": "16", "block.fusion_mode": "add"}


def test_parse_lines_rejects_garbage():
    with pytest.raises(ConfigError, match="cfg:2"):
        parse_lines("block.d = 8\nnot a pair\n", "cfg")


def test_format_then_parse_roundtrips():
    values = {"a.x": 1, "a.y": 0.1, "a.z": True, "a.w": None, "a.s": "sfm"}
    assert parse_lines(format_lines(values)) == {"a.x": "1", "a.y": "0.1", "a.z": "true", "a.w": "none",
                                                 "a.s": "sfm"}


@pytest.mark.parametrize("raw,typ,expect", [("on", bool, True), ("off", bool, False), ("3", int, 3),
                                             ("1e-3", float, 1e-3), ("none", Optional[int], None),
                                             ("4", Optional[int], 4)])
def test_coerce(raw, typ, expect):
    assert coerce(raw, typ, "k") == expect


def test_coerce_names_the_key():
    with pytest.raises(ConfigError) as err:
        coerce("maybe", bool, "block.enable_l2g")
    assert err.value.key == "block.enable_l2g"


def test_build_dataclass_rejects_unknown_key():
    with pytest.raises(ConfigError) as err:
        build_dataclass(BlockConfig, {"block.dd": "8"}, "block")
    assert err.value.key == "block.dd"


def test_build_dataclass_prefixes_validation_key():
    with pytest.raises(ConfigError) as err:
        build_dataclass(BlockConfig, {"block.kernel": "4"}, "block")
    assert err.value.key == "block.kernel"


def test_build_dataclass_ignores_other_sections():
    cfg = build_dataclass(BlockConfig, {"block.d": "16", "block.heads": "2", "train.lr": "1"}, "block")
    assert (cfg.d, cfg.heads) == (16, 2)


def test_override_parsing():
    assert parse_override("train.lr = 0.5") == ("train.lr", "0.5")
    with pytest.raises(ConfigError):
        parse_override("train.lr")


def test_missing_file_names_path(tmp_path):
    with pytest.raises(ConfigError) as err:
        read_config_file(tmp_path / "nope.cfg")
    assert "nope.cfg" in str(err.value)

import numpy as np
import pytest

from canvas import save_image
from errors import ConfigMismatchError, DatasetIOError, UsageError
from input_handler import InputHandler
from models import EnvConfig, MediaType


class TestParseClassList:
    def test_mixed_commas(self):
        assert InputHandler.parse_class_list("cat，tree, house") == ["cat", "tree", "house"]

    @pytest.mark.parametrize("text", [None, "", " , ，"])
    def test_empty(self, text):
        with pytest.raises(UsageError):
            InputHandler.parse_class_list(text)


class TestParseReferenceSpec:
    @pytest.mark.parametrize("spec,expected", [("house:3", ("house", 3)), ("house", ("house", 0)),
                                               (" cat : 1 ", ("cat", 1))])
    def test_valid(self, spec, expected):
        assert InputHandler.parse_reference_spec(spec) == expected

    @pytest.mark.parametrize("spec", [":3", "house:x", "house:-1"])
    def test_invalid(self, spec):
        with pytest.raises(UsageError):
            InputHandler.parse_reference_spec(spec)


class TestResolveReference:
    def test_png_reference(self, sketch_config, house_reference, tmp_path):
        path = str(tmp_path / "my_house.png")
        save_image(house_reference, path)
        label, canvas = InputHandler.resolve_reference(path, sketch_config, None)
        assert label == "my_house"
        np.testing.assert_array_equal(canvas.pixels, house_reference.pixels)

    def test_png_side_mismatch(self, house_reference, tmp_path):
        path = str(tmp_path / "house.png")
        save_image(house_reference, path)
        with pytest.raises(ConfigMismatchError):
            InputHandler.resolve_reference(path, EnvConfig(side=32, media=MediaType.SKETCH), None)

    def test_missing_png(self, sketch_config, tmp_path):
        with pytest.raises(DatasetIOError):
            InputHandler.resolve_reference(str(tmp_path / "nothing.png"), sketch_config, None)

    def test_class_reference(self, sketch_config, quickdraw_file):
        label, canvas = InputHandler.resolve_reference("cat:1", sketch_config, quickdraw_file)
        assert label == "cat"
        assert canvas.side == 28
        assert np.any(canvas.pixels < 255)

    def test_class_index_out_of_range(self, sketch_config, quickdraw_file):
        with pytest.raises(UsageError):
            InputHandler.resolve_reference("cat:2", sketch_config, quickdraw_file)

    def test_class_reference_needs_dataset(self, sketch_config):
        with pytest.raises(UsageError):
            InputHandler.resolve_reference("cat:0", sketch_config, None)

import numpy as np
import pytest
import torch

from mrjl.errors import IngestionError
from mrjl.images import (ImageTensor, TAG_HR, downsample_resize,
                         downsample_resize_batch, load_image, lr_tag,
                         save_image, to_tensor)

from conftest import write_png


def random_image(seed=0, h=256, w=128, tag=TAG_HR):
    g = torch.Generator().manual_seed(seed)
    return ImageTensor(torch.rand(3, h, w, generator=g), tag)


class TestDownsampleResize:
    def test_rate_one_is_identity(self):
        img = random_image(1)
        out = downsample_resize(img, 1)
        assert torch.equal(out.data, img.data)
        assert out.tag == img.tag

    @pytest.mark.parametrize("rate", [2, 3, 4])
    def test_preserves_dims_and_range(self, rate):
        img = random_image(rate)
        out = downsample_resize(img, rate)
        assert out.data.shape == img.data.shape
        assert out.data.min() >= 0 and out.data.max() <= 1
        assert out.tag == lr_tag(rate)

    @pytest.mark.parametrize("rate", [2, 3, 4])
    def test_constant_image_stays_constant(self, rate):
        img = ImageTensor(torch.full((3, 256, 128), 0.37), TAG_HR)
        out = downsample_resize(img, rate)
        assert torch.allclose(out.data, img.data, atol=1e-6)

    @pytest.mark.parametrize("h,w", [(250, 126), (256, 128), (99, 33)])
    def test_non_divisible_sizes_restored(self, h, w):
        img = random_image(5, h=h, w=w)
        for rate in (2, 3, 4):
            out = downsample_resize(img, rate)
            assert out.data.shape == (3, h, w)

    def test_bad_rate_rejected(self):
        img = random_image(2)
        with pytest.raises(ValueError):
            downsample_resize(img, 0)
        with pytest.raises(ValueError):
            downsample_resize(img, -3)

    def test_actually_blurs(self):
        # Down/up-sampling must lose detail, not be a no-op.
        img = random_image(9)
        out = downsample_resize(img, 4)
        assert (out.data - img.data).abs().max() > 0.01

    def test_batched_matches_single(self):
        imgs = [random_image(s) for s in range(3)]
        batch = torch.stack([im.data for im in imgs])
        got = downsample_resize_batch(batch, 3)
        for i, im in enumerate(imgs):
            assert torch.equal(got[i], downsample_resize(im, 3).data)


class TestImageTensor:
    def test_validate_accepts_good_image(self):
        random_image(0).validate()

    def test_validate_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            ImageTensor(torch.rand(1, 8, 8), TAG_HR).validate()

    def test_validate_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            ImageTensor(torch.full((3, 4, 4), 1.5), TAG_HR).validate()

    def test_validate_rejects_nonfinite(self):
        data = torch.rand(3, 4, 4)
        data[0, 0, 0] = float("nan")
        with pytest.raises(ValueError):
            ImageTensor(data, TAG_HR).validate()

    def test_validate_rejects_unknown_tag(self):
        with pytest.raises(ValueError):
            ImageTensor(torch.rand(3, 4, 4), "LR7").validate()


class TestFileRoundTrip:
    def test_load_resizes_to_canonical(self, tmp_path):
        write_png(tmp_path / "a.png", size_hw=(30, 20), seed=3)
        img = load_image(tmp_path / "a.png")
        assert img.data.shape == (3, 256, 128)
        assert 0 <= img.data.min() and img.data.max() <= 1

    def test_save_load_round_trip(self, tmp_path):
        # 8-bit grid values survive a save/load cycle exactly.
        g = torch.Generator().manual_seed(4)
        data = torch.randint(0, 256, (3, 64, 32), generator=g).float() / 255.0
        save_image(ImageTensor(data, TAG_HR), tmp_path / "b.png")
        back = load_image(tmp_path / "b.png", size=None)
        assert torch.equal(back.data, data)

    def test_unreadable_file_names_path(self, tmp_path):
        bad = tmp_path / "broken.png"
        bad.write_bytes(b"not a png")
        with pytest.raises(IngestionError) as err:
            load_image(bad)
        assert str(bad) in err.value.paths

    def test_to_tensor_range(self):
        arr = (np.arange(4 * 6 * 3) % 256).reshape(4, 6, 3).astype(np.uint8)
        from PIL import Image
        t = to_tensor(Image.fromarray(arr))
        assert t.shape == (3, 4, 6)
        assert torch.equal(t, torch.from_numpy(arr).permute(2, 0, 1).float() / 255)

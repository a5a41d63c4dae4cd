import numpy as np
import pytest

from latentcomp.config import parse_config, read_config_file
from latentcomp.errors import ConfigError
from latentcomp.imageio import atomic_write_bytes, read_mask, read_pgm, read_ppm, write_mask, write_pgm, write_ppm


def test_grammar_and_layering(tmp_path):
    p = tmp_path / "c.conf"
    p.write_text("# header\n\nT-Prime = 10   # inline\ntau=4\nskip_normalization = yes\nprompt = \"a red disc\"\n")
    assert read_config_file(p)["T_prime"] == "10"
    cfg, extras = parse_config(p, {"tau": "6", "seed": None})
    assert (cfg.T_prime, cfg.tau, cfg.skip_normalization) == (10, 6, True)
    assert extras == {"prompt": "a red disc"}


def test_presets(tmp_path):
    cfg, _ = parse_config(None, {"preset": "same-domain"})
    assert cfg.skip_optimization and cfg.lambda_slope == 0.0
    p = tmp_path / "c.conf"
    p.write_text("preset = same-domain\nlambda_slope = 0.2\n")
    assert parse_config(p)[0].lambda_slope == 0.2
    with pytest.raises(ConfigError):
        parse_config(None, {"preset": "nope"})


@pytest.mark.parametrize("text,key", [("bogus = 1", "bogus"), ("N = three", "N"), ("no equals sign", "line 1"),
                                      ("skip_optimization = maybe", "skip_optimization")])
def test_config_errors(tmp_path, text, key):
    p = tmp_path / "c.conf"
    p.write_text(text + "\n")
    with pytest.raises(ConfigError) as exc:
        parse_config(p)
    assert exc.value.key == key


def test_ppm_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(3, 5, 7)) / 255.0
    write_ppm(tmp_path / "a.ppm", img)
    np.testing.assert_allclose(read_ppm(tmp_path / "a.ppm"), img, atol=1e-12)
    g = rng.integers(0, 256, size=(4, 6)) / 255.0
    write_pgm(tmp_path / "a.pgm", g)
    np.testing.assert_allclose(read_pgm(tmp_path / "a.pgm"), g, atol=1e-12)
    m = rng.uniform(size=(4, 6)) > 0.5
    write_mask(tmp_path / "m.pgm", m)
    assert np.array_equal(read_mask(tmp_path / "m.pgm"), m.astype(float))


def test_header_comments_and_clipping(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n# another\n255\n" + bytes([0, 255]))
    assert read_pgm(p).tolist() == [[0.0, 1.0]]
    write_pgm(tmp_path / "d.pgm", np.array([[-1.0, 2.0]]))
    assert read_pgm(tmp_path / "d.pgm").tolist() == [[0.0, 1.0]]
    p.write_bytes(b"P6\n1 1\n255\n" + bytes(3))
    with pytest.raises(ValueError):
        read_pgm(p)


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "x.bin"
    atomic_write_bytes(p, b"one")
    atomic_write_bytes(p, b"two")
    assert p.read_bytes() == b"two" and [f.name for f in tmp_path.iterdir()] == ["x.bin"]

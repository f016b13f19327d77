import math

import numpy as np
import pytest

from wmflow import phantom as ph
from wmflow.errors import ValidationError
from wmflow.spectral import energy_spectrum, wmf_from_velocity
from wmflow.phantom import PhantomSpec, probe_voxels, generate


def test_spec_invariants_are_enforced():
    with pytest.raises(ValidationError, match="peak_velocity"):
        PhantomSpec(peak_velocity=2.0, venc=1.5)
    with pytest.raises(ValidationError, match="radius"):
        PhantomSpec(radius_mm=4.0)
    with pytest.raises(ValidationError, match="systolic_frame"):
        PhantomSpec(systolic_frame=20)
    with pytest.raises(ValidationError, match="geometry"):
        PhantomSpec(geometry="helix")


def test_noiseless_harmonic_has_single_bin(small_spec):
    spec = small_spec.replace(geometry="straight_tube", waveform="pure_harmonic", snr_mag=math.inf)
    _, vel, _ = generate(spec)
    cx, cy = (spec.dims[0] - 1) // 2, (spec.dims[1] - 1) // 2
    energies = energy_spectrum(vel.w[:, cx, cy, 4]).energies
    assert energies[0] > 0
    assert np.all(energies[1:] <= 1e-12 * energies[0])


@pytest.mark.parametrize("harmonic", [1, 3])
@pytest.mark.parametrize("geometry", ["straight_tube", "u_arch"])
def test_noiseless_wmf_min_is_exact(small_spec, geometry, harmonic):
    spec = small_spec.replace(geometry=geometry, waveform="pure_harmonic", harmonic=harmonic, snr_mag=math.inf)
    _, vel, mask = generate(spec)
    wmf = wmf_from_velocity(vel).values
    np.testing.assert_allclose(wmf[mask.values], harmonic, atol=1e-6)
    assert np.all(wmf[~mask.values] == spec.n_frames // 2)


def _arrays(data):
    return [data.magnitude.values, *data.velocity.components, data.mask.values]


def test_generation_is_reproducible(small_spec):
    ref = _arrays(generate(small_spec))
    for other in (generate(small_spec), generate(small_spec, threads=3)):
        assert all(np.array_equal(x, y) for x, y in zip(ref, _arrays(other)))
    reseeded = generate(small_spec.replace(rng_seed=1))
    assert not np.array_equal(reseeded.velocity.u, ref[1])


def test_velocity_noise_matches_formula():
    spec = PhantomSpec(geometry="straight_tube", dims=(64, 64, 64), n_frames=20, snr_mag=20.0)
    _, vel, mask = generate(spec)
    clean = ph.clean_velocity(spec)
    sigma = ph.velocity_noise_sigma(spec)
    inside = mask.values
    residuals = []
    for k, comp in enumerate(vel.components):
        noisy = comp.astype(np.float64)[:, inside]
        keep = np.abs(noisy) < spec.venc
        r = (noisy - clean[k][:, inside]) / sigma[inside]
        residuals.append(r[keep])
    pooled = np.concatenate(residuals)
    assert pooled.size >= 10_000
    assert np.std(pooled) == pytest.approx(1.0, rel=0.10)


def test_probe_lung_noise_exceeds_tissue_by_sigma_ratio():
    spec = PhantomSpec(
        geometry="straight_tube",
        dims=(32, 32, 16),
        n_frames=20,
        radius_mm=6.0,
        background_mag_level=0.8,
        lung_mag_level=0.2,
        lung_start_y=26,
        rng_seed=3,
    )
    data = generate(spec)
    xs = range(2, 30, 3)
    tissue = [(x, 2, z) for x in xs for z in range(16)]
    lung = [(x, 29, z) for x in xs for z in range(16)]

    def pooled_std(points):
        probes = probe_voxels(data, points)
        return float(np.std(np.concatenate([p.speed for p in probes])))

    # background speed is pure noise, so its spread scales like sigma_v
    ratio = pooled_std(lung) / pooled_std(tissue)
    assert ratio == pytest.approx(0.8 / 0.2, rel=0.20)


def test_probe_center_peak_and_background_wmf(small_spec):
    spec = small_spec.replace(geometry="straight_tube", waveform="pure_harmonic", harmonic=2)
    data = generate(spec)
    cx, cy = (spec.dims[0] - 1) // 2, (spec.dims[1] - 1) // 2
    center, background = probe_voxels(data, [(cx, cy, 10), (1, 1, 10)])
    assert int(np.argmax(center.spectra["w"].energies)) + 1 == 2
    assert background.wmf_min > center.wmf_min
    assert float(np.mean(background.speed)) < float(np.mean(center.speed))
    with pytest.raises(ValidationError):
        probe_voxels(data, [(spec.dims[0], 0, 0)])


def test_mask_volume_matches_analytic_tube():
    spec = PhantomSpec(geometry="straight_tube", dims=(40, 40, 20), radius_mm=9.0)
    _, _, mask = generate(spec.replace(snr_mag=math.inf))
    h = max(spec.spacing)
    length = spec.dims[2] * spec.spacing[2]
    voxel = float(np.prod(spec.spacing))
    measured = mask.count * voxel
    analytic = math.pi * spec.radius_mm**2 * length
    shell = math.pi * ((spec.radius_mm + h) ** 2 - spec.radius_mm**2) * length
    assert abs(measured - analytic) <= shell


def test_config_round_trip(tmp_path, small_spec):
    spec = small_spec.replace(lung_mag_level=0.25, rng_seed=9, snr_mag=math.inf)
    path = tmp_path / "phantom.ini"
    path.write_text(ph.spec_to_text(spec))
    assert ph.load_spec(path) == spec


def test_config_partial_and_bad_keys():
    spec = ph.spec_from_text("[phantom]\ngeometry = straight_tube  # comment\nsnr_mag = 10\n")
    assert spec.geometry == "straight_tube" and spec.snr_mag == 10.0 and spec.dims == PhantomSpec().dims
    with pytest.raises(ValidationError, match="unknown"):
        ph.spec_from_text("[phantom]\ncolour = red\n")
    with pytest.raises(ValidationError):
        ph.spec_from_text("[phantom]\nn_frames = twenty\n")
    with pytest.raises(ValidationError):
        ph.spec_from_text("geometry = u_arch\n")


def test_diastolic_waveform_is_low():
    spec = PhantomSpec()
    w = ph.waveform(spec)
    assert w[spec.systolic_frame] == pytest.approx(1.0)
    assert w[ph.diastolic_frame(spec)] == pytest.approx(spec.diastolic_tail, abs=0.01)

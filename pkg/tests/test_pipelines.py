import numpy as np
import pytest

from mwrecon.filters import FilterParams, all_pass_filter, apply_filter, make_filter
from mwrecon.grappa import KernelGeometry
from mwrecon.kspace import MultiCoilKSpace, apply_pattern, ifft2c, make_uniform_pattern, sos_combine
from mwrecon.network import LayerSpec, NetworkArch, OptimizerConfig, TrainingDivergedError, init_network, loss
from mwrecon.phantom import make_coil_maps, shepp_logan, simulate_kspace
from mwrecon.pipelines import (
    MultiWeightConfig,
    ReconConfig,
    build_mw_batch,
    build_training_pairs,
    default_arch,
    grappa_reconstruct,
    make_multiweight_config,
    mw_reconstruct,
    raki_reconstruct,
    reconstruct,
    reconstruct_image,
)
from oracles import dft2c_direct, idft2c_direct, planted_full_grid, sos_loop


def phantom_scene(ny=48, nx=48, coils=4, R=4, acs=16, snr=None, seed=0):
    img = shepp_logan(ny, nx)
    maps = make_coil_maps(coils, ny, nx, seed=seed)
    full = simulate_kspace(img, maps, snr_db=snr, seed=seed)
    pattern = make_uniform_pattern(ny, R, acs)
    return full, apply_pattern(full, pattern), pattern


def fast_opt(iters=150):
    return OptimizerConfig(kind="adam", lr=0.001, iters=iters)


class TestMultiWeightConfig:
    def test_requires_all_pass(self):
        f = make_filter(FilterParams(P=0.4), 8, 8)
        with pytest.raises(ValueError, match="all-pass"):
            MultiWeightConfig(filters=(f,))

    def test_all_pass_moved_first(self):
        f = make_filter(FilterParams(P=0.4), 8, 8)
        mw = MultiWeightConfig(filters=(f, all_pass_filter(8, 8)))
        assert mw.filters[0].is_all_pass
        assert mw.n_highpass == 1

    def test_factory_default_bank(self):
        mw = make_multiweight_config(16, 16)
        assert mw.n_highpass == 2
        assert mw.filters[0].is_all_pass
        assert [f.params.P for f in mw.filters[1:]] == [0.6, 0.2]

    def test_dims_must_agree(self):
        with pytest.raises(ValueError, match="dims"):
            MultiWeightConfig(filters=(all_pass_filter(8, 8), make_filter(FilterParams(P=0.4), 4, 4)))


class TestBuildTrainingPairs:
    def test_r2_five_rows_targets_odd_rows(self):
        # single 2-tap linear layer, R=2: windows anchor on even rows
        rng = np.random.default_rng(0)
        data = rng.standard_normal((1, 5, 6)) + 1j * rng.standard_normal((1, 5, 6))
        acs = MultiCoilKSpace(data)
        arch = NetworkArch(2, (LayerSpec(2, 3, 2, "identity"),))
        ts = build_training_pairs(acs, R=2, arch=arch, target_coil=0)
        # sources: lattice rows {0, 2, 4}; windows {0,2} and {2,4}; targets rows 1 and 3
        assert ts.sources.shape == (1, 2, 3, 6)
        assert ts.targets.shape == (1, 2, 2, 4)
        assert np.array_equal(ts.targets[0, 0], data[0, [1, 3], 1:5].real)
        assert np.array_equal(ts.targets[0, 1], data[0, [1, 3], 1:5].imag)

    def test_sources_are_lattice_rows_split(self):
        rng = np.random.default_rng(1)
        data = rng.standard_normal((2, 9, 8)) + 1j * rng.standard_normal((2, 9, 8))
        acs = MultiCoilKSpace(data)
        arch = default_arch("mw_raki", n_coils=2, R=3)
        ts = build_training_pairs(acs, R=3, arch=arch, target_coil=1)
        lattice = data[:, [0, 3, 6], :]
        assert np.array_equal(ts.sources[0, :2], lattice.real)
        assert np.array_equal(ts.sources[0, 2:], lattice.imag)

    def test_absolute_row_alignment(self):
        rng = np.random.default_rng(2)
        data = rng.standard_normal((1, 8, 8)) + 1j * rng.standard_normal((1, 8, 8))
        acs = MultiCoilKSpace(data)
        arch = NetworkArch(2, (LayerSpec(2, 3, 2, "identity"),))
        ts = build_training_pairs(acs, R=2, arch=arch, target_coil=0, acs_row0=5)
        # absolute lattice: ACS rows 1, 3, 5, 7
        assert np.array_equal(ts.sources[0, 0], data[0, [1, 3, 5, 7], :].real)

    def test_constant_acs_gives_constant_targets(self):
        consts = np.array([1.5, -2.0])
        data = np.broadcast_to(consts[:, None, None], (2, 7, 8)).astype(complex)
        acs = MultiCoilKSpace(data)
        arch = NetworkArch(4, (LayerSpec(2, 3, 2, "identity"),))
        ts = build_training_pairs(acs, R=2, arch=arch, target_coil=0)
        assert np.all(ts.targets[0, 0] == 1.5)
        assert np.all(ts.targets[0, 1] == 0.0)
        # a zero-weight linear net starts at the mean of the squared targets
        zero_net = init_network(arch, 0)
        zero_net = type(zero_net)(
            arch, tuple(np.zeros_like(w) for w in zero_net.weights), None, 0
        )
        assert loss(zero_net, ts) == pytest.approx(np.mean(ts.targets**2))

    def test_acs_too_small(self):
        acs = MultiCoilKSpace(np.zeros((1, 3, 8), dtype=complex))
        arch = NetworkArch(2, (LayerSpec(6, 3, 2, "identity"),))
        with pytest.raises(ValueError, match="at least 5"):
            build_training_pairs(acs, R=4, arch=arch, target_coil=0)

    def test_every_target_is_a_raw_acs_sample(self):
        rng = np.random.default_rng(3)
        data = rng.standard_normal((3, 20, 12)) + 1j * rng.standard_normal((3, 20, 12))
        acs = MultiCoilKSpace(data)
        arch = default_arch("raki", n_coils=3, R=4)
        ts = build_training_pairs(acs, R=4, arch=arch, target_coil=2, acs_row0=8)
        flat_targets = set(np.round(ts.targets[0, :3].ravel(), 12))
        flat_acs = set(np.round(data[2].real.ravel(), 12))
        assert flat_targets <= flat_acs


class TestBuildMwBatch:
    def test_degenerate_single_entry(self):
        rng = np.random.default_rng(4)
        ks = MultiCoilKSpace(rng.standard_normal((2, 8, 8)) + 0j)
        mw = MultiWeightConfig(filters=(all_pass_filter(8, 8),))
        batch = build_mw_batch(ks, mw)
        assert batch.shape == (1, 2, 8, 8)
        assert np.array_equal(batch[0], ks.data)

    def test_default_bank_entry0_bit_equal(self):
        rng = np.random.default_rng(5)
        ks = MultiCoilKSpace(rng.standard_normal((2, 16, 16)) + 1j * rng.standard_normal((2, 16, 16)))
        batch = build_mw_batch(ks, make_multiweight_config(16, 16))
        assert batch.shape[0] == 3
        assert np.array_equal(batch[0], ks.data)

    def test_weighted_entry_matches_apply_filter(self):
        rng = np.random.default_rng(6)
        ks = MultiCoilKSpace(rng.standard_normal((3, 8, 8)) + 1j * rng.standard_normal((3, 8, 8)))
        mw = make_multiweight_config(8, 8, exponents=(0.4,))
        batch = build_mw_batch(ks, mw)
        expected = apply_filter(ks, mw.filters[1])
        assert np.max(np.abs(batch[1] - expected.data)) < 1e-14


class TestReconstructImage:
    def test_center_impulse_flat_image(self):
        ks = np.zeros((1, 16, 16), dtype=complex)
        ks[0, 8, 8] = 1.0
        img = reconstruct_image(MultiCoilKSpace(ks))
        assert np.allclose(img, 1.0 / 16.0, atol=1e-14)

    def test_fully_sampled_phantom_reference(self):
        full, _, _ = phantom_scene()
        ref = sos_combine(ifft2c(full))
        assert np.max(np.abs(reconstruct_image(full) - ref)) < 1e-10

    def test_matches_composed_oracles(self):
        rng = np.random.default_rng(7)
        data = rng.standard_normal((4, 16, 16)) + 1j * rng.standard_normal((4, 16, 16))
        images = np.stack([idft2c_direct(c) for c in data])
        expected = sos_loop(images)
        assert np.max(np.abs(reconstruct_image(MultiCoilKSpace(data)) - expected)) < 1e-12


class TestGrappaPipeline:
    def test_planted_kernel_recovery(self):
        rng = np.random.default_rng(8)
        full, _ = planted_full_grid(rng, 3, 32, 16, R=4)
        pattern = make_uniform_pattern(32, 4, 10)
        measured = apply_pattern(MultiCoilKSpace(full), pattern)
        cfg = ReconConfig(method="grappa", pattern=pattern)
        result = grappa_reconstruct(measured, cfg)
        rel = np.linalg.norm(result.kspace.data - full) / np.linalg.norm(full)
        assert rel < 1e-8
        assert np.array_equal(
            result.kspace.data[:, pattern.mask], measured.data[:, pattern.mask]
        )

    def test_geometry_r_mismatch(self):
        pattern = make_uniform_pattern(16, 2, 6)
        cfg = ReconConfig(method="grappa", pattern=pattern, grappa_geometry=KernelGeometry(R=4))
        with pytest.raises(ValueError, match="R="):
            grappa_reconstruct(MultiCoilKSpace(np.zeros((1, 16, 8), dtype=complex)), cfg)


class TestScanSpecificPipeline:
    def test_rejects_fully_sampled(self):
        full, _, _ = phantom_scene()
        pattern = make_uniform_pattern(48, 4, 48)
        cfg = ReconConfig(method="raki", pattern=pattern, optimizer=fast_opt())
        with pytest.raises(ValueError, match="nothing to reconstruct"):
            raki_reconstruct(full, cfg)

    def test_rejects_inconsistent_zeros(self):
        full, _, pattern = phantom_scene()
        cfg = ReconConfig(method="raki", pattern=pattern, optimizer=fast_opt())
        with pytest.raises(ValueError, match="nonzero"):
            raki_reconstruct(full, cfg)  # full grid has data on missing rows

    @pytest.mark.parametrize("method", ["raki", "rraki", "mw_raki", "mw_rraki"])
    def test_data_consistency_and_shapes(self, method):
        full, measured, pattern = phantom_scene(snr=25, seed=11)
        cfg = ReconConfig(method=method, pattern=pattern, seed=5, optimizer=fast_opt(60))
        result = reconstruct(measured, cfg)
        assert np.array_equal(
            result.kspace.data[:, pattern.mask], measured.data[:, pattern.mask]
        )
        assert result.sos.shape == (48, 48)
        assert len(result.loss_histories) == measured.n_coils
        assert all(len(h) == 60 for h in result.loss_histories)
        assert np.isfinite(result.kspace.data).all()

    def test_training_reduces_acs_loss(self):
        _, measured, pattern = phantom_scene(snr=None, seed=3)
        cfg = ReconConfig(method="raki", pattern=pattern, seed=0, optimizer=fast_opt(300))
        result = raki_reconstruct(measured, cfg)
        for history in result.loss_histories:
            assert history[-1] <= 0.1 * history[0]

    def test_missing_rows_are_filled(self):
        _, measured, pattern = phantom_scene(snr=None, seed=4)
        cfg = ReconConfig(method="mw_raki", pattern=pattern, seed=1, optimizer=fast_opt(60))
        result = mw_reconstruct(measured, cfg)
        missing = result.kspace.data[:, ~pattern.mask]
        assert np.any(missing != 0)

    def test_planted_linear_kernel_subsumption(self):
        # a single linear conv layer contains the planted interpolation kernel
        rng = np.random.default_rng(9)
        full, _ = planted_full_grid(rng, 2, 24, 16, R=2)
        pattern = make_uniform_pattern(24, 2, 10)
        measured = apply_pattern(MultiCoilKSpace(full), pattern)
        arch = NetworkArch(4, (LayerSpec(2, 3, 2, "identity"),))
        cfg = ReconConfig(
            method="raki",
            pattern=pattern,
            seed=2,
            arch=arch,
            optimizer=OptimizerConfig(kind="adam", lr=0.003, iters=4000),
        )
        result = raki_reconstruct(measured, cfg)
        missing = ~pattern.mask
        rel = np.linalg.norm(result.kspace.data[:, missing] - full[:, missing]) / np.linalg.norm(
            full[:, missing]
        )
        assert rel < 1e-3

    def test_divergence_reports_coil(self):
        _, measured, pattern = phantom_scene(seed=6)
        cfg = ReconConfig(
            method="raki",
            pattern=pattern,
            optimizer=OptimizerConfig(kind="sgd_momentum", lr=1e12, iters=50),
        )
        with pytest.raises(TrainingDivergedError, match=r"coil \d"):
            raki_reconstruct(measured, cfg)


class TestMultiWeightSemantics:
    def test_degenerate_bank_matches_raki_bit_exact(self):
        _, measured, pattern = phantom_scene(snr=20, seed=12)
        arch = default_arch("mw_raki", n_coils=4, R=4)
        mw = MultiWeightConfig(filters=(all_pass_filter(48, 48),))
        cfg_mw = ReconConfig(
            method="mw_raki", pattern=pattern, seed=7, arch=arch, optimizer=fast_opt(80), multiweight=mw
        )
        cfg_raki = ReconConfig(
            method="raki", pattern=pattern, seed=7, arch=arch, optimizer=fast_opt(80)
        )
        a = mw_reconstruct(measured, cfg_mw)
        b = raki_reconstruct(measured, cfg_raki)
        assert np.array_equal(a.kspace.data, b.kspace.data)

    def test_near_dc_falls_back_to_all_pass_branch(self):
        # with a huge eps the high-pass branch never contributes, so values
        # where it was already invalid must be identical in both runs
        _, measured, pattern = phantom_scene(snr=20, seed=13)
        f = make_filter(FilterParams(P=0.4), 48, 48)
        base = (all_pass_filter(48, 48), f)
        eps = 0.5 * float(f.h.max())
        cfg_a = ReconConfig(
            method="mw_raki",
            pattern=pattern,
            seed=3,
            optimizer=fast_opt(40),
            multiweight=MultiWeightConfig(filters=base, eps=eps),
        )
        cfg_b = ReconConfig(
            method="mw_raki",
            pattern=pattern,
            seed=3,
            optimizer=fast_opt(40),
            multiweight=MultiWeightConfig(filters=base, eps=10.0 * float(f.h.max())),
        )
        a = mw_reconstruct(measured, cfg_a)
        b = mw_reconstruct(measured, cfg_b)
        invalid = f.h < eps
        assert invalid.any() and (~invalid).any()
        assert np.array_equal(a.kspace.data[:, invalid], b.kspace.data[:, invalid])
        changed = a.kspace.data[:, ~pattern.mask, :] != b.kspace.data[:, ~pattern.mask, :]
        assert changed.any()

    def test_determinism(self):
        _, measured, pattern = phantom_scene(snr=20, seed=14)
        cfg = ReconConfig(method="mw_rraki", pattern=pattern, seed=9, optimizer=fast_opt(40))
        a = mw_reconstruct(measured, cfg)
        b = mw_reconstruct(measured, cfg)
        assert np.array_equal(a.kspace.data, b.kspace.data)

    def test_scaling_invariance(self):
        _, measured, pattern = phantom_scene(snr=25, seed=15)
        cfg = ReconConfig(method="mw_raki", pattern=pattern, seed=4, optimizer=fast_opt(60))
        base = mw_reconstruct(measured, cfg)
        alpha = 7.25
        scaled = mw_reconstruct(MultiCoilKSpace(alpha * measured.data), cfg)
        rel = np.abs(scaled.sos - alpha * base.sos) / np.maximum(np.abs(alpha * base.sos), 1e-30)
        assert np.max(rel) < 1e-8

    def test_seed_changes_result(self):
        _, measured, pattern = phantom_scene(snr=20, seed=16)
        a = mw_reconstruct(
            measured, ReconConfig(method="mw_raki", pattern=pattern, seed=0, optimizer=fast_opt(30))
        )
        b = mw_reconstruct(
            measured, ReconConfig(method="mw_raki", pattern=pattern, seed=1, optimizer=fast_opt(30))
        )
        assert not np.array_equal(a.kspace.data, b.kspace.data)


class TestConfigValidation:
    def test_unknown_method(self):
        pattern = make_uniform_pattern(16, 2, 4)
        with pytest.raises(ValueError, match="unknown method"):
            ReconConfig(method="sense", pattern=pattern)

    def test_multiweight_rejected_for_plain_raki(self):
        pattern = make_uniform_pattern(16, 2, 4)
        with pytest.raises(ValueError, match="multiweight"):
            ReconConfig(
                method="raki",
                pattern=pattern,
                multiweight=MultiWeightConfig(filters=(all_pass_filter(16, 8),)),
            )

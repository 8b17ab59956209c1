import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import flat_model

from sigla.comms import (
    FULL_SCALE_MODEL_PARAMS,
    FULL_SCALE_SELECTION_FRACTION,
    ChannelConfig,
    TransferOutcome,
    bytes_for_params,
    full_scale_channel,
    load_outcomes_csv,
    prioritized_transmit,
    round_comm_metrics,
    save_outcomes_csv,
    success_probability,
    transfer,
)
from sigla.nn import param_count
from sigla.sensitivity import ImportanceReport, LayerSelection, full_selection


def generous_channel(**kw):
    base = dict(
        mean_rate=1e9,
        rate_sigma=0.0,
        contact_time_min=5.0,
        contact_time_max=10.0,
        per_mb_loss_prob=0.0,
    )
    base.update(kw)
    return ChannelConfig(**base)


class TestTransfer:
    def test_tiny_bytes_nearly_always_succeed(self):
        cfg = generous_channel(rate_sigma=0.5)
        rng = np.random.default_rng(1)
        wins = sum(transfer(1, cfg, rng).success for _ in range(10_000))
        assert wins / 10_000 >= 0.999

    def test_oversized_payload_always_fails(self):
        cfg = generous_channel(contact_time_min=0.1, contact_time_max=0.2)
        # 8 * bytes / rate = 8 s >> 0.2 s
        rng = np.random.default_rng(2)
        assert all(not transfer(10**9, cfg, rng).success for _ in range(100))

    def test_empirical_rate_matches_closed_form(self):
        cfg = ChannelConfig(
            mean_rate=1e9,
            rate_sigma=0.0,
            contact_time_min=0.1,
            contact_time_max=0.9,
            per_mb_loss_prob=0.001,
        )
        nbytes = 50 * 2**20  # 50 MiB
        rng = np.random.default_rng(3)
        n = 100_000
        wins = sum(transfer(nbytes, cfg, rng).success for _ in range(n))
        assert abs(wins / n - success_probability(nbytes, cfg)) < 0.01

    def test_monotone_in_bytes_for_fixed_stream(self):
        cfg = ChannelConfig(
            mean_rate=1e8,
            rate_sigma=0.3,
            contact_time_min=0.1,
            contact_time_max=1.0,
            per_mb_loss_prob=0.01,
        )
        for seed in range(200):
            big = transfer(10**7, cfg, np.random.default_rng(seed))
            small = transfer(10**6, cfg, np.random.default_rng(seed))
            if big.success:
                assert small.success

    def test_success_elapsed_within_contact(self):
        cfg = generous_channel()
        for seed in range(50):
            o = transfer(10**6, cfg, np.random.default_rng(seed))
            if o.success:
                assert o.elapsed <= cfg.contact_time_max

    def test_deterministic_given_stream(self):
        cfg = generous_channel(rate_sigma=0.4, per_mb_loss_prob=0.05)
        a = transfer(10**7, cfg, np.random.default_rng(9))
        b = transfer(10**7, cfg, np.random.default_rng(9))
        assert a == b

    def test_bad_direction_rejected(self):
        with pytest.raises(ValueError):
            TransferOutcome(0, 1, "sideways", 10, 5, True, 0.1)


class TestFullScalePreset:
    def test_full_model_near_72_percent(self):
        cfg = full_scale_channel()
        nbytes = bytes_for_params(FULL_SCALE_MODEL_PARAMS, cfg)
        p = success_probability(nbytes, cfg)
        assert abs(p - 0.72) <= 0.03

    def test_selected_layers_above_90_percent(self):
        cfg = full_scale_channel()
        selected = int(FULL_SCALE_SELECTION_FRACTION * FULL_SCALE_MODEL_PARAMS)
        p = success_probability(bytes_for_params(selected, cfg), cfg)
        assert p >= 0.90


def outcome(v, direction="uplink", success=True, nbytes=100, params=50, r=1):
    return TransferOutcome(v, r, direction, nbytes, params, success, 0.01)


class TestRoundCommMetrics:
    def test_all_failures_zero_everything(self):
        outs = [outcome(v, success=False) for v in range(4)]
        report = round_comm_metrics(outs)
        assert report.params_transmitted == 0
        assert report.bytes_up == 0
        assert report.success_rate == 0.0

    def test_full_model_uplinks_count(self):
        model = flat_model((3, 4, 2), seed=0)
        total = param_count(model)
        sel = full_selection(model)
        outs = [
            outcome(v, nbytes=total * 2, params=total) for v in range(10)
        ]
        report = round_comm_metrics(outs, {v: sel for v in range(10)}, model)
        assert report.params_transmitted == 10 * total
        assert report.uplink_received == 10

    def test_matches_log_replay_oracle(self):
        rng = np.random.default_rng(4)
        outs = []
        for v in range(12):
            ok = bool(rng.integers(0, 2))
            outs.append(outcome(v, success=ok, nbytes=int(rng.integers(1, 999)), params=v + 1))
            outs.append(
                outcome(v, direction="downlink", success=bool(rng.integers(0, 2)),
                        nbytes=int(rng.integers(1, 999)))
            )
        report = round_comm_metrics(outs)
        # brute-force re-scan of the log
        expect_params = sum(o.params_attempted for o in outs
                            if o.direction == "uplink" and o.success)
        expect_up = sum(o.bytes_attempted for o in outs
                        if o.direction == "uplink" and o.success)
        expect_down = sum(o.bytes_attempted for o in outs
                          if o.direction == "downlink" and o.success)
        assert report.params_transmitted == expect_params
        assert report.bytes_up == expect_up
        assert report.bytes_down == expect_down
        assert report.success_rate == sum(o.success for o in outs) / len(outs)

    def test_duplicate_vehicle_direction_rejected(self):
        outs = [outcome(1), outcome(1)]
        with pytest.raises(ValueError, match="duplicate"):
            round_comm_metrics(outs)

    def test_selection_mismatch_rejected(self):
        model = flat_model((3, 4, 2), seed=0)
        sel = full_selection(model)
        outs = [outcome(0, params=7)]  # wrong count on purpose
        with pytest.raises(ValueError, match="selection"):
            round_comm_metrics(outs, {0: sel}, model)


class TestPrioritizedTransmit:
    def _setup(self):
        model = flat_model((4, 6, 3), seed=5)  # dense_0: 30 params, output: 21
        sel = full_selection(model)
        report = ImportanceReport(
            vehicle_id=0,
            scores={"dense_0": 0.9, "output": 0.5},
            epsilon=0.1,
            eval_set_size=10,
        )
        return model, sel, report

    def test_huge_window_delivers_everything(self):
        model, sel, report = self._setup()
        cfg = generous_channel(contact_time_min=1e6, contact_time_max=1e6)
        delivered, out = prioritized_transmit(model, sel, report, cfg, np.random.default_rng(0))
        assert set(delivered) == set(sel.selected)
        assert out.success

    def test_window_fitting_only_top_layer(self):
        model, sel, report = self._setup()
        # dense_0: 30 params * 2 B * 8 bits / 480 bps = 1.0 s; output adds 0.7 s
        cfg = ChannelConfig(
            mean_rate=480.0,
            rate_sigma=0.0,
            contact_time_min=1.2,
            contact_time_max=1.2,
            per_mb_loss_prob=0.0,
        )
        delivered, out = prioritized_transmit(model, sel, report, cfg, np.random.default_rng(0))
        assert delivered == ("dense_0",)
        assert not out.success
        assert out.elapsed == 1.2

    def test_delivery_is_a_prefix_of_importance_order(self):
        model, sel, report = self._setup()
        order = tuple(sorted(sel.selected, key=lambda n: -report.scores[n]))
        for seed in range(50):
            cfg = ChannelConfig(
                mean_rate=500.0,
                rate_sigma=0.5,
                contact_time_min=0.05,
                contact_time_max=2.5,
            )
            delivered, _ = prioritized_transmit(
                model, sel, report, cfg, np.random.default_rng(seed)
            )
            assert delivered == order[: len(delivered)]


class TestOutcomeCsv:
    def test_roundtrip(self, tmp_path):
        outs = [
            outcome(0),
            outcome(1, success=False),
            outcome(2, direction="downlink", nbytes=7, params=3, r=4),
        ]
        path = tmp_path / "outcomes.csv"
        save_outcomes_csv(outs, path)
        assert load_outcomes_csv(path) == outs

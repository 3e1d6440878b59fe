import numpy as np
import pytest

from eriver.station_queue import (LedgerError, QueueLedger, WaitDistribution, charge_duration,
                                  wait_time_distribution)
from oracles import fifo_waits

EXACT = 1e-300  # makes the epsilon guard vanish next to any positive cohort


def ledger(capacity=5.0, length=12, durations=(1,), epsilon=1e-6, **kw):
    return QueueLedger(0, capacity, length, np.array(durations), epsilon, **kw)


@pytest.mark.parametrize("b, expected", [(0, 2), (3, 1), (4, 0)])
def test_charge_duration(uniform_cfg, b, expected):
    assert charge_duration(b, uniform_cfg) == expected


def test_charge_duration_range(uniform_cfg):
    with pytest.raises(ValueError):
        charge_duration(5, uniform_cfg)
    with pytest.raises(ValueError):
        charge_duration(-1, uniform_cfg)


@pytest.mark.parametrize("z, expected", [(10.0, [0.5, 0.5]), (20.0, [0.25] * 4), (3.0, [1.0])])
def test_constant_free_spots(z, expected):
    w = ledger(epsilon=EXACT).admit(0, np.array([z]))
    assert np.allclose(w.pmf, expected, atol=1e-15)
    # the default epsilon shifts each entry by about epsilon / z only
    w = ledger().admit(0, np.array([z]))
    assert np.allclose(w.pmf[:len(expected)], expected, atol=1e-6)
    assert w.is_valid()


def test_functional_wrapper(uniform_cfg):
    led = QueueLedger.for_station(uniform_cfg, 0, 30)
    arrivals = np.array([0, 0, 25.0, 0, 0])
    w, same = wait_time_distribution(led, 3, arrivals, uniform_cfg)
    assert same is led and w.is_valid()
    assert w[0] == pytest.approx(20 / 25, abs=1e-6)
    with pytest.raises(ValueError):
        wait_time_distribution(led, 4, np.ones(3), uniform_cfg)


def test_zero_cohort_books_nothing():
    led = ledger()
    w = led.admit(2, np.zeros(1))
    assert w.pmf.tolist() == [1.0]
    assert not led.occupancy.any() and not led.cohorts


def test_zero_cohort_at_full_station_sees_the_queue():
    led = ledger(capacity=5.0, durations=(2,))
    led.admit(0, np.array([10.0]))
    w = led.admit(1, np.zeros(1))
    # no immediate admission; the later mass sits on free slivers and the next wave
    assert w[0] < 1e-6 and w.is_valid()
    assert w.mean >= 1.0


def test_invalid_inputs():
    led = ledger()
    with pytest.raises(ValueError):
        led.admit(0, np.array([-1.0]))
    with pytest.raises(IndexError):
        led.admit(12, np.array([1.0]))


def test_truncation_puts_residual_on_last_step():
    led = ledger(capacity=1.0, length=3, epsilon=EXACT)
    w = led.admit(0, np.array([10.0]))
    assert len(w) == 3 and w.is_valid()
    assert w.pmf.tolist() == pytest.approx([0.1, 0.1, 0.8])
    assert led.cohorts[0].overflow == pytest.approx(7.0)


def random_stream(rng, classes=3, steps=20, capacity=None):
    capacity = capacity or float(rng.integers(1, 25))
    durations = rng.integers(1, 4, size=classes)
    masses = rng.exponential(capacity, size=(steps, classes)) * (rng.random((steps, classes)) < 0.5)
    return capacity, durations, masses


def test_randomized_streams_keep_invariants():
    rng = np.random.default_rng(11)
    for _ in range(300):
        capacity, durations, masses = random_stream(rng)
        led = QueueLedger(0, capacity, 40, durations, 10 ** rng.uniform(-9, -3),
                          avg_duration=bool(rng.integers(2)))
        for t, m in enumerate(masses):
            w = led.admit(t, m)
            assert w.is_valid(1e-9)
            assert (w.pmf >= 0).all() and (w.pmf <= 1).all()
        assert led.occupancy.max() <= capacity + 1e-9
        assert led.occupancy.min() >= -1e-12


def test_admitted_mass_equals_arrivals():
    rng = np.random.default_rng(5)
    for _ in range(200):
        capacity, durations, masses = random_stream(rng)
        led = QueueLedger(0, capacity, 400, durations, 1e-6)
        for t, m in enumerate(masses):
            led.admit(t, m)
        for rec in led.cohorts:
            z = rec.masses.sum()
            assert z * rec.booked.sum() + rec.overflow == pytest.approx(z, rel=1e-9)
        # every admitted unit leaves exactly once
        assert led.departures.sum() == pytest.approx(masses.sum(), rel=1e-9)


def test_replay_reproduces_ledger():
    rng = np.random.default_rng(8)
    for avg in (False, True):
        capacity, durations, masses = random_stream(rng)
        led = QueueLedger(0, capacity, 40, durations, 1e-6, avg_duration=avg)
        for t, m in enumerate(masses):
            led.admit(t, m)
        again = led.replay()
        for attr in ("occupancy", "charging", "waiting", "departures"):
            assert np.array_equal(getattr(led, attr), getattr(again, attr)), attr


def test_average_duration_booking():
    led = ledger(capacity=10.0, durations=(2, 1), epsilon=EXACT, avg_duration=True)
    led.admit(0, np.array([2.0, 2.0]))
    assert led.occupancy[:3].tolist() == pytest.approx([4.0, 2.0, 0.0])
    # departures still follow each class's own duration
    assert led.departures[1] == pytest.approx(2.0) and led.departures[2] == pytest.approx(2.0)


def test_per_class_booking():
    led = ledger(capacity=10.0, durations=(2, 1), epsilon=EXACT)
    led.admit(0, np.array([2.0, 2.0]))
    assert led.occupancy[:3].tolist() == pytest.approx([4.0, 2.0, 0.0])
    led.admit(1, np.array([0.0, 9.0]))
    assert led.occupancy[1] == pytest.approx(10.0)


def test_epsilon_slivers_do_not_overfill_longer_bookings():
    # a one-step cohort leaves a sliver at t=1 that a two-step cohort must not
    # extend into a full t=2
    led = ledger(capacity=20.0, durations=(1, 2), epsilon=1e-3)
    led.admit(0, np.array([30.0, 0.0]))
    led.admit(1, np.array([0.0, 5.0]))
    assert led.occupancy.max() <= 20.0 + 1e-9


def test_discrete_fifo_equivalence():
    rng = np.random.default_rng(2)
    for _ in range(100):
        capacity = int(rng.integers(1, 8))
        cohorts = [(t, int(rng.integers(1, 4)), int(rng.integers(0, 3 * capacity + 1)))
                   for t in range(10) if rng.random() < 0.7]
        cohorts = [c for c in cohorts if c[2] > 0]
        led = QueueLedger(0, float(capacity), 25, np.array([1, 2, 3]), EXACT)
        for t, d, n in cohorts:
            m = np.zeros(3)
            m[d - 1] = n
            fluid = led.admit(t, m)
            assert np.allclose(fluid.pmf, fifo_waits(capacity, cohorts, 25)[t][:len(fluid)], atol=1e-12)


def test_continuity_in_arrivals():
    h, capacity = 1e-3, 5.0
    grid = np.arange(0, 3 * capacity + h / 2, h)
    w = np.zeros((len(grid), 8))
    for k, z in enumerate(grid):
        pmf = ledger(capacity=capacity).admit(0, np.array([z])).pmf[:8]
        w[k, :len(pmf)] = pmf
    slopes = np.abs(np.diff(w, axis=0)) / h
    assert np.isfinite(slopes).all() and slopes.max() < 1.0


def test_continuity_in_earlier_cohort():
    h = 1e-3
    free = []
    for z in np.arange(0, 15 + h / 2, h):
        led = ledger(capacity=5.0, durations=(2,))
        led.admit(0, np.array([z]))
        led.admit(1, np.array([5.0]))
        free.append(led.free[:8].copy())
    slopes = np.abs(np.diff(np.array(free), axis=0)) / h
    assert slopes.max() < 1.0 + 1e-6


def test_capacity_error_is_raised_on_corruption():
    led = ledger(capacity=1.0, epsilon=EXACT)
    led.admit(0, np.array([1.0]))
    with pytest.raises(LedgerError):
        led._book(0, 0, np.array([1.0]), 1.0)


def test_wait_distribution_helpers():
    w = WaitDistribution(np.array([0.25, 0.0, 0.75]))
    assert w.support() == [(0, 0.25), (2, 0.75)]
    assert w.mean == pytest.approx(1.5)
    assert w[7] == 0.0 and len(w) == 3

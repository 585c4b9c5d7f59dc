"""
逆根调度器测试
"""

import threading
from concurrent.futures import Executor, Future
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from ..config.settings import RootConfig, SchedulerMode, ShampooConfig
from ..linalg.root_solver import inverse_pth_root
from ..optimizers.preconditioner_state import PreconditionerState, update_statistics
from ..optimizers.shampoo import ShampooOptimizer
from ..utils.exceptions import NotPSDException, NumericalException
from . import root_scheduler
from .root_scheduler import (
    EVENT_COLUMNS,
    InlineExecutor,
    RootScheduler,
    WarmStartExecutor,
    compute_root,
    create_root_scheduler,
    make_root_job,
)

ASYNC = SchedulerMode(kind='async', workers=1)


class DeferredExecutor(Executor):
    """只排队不执行，由测试决定何时运行"""

    def __init__(self):
        self.pending = []

    def submit(self, fn, /, *args, **kwargs):
        future = Future()
        self.pending.append((future, fn, args, kwargs))
        return future

    def start(self, index: int) -> None:
        self.pending[index][0].set_running_or_notify_cancel()

    def run_all(self) -> None:
        for future, fn, args, kwargs in self.pending:
            if future.running() or future.set_running_or_notify_cancel():
                future.set_result(fn(*args, **kwargs))
        self.pending.clear()


def _state(shape=(3, 2), exponents=(-0.25, -0.25)) -> PreconditionerState:
    return PreconditionerState.create('p0.b0', shape, exponents)


def _advance(state: PreconditionerState, rng: np.random.Generator, steps: int = 1) -> None:
    for _ in range(steps):
        update_statistics(state, rng.standard_normal(state.shape))


def _pair(state: PreconditionerState, root_cfg: RootConfig = RootConfig()):
    return [make_root_job(state, side, root_cfg) for side in state.preconditioned_sides]


class TestMakeRootJob:
    """快照测试"""

    def test_exponent_sets_root_order(self, rng):
        state = _state()
        _advance(state, rng)
        job = make_root_job(state, 'left', RootConfig(p=8))
        assert job.root_cfg.p == 4
        assert job.snapshot_step == 1
        vector = _state((4, 1), (-0.5, None))
        assert make_root_job(vector, 'left', RootConfig()).root_cfg.p == 2

    def test_snapshot_is_isolated(self, rng):
        state = _state()
        _advance(state, rng)
        job = make_root_job(state, 'left', RootConfig())
        frozen = job.snapshot.copy()
        _advance(state, rng, 5)
        np.testing.assert_array_equal(job.snapshot, frozen)
        assert not job.snapshot.flags.writeable
        with pytest.raises(ValueError):
            job.snapshot[0, 0] = 1.0

        expected, _ = inverse_pth_root(frozen, job.root_cfg)
        np.testing.assert_array_equal(compute_root(job).root, expected)

    def test_unpreconditioned_side(self):
        with pytest.raises(NumericalException):
            make_root_job(_state((4, 1), (-0.5, None)), 'right', RootConfig())


class TestComputeRoot:
    """回退链测试"""

    def test_converged(self, rng):
        state = _state()
        _advance(state, rng, 4)
        result = compute_root(make_root_job(state, 'left', RootConfig()))
        assert result.diagnostics.converged
        assert result.diagnostics.method == 'coupled_newton'
        assert result.snapshot_step == 4

    def test_ridge_retry(self, rng, monkeypatch):
        calls = []

        def flaky(snapshot, cfg):
            calls.append(cfg.ridge_rel)
            root, diagnostics = inverse_pth_root(snapshot, cfg)
            return root, replace(diagnostics, converged=len(calls) > 1)

        monkeypatch.setattr(root_scheduler, 'inverse_pth_root', flaky)
        state = _state()
        _advance(state, rng, 3)
        result = compute_root(make_root_job(state, 'right', RootConfig(ridge_rel=1e-6)))
        assert calls == [1e-6, pytest.approx(1e-5)]
        assert result.diagnostics.method == 'coupled_newton_ridge_retry'

    def test_zero_ridge_retries_with_floor(self, rng, monkeypatch):
        calls = []

        def failing(snapshot, cfg):
            calls.append(cfg.ridge_rel)
            raise NotPSDException("模拟失败")

        monkeypatch.setattr(root_scheduler, 'inverse_pth_root', failing)
        state = _state()
        _advance(state, rng, 3)
        result = compute_root(make_root_job(state, 'left', RootConfig(ridge_rel=0.0)))
        assert calls == [0.0, root_scheduler.RIDGE_RETRY_FLOOR]
        assert result.diagnostics.method == 'eig_oracle'

    def test_eig_oracle_fallback(self, rng, monkeypatch):
        def failing(snapshot, cfg):
            raise NotPSDException("模拟失败")

        monkeypatch.setattr(root_scheduler, 'inverse_pth_root', failing)
        state = _state()
        _advance(state, rng, 6)
        job = make_root_job(state, 'left', RootConfig())
        result = compute_root(job)
        retry_cfg = job.root_cfg.model_copy(update={'ridge_rel': 1e-5})
        expected, _ = inverse_pth_root(job.snapshot, retry_cfg)
        assert result.diagnostics.method == 'eig_oracle'
        np.testing.assert_allclose(result.root, expected, rtol=1e-6, atol=1e-10)

    def test_all_methods_fail(self, rng, monkeypatch):
        def failing(*args, **kwargs):
            raise NotPSDException("模拟失败")

        monkeypatch.setattr(root_scheduler, 'inverse_pth_root', failing)
        monkeypatch.setattr(root_scheduler, 'mat_power_oracle', failing)
        state = _state()
        _advance(state, rng)
        assert compute_root(make_root_job(state, 'left', RootConfig())) is None


class TestSyncDelayed:
    """同步延迟模式测试"""

    def test_zero_delay_adopts_same_step(self, rng):
        state = _state()
        scheduler = RootScheduler(ShampooConfig(kappa=3), SchedulerMode(delay_steps=0))
        for t in range(1, 4):
            _advance(state, rng)
            events = scheduler.on_step(t, {'p0.b0': state})
        assert [(e.step, e.snapshot_step, e.staleness) for e in events] == [(3, 3, 0)]
        assert state.root_step == 3

    def test_delay_releases_later(self, rng):
        state = _state()
        scheduler = RootScheduler(ShampooConfig(kappa=2), SchedulerMode(delay_steps=3))
        adoptions = []
        for t in range(1, 11):
            _advance(state, rng)
            adoptions += [(e.step, e.snapshot_step) for e in scheduler.on_step(t, {'p0.b0': state})]
        assert adoptions == [(5, 2), (7, 4), (9, 6)]
        assert state.staleness == 10 - 6

    def test_root_update_interval(self, rng):
        state = _state()
        scheduler = RootScheduler(ShampooConfig(kappa=2, root_update_interval=5))
        for t in range(1, 13):
            _advance(state, rng)
            scheduler.on_step(t, {'p0.b0': state})
        submitted = scheduler.event_log.to_frame().query("event == 'submit'")
        assert sorted(set(submitted['step'])) == [2, 8]

    def test_monotone_adoption(self, rng):
        state = _state()
        cfg = ShampooConfig(kappa=1000)
        scheduler = RootScheduler(cfg)
        _advance(state, rng)
        older = _pair(state)
        _advance(state, rng)
        newer = _pair(state)

        for job in newer:
            scheduler.submit(job)
        assert len(scheduler.on_step(2, {'p0.b0': state})) == 1
        for job in older:
            scheduler.submit(job)
        assert scheduler.on_step(3, {'p0.b0': state}) == []
        assert state.root_step == 2
        assert scheduler.stats.dropped == 2

    def test_same_call_adopts_in_snapshot_order(self, rng):
        state = _state()
        scheduler = RootScheduler(ShampooConfig(kappa=1000))
        _advance(state, rng)
        older = _pair(state)
        _advance(state, rng)
        for job in _pair(state) + older:
            scheduler.submit(job)
        events = scheduler.on_step(2, {'p0.b0': state})
        assert [e.snapshot_step for e in events] == [1, 2]
        assert state.root_step == 2

    def test_partial_pair_waits(self, rng):
        state = _state()
        scheduler = RootScheduler(ShampooConfig(kappa=1000))
        _advance(state, rng)
        scheduler.submit(make_root_job(state, 'left', RootConfig()))
        assert scheduler.on_step(1, {'p0.b0': state}) == []
        assert state.root_step is None
        pending = scheduler.drain()
        assert [(r.side, r.snapshot_step) for r in pending] == [('left', 1)]

    def test_failed_root_keeps_previous(self, rng):
        state = _state()
        calls = []

        def fail_after_first(job):
            calls.append(job.snapshot_step)
            return compute_root(job) if job.snapshot_step == 1 else None

        scheduler = RootScheduler(ShampooConfig(kappa=1), root_fn=fail_after_first)
        _advance(state, rng)
        scheduler.on_step(1, {'p0.b0': state})
        root = state.root_L.copy()
        _advance(state, rng)
        assert scheduler.on_step(2, {'p0.b0': state}) == []
        np.testing.assert_array_equal(state.root_L, root)
        assert state.root_step == 1
        assert scheduler.stats.dropped == 2

    def test_drain(self, rng):
        state = _state()
        scheduler = RootScheduler(ShampooConfig(kappa=1), SchedulerMode(delay_steps=100))
        _advance(state, rng)
        scheduler.on_step(1, {'p0.b0': state})
        results = scheduler.drain()
        assert [(r.side, r.snapshot_step) for r in results] == [('left', 1), ('right', 1)]
        assert scheduler.drain() == []
        assert state.root_step is None

    def test_event_csv(self, rng, tmp_path):
        state = _state()
        scheduler = create_root_scheduler(ShampooConfig(kappa=2))
        for t in range(1, 5):
            _advance(state, rng)
            scheduler.on_step(t, {'p0.b0': state})
        path = tmp_path / 'events.csv'
        scheduler.event_log.write_csv(path)
        frame = pd.read_csv(path)
        assert list(frame.columns) == EVENT_COLUMNS
        assert frame['event'].value_counts().to_dict() == {'submit': 4, 'complete': 4, 'adopt': 2}
        assert (frame['ms'] == 0.0).all()
        assert len(scheduler.event_log) == 10


class TestAsync:
    """异步模式测试"""

    def test_adopts_only_at_boundaries(self, rng):
        state = _state((2, 2))
        scheduler = RootScheduler(ShampooConfig(kappa=500), ASYNC, executor=InlineExecutor())
        adoptions = []
        for t in range(1, 1501):
            update_statistics(state, np.zeros((2, 2)))
            adoptions += [(e.step, e.snapshot_step) for e in scheduler.on_step(t, {'p0.b0': state})]
        assert adoptions == [(1000, 500), (1500, 1000)]
        assert scheduler.stats.submitted == 6

    def test_queued_job_is_superseded(self, rng):
        executor = DeferredExecutor()
        state = _state()
        scheduler = RootScheduler(ShampooConfig(kappa=1), ASYNC, executor=executor)
        _advance(state, rng)
        scheduler.on_step(1, {'p0.b0': state})
        _advance(state, rng)
        assert scheduler.on_step(2, {'p0.b0': state}) == []
        assert scheduler.stats.superseded == 2
        assert scheduler.in_flight == 2

        executor.run_all()
        _advance(state, rng)
        events = scheduler.on_step(3, {'p0.b0': state})
        assert [(e.snapshot_step, e.staleness) for e in events] == [(2, 1)]
        frame = scheduler.event_log.to_frame()
        assert (frame['event'] == 'supersede').sum() == 2

    def test_running_job_is_retired_not_lost(self, rng):
        executor = DeferredExecutor()
        state = _state()
        scheduler = RootScheduler(ShampooConfig(kappa=1), ASYNC, executor=executor)
        _advance(state, rng)
        first = make_root_job(state, 'left', RootConfig())
        scheduler.submit(first)
        executor.start(0)
        _advance(state, rng)
        scheduler.submit(make_root_job(state, 'left', RootConfig()))
        assert scheduler.stats.superseded == 0

        executor.run_all()
        results = scheduler.drain()
        assert [r.snapshot_step for r in results] == [1, 2]

    def test_worker_exception_is_dropped(self, rng):
        def broken(job):
            raise RuntimeError("worker crashed")

        state = _state()
        scheduler = RootScheduler(ShampooConfig(kappa=1), ASYNC, executor=InlineExecutor(), root_fn=broken)
        _advance(state, rng)
        scheduler.on_step(1, {'p0.b0': state})
        _advance(state, rng)
        assert scheduler.on_step(2, {'p0.b0': state}) == []
        assert scheduler.stats.dropped == 2
        assert state.root_step is None

    def test_thread_pool_drain(self, rng):
        state = _state()
        with create_root_scheduler(ShampooConfig(kappa=1), ASYNC) as scheduler:
            _advance(state, rng)
            scheduler.on_step(1, {'p0.b0': state})
            results = scheduler.drain()
        assert sorted(r.side for r in results) == ['left', 'right']
        assert scheduler.stats.completed == 2

    def test_inline_executor_matches_sync_delay_of_kappa(self, rng):
        kappa = 4
        cfg = ShampooConfig(eta0=0.05, kappa=kappa, tau=2)
        shapes = [(6, 5), (7,)]
        grads = [[rng.standard_normal(s) for s in shapes] for _ in range(40)]

        inline = create_root_scheduler(cfg, ASYNC, executor=InlineExecutor())
        fast = ShampooOptimizer(shapes, cfg, scheduler=inline)
        delayed = ShampooOptimizer(shapes, cfg, mode=SchedulerMode(kind='sync_delayed', delay_steps=kappa))
        w_fast = [np.zeros(s) for s in shapes]
        w_delayed = [np.zeros(s) for s in shapes]
        with fast, delayed:
            for g in grads:
                a = fast.step(w_fast, g)
                b = delayed.step(w_delayed, g)
                assert a.root_adopt_events == b.root_adopt_events
        for x, y in zip(w_fast, w_delayed):
            np.testing.assert_array_equal(x, y)

    def test_warm_start_executor(self, rng):
        """每侧首个任务在提交线程上同步完成，之后的任务进入线程池"""
        state = _state()
        _advance(state, rng)
        executor = WarmStartExecutor(workers=1)

        def where(job):
            return threading.get_ident()

        try:
            first = [executor.submit(where, job) for job in _pair(state)]
            assert all(f.done() and f.result() == threading.get_ident() for f in first)
            later = executor.submit(where, _pair(state)[0])
            assert later.result(timeout=5.0) != threading.get_ident()
        finally:
            executor.shutdown(wait=True)

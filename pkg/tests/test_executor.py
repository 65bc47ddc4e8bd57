"""Sandbox staging, real process execution (shell scripts only — the
rest of the runtimes need interpreters this suite does not assume), the
sufferance metric vs. an independent recomputation, and sim scripts."""

import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeorc.domain import ResourceVector, RuntimeKind, TaskSpec, TaskState
from edgeorc.executor import (
    ArchiveManifest,
    HashMismatch,
    LocalTaskProcess,
    MissingDependency,
    NoSpace,
    SimExecution,
    SimScript,
    SufferanceMetric,
    ZeroCapacity,
    artifact_ref,
    make_archive,
    run,
    stage,
    sufferance,
)
from strategies import resource_vectors

SHELL_RUNTIMES = frozenset({RuntimeKind.SHELL_SCRIPT, RuntimeKind.SIM_TASK})


def shell_archive(script: bytes, deps=()):
    manifest = ArchiveManifest(
        name="job",
        runtime=RuntimeKind.SHELL_SCRIPT,
        entry="run.sh",
        dependencies=tuple((d, "*") for d in deps),
    )
    return make_archive(manifest, {"run.sh": script})


def spec_for(archive: bytes, **kwargs) -> TaskSpec:
    return TaskSpec(
        task_name=kwargs.pop("task_name", "job"),
        runtime=kwargs.pop("runtime", RuntimeKind.SHELL_SCRIPT),
        artifact=artifact_ref(archive),
        entry=kwargs.pop("entry", "run.sh"),
        required=kwargs.pop("required", ResourceVector(cpus=0.1, mem_mb=16, disk_mb=4)),
        **kwargs,
    )


class TestStaging:
    def test_valid_archive_unpacks(self, tmp_path):
        archive = shell_archive(b"#!/bin/sh\nexit 0\n")
        sandbox = stage(
            spec_for(archive), "t-1", archive, str(tmp_path), SHELL_RUNTIMES
        )
        assert os.path.exists(sandbox.entry_path)
        assert os.path.exists(os.path.join(sandbox.root, "manifest"))
        assert os.path.isdir(os.path.join(sandbox.root, "logs"))
        assert sandbox.manifest.runtime is RuntimeKind.SHELL_SCRIPT

    def test_tampered_archive_hash_mismatch(self, tmp_path):
        archive = shell_archive(b"#!/bin/sh\nexit 0\n")
        spec = spec_for(archive)
        tampered = archive[:-1] + bytes([archive[-1] ^ 0xFF])
        with pytest.raises(HashMismatch):
            stage(spec, "t-1", tampered, str(tmp_path), SHELL_RUNTIMES)

    def test_missing_runtime_dependency(self, tmp_path):
        manifest = ArchiveManifest(name="job", runtime=RuntimeKind.GROOVY_APP, entry="Main.groovy")
        archive = make_archive(manifest, {"Main.groovy": b"println 1"})
        spec = spec_for(archive, runtime=RuntimeKind.GROOVY_APP, entry="Main.groovy")
        with pytest.raises(MissingDependency) as err:
            stage(spec, "t-1", archive, str(tmp_path), SHELL_RUNTIMES)
        assert err.value.name == "groovy-app"

    def test_missing_package_dependency(self, tmp_path):
        archive = shell_archive(b"exit 0\n", deps=("libsensor",))
        with pytest.raises(MissingDependency) as err:
            stage(spec_for(archive), "t-1", archive, str(tmp_path), SHELL_RUNTIMES)
        assert err.value.name == "libsensor"

    def test_declared_dependency_present(self, tmp_path):
        archive = shell_archive(b"exit 0\n", deps=("libsensor",))
        sandbox = stage(
            spec_for(archive),
            "t-1",
            archive,
            str(tmp_path),
            SHELL_RUNTIMES,
            available_packages=frozenset({"libsensor"}),
        )
        assert sandbox.manifest.dependencies == (("libsensor", "*"),)

    def test_no_space(self, tmp_path):
        archive = shell_archive(b"exit 0\n")
        spec = spec_for(archive, required=ResourceVector(disk_mb=64))
        with pytest.raises(NoSpace):
            stage(spec, "t-1", archive, str(tmp_path), SHELL_RUNTIMES, capacity_mb=100, reserved_mb=50)

    def test_one_sandbox_per_task(self, tmp_path):
        archive = shell_archive(b"exit 0\n")
        stage(spec_for(archive), "t-1", archive, str(tmp_path), SHELL_RUNTIMES)
        with pytest.raises(ValueError):
            stage(spec_for(archive), "t-1", archive, str(tmp_path), SHELL_RUNTIMES)


class TestRealExecution:
    def test_exit_zero_finishes(self, tmp_path):
        archive = shell_archive(b"#!/bin/sh\necho out\nexit 0\n")
        spec = spec_for(archive)
        sandbox = stage(spec, "t-1", archive, str(tmp_path), SHELL_RUNTIMES)
        events = list(run(sandbox, spec))
        assert events[0] == (TaskState.RUNNING, None)
        assert events[-1] == (TaskState.FINISHED, 0)
        assert open(sandbox.stdout_path).read() == "out\n"

    def test_nonzero_exit_fails_with_status(self, tmp_path):
        archive = shell_archive(b"#!/bin/sh\nexit 3\n")
        spec = spec_for(archive)
        sandbox = stage(spec, "t-2", archive, str(tmp_path), SHELL_RUNTIMES)
        events = list(run(sandbox, spec))
        assert events[-1] == (TaskState.FAILED, 3)
        assert sandbox.exit_status == 3

    def test_kill_reaps_process(self, tmp_path):
        archive = shell_archive(b"#!/bin/sh\nsleep 30\n")
        spec = spec_for(archive)
        sandbox = stage(spec, "t-3", archive, str(tmp_path), SHELL_RUNTIMES)
        proc = LocalTaskProcess(sandbox, spec)
        assert proc.poll() is None
        proc.kill()
        state, _code = proc.wait(timeout=10)
        assert state is TaskState.KILLED
        assert proc.process.poll() is not None  # no orphan left behind

    def test_sandbox_removed_after_terminal(self, tmp_path):
        archive = shell_archive(b"exit 0\n")
        spec = spec_for(archive)
        sandbox = stage(spec, "t-4", archive, str(tmp_path), SHELL_RUNTIMES)
        list(run(sandbox, spec))
        sandbox.remove()
        assert not os.path.exists(sandbox.root)


def oracle_sufferance(current, capacity, candidate):
    """Independent recomputation with plain loops over expanded views."""
    from edgeorc.domain import port_count

    def view(rv):
        return {
            "cpus": rv.cpu_millis,
            "mem_mb": rv.mem_mb,
            "disk_mb": rv.disk_mb,
            "ports": port_count(rv.ports),
            "gpus": rv.gpus,
        }

    ratios = {}
    for name in ("cpus", "mem_mb", "disk_mb", "ports", "gpus"):
        cap = view(capacity)[name]
        want = view(candidate)[name]
        total = want
        for rv in current:
            total += view(rv)[name]
        if cap == 0:
            if want > 0:
                raise ZeroCapacity(name)
            continue
        ratios[name] = total / cap
    return max(ratios.values()) if ratios else 0.0


class TestSufferance:
    def test_exact_fit_is_one(self):
        cap = ResourceVector(cpus=2.0, mem_mb=1024)
        assert sufferance([], cap, cap).value == 1.0

    def test_overload_reads_high(self):
        cap = ResourceVector(cpus=4.0, mem_mb=1024)
        current = [ResourceVector(cpus=2.0, mem_mb=128)]
        candidate = ResourceVector(cpus=3.0, mem_mb=128)
        metric = sufferance(current, cap, candidate)
        assert metric.value == 1.25
        assert dict(metric.components)["cpus"] == 1.25

    def test_zero_candidate_reports_current_utilization(self):
        cap = ResourceVector(cpus=4.0, mem_mb=1000)
        current = [ResourceVector(cpus=1.0, mem_mb=900)]
        metric = sufferance(current, cap, ResourceVector.zero())
        assert metric.value == 0.9

    def test_zero_capacity_component(self):
        with pytest.raises(ZeroCapacity) as err:
            sufferance([], ResourceVector(cpus=1.0), ResourceVector(cpus=0.5, gpus=1))
        assert err.value.component == "gpus"

    @given(
        st.lists(resource_vectors(), max_size=4),
        resource_vectors(),
        resource_vectors(),
    )
    @settings(max_examples=200)
    def test_matches_oracle(self, current, capacity, candidate):
        try:
            expected = oracle_sufferance(current, capacity, candidate)
        except ZeroCapacity:
            with pytest.raises(ZeroCapacity):
                sufferance(current, capacity, candidate)
            return
        assert sufferance(current, capacity, candidate).value == pytest.approx(expected, abs=1e-12)

    @given(
        st.lists(st.lists(resource_vectors(), max_size=3), min_size=2, max_size=5),
        resource_vectors(),
    )
    @settings(max_examples=100)
    def test_preference_order_matches_oracle(self, inventories, candidate):
        capacity = ResourceVector(cpus=8.0, mem_mb=1 << 14, disk_mb=1 << 14, gpus=8,
                                  ports=((1, 65535),))
        impl = []
        oracle = []
        for i, inventory in enumerate(inventories):
            impl.append((sufferance(inventory, capacity, candidate).value, i))
            oracle.append((oracle_sufferance(inventory, capacity, candidate), i))
        assert [i for _, i in sorted(impl)] == [i for _, i in sorted(oracle)]

    @given(st.lists(resource_vectors(), min_size=1, max_size=4), resource_vectors())
    @settings(max_examples=100)
    def test_monotone_in_load(self, current, capacity):
        candidate = ResourceVector(cpus=0.5)
        cap = capacity + ResourceVector(cpus=1.0)  # ensure cpus capacity nonzero
        baseline = sufferance(current[:-1], cap, candidate).value
        loaded = sufferance(current, cap, candidate).value
        assert loaded >= baseline


class TestSimScripts:
    def test_parse(self):
        script = SimScript.parse("sleep:5,exit:2")
        assert script.sleep == 5 and script.exit_code == 2 and script.crash_at is None
        assert SimScript.parse("forever").sleep is None
        assert SimScript.parse("crash-at:40").crash_at == 40
        with pytest.raises(ValueError):
            SimScript.parse("explode")

    def test_sleep_then_exit(self, sim_spec):
        spec = sim_spec("sleep:5,exit:0")
        execution = SimExecution("t-1", spec, SimScript.parse(spec.entry), started_at=10)
        assert all(execution.advance(t) is None for t in range(10, 15))
        assert execution.advance(15) == (TaskState.FINISHED, 0)

    def test_nonzero_exit_fails(self, sim_spec):
        spec = sim_spec("sleep:2,exit:7")
        execution = SimExecution("t-1", spec, SimScript.parse(spec.entry), started_at=0)
        assert execution.advance(2) == (TaskState.FAILED, 7)

    def test_crash_at_tick(self, sim_spec):
        spec = sim_spec("forever,crash-at:12")
        execution = SimExecution("t-1", spec, SimScript.parse(spec.entry), started_at=0)
        assert execution.advance(11) is None
        assert execution.advance(12) == (TaskState.FAILED, 1)

    def test_kill(self, sim_spec):
        spec = sim_spec("forever")
        execution = SimExecution("t-1", spec, SimScript.parse(spec.entry), started_at=0)
        assert execution.kill() == (TaskState.KILLED, None)

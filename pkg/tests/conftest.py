import hashlib

import pytest

from edgeorc.domain import ArtifactRef, ResourceVector, RuntimeKind, TaskSpec


def artifact_for(payload: bytes) -> ArtifactRef:
    return ArtifactRef(sha256=hashlib.sha256(payload).hexdigest(), size_bytes=len(payload))


@pytest.fixture
def shell_spec():
    return TaskSpec(
        task_name="hello",
        runtime=RuntimeKind.SHELL_SCRIPT,
        artifact=artifact_for(b"placeholder"),
        entry="run.sh",
        required=ResourceVector(cpus=0.5, mem_mb=64),
    )


@pytest.fixture
def sim_spec():
    def make(entry="sleep:3,exit:0", name="simjob", **kwargs):
        return TaskSpec(
            task_name=name,
            runtime=RuntimeKind.SIM_TASK,
            artifact=artifact_for(entry.encode()),
            entry=entry,
            required=kwargs.pop("required", ResourceVector(cpus=0.5, mem_mb=128)),
            **kwargs,
        )

    return make

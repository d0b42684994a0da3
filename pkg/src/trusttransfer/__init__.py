"""Task-dependent models of human trust in robot capabilities."""
import jax

# gradient checks and the moment-matching oracles need double precision
jax.config.update("jax_enable_x64", True)

from .features import (  # noqa: E402
    EmbeddingTable,
    TaskDescriptor,
    embed_task,
    load_embeddings,
    load_task_catalog,
    tokenize,
)
from .kernel import ProjectionKernel, make_kernel  # noqa: E402
from .gp import GPParams, GPTrustState, Observation  # noqa: E402
from .models import MODEL_NAMES, ModelSpec  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "EmbeddingTable",
    "GPParams",
    "GPTrustState",
    "MODEL_NAMES",
    "ModelSpec",
    "Observation",
    "ProjectionKernel",
    "TaskDescriptor",
    "embed_task",
    "load_embeddings",
    "load_task_catalog",
    "make_kernel",
    "tokenize",
]

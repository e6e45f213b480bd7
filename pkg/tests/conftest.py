"""Shared fixtures: small problems, their factorizations and a sandboxed log directory."""

import numpy as np
import pytest

from copra.config import settings
from copra.models import SvdFactors
from copra.services import problems
from copra.services.spectral import compute_svd


@pytest.fixture(autouse=True)
def _isolated_logs(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "LOG_DIR", tmp_path / "logs")
    monkeypatch.setattr(settings, "LOG_FILE", str(tmp_path / "logs" / "copra.log"))
    monkeypatch.delenv("COPRA_SEED", raising=False)


@pytest.fixture(scope="session")
def shaw8():
    return problems.generate("shaw", 8)


@pytest.fixture(scope="session")
def shaw50():
    return problems.generate("shaw", 50)


@pytest.fixture(scope="session")
def shaw50_svd(shaw50):
    return compute_svd(shaw50.a)


def diagonal_svd(sigma) -> SvdFactors:
    """Factorization of ``diag(sigma)`` with identity singular vectors."""
    sigma = np.asarray(sigma, dtype=np.float64)
    eye = np.eye(sigma.size)
    return SvdFactors(u=eye, sigma=sigma, v=eye)


def tall_operator(sigma, m: int, seed: int = 0):
    """``m x n`` matrix with prescribed singular values and random orthonormal factors."""
    rng = np.random.default_rng(seed)
    sigma = np.asarray(sigma, dtype=np.float64)
    n = sigma.size
    u, _ = np.linalg.qr(rng.standard_normal((m, n)))
    v, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (u * sigma) @ v.T

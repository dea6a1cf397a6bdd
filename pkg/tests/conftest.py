import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from idms.delayspace import AsnMappingTable, DelayMatrix  # noqa: E402
from idms.simnet import GroundTruth, Host  # noqa: E402


def random_matrix(rng, n, missing=0.0, symmetric=False, scale=200.0, integer=False):
    v = rng.uniform(1.0, scale, size=(n, n))
    if integer:
        v = np.rint(v)
    if symmetric:
        v = np.triu(v, 1) + np.triu(v, 1).T
    if missing:
        v[rng.random((n, n)) < missing] = np.nan
    np.fill_diagonal(v, 0.0)
    labels = tuple(int(a) for a in np.sort(rng.choice(np.arange(1, 100000), n, replace=False)))
    return DelayMatrix(v, labels)


def tiny_world(n_ases=3, hosts_per_as=6, rtt=None, days=1, cn=1):
    """Hand-built ground truth: AS i owns 10.0.i.0/24, hosts .1..hosts_per_as, bootstrap .254 in AS 0."""
    labels = tuple(100 * (i + 1) for i in range(n_ases))
    if rtt is None:
        rtt = np.full((n_ases, n_ases), 50.0)
        np.fill_diagonal(rtt, 0.0)
    full = np.broadcast_to(np.asarray(rtt, dtype=float), (days, 24, n_ases, n_ases)).copy()
    mapping = AsnMappingTable(countries={a: cn for a in labels})
    hosts, host_map = [], {}
    for i, asn in enumerate(labels):
        mapping.add_prefix(f"10.0.{i}.0/24", asn)
        for k in range(hosts_per_as):
            h = Host(f"10.0.{i}.{k + 1}", asn, capacity=float(hosts_per_as - k), intra_offset=1.0)
            hosts.append(h)
            host_map[h.ip] = h
    boot = "10.0.0.254"
    host_map[boot] = Host(boot, labels[0], 0.0, 0.0)
    return GroundTruth(labels, full, host_map), mapping, hosts, boot


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.LINES:
        terminalreporter.write_line(line)

import numpy as np
import pytest

from iotfence.fingerprint import Fingerprint, build_fingerprint
from iotfence.harness import CorpusNoise, SyntheticCorpusSpec, generate_corpus
from iotfence.ingest import FEATURE_NAMES, PacketFeatures
from iotfence.typemodel import ForestParams, train_registry


def make_features(**overrides) -> PacketFeatures:
    """A feature vector that is all zeros except the given fields."""
    values = dict.fromkeys(FEATURE_NAMES, 0)
    values.update(overrides)
    return PacketFeatures(**values)


def random_features(rng: np.random.Generator) -> PacketFeatures:
    """One random but internally consistent feature vector."""
    kind = rng.integers(0, 4)
    kw: dict = {"size": int(rng.integers(14, 1500))}
    if kind == 0:
        kw.update(arp=1)
    elif kind == 1:
        kw.update(llc=1, raw_data=int(rng.integers(0, 2)))
    else:
        kw.update(ip=1, dest_ip_counter=int(rng.integers(1, 6)),
                  raw_data=int(rng.integers(0, 2)))
        if kind == 2:
            kw.update(tcp=1)
        else:
            kw.update(udp=1)
        kw.update(src_port_class=int(rng.integers(1, 4)),
                  dst_port_class=int(rng.integers(1, 4)))
        if rng.random() < 0.2:
            kw.update(dns=1)
    return make_features(**kw)


def random_fingerprint(rng: np.random.Generator, mac: str = "02-00-00-00-00-01",
                       label: str | None = None,
                       max_packets: int = 30) -> Fingerprint:
    n = int(rng.integers(1, max_packets + 1))
    return build_fingerprint(mac, [random_features(rng) for _ in range(n)],
                             label=label)


# 12 types keeps every one-vs-rest negative pool at the required ten
# negatives per positive: 11 other types x 12 fingerprints = 132 >= 120
@pytest.fixture(scope="session")
def small_corpus():
    spec = SyntheticCorpusSpec(n_types=12, fingerprints_per_type=12,
                               noise=CorpusNoise(drop_prob=0.05))
    return generate_corpus(spec, seed=1234)


@pytest.fixture(scope="session")
def small_registry(small_corpus):
    return train_registry(small_corpus, ForestParams(n_trees=25), seed=99)

"""Host cache: the bounded super-node candidate list plus the bootstrap list."""

from __future__ import annotations

from dataclasses import dataclass, field

CAPACITY = 200
BOOTSTRAP_SIZE = 7


class SnapshotError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class HostCacheEntry:
    addr: str
    port: int
    last_seen: int = 0

    def key(self) -> tuple:
        return (self.addr, self.port)


@dataclass
class HostCache:
    entries: list = field(default_factory=list)
    capacity: int = CAPACITY

    def __len__(self) -> int:
        return len(self.entries)

    def upsert(self, entry: HostCacheEntry) -> None:
        for existing in self.entries:
            if existing.key() == entry.key():
                existing.last_seen = entry.last_seen
                return
        self.entries.append(entry)
        if len(self.entries) > self.capacity:
            # Evict oldest last_seen first; list order breaks ties.
            oldest = min(range(len(self.entries)), key=lambda i: (self.entries[i].last_seen, -i))
            del self.entries[oldest]

    def candidates(self, n: int) -> list:
        if n < 1:
            raise ValueError(f"candidate count must be >= 1, got {n}")
        ranked = sorted(enumerate(self.entries), key=lambda pair: (-pair[1].last_seen, pair[0]))
        return [entry for _, entry in ranked[:n]]

    def snapshot(self) -> str:
        return "".join(f"{e.addr} {e.port} {e.last_seen}\n" for e in self.entries)

    @classmethod
    def load(cls, text: str) -> "HostCache":
        cache = cls()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise SnapshotError(lineno, f"expected 'addr port last_seen', got {raw!r}")
            addr, port_s, seen_s = parts
            try:
                port = int(port_s)
                last_seen = int(seen_s)
            except ValueError:
                raise SnapshotError(lineno, f"non-numeric field in {raw!r}") from None
            if not 1 <= port <= 65535:
                raise SnapshotError(lineno, f"port {port} out of range 1-65535")
            if last_seen < 0:
                raise SnapshotError(lineno, f"negative last_seen {last_seen}")
            cache.entries.append(HostCacheEntry(addr, port, last_seen))
            if len(cache.entries) > cache.capacity:
                raise SnapshotError(lineno, f"snapshot exceeds capacity {cache.capacity}")
        return cache


@dataclass(frozen=True)
class BootstrapList:
    pairs: tuple

    def __post_init__(self):
        if len(self.pairs) != BOOTSTRAP_SIZE:
            raise ValueError(
                f"bootstrap requires {BOOTSTRAP_SIZE} entries, got {len(self.pairs)}")

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

"""Snapshot download with a content-addressed cache.

Bodies live under ``<cache>/objects/<sha256>``; ``<cache>/index.json`` maps
each URL to its validators (ETag, Last-Modified) and content hash.  Repeat
fetches revalidate with conditional headers, so an unchanged snapshot costs
one 304 round trip.  Offline mode never touches the network: it serves the
cache or raises CacheMiss.

The cache directory defaults to ``$LEADERLENS_CACHE`` or
``~/.cache/leaderlens``.
"""

import hashlib
import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .errors import DataError


class NetworkError(DataError):
    """Transport-level failure: DNS, refused connection, timeout."""


class HttpStatus(DataError):
    def __init__(self, code: int, url: str):
        self.code = int(code)
        super().__init__(f"HTTP {code} for {url}")


class CacheMiss(DataError):
    """Offline mode with no cached copy of the URL."""


@dataclass(frozen=True)
class FetchResult:
    path: Path
    sha256: str
    from_cache: bool
    url: str


def default_cache_dir() -> Path:
    env = os.environ.get("LEADERLENS_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "leaderlens"


def _load_index(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return {}
    return doc if isinstance(doc, dict) else {}


def _save_index(path: Path, index: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)


def _cached_result(entry: dict, objects: Path, url: str) -> FetchResult | None:
    sha = entry.get("sha256", "")
    path = objects / sha
    if sha and path.is_file():
        return FetchResult(path=path, sha256=sha, from_cache=True, url=url)
    return None


def fetch_snapshot(url: str, cache_dir=None, offline: bool = False,
                   timeout: float = 30.0) -> FetchResult:
    """GET ``url`` with cache revalidation; return the local body path.

    A 304 answer (or ``offline=True`` with a prior copy) serves the cached
    file and sets ``from_cache``.  Non-200/304 statuses raise
    HttpStatus(code) and write nothing.
    """
    cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    objects = cache / "objects"
    index_path = cache / "index.json"
    index = _load_index(index_path)
    entry = index.get(url, {})

    if offline:
        cached = _cached_result(entry, objects, url)
        if cached is None:
            raise CacheMiss(f"offline and nothing cached for {url}")
        return cached

    request = urllib.request.Request(
        url, headers={"User-Agent": f"leaderlens/{__version__}"})
    if entry.get("etag"):
        request.add_header("If-None-Match", entry["etag"])
    if entry.get("last_modified"):
        request.add_header("If-Modified-Since", entry["last_modified"])

    try:
        with urllib.request.urlopen(request, timeout=timeout) as response:
            status = response.status
            body = response.read()
            headers = response.headers
    except urllib.error.HTTPError as exc:
        if exc.code == 304:
            cached = _cached_result(entry, objects, url)
            if cached is not None:
                return cached
            raise CacheMiss(
                f"server says not-modified but cache lost the body of {url}"
            ) from exc
        raise HttpStatus(exc.code, url) from exc
    except urllib.error.URLError as exc:
        raise NetworkError(f"cannot fetch {url}: {exc.reason}") from exc

    if status != 200:
        raise HttpStatus(status, url)

    sha = hashlib.sha256(body).hexdigest()
    objects.mkdir(parents=True, exist_ok=True)
    path = objects / sha
    if not path.exists():
        path.write_bytes(body)
    index[url] = {
        "etag": headers.get("ETag"),
        "last_modified": headers.get("Last-Modified"),
        "sha256": sha,
    }
    _save_index(index_path, index)
    return FetchResult(path=path, sha256=sha, from_cache=False, url=url)

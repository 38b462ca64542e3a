"""Snapshot fetcher: caching, revalidation, offline mode.

All tests run against a throwaway localhost HTTP server; nothing leaves the
machine.
"""

import hashlib
import http.server
import json
import socket
import threading

import pytest

from leaderlens.fetch import (
    CacheMiss,
    HttpStatus,
    NetworkError,
    default_cache_dir,
    fetch_snapshot,
)

BODY_V1 = b"model,params_b\nalpha,7\n"
BODY_V2 = b"model,params_b\nalpha,7\nbeta,13\n"


class _Handler(http.server.BaseHTTPRequestHandler):
    etag = '"v1"'
    body = BODY_V1
    hits = []

    def do_GET(self):
        type(self).hits.append(self.path)
        if self.path == "/missing.csv":
            self.send_error(404)
            return
        if self.headers.get("If-None-Match") == self.etag:
            self.send_response(304)
            self.end_headers()
            return
        self.send_response(200)
        self.send_header("ETag", self.etag)
        self.send_header("Last-Modified", "Mon, 01 Jan 2024 00:00:00 GMT")
        self.send_header("Content-Length", str(len(self.body)))
        self.end_headers()
        self.wfile.write(self.body)

    def log_message(self, *args):
        pass


@pytest.fixture()
def server():
    httpd = http.server.HTTPServer(("127.0.0.1", 0), _Handler)
    _Handler.hits = []
    _Handler.etag = '"v1"'
    _Handler.body = BODY_V1
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{httpd.server_address[1]}"
    httpd.shutdown()
    thread.join()


class TestFetch:
    def test_fresh_fetch_stores_by_content_hash(self, server, tmp_path):
        res = fetch_snapshot(f"{server}/snap.csv", cache_dir=tmp_path)
        assert not res.from_cache
        assert res.path.read_bytes() == BODY_V1
        assert res.sha256 == hashlib.sha256(BODY_V1).hexdigest()
        assert res.path.name == res.sha256

    def test_revalidation_serves_cache_on_304(self, server, tmp_path):
        url = f"{server}/snap.csv"
        first = fetch_snapshot(url, cache_dir=tmp_path)
        second = fetch_snapshot(url, cache_dir=tmp_path)
        assert second.from_cache
        assert second.path == first.path
        # both requests reached the server; the second got a 304
        assert len(_Handler.hits) == 2

    def test_changed_body_refreshes_cache(self, server, tmp_path):
        url = f"{server}/snap.csv"
        fetch_snapshot(url, cache_dir=tmp_path)
        _Handler.etag = '"v2"'
        _Handler.body = BODY_V2
        res = fetch_snapshot(url, cache_dir=tmp_path)
        assert not res.from_cache
        assert res.path.read_bytes() == BODY_V2

    def test_404_raises_and_writes_nothing(self, server, tmp_path):
        with pytest.raises(HttpStatus) as err:
            fetch_snapshot(f"{server}/missing.csv", cache_dir=tmp_path)
        assert err.value.code == 404
        assert not (tmp_path / "objects").exists()

    def test_offline_serves_cache(self, server, tmp_path):
        url = f"{server}/snap.csv"
        fetch_snapshot(url, cache_dir=tmp_path)
        hits_before = len(_Handler.hits)
        res = fetch_snapshot(url, cache_dir=tmp_path, offline=True)
        assert res.from_cache
        assert res.path.read_bytes() == BODY_V1
        assert len(_Handler.hits) == hits_before

    def test_offline_without_cache_misses(self, tmp_path):
        with pytest.raises(CacheMiss):
            fetch_snapshot("http://127.0.0.1:9/never.csv",
                           cache_dir=tmp_path, offline=True)

    def test_connection_refused_is_network_error(self, tmp_path):
        # grab a free port and close it again: nothing listens there
        with socket.socket() as sock:
            sock.bind(("127.0.0.1", 0))
            port = sock.getsockname()[1]
        with pytest.raises(NetworkError):
            fetch_snapshot(f"http://127.0.0.1:{port}/x.csv",
                           cache_dir=tmp_path, timeout=2.0)

    def test_index_records_validators(self, server, tmp_path):
        fetch_snapshot(f"{server}/snap.csv", cache_dir=tmp_path)
        index = json.loads((tmp_path / "index.json").read_text())
        entry = index[f"{server}/snap.csv"]
        assert entry["etag"] == '"v1"'
        assert entry["sha256"] == hashlib.sha256(BODY_V1).hexdigest()
        assert entry["last_modified"].startswith("Mon, 01 Jan 2024")

    def test_cache_dir_env_override(self, monkeypatch, tmp_path):
        monkeypatch.setenv("LEADERLENS_CACHE", str(tmp_path / "cachehome"))
        assert default_cache_dir() == tmp_path / "cachehome"
        monkeypatch.delenv("LEADERLENS_CACHE")
        assert default_cache_dir().name == "leaderlens"

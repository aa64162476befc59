import json
import socket
import threading
import time


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def make_span_corpus(path, n_facts=6, s=20, objective="span_prediction", flavor="bilm"):
    """A small corpus in the emitted format: masked input -> removed span."""
    rows = []
    for i in range(n_facts):
        tokens = f"entity{i} opened the landmark number {i} downtown".split()
        for rep in range(s):
            start = rep % len(tokens)
            masked = tokens[:start] + ["<extra_id_0>"] + tokens[start + 1 :]
            rows.append(
                {
                    "fact_id": f"fact{i:04d}",
                    "objective": objective,
                    "input": " ".join(masked),
                    "target": tokens[start],
                }
            )
    write_jsonl(path, rows)
    meta = {"objective": objective, "s": s, "flavor": flavor, "n_facts": n_facts}
    path.with_suffix(".meta.json").write_text(json.dumps(meta), encoding="utf-8")
    return rows


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class ServerThread:
    """Run a FastAPI app with uvicorn on a local port, in a thread."""

    def __init__(self, app):
        import uvicorn

        self.port = free_port()
        config = uvicorn.Config(app, host="127.0.0.1", port=self.port, log_level="error")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    @property
    def endpoint(self):
        return f"http://127.0.0.1:{self.port}"

    def __enter__(self):
        self.thread.start()
        deadline = time.monotonic() + 10
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server failed to start")
            time.sleep(0.02)
        return self

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=10)

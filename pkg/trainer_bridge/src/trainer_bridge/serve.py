"""Serve a tuned adapter as an HTTP responder: POST /answer {query} -> {text}."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any

import torch
from transformers import PreTrainedTokenizerFast

from trainer_bridge import BridgeError
from trainer_bridge.data import PROMPT_TEMPLATE
from trainer_bridge.lora import inject_adapters
from trainer_bridge.train import build_base_model

MAX_NEW_TOKENS = 48


class TunedResponder:
    """The tuned model behind a generate() call; no retrieval context."""

    def __init__(self, adapter_dir: str | Path):
        adapter_path = Path(adapter_dir)
        config_file = adapter_path / "adapter-config.json"
        if not config_file.is_file():
            raise BridgeError(f"adapter directory is missing adapter-config.json: {adapter_path}")
        document = json.loads(config_file.read_text(encoding="utf-8"))
        base_info = json.loads((adapter_path / "base-model.json").read_text(encoding="utf-8"))
        self.tokenizer = PreTrainedTokenizerFast.from_pretrained(str(adapter_path / "tokenizer"))
        self.model = build_base_model(base_info["base_model"], vocab_size=base_info["vocab_size"])
        qlora = document["qlora"]
        inject_adapters(
            self.model,
            target_modules=qlora["target_modules"],
            rank=int(qlora["lora_rank"]),
            alpha=int(qlora["lora_alpha"]),
            dropout=float(qlora["lora_dropout"]),
            bias_mode=str(qlora["bias_mode"]),
        )
        state = torch.load(adapter_path / "adapter-weights.pt", weights_only=True)
        missing = self.model.load_state_dict(state, strict=False).missing_keys
        unexpected = [k for k in state if ".lora_" not in k]
        if unexpected:
            raise BridgeError(f"adapter weights contain non-adapter tensors: {unexpected[:3]}")
        del missing  # base weights are intentionally absent from the adapter file
        self.model.eval()
        self._lock = threading.Lock()

    def answer(self, query: str) -> str:
        prompt = PROMPT_TEMPLATE.format(instruct=query)
        inputs = self.tokenizer(prompt, return_tensors="pt")
        with self._lock, torch.no_grad():
            generated = self.model.generate(
                **inputs,
                max_new_tokens=MAX_NEW_TOKENS,
                do_sample=False,
                pad_token_id=self.tokenizer.pad_token_id,
                eos_token_id=self.tokenizer.eos_token_id,
            )
        completion = generated[0][inputs["input_ids"].shape[1]:]
        text = self.tokenizer.decode(completion, skip_special_tokens=True)
        return text if text.strip() else "(empty completion)"


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    responder: TunedResponder

    def log_message(self, fmt: str, *args: Any) -> None:
        pass

    def _reply(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self) -> None:
        if self.path.rstrip("/") != "/answer":
            self._reply(404, {"detail": "Not Found"})
            return
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError:
            self._reply(400, {"detail": "body must be JSON"})
            return
        query = payload.get("query") if isinstance(payload, dict) else None
        if not isinstance(query, str) or not query:
            self._reply(400, {"detail": "body must be {\"query\": \"...\"}"})
            return
        self._reply(200, {"text": self.responder.answer(query)})


class ResponderServer:
    def __init__(self, adapter_dir: str | Path, host: str = "127.0.0.1", port: int = 0):
        responder = TunedResponder(adapter_dir)
        handler = type("BoundHandler", (_Handler,), {"responder": responder})
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    def start(self) -> "ResponderServer":
        self._thread.start()
        return self

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "ResponderServer":
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.stop()


def serve_responder(adapter_dir: str | Path, bind_address: tuple[str, int] = ("127.0.0.1", 0)) -> ResponderServer:
    return ResponderServer(adapter_dir, bind_address[0], bind_address[1]).start()

"""Shared test helpers."""

import threading
import time

import httpx

from prosumbench.cohort import GroundTruth


def truth_with(severe, bank, treatments=30, tokens=()) -> GroundTruth:
    severity = {g: (1.0 if g in severe else 0.0) for g in bank.group_ids}
    return GroundTruth(frozenset(severe), severity, treatments, list(tokens))


def chat_body(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


class Recorder:
    """httpx transport handler that replays canned responses and records requests."""

    def __init__(self, *responses, delay=0.0):
        self.responses = list(responses)
        self.requests: list[httpx.Request] = []
        self.delay = delay
        self.lock = threading.Lock()

    def __call__(self, request):
        with self.lock:
            self.requests.append(request)
            item = self.responses[min(len(self.requests), len(self.responses)) - 1]
        if self.delay:
            time.sleep(self.delay)
        if isinstance(item, Exception):
            raise item
        if isinstance(item, httpx.Response):
            return item
        return httpx.Response(200, json=chat_body(item))

"""Shared read handle with atomic publication of new model versions."""

import threading


class ModelHandle:
    """Readers get a complete, immutable version; writers swap in a new one."""

    def __init__(self, model):
        self._model = model
        self._lock = threading.Lock()
        self.history: list[int] = [model.version]

    def get(self):
        return self._model

    def publish(self, model):
        with self._lock:
            if model.version <= self._model.version:
                raise ValueError(
                    f"published version {model.version} must exceed {self._model.version}"
                )
            self._model = model
            self.history.append(model.version)

    @property
    def version(self):
        return self._model.version

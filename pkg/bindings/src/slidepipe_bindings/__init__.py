"""Thin iterator interface over the slidepipe pipeline.

A training loop opens a stream from a plain key/value mapping (the same
keys as the CLI config file) and iterates numpy arrays of shape
(batch_size, H, W, 3), uint8.  Prefetching lives entirely in the
underlying pipeline; this layer holds at most the one batch in flight and
hands each batch over as a single contiguous block.

    from slidepipe_bindings import open_stream

    with open_stream({"slide_dir": "/data/wsi", "total_steps": 1000}) as s:
        for batch in s:
            train_step(batch)

Pipeline errors surface unchanged (NoSlides, NoTissue, WorkerFailure, ...);
exhausting ``total_steps`` ends iteration.
"""

import numpy as np

from slidepipe import EndOfStream, config_from_mapping, start

__all__ = ["BoundStream", "open_stream", "iterate"]
__version__ = "0.1.0"


class BoundStream:
    """Iterator over pipeline batches; yields exactly total_steps arrays."""

    def __init__(self, config_mapping):
        self.config = config_from_mapping(config_mapping)
        self._stream = start(self.config)
        self._closed = False

    def __iter__(self):
        return self

    def __next__(self) -> np.ndarray:
        if self._closed:
            raise StopIteration
        try:
            batch = self._stream.next()
        except EndOfStream:
            raise StopIteration from None
        return np.stack([patch.pixels for patch in batch.patches])

    def close(self) -> None:
        """Stop workers and release slide handles; idempotent."""
        if not self._closed:
            self._closed = True
            self._stream.stop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def open_stream(config_mapping) -> BoundStream:
    """Start the pipeline from a mapping whose keys mirror the CLI config
    file exactly; begins prefetching immediately."""
    return BoundStream(config_mapping)


def iterate(stream: BoundStream):
    """Blocking iteration over a stream's remaining batches."""
    return iter(stream)

"""Registry mapping cluster-wide indices to live local array instances.

Arrays are created collectively, so every rank advances its counter in
lockstep and hands out the same index for the same logical array without
any communication.  Entries are weak: the registry never keeps an array
alive.
"""
from __future__ import annotations

import threading
import weakref
from typing import Any

from .transport import CommContext, current_context


class DeadReferenceError(LookupError):
    """The index was registered but its array has since been collected."""


class Librarian:
    def __init__(self) -> None:
        self.next_index = 1
        self.library: "weakref.WeakValueDictionary[int, Any]" = weakref.WeakValueDictionary()

    def register(self, obj: Any) -> int:
        index = self.next_index
        self.next_index += 1
        self.library[index] = obj
        return index

    def lookup(self, index: int) -> Any:
        if not 1 <= index < self.next_index:
            raise KeyError(f"index {index} was never registered")
        try:
            return self.library[index]
        except KeyError:
            raise DeadReferenceError(f"array {index} no longer exists on this rank") from None

    __getitem__ = lookup

    def __len__(self) -> int:
        return len(self.library)


_librarians: "weakref.WeakKeyDictionary[CommContext, Librarian]" = weakref.WeakKeyDictionary()
_lock = threading.Lock()


def get_librarian(comm: CommContext | None = None) -> Librarian:
    """The calling rank's librarian (one per communicator context)."""
    comm = comm or current_context()
    with _lock:
        lib = _librarians.get(comm)
        if lib is None:
            lib = _librarians[comm] = Librarian()
        return lib


def register(obj: Any, comm: CommContext | None = None) -> int:
    return get_librarian(comm).register(obj)


def lookup(index: int, comm: CommContext | None = None) -> Any:
    return get_librarian(comm).lookup(index)

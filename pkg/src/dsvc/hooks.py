"""External executables fired around repository events.

Hooks are installed under ``hooks/<event>/<order>-<name>`` and listed in
``hooks.json``.  They receive their context through ``DSVC_*`` environment
variables.  Only pre-commit hooks can veto; failures of the post-event hooks
are logged and otherwise ignored.
"""
from __future__ import annotations

import enum
import json
import logging
import os
import shutil
import stat
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from .errors import HookRejected, NotExecutable

logger = logging.getLogger(__name__)

HOOK_TIMEOUT = 30.0


class HookEvent(str, enum.Enum):
    PRE_COMMIT = "pre-commit"
    POST_COMMIT = "post-commit"
    POST_MERGE = "post-merge"
    POST_COMPACT = "post-compact"

    @classmethod
    def parse(cls, s: "str | HookEvent") -> "HookEvent":
        if isinstance(s, HookEvent):
            return s
        norm = s.strip().lower().replace("_", "-")
        aliases = {"precommit": "pre-commit", "postcommit": "post-commit",
                   "postmerge": "post-merge", "postcompact": "post-compact"}
        norm = aliases.get(norm, norm)
        for e in cls:
            if e.value == norm:
                return e
        raise ValueError(f"unknown hook event {s!r}")

    @property
    def aborting(self) -> bool:
        return self is HookEvent.PRE_COMMIT


@dataclass
class HookContext:
    repo: str
    dataset: str
    event: HookEvent
    version_id: int | None = None
    parents: list[int] = field(default_factory=list)
    branch: str = ""
    changed_tables: list[str] = field(default_factory=list)

    def env(self) -> dict[str, str]:
        return {
            "DSVC_REPO": self.repo,
            "DSVC_DATASET": self.dataset,
            "DSVC_EVENT": self.event.value,
            "DSVC_VERSION_ID": "" if self.version_id is None else str(self.version_id),
            "DSVC_PARENTS": ",".join(str(p) for p in self.parents),
            "DSVC_BRANCH": self.branch,
            "DSVC_CHANGED_TABLES": ",".join(self.changed_tables),
        }


@dataclass(frozen=True)
class HookEntry:
    id: str
    event: HookEvent
    order: int
    seq: int
    path: str  # relative to the repository root

    def to_json(self) -> dict:
        return {"id": self.id, "event": self.event.value, "order": self.order, "seq": self.seq, "path": self.path}

    @classmethod
    def from_json(cls, d: dict) -> "HookEntry":
        return cls(d["id"], HookEvent.parse(d["event"]), int(d["order"]), int(d["seq"]), d["path"])


@dataclass
class HookResult:
    hook: str
    exit_code: int
    stderr: str
    timed_out: bool = False

    @property
    def ok(self) -> bool:
        return self.exit_code == 0 and not self.timed_out


@dataclass
class HookOutcome:
    event: HookEvent
    results: list[HookResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)


class HookRegistry:
    def __init__(self, root: str | Path, timeout: float = HOOK_TIMEOUT):
        self.root = Path(root)
        self.timeout = timeout
        self.manifest_path = self.root / "hooks.json"

    def entries(self) -> list[HookEntry]:
        if not self.manifest_path.exists():
            return []
        data = json.loads(self.manifest_path.read_text("utf-8"))
        return [HookEntry.from_json(d) for d in data.get("hooks", [])]

    def list(self, event: HookEvent | str | None = None) -> list[HookEntry]:
        """Hooks in execution order: ascending ``order``, ties by install sequence."""
        es = self.entries()
        if event is not None:
            ev = HookEvent.parse(event)
            es = [e for e in es if e.event is ev]
        return sorted(es, key=lambda e: (e.order, e.seq))

    def _save(self, entries: list[HookEntry]) -> None:
        from .store import write_json

        write_json(self.manifest_path, {"hooks": [e.to_json() for e in entries]})

    def install(self, event: HookEvent | str, executable: str | Path, order: int = 0, name: str | None = None) -> str:
        ev = HookEvent.parse(event)
        src = Path(executable)
        if not src.is_file() or not os.access(src, os.X_OK):
            raise NotExecutable(f"{src} is not an executable file")
        entries = self.entries()
        seq = max((e.seq for e in entries), default=0) + 1
        base = name or src.name
        fname = f"{order}-{base}"
        dest_dir = self.root / "hooks" / ev.value
        dest_dir.mkdir(parents=True, exist_ok=True)
        dest = dest_dir / fname
        n = 1
        while dest.exists():
            n += 1
            fname = f"{order}-{base}.{n}"
            dest = dest_dir / fname
        shutil.copyfile(src, dest)
        dest.chmod(dest.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
        hook_id = f"{ev.value}/{fname}"
        entries.append(HookEntry(hook_id, ev, order, seq, str(dest.relative_to(self.root))))
        self._save(entries)
        return hook_id

    def fire(self, ctx: HookContext) -> HookOutcome:
        """Run every hook for ``ctx.event`` in order.

        A failing pre-commit hook raises :class:`HookRejected` and stops the
        remaining hooks; post-event failures are logged only.
        """
        outcome = HookOutcome(ctx.event)
        hooks = self.list(ctx.event)
        if not hooks:
            return outcome
        env = dict(os.environ)
        env.update(ctx.env())
        for h in hooks:
            res = self._run(h, env)
            outcome.results.append(res)
            if res.ok:
                continue
            if ctx.event.aborting:
                raise HookRejected(h.id, res.exit_code, res.stderr)
            logger.warning("%s hook %s failed (exit %s): %s", ctx.event.value, h.id, res.exit_code, res.stderr.strip())
        return outcome

    def _run(self, h: HookEntry, env: dict[str, str]) -> HookResult:
        path = self.root / h.path
        try:
            proc = subprocess.run([str(path)], env=env, cwd=self.root, capture_output=True,
                                  timeout=self.timeout, stdin=subprocess.DEVNULL)
        except subprocess.TimeoutExpired as e:
            err = (e.stderr or b"").decode("utf-8", "replace")
            return HookResult(h.id, -1, err + f"\nhook timed out after {self.timeout:g}s", timed_out=True)
        except OSError as e:
            return HookResult(h.id, 126, str(e))
        return HookResult(h.id, proc.returncode, proc.stderr.decode("utf-8", "replace"))

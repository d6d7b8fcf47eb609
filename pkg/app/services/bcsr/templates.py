"""On-disk store of enrollment templates (one JSON file, user_id -> Template)."""
import json
import logging
import os
import tempfile
import threading
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from app.errors import CorpusIOError, EnrollmentError
from app.schemas.results import Template

logger = logging.getLogger(__name__)


class TemplateStore:
    """Templates keyed by user id.

    Writes replace the file atomically (temp file + rename) under a lock, so
    concurrent enrollments in one process never leave a torn file.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def _read(self) -> dict[str, Template]:
        if not self.path.exists():
            return {}
        try:
            raw = json.loads(self.path.read_text())
            return {uid: Template.model_validate(t) for uid, t in raw.get("templates", {}).items()}
        except (OSError, json.JSONDecodeError, ValidationError) as e:
            raise CorpusIOError(self.path, f"unreadable template store: {e}") from e

    def _write(self, templates: dict[str, Template]) -> None:
        body = {"templates": {uid: t.model_dump(mode="json") for uid, t in sorted(templates.items())}}
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=".templates-", suffix=".json", dir=self.path.parent)
            with os.fdopen(fd, "w") as f:
                json.dump(body, f, indent=2)
            os.replace(tmp, self.path)
        except OSError as e:
            raise CorpusIOError(self.path, f"cannot write template store: {e}") from e

    def all(self) -> dict[str, Template]:
        with self._lock:
            return self._read()

    def user_ids(self) -> list[str]:
        return sorted(self.all())

    def get(self, user_id: str) -> Template:
        """Raises EnrollmentError if the user has no template."""
        template = self.all().get(user_id)
        if template is None:
            raise EnrollmentError(f"User '{user_id}' is not enrolled in {self.path}")
        return template

    def find(self, user_id: str) -> Optional[Template]:
        return self.all().get(user_id)

    def put(self, template: Template) -> None:
        with self._lock:
            templates = self._read()
            if template.user_id in templates:
                logger.info(f"Replacing template for {template.user_id}")
            templates[template.user_id] = template
            self._write(templates)

    def remove(self, user_id: str) -> bool:
        with self._lock:
            templates = self._read()
            if templates.pop(user_id, None) is None:
                return False
            self._write(templates)
            return True


class MemoryTemplateStore(TemplateStore):
    """Same interface, nothing on disk (used by evaluation protocols)."""

    def __init__(self):
        super().__init__(Path("<memory>"))
        self._templates: dict[str, Template] = {}

    def _read(self) -> dict[str, Template]:
        return dict(self._templates)

    def _write(self, templates: dict[str, Template]) -> None:
        self._templates = dict(templates)

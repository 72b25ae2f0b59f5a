"""CQA data model and JSON-lines dataset I/O.

A CQA text is one question plus its answers, topic tags, and answering
users; mentions are located spans inside the question or one answer.  The
on-disk format is UTF-8 JSON-lines, one object per line:

    {"id": ..., "question": ...,
     "answers": [{"text": ..., "user": name}, ...],
     "topics":  [{"name": ..., "questions": [...]}, ...],
     "users":   {name: {"questions": [...]}, ...},
     "mentions": [{"surface": ..., "unit": "q" | answer index,
                   "start": ..., "end": ..., "gold": entity or null}, ...]}

All text is NFC-normalized on load and mention offsets are interpreted as
Unicode scalar positions in the normalized text.  Records that violate the
schema are rejected with the line number and field path; a missing gold
label is allowed (inference-only record).
"""

from __future__ import annotations

import json
import logging
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

MAX_TOPIC_QUESTIONS = 10
MAX_USER_QUESTIONS = 20

QUESTION_UNIT = "q"


@dataclass(frozen=True)
class User:
    name: str
    questions: tuple[str, ...] = ()


@dataclass(frozen=True)
class Answer:
    text: str
    user: User


@dataclass(frozen=True)
class TopicTag:
    name: str
    questions: tuple[str, ...] = ()


@dataclass(frozen=True)
class Mention:
    """A located surface span with an optional gold entity label.

    unit is "q" for the question or a 0-based answer index; the span
    [start, end) must reproduce surface inside the host text.
    """

    surface: str
    unit: str | int
    start: int
    end: int
    gold: str | None = None

    @property
    def in_question(self) -> bool:
        return self.unit == QUESTION_UNIT


@dataclass(frozen=True)
class CqaText:
    id: str
    question: str
    answers: tuple[Answer, ...] = ()
    topic_tags: tuple[TopicTag, ...] = ()
    mentions: tuple[Mention, ...] = ()

    def host_text(self, mention: Mention) -> str:
        """Text of the unit (question or answer) containing the mention."""
        if mention.in_question:
            return self.question
        return self.answers[mention.unit].text

    def parallel_answers(self, answer_index: int) -> list[str]:
        """Texts of all answers except the indexed one, in original order."""
        if not 0 <= answer_index < len(self.answers):
            raise IndexError(f"answer index {answer_index} out of range")
        return [a.text for i, a in enumerate(self.answers) if i != answer_index]

    def all_answer_texts(self) -> list[str]:
        """All answer texts; the parallel-answer pool for question mentions."""
        return [a.text for a in self.answers]

    def mention_parallel_answers(self, mention: Mention) -> list[str]:
        if mention.in_question:
            return self.all_answer_texts()
        return self.parallel_answers(mention.unit)


@dataclass
class LoadIssue:
    line: int
    path: str
    message: str
    fatal: bool  # fatal issues reject the record / line

    def __str__(self) -> str:
        kind = "error" if self.fatal else "warning"
        return f"line {self.line}: {kind} at {self.path}: {self.message}"


@dataclass
class DatasetStats:
    n_texts: int = 0
    n_answers: int = 0
    n_mentions: int = 0
    n_topic_tags: int = 0  # tag attachments summed over texts
    n_unique_tags: int = 0
    n_labeled_mentions: int = 0

    def summary(self) -> str:
        return (
            f"{self.n_texts} CQA texts, {self.n_answers} answers, "
            f"{self.n_mentions} mentions ({self.n_labeled_mentions} labeled), "
            f"{self.n_topic_tags} topic tags ({self.n_unique_tags} unique)"
        )


def _nfc(s: str) -> str:
    return unicodedata.normalize("NFC", s)


def _parse_record(obj: dict, line_no: int, issues: list[LoadIssue]) -> CqaText | None:
    def fail(path: str, message: str) -> None:
        issues.append(LoadIssue(line_no, path, message, fatal=True))

    def warn(path: str, message: str) -> None:
        issues.append(LoadIssue(line_no, path, message, fatal=False))

    if not isinstance(obj, dict):
        fail("$", "record is not a JSON object")
        return None
    text_id = obj.get("id")
    question = obj.get("question")
    if not isinstance(text_id, str) or not text_id:
        fail("id", "missing or empty id")
        return None
    if not isinstance(question, str):
        fail("question", "missing question text")
        return None
    question = _nfc(question)

    users: dict[str, User] = {}
    raw_users = obj.get("users", {})
    if not isinstance(raw_users, dict):
        fail("users", "users must be an object")
        return None
    for name, info in raw_users.items():
        qs = [_nfc(q) for q in info.get("questions", []) if isinstance(q, str)]
        if len(qs) > MAX_USER_QUESTIONS:
            warn(f"users.{name}.questions", f"{len(qs)} questions, keeping first {MAX_USER_QUESTIONS}")
            qs = qs[:MAX_USER_QUESTIONS]
        users[name] = User(name=name, questions=tuple(qs))

    answers: list[Answer] = []
    for i, raw in enumerate(obj.get("answers", [])):
        text = raw.get("text") if isinstance(raw, dict) else None
        if not isinstance(text, str) or not text.strip():
            fail(f"answers[{i}].text", "answer text empty")
            return None
        user_name = raw.get("user")
        if not isinstance(user_name, str) or not user_name:
            fail(f"answers[{i}].user", "missing answering user")
            return None
        if user_name not in users:
            warn(f"answers[{i}].user", f"user {user_name!r} has no meta-data entry")
            users[user_name] = User(name=user_name)
        answers.append(Answer(text=_nfc(text), user=users[user_name]))

    topics: list[TopicTag] = []
    for i, raw in enumerate(obj.get("topics", [])):
        name = raw.get("name") if isinstance(raw, dict) else None
        if not isinstance(name, str) or not name:
            fail(f"topics[{i}].name", "missing topic name")
            return None
        qs = [_nfc(q) for q in raw.get("questions", []) if isinstance(q, str)]
        if len(qs) > MAX_TOPIC_QUESTIONS:
            warn(f"topics[{i}].questions", f"{len(qs)} questions, keeping first {MAX_TOPIC_QUESTIONS}")
            qs = qs[:MAX_TOPIC_QUESTIONS]
        topics.append(TopicTag(name=name, questions=tuple(qs)))

    mentions: list[Mention] = []
    for i, raw in enumerate(obj.get("mentions", [])):
        if not isinstance(raw, dict):
            fail(f"mentions[{i}]", "mention is not an object")
            return None
        surface = raw.get("surface")
        unit = raw.get("unit")
        start = raw.get("start")
        end = raw.get("end")
        gold = raw.get("gold")
        if not isinstance(surface, str) or not surface:
            fail(f"mentions[{i}].surface", "missing surface")
            return None
        surface = _nfc(surface)
        if unit == QUESTION_UNIT:
            host = question
        elif isinstance(unit, int) and 0 <= unit < len(answers):
            host = answers[unit].text
        else:
            fail(f"mentions[{i}].unit", f"unit {unit!r} does not name the question or an answer")
            return None
        if not (isinstance(start, int) and isinstance(end, int) and 0 <= start < end):
            fail(f"mentions[{i}]", f"invalid span [{start}, {end})")
            return None
        if end > len(host):
            fail(f"mentions[{i}].end", f"span end {end} exceeds host text length {len(host)}")
            return None
        if host[start:end] != surface:
            fail(
                f"mentions[{i}]",
                f"span text {host[start:end]!r} does not match surface {surface!r}",
            )
            return None
        if gold is not None and not isinstance(gold, str):
            fail(f"mentions[{i}].gold", "gold must be a string or null")
            return None
        mentions.append(Mention(surface=surface, unit=unit, start=start, end=end, gold=gold))

    return CqaText(
        id=text_id,
        question=question,
        answers=tuple(answers),
        topic_tags=tuple(topics),
        mentions=tuple(mentions),
    )


def load_dataset_with_report(path: str | Path) -> tuple[list[CqaText], list[LoadIssue]]:
    """Load a JSON-lines dataset, collecting per-line validation issues.

    Malformed JSON rejects the line; schema violations reject the record;
    both are reported with line number and field path.  Retention bounds
    (10 topic questions, 20 user questions) are enforced with a warning.
    """
    path = Path(path)
    texts: list[CqaText] = []
    issues: list[LoadIssue] = []
    with path.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                issues.append(LoadIssue(line_no, "$", f"malformed JSON: {e.msg}", fatal=True))
                continue
            record = _parse_record(obj, line_no, issues)
            if record is not None:
                texts.append(record)
    return texts, issues


def load_dataset(path: str | Path) -> list[CqaText]:
    """Load a dataset, logging any issues; returns only the valid records."""
    texts, issues = load_dataset_with_report(path)
    for issue in issues:
        if issue.fatal:
            log.error("%s: %s", path, issue)
        else:
            log.warning("%s: %s", path, issue)
    return texts


def to_record(z: CqaText) -> dict:
    """Canonical JSON object for one CQA text (inverse of the loader)."""
    users: dict[str, dict] = {}
    for a in z.answers:
        users.setdefault(a.user.name, {"questions": list(a.user.questions)})
    return {
        "id": z.id,
        "question": z.question,
        "answers": [{"text": a.text, "user": a.user.name} for a in z.answers],
        "topics": [{"name": t.name, "questions": list(t.questions)} for t in z.topic_tags],
        "users": users,
        "mentions": [
            {
                "surface": m.surface,
                "unit": m.unit,
                "start": m.start,
                "end": m.end,
                "gold": m.gold,
            }
            for m in z.mentions
        ],
    }


def save_dataset(texts: list[CqaText], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for z in texts:
            f.write(json.dumps(to_record(z), ensure_ascii=False) + "\n")


def dataset_stats(texts: list[CqaText]) -> DatasetStats:
    stats = DatasetStats(n_texts=len(texts))
    tag_names = set()
    for z in texts:
        stats.n_answers += len(z.answers)
        stats.n_mentions += len(z.mentions)
        stats.n_topic_tags += len(z.topic_tags)
        stats.n_labeled_mentions += sum(1 for m in z.mentions if m.gold is not None)
        tag_names.update(t.name for t in z.topic_tags)
    stats.n_unique_tags = len(tag_names)
    return stats

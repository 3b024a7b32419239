"""Deterministic scriptable FTP responder for desk-scale experiments.

A script fixes the greeting, the USER/PASS reply codes, an ordered rule
table, and a default reply.  Replies are a pure function of the request
line (after the login phase), so repeated scans of the same script always
produce identical fingerprints; scripts that differ in a few rules stand
in for distinct server products or versions.
"""

from __future__ import annotations

import logging
import re
import socket
import threading
from dataclasses import dataclass

from .errors import ParseError

log = logging.getLogger("fingerfuzz.labserver")

PREDICATES = ("ANY", "LEN_GT", "NONPRINT", "EMPTY")
ACTIONS = ("REPLY", "MULTI", "DROP", "SILENCE")

_RULE_COMMAND_RE = re.compile(r"^([A-Z]{3,8}|\*)$")


@dataclass(frozen=True)
class Rule:
    command: str
    predicate: str
    action: str
    length_gt: int | None = None
    code: int | None = None
    text: str = ""
    lines: tuple[str, ...] = ()

    def matches(self, request: bytes) -> bool:
        head, _, arg = request.partition(b" ")
        if self.command != "*" and head.upper() != self.command.encode("ascii"):
            return False
        if self.predicate == "ANY":
            return True
        if self.predicate == "LEN_GT":
            return len(arg) > self.length_gt
        if self.predicate == "NONPRINT":
            return any(b < 0x20 or b > 0x7E for b in arg)
        return len(arg) == 0  # EMPTY


@dataclass(frozen=True)
class ServerScript:
    name: str
    greeting_code: int = 220
    greeting_text: str = "service ready"
    user_code: int = 331
    pass_code: int = 230
    rules: tuple[Rule, ...] = ()
    default_code: int = 502
    default_text: str = "command not implemented"


def validate_script(script: ServerScript) -> list[str]:
    """Return human-readable problems; empty list means the script is usable."""
    problems = []

    def check_code(code, where):
        if not isinstance(code, int) or not 100 <= code <= 599:
            problems.append(f"{where}: code {code!r} outside 100..599")

    def check_text(text, where):
        if any(ch in "\r\n" for ch in text):
            problems.append(f"{where}: text must not contain line breaks")

    if not script.name or any(ch.isspace() for ch in script.name):
        problems.append("name: must be a single non-empty word")
    check_code(script.greeting_code, "greeting")
    check_text(script.greeting_text, "greeting")
    check_code(script.user_code, "login USER")
    check_code(script.pass_code, "login PASS")
    check_code(script.default_code, "default")
    check_text(script.default_text, "default")
    for i, rule in enumerate(script.rules, start=1):
        where = f"rule {i}"
        if not _RULE_COMMAND_RE.match(rule.command):
            problems.append(f"{where}: bad command {rule.command!r}")
        if rule.predicate not in PREDICATES:
            problems.append(f"{where}: unknown predicate {rule.predicate!r}")
        if rule.predicate == "LEN_GT" and (rule.length_gt is None or rule.length_gt < 0):
            problems.append(f"{where}: LEN_GT needs a non-negative threshold")
        if rule.action not in ACTIONS:
            problems.append(f"{where}: unknown action {rule.action!r}")
        if rule.action == "REPLY":
            check_code(rule.code, where)
            check_text(rule.text, where)
        if rule.action == "MULTI":
            check_code(rule.code, where)
            if not rule.lines:
                problems.append(f"{where}: MULTI needs at least one line")
            for text in rule.lines:
                check_text(text, where)
                if "|" in text:
                    problems.append(f"{where}: MULTI line must not contain '|'")
    return problems


def render_reply(code: int, text: str) -> bytes:
    return f"{code:03d} {text}".encode("latin-1") + b"\r\n"


def render_multiline(code: int, lines: tuple[str, ...]) -> bytes:
    parts = [f"{code:03d}-{line}" for line in lines[:-1]]
    parts.append(f"{code:03d} {lines[-1]}")
    return "\r\n".join(parts).encode("latin-1") + b"\r\n"


def apply_rules(script: ServerScript, request: bytes) -> tuple[str, bytes | None]:
    """First matching rule wins; returns (action, wire bytes or None)."""
    for rule in script.rules:
        if rule.matches(request):
            if rule.action == "REPLY":
                return "REPLY", render_reply(rule.code, rule.text)
            if rule.action == "MULTI":
                return "MULTI", render_multiline(rule.code, rule.lines)
            return rule.action, None
    return "DEFAULT", render_reply(script.default_code, script.default_text)


class LabServer:
    """Threaded listener; every connection evaluates the script independently."""

    def __init__(self, script: ServerScript, host: str = "127.0.0.1", port: int = 0,
                 idle_timeout: float = 60.0):
        problems = validate_script(script)
        if problems:
            raise ValueError("invalid script: " + "; ".join(problems))
        self.script = script
        self.host = host
        self.port = port
        self.idle_timeout = idle_timeout
        self._listener: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._stopping = threading.Event()

    def start(self) -> "LabServer":
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.host, self.port))
        listener.listen(16)
        listener.settimeout(0.2)
        self._listener = listener
        self.port = listener.getsockname()[1]
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name=f"lab-{self.script.name}", daemon=True
        )
        self._accept_thread.start()
        return self

    def stop(self) -> None:
        self._stopping.set()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=5)
            self._accept_thread = None
        if self._listener is not None:
            self._listener.close()
            self._listener = None

    def __enter__(self) -> "LabServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, peer = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            thread = threading.Thread(
                target=self._handle, args=(conn, peer), daemon=True
            )
            thread.start()

    def _handle(self, conn: socket.socket, peer) -> None:
        script = self.script
        conn.settimeout(self.idle_timeout)
        try:
            conn.sendall(render_reply(script.greeting_code, script.greeting_text))
            login_state = "user"
            buffer = bytearray()
            while not self._stopping.is_set():
                newline = buffer.find(b"\n")
                if newline < 0:
                    try:
                        chunk = conn.recv(4096)
                    except socket.timeout:
                        return
                    if not chunk:
                        return
                    buffer.extend(chunk)
                    continue
                line = bytes(buffer[:newline]).rstrip(b"\r")
                del buffer[: newline + 1]
                head = line.split(b" ", 1)[0].upper()
                if login_state == "user" and head == b"USER":
                    log.info("%s %r -> login USER %d", script.name, line, script.user_code)
                    conn.sendall(render_reply(script.user_code, "ok"))
                    login_state = "pass" if script.user_code in (331, 332) else "done"
                    continue
                if login_state == "pass" and head == b"PASS":
                    log.info("%s %r -> login PASS %d", script.name, line, script.pass_code)
                    conn.sendall(render_reply(script.pass_code, "ok"))
                    login_state = "done"
                    continue
                action, payload = apply_rules(script, line)
                log.info("%s %r -> %s", script.name, line, action)
                if action == "DROP":
                    return
                if action == "SILENCE":
                    continue
                conn.sendall(payload)
        except OSError:
            pass
        finally:
            try:
                conn.close()
            except OSError:
                pass


def serve(script: ServerScript, port: int = 0, host: str = "127.0.0.1") -> LabServer:
    return LabServer(script, host=host, port=port).start()


# Script file grammar, one directive per line:
#   name <label>
#   greeting <code> <text>
#   login USER=<code> PASS=<code>
#   rule <CMD|*> <ANY|LEN_GT:n|NONPRINT|EMPTY> <REPLY:code:text|MULTI:code:l1|l2|DROP|SILENCE>
#   default <code> <text>

def load_script(source: str) -> ServerScript:
    name = None
    greeting = None
    login = None
    default = None
    rules: list[Rule] = []
    for line_no, raw in enumerate(source.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        directive, _, rest = line.partition(" ")
        rest = rest.strip()
        if directive == "name":
            if not rest:
                raise ParseError("name needs a label", line_no)
            name = rest
        elif directive == "greeting":
            greeting = _parse_code_text(rest, line_no)
        elif directive == "login":
            login = _parse_login(rest, line_no)
        elif directive == "default":
            if default is not None:
                raise ParseError("duplicate default", line_no)
            default = _parse_code_text(rest, line_no)
        elif directive == "rule":
            rules.append(_parse_rule(rest, line_no))
        else:
            raise ParseError(f"unknown directive {directive!r}", line_no)
    if name is None:
        raise ParseError("script needs a 'name' line")
    if default is None:
        raise ParseError("script needs exactly one 'default' line")
    script = ServerScript(
        name=name,
        greeting_code=greeting[0] if greeting else 220,
        greeting_text=greeting[1] if greeting else "service ready",
        user_code=login[0] if login else 331,
        pass_code=login[1] if login else 230,
        rules=tuple(rules),
        default_code=default[0],
        default_text=default[1],
    )
    problems = validate_script(script)
    if problems:
        raise ParseError("; ".join(problems))
    return script


def save_script(script: ServerScript) -> str:
    lines = [
        f"name {script.name}",
        f"greeting {script.greeting_code} {script.greeting_text}".rstrip(),
        f"login USER={script.user_code} PASS={script.pass_code}",
    ]
    for rule in script.rules:
        pred = rule.predicate
        if pred == "LEN_GT":
            pred = f"LEN_GT:{rule.length_gt}"
        if rule.action == "REPLY":
            action = f"REPLY:{rule.code}:{rule.text}"
        elif rule.action == "MULTI":
            action = f"MULTI:{rule.code}:" + "|".join(rule.lines)
        else:
            action = rule.action
        lines.append(f"rule {rule.command} {pred} {action}")
    lines.append(f"default {script.default_code} {script.default_text}".rstrip())
    return "\n".join(lines) + "\n"


def load_script_file(path) -> ServerScript:
    with open(path, "r", encoding="ascii") as fh:
        return load_script(fh.read())


def _parse_code(token: str, line_no: int) -> int:
    if not token.isdigit() or len(token) != 3:
        raise ParseError(f"expected a 3-digit code, got {token!r}", line_no)
    code = int(token)
    if not 100 <= code <= 599:
        raise ParseError(f"code {token} outside 100..599", line_no)
    return code


def _parse_code_text(rest: str, line_no: int) -> tuple[int, str]:
    token, _, text = rest.partition(" ")
    return _parse_code(token, line_no), text


def _parse_login(rest: str, line_no: int) -> tuple[int, int]:
    parts = rest.split()
    if len(parts) != 2 or not parts[0].startswith("USER=") or not parts[1].startswith("PASS="):
        raise ParseError("login line must be 'login USER=<code> PASS=<code>'", line_no)
    return (
        _parse_code(parts[0][5:], line_no),
        _parse_code(parts[1][5:], line_no),
    )


def _parse_rule(rest: str, line_no: int) -> Rule:
    parts = rest.split(" ", 2)
    if len(parts) != 3:
        raise ParseError("rule line must be 'rule <CMD|*> <predicate> <action>'", line_no)
    command, pred_token, action_token = parts
    if not _RULE_COMMAND_RE.match(command):
        raise ParseError(f"bad rule command {command!r}", line_no)
    length_gt = None
    if pred_token.startswith("LEN_GT:"):
        predicate = "LEN_GT"
        try:
            length_gt = int(pred_token[7:])
        except ValueError:
            raise ParseError(f"bad LEN_GT threshold in {pred_token!r}", line_no) from None
        if length_gt < 0:
            raise ParseError("LEN_GT threshold must be >= 0", line_no)
    elif pred_token in ("ANY", "NONPRINT", "EMPTY"):
        predicate = pred_token
    else:
        raise ParseError(f"unknown predicate {pred_token!r}", line_no)
    if action_token == "DROP" or action_token == "SILENCE":
        return Rule(command, predicate, action_token, length_gt=length_gt)
    kind, _, payload = action_token.partition(":")
    if kind == "REPLY":
        code_token, _, text = payload.partition(":")
        return Rule(command, predicate, "REPLY", length_gt=length_gt,
                    code=_parse_code(code_token, line_no), text=text)
    if kind == "MULTI":
        code_token, _, body = payload.partition(":")
        lines = tuple(body.split("|")) if body else ()
        if not lines:
            raise ParseError("MULTI needs at least one line", line_no)
        return Rule(command, predicate, "MULTI", length_gt=length_gt,
                    code=_parse_code(code_token, line_no), lines=lines)
    raise ParseError(f"unknown action {action_token!r}", line_no)

"""Line-oriented ``key = value`` files with ``[section]`` headers.

Sections may repeat (manifests list one ``[entry]`` per cube), so this is not
configparser. Blank lines and ``#`` comments are ignored.
"""
from collections import OrderedDict

from .errors import ConfigError


def parse(text):
    """Return ``[(section_or_None, OrderedDict), ...]`` in file order."""
    sections = [(None, OrderedDict())]
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            sections.append((line[1:-1].strip(), OrderedDict()))
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        sections[-1][1][key] = value
    return sections


def dump(sections):
    lines = []
    for name, values in sections:
        if name is not None:
            if lines:
                lines.append("")
            lines.append(f"[{name}]")
        for k, v in values.items():
            lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def as_dict(sections):
    """Merge sections into ``{section: values}``; repeated section names are rejected."""
    out = {}
    for name, values in sections:
        if name in out and name is not None:
            raise ConfigError(f"duplicate section [{name}]")
        out.setdefault(name, OrderedDict()).update(values)
    return out


def split_list(value):
    return [v.strip() for v in value.split(",") if v.strip()]

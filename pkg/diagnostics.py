import sys
import platform
from importlib import metadata

PACKAGES = ["numpy", "pandas", "Pillow", "python-dotenv", "pydantic"]


def env_info_lines() -> list[str]:
    lines = ["=== Python & Package Diagnostics ===", f"Python: {sys.version}", f"Platform: {platform.platform()}"]
    for pkg in PACKAGES:
        try:
            lines.append(f"{pkg}: {metadata.version(pkg)}")
        except metadata.PackageNotFoundError:
            lines.append(f"{pkg}: not installed")
    lines.append("====================================")
    return lines


def print_env_info():
    print("\n".join(env_info_lines()))


def write_env_info(path: str) -> None:
    """把运行环境写入运行目录，便于复现"""
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(env_info_lines()) + "\n")

import ast
from pathlib import Path

SCRIPTS = Path(__file__).resolve().parent.parent / "scripts"


def _statement_index(tree, match):
    return next(i for i, stmt in enumerate(tree.body) if match(stmt))


def test_corpus_summary_loads_dotenv_before_settings():
    tree = ast.parse((SCRIPTS / "corpus_summary.py").read_text())
    loads = _statement_index(tree, lambda s: isinstance(s, ast.Expr) and isinstance(s.value, ast.Call)
                             and getattr(s.value.func, "id", None) == "load_dotenv")
    first_import = _statement_index(tree, lambda s: isinstance(s, ast.ImportFrom)
                                    and (s.module or "").startswith("varcalc"))
    assert loads < first_import

# Child-process driver for one feature-transformation program.
#
# argv: program_path input_csv output_csv function_name categorical_json
# Exit codes: 0 ok, 10 runtime error, 11 memory error, 12 contract violation,
# 13 harness setup failure. A one-line reason is written to stderr, prefixed
# with "LLMFE:".
import json
import sys
import traceback

ROW_ID = "__llmfe_row_id__"


def fail(code, msg):
    sys.stderr.write("\nLLMFE: " + msg.replace("\n", " ")[:500] + "\n")
    sys.stderr.flush()
    sys.exit(code)


def main():
    prog_path, in_path, out_path, fn_name, cat_json = sys.argv[1:6]
    try:
        import numpy as np
        import pandas as pd
    except MemoryError:
        fail(11, "MemoryError while importing pandas")
    except Exception as e:  # noqa: BLE001
        fail(13, "cannot import pandas/numpy: %r" % (e,))

    categorical = json.loads(cat_json)
    df = pd.read_csv(
        in_path,
        index_col=ROW_ID,
        dtype={c: str for c in categorical},
        keep_default_na=False,
        na_values=[""],
        float_precision="round_trip",
    )
    df.index.name = None

    with open(prog_path, encoding="utf-8") as fh:
        source = fh.read()

    namespace = {"__name__": "candidate", "pd": pd, "np": np}
    fn = None
    out = None
    for step in ("define", "call"):
        try:
            if step == "define":
                exec(compile(source, "<candidate>", "exec"), namespace)
                fn = namespace.get(fn_name)
            else:
                out = fn(df.copy())
        except MemoryError:
            fail(11, "MemoryError")
        except SystemExit as e:
            fail(10, "program called exit(%r)" % (e.code,))
        except BaseException as e:  # noqa: BLE001
            lines = traceback.format_exception_only(type(e), e)
            fail(10, lines[-1].strip() if lines else type(e).__name__)
        if step == "define" and not callable(fn):
            fail(12, "program does not define %s" % fn_name)

    if not isinstance(out, pd.DataFrame):
        fail(12, "program returned %s, expected a DataFrame" % type(out).__name__)
    if isinstance(out.columns, pd.MultiIndex):
        fail(12, "multi-level column index")
    scalar_types = (str, bytes, int, float, bool, np.generic, type(None))
    for pos, name in enumerate(out.columns):
        column = out.iloc[:, pos]
        if column.dtype == object:
            for value in column.values:
                if not isinstance(value, scalar_types):
                    fail(12, "column %r holds non-scalar %s" % (name, type(value).__name__))
    try:
        out.to_csv(out_path, index=True, index_label=ROW_ID)
    except MemoryError:
        fail(11, "MemoryError while writing output")


if __name__ == "__main__":
    main()

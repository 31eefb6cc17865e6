"""Walk through the tree-edit-distance similarity used for scoring.

A table is parsed into an ordered tree; the score is 1 - TED / max(|T1|, |T2|)
where TED charges 1 per inserted or deleted node and a normalized character
edit distance for relabeling. The structural variant strips cell text first,
so it isolates layout errors from content errors.
"""

import numpy as np

from tabmark import synth
from tabmark.teds import Node, html_to_tree, ted, ted_bruteforce, teds
from tabmark.evaluate import evaluate_pairs, summarize, summary_table


def show(label: str, truth: str, pred: str) -> None:
    scores = []
    for mode in ("structural", "total"):
        t = html_to_tree(truth, mode)
        p = html_to_tree(pred, mode)
        scores.append(f"{mode} {teds(t, p):.4f}")
    print(f"{label:28s} {'  '.join(scores)}")


def main() -> None:
    base = "<table><tr><td>ab</td><td>cd</td></tr></table>"
    show("identical", base, base)
    show("one character off", base, "<table><tr><td>ab</td><td>ce</td></tr></table>")
    show("one cell missing", base, "<table><tr><td>ab</td></tr></table>")
    show("extra row", base, "<table><tr><td>ab</td><td>cd</td></tr><tr><td>x</td></tr></table>")
    show("merged cell", base, '<table><tr><td colspan="2">ab</td></tr></table>')

    # The dynamic program matches exhaustive search on small trees.
    rng = np.random.default_rng(1)

    def tree(n):
        nodes = [Node("table")]
        for _ in range(n - 1):
            child = Node(str(rng.choice(["tr", "td"])), text=str(rng.choice(["", "a", "xy"])))
            nodes[int(rng.integers(0, len(nodes)))].children.append(child)
            nodes.append(child)
        return nodes[0]

    worst = max(
        abs(ted(a, b) - ted_bruteforce(a, b))
        for a, b in ((tree(5), tree(6)) for _ in range(50))
    )
    print(f"\nDP vs brute force on 50 random small pairs: max |diff| = {worst:.1e}")

    # Corpus-level report, grouped by simple (no merges) vs complex tables.
    corpus = [synth.generate(synth.PRESETS["wide"], seed=s) for s in range(40)]
    pairs = [(f"t{i}", r.html(), r.html()) for i, r in enumerate(corpus)]
    print("\ntruth scored against itself:")
    print(summary_table(summarize(evaluate_pairs(pairs))))


if __name__ == "__main__":
    main()

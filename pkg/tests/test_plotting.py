import numpy as np

from xlret.evaluation import AlignmentEntry, AlignmentReport, RecallReport, RecallRow
from xlret.plotting import plot_alignment, plot_loss_curve, plot_recall
from xlret.trainer import LossLog

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _log(n_epochs=3, n_batches=4):
    log = LossLog()
    for e in range(n_epochs):
        for b in range(n_batches):
            log.append(e, b, 10.0 / (1 + e + 0.1 * b), 1.0)
    return log


def _recall():
    rep = RecallReport("abc", "sqeuclidean", [1, 10])
    for lang, base in (("en", 0.4), ("xx", 0.3)):
        rep.rows += [RecallRow(lang, 1, base, 100, 100), RecallRow(lang, 10, 2 * base, 100, 100)]
    return rep


class TestFigures:
    def test_loss_curve(self, tmp_path):
        plot_loss_curve(_log(), tmp_path / "l.png")
        assert (tmp_path / "l.png").read_bytes().startswith(PNG_MAGIC)

    def test_empty_and_non_positive_logs(self, tmp_path):
        plot_loss_curve(LossLog(), tmp_path / "e.png")
        log = _log()
        log.append(3, 0, 0.0, 0.0)
        plot_loss_curve(log, tmp_path / "z.png")
        assert (tmp_path / "e.png").exists() and (tmp_path / "z.png").exists()

    def test_recall_and_alignment(self, tmp_path):
        plot_recall(_recall(), tmp_path / "r.png")
        rep = AlignmentReport("input", [AlignmentEntry("en", "xx", 10, 0.1, 1.0, 0.1)])
        plot_alignment(rep, tmp_path / "a.png")
        for name in ("r.png", "a.png"):
            assert (tmp_path / name).read_bytes().startswith(PNG_MAGIC)

    def test_deterministic_bytes(self, tmp_path):
        plot_recall(_recall(), tmp_path / "1.png")
        plot_recall(_recall(), tmp_path / "2.png")
        assert (tmp_path / "1.png").read_bytes() == (tmp_path / "2.png").read_bytes()

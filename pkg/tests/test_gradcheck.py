import unittest

from oefd.gradcheck import TOLERANCE, check_encoder_config, check_loss_config, run_grad_check
from oefd.schemas import AngularMarginConfig


class TestGradCheck(unittest.TestCase):

    def test_default_matrix_passes(self):
        report = run_grad_check()
        self.assertGreaterEqual(len(report.results), 20)
        self.assertEqual(report.failures, [], [(r.name, r.worst) for r in report.failures])
        self.assertTrue(report.passed)
        covered = {(r.m, r.s, r.lam) for r in report.results}
        for m in (1, 2, 4):
            for s in (1.0, 32.0):
                for lam in (0.0, 0.01, 1.0):
                    self.assertIn((m, s, lam), covered)

    def test_corrupted_gradient_is_caught(self):
        report = run_grad_check(corrupt=True)
        self.assertFalse(report.passed)
        self.assertEqual(len(report.failures), len(report.results))

    def test_single_configs_report_every_part(self):
        margin = AngularMarginConfig(m=2, s=4.0, anneal_weight=0.0)
        loss = check_loss_config(margin, 0.01, seed=1)
        self.assertIn("id.weights", loss.errors)
        self.assertIn("total.intercept", loss.errors)
        self.assertLess(loss.worst, TOLERANCE)
        encoder = check_encoder_config(margin, 1.0, seed=2)
        self.assertEqual(sorted(encoder.errors), ["encoder.b0", "encoder.b1", "encoder.w0", "encoder.w1"])
        self.assertLess(encoder.worst, TOLERANCE)


if __name__ == '__main__':
    unittest.main()

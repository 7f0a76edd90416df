import os
import tempfile
import unittest

from oefd.config import EvalConfig, GenDataConfig, ToyConfig, TrainRunConfig, load_run_config, parse_overrides
from oefd.errors import ConfigError, InputOutputError


class TestRunConfig(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "run.conf")

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text):
        with open(self.path, 'w') as f:
            f.write(text)
        return self.path

    def test_defaults_without_a_file(self):
        cfg = load_run_config("gen-data")
        self.assertIsInstance(cfg, GenDataConfig)
        self.assertEqual(cfg.num_identities, 10)
        self.assertEqual(cfg.age_range, (10.0, 60.0))
        self.assertTrue(os.path.isabs(cfg.out))

    def test_default_out_is_resolved_for_every_command(self):
        required = {"train": ["dataset=d.txt"], "embed": ["checkpoint=c.json", "dataset=d.txt"],
                    "eval": ["embeddings=e.txt"]}
        for command in ("gen-data", "train", "embed", "eval", "toy-fig3", "grad-check"):
            cfg = load_run_config(command, overrides=required.get(command, []))
            self.assertEqual(cfg.out, os.path.abspath("out"), command)

    def test_file_values_and_override_precedence(self):
        self.write("# comment\nnum_identities=6\nseed=3\nage_range=20,50\n")
        cfg = load_run_config("gen-data", self.path, ["num_identities=8"], seed=11, out="elsewhere")
        self.assertEqual(cfg.num_identities, 8)
        self.assertEqual(cfg.seed, 11)
        self.assertEqual(cfg.age_range, (20.0, 50.0))
        self.assertEqual(cfg.out, os.path.abspath("elsewhere"))

    def test_unknown_key_is_named(self):
        self.write("num_identites=6\n")
        with self.assertRaises(ConfigError) as ctx:
            load_run_config("gen-data", self.path)
        self.assertEqual(ctx.exception.field_name, "num_identites")
        self.assertIn("num_identites", str(ctx.exception))

    def test_inverted_age_range_is_named(self):
        with self.assertRaises(ConfigError) as ctx:
            load_run_config("gen-data", overrides=["age_range=60,10"])
        self.assertIn("age_range", str(ctx.exception))

    def test_key_without_value(self):
        self.write("seed\n")
        with self.assertRaises(ConfigError):
            load_run_config("gen-data", self.path)

    def test_missing_file(self):
        with self.assertRaises(InputOutputError):
            load_run_config("gen-data", os.path.join(self.tmp.name, "absent.conf"))

    def test_malformed_override(self):
        with self.assertRaises(ConfigError):
            parse_overrides(["epochs"])
        self.assertEqual(parse_overrides(["a=b=c"]), {"a": "b=c"})

    def test_train_config_lists_and_alias(self):
        cfg = load_run_config("train", overrides=["dataset=d.txt", "hidden_widths=16,8", "lambda=0.5",
                                                  "lr_drop_epochs=3,5", "epochs=7", "loss_mode=a_softmax"])
        self.assertIsInstance(cfg, TrainRunConfig)
        self.assertEqual(cfg.hidden_widths, [16, 8])
        self.assertEqual(cfg.multitask().lambda_, 0.5)
        self.assertEqual(cfg.train_config(cfg.loss_mode).lr_drop_epochs, [3, 5])
        self.assertEqual(cfg.encoder_spec(4, 2).layer_widths, [4, 16, 8, 2])
        self.assertEqual(cfg.dataset, os.path.abspath("d.txt"))

    def test_train_requires_dataset(self):
        with self.assertRaises(ConfigError) as ctx:
            load_run_config("train")
        self.assertEqual(ctx.exception.field_name, "dataset")

    def test_bad_loss_mode(self):
        with self.assertRaises(ConfigError):
            load_run_config("train", overrides=["dataset=d.txt", "loss_mode=arcface"])

    def test_seed_flag_ignored_where_not_a_key(self):
        cfg = load_run_config("embed", overrides=["checkpoint=c.json", "dataset=d.txt"], seed=4)
        self.assertFalse(hasattr(cfg, "seed"))

    def test_eval_protocol_arguments(self):
        cfg = load_run_config("eval", overrides=["embeddings=e.txt", "protocol=roc"])
        self.assertIsInstance(cfg, EvalConfig)
        with self.assertRaises(ConfigError) as ctx:
            cfg.check_protocol_args()
        self.assertEqual(ctx.exception.field_name, "pairs")

    def test_toy_defaults(self):
        cfg = load_run_config("toy-fig3")
        self.assertIsInstance(cfg, ToyConfig)
        self.assertEqual(cfg.num_identities, 10)
        self.assertEqual(cfg.encoder_spec(cfg.input_dim, 2).embedding_dim, 2)
        self.assertTrue(cfg.train_config("oe", freeze_age_head=True).freeze_age_head)


if __name__ == '__main__':
    unittest.main()

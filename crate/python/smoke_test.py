"""Smoke test for the dams_py extension: corpus, pretraining, fine-tuning,
summaries, ROUGE and the probe on a tiny synthetic setup.

Build with `maturin develop -m crates/py/Cargo.toml`, or copy
`target/release/libdams_py.so` to `dams_py.so` on PYTHONPATH.
"""

import os
import tempfile

import dams_py


def main():
    s = dams_py.rouge("the cat sat", "the cat")
    assert abs(s["rouge1"][2] - 0.8) < 1e-12, s
    assert dams_py.tokenize("Hello, World!") == ["hello", ",", "world", "!"], dams_py.tokenize("Hello, World!")
    c = dams_py.corpus_rouge([("a b", "a b"), ("a", "b")])
    assert abs(c["rougeL"][2] - 0.5) < 1e-12, c

    acc = dams_py.domain_probe([[1.0, 0.0]] * 50, [[0.0, 1.0]] * 50)
    assert acc == 1.0, acc

    corpus = dams_py.Corpus(dialogues=60, shorttexts=60, articles=60, finetune=20, eval=10, seed=2)
    print("corpus", corpus.counts(), "vocab", corpus.vocab_size)

    model, log = dams_py.Model.pretrain(corpus, steps=20, seed=3)
    assert len(log) == 20 and all(r["total"] > 0 for r in log)
    print("pretrain l_rec", round(log[0]["l_rec"], 3), "->", round(log[-1]["l_rec"], 3))

    curve = model.finetune(corpus, steps=10, fraction=0.5)
    print("finetune dev ppl", [round(p[1], 2) for p in curve])

    dialogue = corpus.eval_dialogues()[0]
    summary = model.summarize(dialogue)
    print("summary:", summary)
    print("dev rouge", model.dev_rouge(corpus))
    print("probe", model.probe(corpus, per_domain=40))

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.ckpt")
        model.save(path)
        again = dams_py.Model.load(path)
        assert again.summarize(dialogue) == summary
        assert again.num_parameters == model.num_parameters

    try:
        dams_py.Model.load("/nonexistent/model.ckpt")
    except OSError:
        pass
    else:
        raise AssertionError("missing checkpoint should raise OSError")
    print("ok")


if __name__ == "__main__":
    main()

import math
import random

import pytest

import srgi


def click_log(path, sessions=300, items=25, seed=1):
    rng = random.Random(seed)
    lines = []
    for s in range(sessions):
        v = rng.randrange(items)
        for i in range(rng.randint(3, 6)):
            lines.append(f"s{s}\t{s * 3600 + i * 10}\ti{v}")
            v = rng.randrange(items) if rng.random() < 0.2 else (v + 1) % items
    path.write_text("\n".join(lines) + "\n")
    return int(sessions * 0.8) * 3600


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    boundary = click_log(d / "clicks.tsv")
    pre, graph = str(d / "c.pre"), str(d / "g.srgg")
    srgi.preprocess(str(d / "clicks.tsv"), pre, min_item_count=2, boundary=boundary)
    srgi.build_graph(pre, graph)
    common = dict(dim=12, epochs=1, batch_size=50, seed=3)
    ckpt = {}
    metrics = {}
    for model in ("bgnn", "srgi-fm", "srgi-cm"):
        ckpt[model] = str(d / f"{model}.srgp")
        metrics[model] = srgi.train(pre, ckpt[model], graph=graph, model=model, lambda_c=10, **common)
    return dict(dir=d, pre=pre, graph=graph, ckpt=ckpt, metrics=metrics)


def test_run_cli_usage_error():
    code, out, err = srgi.run_cli(["no-such-command"])
    assert code == 1
    assert err


def test_run_raises_on_data_error(tmp_path):
    with pytest.raises(srgi.CliError) as e:
        srgi.run("build-graph", **{"in": str(tmp_path / "missing.pre"), "out": str(tmp_path / "g")})
    assert e.value.code == 2


def test_corpus_stats(pipeline):
    st = srgi.corpus_stats(pipeline["pre"])
    assert st["num_items"] == 25
    assert st["num_train"] > 0 and st["num_test"] > 0
    assert st["avg_len"] > 1


def test_train_metrics_and_evaluate_agree(pipeline):
    for model, m in pipeline["metrics"].items():
        assert set(m) == {"P@10", "MRR@10", "P@20", "MRR@20", "count"}
        assert 0 <= m["MRR@20"] <= m["P@20"] <= 100
        again = srgi.evaluate(pipeline["ckpt"][model], pipeline["pre"], graph=pipeline["graph"])
        assert again == pytest.approx(m, abs=1e-6)


def test_recommender(pipeline):
    rec = srgi.Recommender(pipeline["ckpt"]["srgi-fm"], pipeline["pre"], pipeline["graph"])
    assert rec.variant == "srgi-fm"
    assert rec.dim == 12
    assert rec.num_items == len(rec.vocabulary) == 25
    top = rec.recommend(["i3", "i4"], 5)
    assert len(top) == 5
    probs = [p for _, p in top]
    assert probs == sorted(probs, reverse=True)
    assert all(tok in rec.vocabulary for tok, _ in top)
    m = rec.evaluate([20])
    assert m["P@20"] == pytest.approx(pipeline["metrics"]["srgi-fm"]["P@20"], abs=1e-6)
    with pytest.raises(ValueError):
        rec.recommend(["zz"], 5)


def test_recommend_wrapper(pipeline):
    out = srgi.recommend(pipeline["ckpt"]["bgnn"], pipeline["pre"], [["i1"], ["i1", "i2"]], top_n=3)
    assert len(out) == 2 and all(len(r) == 3 for r in out)


def test_global_graph():
    g = srgi.global_graph([[0, 1, 2], [1, 2, 0]], 3, epsilon=1, max_neighbors=0)
    assert dict(g[0]) == {1: 1, 2: 1}
    assert dict(g[1]) == {0: 1, 2: 2}
    assert dict(g[2]) == {0: 1, 1: 2}


def test_contrastive_loss_closed_form():
    n = 8
    eye = [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]
    expected = math.log(math.e + 2 * (n - 1)) - 1
    assert srgi.contrastive_loss(eye, eye) == pytest.approx(expected, rel=1e-12)


def test_target_rank_counts_strictly_better():
    assert srgi.target_rank([0.1, 0.5, 0.3, 0.5], 2) == 3
    assert srgi.target_rank([0.9, 0.5], 0) == 1


def test_parse_metrics():
    assert srgi.parse_metrics("P\t20\t50.0\nMRR\t20\t10.5\ncount\t0\t4\nnoise\n") == {
        "P@20": 50.0, "MRR@20": 10.5, "count": 4}

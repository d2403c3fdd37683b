import trellis


def test_version():
    assert trellis.__version__


def test_seeded_run_is_reproducible_and_clean():
    plan = trellis.make_plan(seed=11, nodes=3, commands=40)
    first = trellis.run_sim(plan)
    second = trellis.run_sim(plan)
    assert first["trace"] == second["trace"]
    assert first["quiescent"]
    assert not first["failed_keys"]

    report = trellis.check_trace(first["trace"])
    assert report["ok"], report["summary"]
    assert report["liveness"] == "satisfied"


def test_checker_rejects_tampered_trace():
    plan = trellis.make_plan(seed=12, nodes=3, commands=30)
    trace = trellis.run_sim(plan)["trace"]

    lines = trace.splitlines()
    learns = [l for l in lines if " learn " in l]
    assert learns
    lines.append(learns[-1])  # replay one learn record: a duplicate output
    report = trellis.check_trace("\n".join(lines) + "\n")
    assert not report["ok"]
    assert any(v["rule"] == "no-duplication" for v in report["violations"])

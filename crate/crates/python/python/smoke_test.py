"""Smoke test for the `malora` extension module.

Build and install first, e.g. `maturin build --release -m crates/python/Cargo.toml`
followed by `pip install target/wheels/malora-*.whl`.
"""

import math

import malora


def main():
    assert abs(malora.time_on_air(7) - 0.056576) < 1e-12
    assert abs(malora.erf(1.0) - math.erf(1.0)) < 1e-12
    assert malora.ACTIONS_PER_ED == 48
    assert malora.decode_action(malora.encode_action(9, 12)) == (9, 12)

    net = malora.Network.random(6, seed=4)
    assert net.num_eds == 6 and net.num_gateways == 4

    actions = malora.baseline("min_sf_max_tp", net)
    report = net.evaluate(actions)
    assert len(report["pdr"]) == 6 and report["system_ee"] > 0.0
    assert abs(sum(report["ee"]) - report["system_ee"]) < 1e-9

    sim = net.simulate(actions, horizon_s=20000.0, replications=2, seed=1)
    mae = sum(abs(a - b) for a, b in zip(sim["pdr"], report["pdr"])) / 6
    assert mae < 0.05, mae

    cfg = malora.Config(overrides=["topology.num_eds=5", "seed=2"])
    assert cfg.seed == 2 and len(cfg.hash()) == 64
    assert malora.Network.from_config(cfg).num_eds == 5

    trainer = malora.Trainer(net, seed=1, total_steps=200, eval_interval=100,
                             hidden_width=8, batch_size=16, update_interval=5)
    assert trainer.step(50) == 50
    out = trainer.run()
    assert trainer.done and out["final"]["step"] == 200
    probs = trainer.policy_probabilities(actions)
    assert len(probs) == 6 and all(abs(sum(p) - 1.0) < 1e-9 for p in probs)

    try:
        net.evaluate([0, 1])
    except ValueError:
        pass
    else:
        raise AssertionError("length mismatch must raise ValueError")

    print("malora smoke test passed:", round(out["final"]["system_ee"], 3))


if __name__ == "__main__":
    main()

use slicing_marl::orchestrator::Session;
use slicing_marl::{Scenario, Variant};

#[test]
fn agents_only_read_their_own_slice() {
    let sc = Scenario::desk();
    for variant in [Variant::MaVanilla, Variant::MaIb] {
        let mut s = Session::new(&sc, variant, 2).unwrap();
        s.bus().enable_audit();
        for e in 0..2 {
            s.run_episode(e, 30, 0.5, 0.4, true).unwrap();
        }
        let layout = s.layout().clone();
        let audit = s.bus().audit();
        assert!(!audit.is_empty());
        for k in 0..3 {
            let me = format!("agent-{k}");
            let mine: Vec<_> = audit.iter().filter(|d| d.consumer == me).collect();
            assert!(mine.iter().any(|d| d.kind == "obs"), "{variant}: agent {k} saw no observation");
            for d in mine {
                match d.kind {
                    "obs" => assert_eq!(d.topic, layout.obs(k), "{variant}: {d:?}"),
                    "reward" => assert_eq!(d.topic, layout.reward(k), "{variant}: {d:?}"),
                    "action" => panic!("{variant}: agent {k} read an action report {d:?}"),
                    _ => {}
                }
            }
        }
    }
}

#[test]
fn vanilla_agents_exchange_no_messages() {
    let sc = Scenario::desk();
    let mut s = Session::new(&sc, Variant::MaVanilla, 1).unwrap();
    s.run_episode(0, 10, 1.0, 0.4, false).unwrap();
    let topic = s.layout().msg_broadcast();
    assert_eq!(s.bus().high_water(topic).unwrap_or(0), 0);
}

use std::collections::BTreeMap;

use m2mrf::autograd::{Tape, Var};
use m2mrf::gradcheck::{grad_check_param, DEFAULT_EPS};
use m2mrf::net::loss::dice_loss;
use m2mrf::net::{M2mrfHyper, MiniFusionNet, NetConfig, Variant};
use m2mrf::synth::{default_specs, generate_sample};
use m2mrf::param::{ParamId, ParamStore};
use m2mrf::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(variant: Variant) -> NetConfig {
    NetConfig {
        stem_channels: 8,
        m2mrf: M2mrfHyper {
            patch_h: 4,
            patch_w: 4,
            reduction: 2,
            alpha: 4,
        },
        ..variant.net_config()
    }
}

fn shapes(net: &MiniFusionNet) -> BTreeMap<String, Vec<usize>> {
    net.store().iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect()
}

#[test]
fn variants_differ_only_in_fusion_parameters() {
    let a = shapes(&MiniFusionNet::build(Variant::A.net_config(), 0).unwrap());
    for v in Variant::ALL {
        let other = shapes(&MiniFusionNet::build(v.net_config(), 0).unwrap());
        let non_fuse = |m: &BTreeMap<String, Vec<usize>>| -> Vec<(String, Vec<usize>)> {
            m.iter().filter(|(k, _)| !k.starts_with("fuse.")).map(|(k, s)| (k.clone(), s.clone())).collect()
        };
        assert_eq!(non_fuse(&a), non_fuse(&other), "{v}");
    }
    let d = shapes(&MiniFusionNet::build(Variant::D.net_config(), 0).unwrap());
    assert_ne!(a, d);
}

#[test]
fn stem_and_head_counts_do_not_depend_on_the_operators() {
    let counts: Vec<(usize, usize)> = Variant::ALL
        .iter()
        .map(|v| {
            let net = MiniFusionNet::build(v.net_config(), 1).unwrap();
            (net.store().value(net.stem_param()).len(), net.store().value(net.head_param()).len())
        })
        .collect();
    assert!(counts.iter().all(|c| *c == (3 * 3 * 3 * 16, 16 * 4)), "{counts:?}");
}

#[test]
fn every_variant_plugs_into_the_same_slots() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::uniform(&[32, 32, 3], 0.0, 1.0, &mut rng);
    for v in Variant::ALL {
        let net = MiniFusionNet::build(v.net_config(), 0).unwrap();
        let logits = net.logits(&x).unwrap();
        assert_eq!(logits.shape(), &[32, 32, 4], "{v}");
        assert!(logits.all_finite());
        let ops: Vec<_> = net.fusion_operators().collect();
        // two transitions, six pairs in the first block, two into stream 0 in the last
        assert_eq!(ops.len(), 2 + 6 + 2, "{v}");
    }
}

#[test]
fn predictions_are_probabilities_and_threshold_matches_logit_sign() {
    let s = generate_sample(32, 32, &default_specs(), 0, 0).unwrap();
    for v in [Variant::A, Variant::BaselineMp] {
        let mut net = MiniFusionNet::build(v.net_config(), 4).unwrap();
        // a larger head makes both signs show up
        let head = net.head_param();
        let scaled = net.store().value(head).map(|w| w * 30.0);
        net.store_mut().set_value(head, scaled).unwrap();
        let logits = net.logits(&s.image).unwrap();
        let probs = net.predict(&s.image).unwrap();
        assert!(probs.data().iter().all(|&p| p > 0.0 && p < 1.0));
        let (mut pos, mut neg) = (0, 0);
        for (l, p) in logits.data().iter().zip(probs.data()) {
            assert_eq!(*p > 0.5, *l > 0.0);
            if *l > 0.0 {
                pos += 1
            } else {
                neg += 1
            }
        }
        assert!(pos > 0 && neg > 0, "{v}: {pos}/{neg}");
    }
}

/// Flat positions of the `k` largest-magnitude entries of the analytic
/// gradient; tiny entries sit below the finite-difference roundoff floor.
fn strongest<F>(f: F, net: &MiniFusionNet, id: ParamId, k: usize) -> Vec<usize>
where
    F: Fn(&mut Tape, &ParamStore) -> m2mrf::Result<Var>,
{
    let mut tape = Tape::new();
    let y = f(&mut tape, net.store()).unwrap();
    let g = tape.backward(y).unwrap().param(id).cloned().unwrap();
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| g.data()[b].abs().total_cmp(&g.data()[a].abs()));
    order.truncate(k);
    order
}

/// Raises every weight of the named fusion operators so their path carries a
/// signal that central differences can resolve.
fn amplify_fusion(net: &mut MiniFusionNet, factor: f64) {
    let ids: Vec<_> = net.store().ids().filter(|&id| net.store().get(id).name.starts_with("fuse.")).collect();
    for id in ids {
        let v = net.store().value(id).map(|w| w * factor);
        net.store_mut().set_value(id, v).unwrap();
    }
}

#[test]
fn forward_sum_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::uniform(&[16, 16, 3], 0.0, 1.0, &mut rng);
    for v in [Variant::A, Variant::D] {
        let mut net = MiniFusionNet::build(small(v), 6).unwrap();
        amplify_fusion(&mut net, 30.0);
        let probes = ["stem.kernel", "head.kernel", "fuse.transition1.s0.w_prime", "fuse.block0.2to0.s0.recover"];
        for name in probes {
            let id = net.store().find(name).unwrap_or_else(|| panic!("{v}: no {name}"));
            let f = |tape: &mut Tape, store: &ParamStore| {
                let mut probe = net.clone();
                *probe.store_mut() = store.clone();
                let xv = tape.leaf(x.clone());
                let y = probe.forward(tape, xv)?;
                Ok(tape.sum(y))
            };
            let coords = strongest(f, &net, id, 3);
            let err = grad_check_param(f, net.store(), id, Some(&coords), DEFAULT_EPS).unwrap();
            assert!(err < 1e-5, "{v} {name}: {err}");
        }
    }
}

#[test]
fn training_loss_gradients_match_on_a_weight_subset() {
    let s = generate_sample(16, 16, &default_specs(), 0, 3).unwrap();
    let mut net = MiniFusionNet::build(small(Variant::B), 7).unwrap();
    amplify_fusion(&mut net, 30.0);
    let head = net.head_param();
    let big = net.store().value(head).map(|w| w * 50.0);
    net.store_mut().set_value(head, big).unwrap();

    let f = |tape: &mut Tape, store: &ParamStore| {
        let mut probe = net.clone();
        *probe.store_mut() = store.clone();
        let xv = tape.leaf(s.image.clone());
        let gv = tape.leaf(s.masks.clone());
        let logits = probe.forward(tape, xv)?;
        let p = tape.sigmoid(logits);
        dice_loss(tape, p, gv)
    };
    let mut checked = 0;
    for id in net.store().ids().collect::<Vec<_>>() {
        let k = net.store().value(id).len().div_ceil(100);
        let coords = strongest(f, &net, id, k);
        let err = grad_check_param(f, net.store(), id, Some(&coords), DEFAULT_EPS).unwrap();
        let name = &net.store().get(id).name;
        assert!(err < 1e-4, "{name}: {err}");
        checked += k;
    }
    assert!(checked >= net.param_count() / 100);
}

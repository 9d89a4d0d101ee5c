//! Randomised identities for the tensor and Kronecker toolbox, checked
//! against plain index loops.

use bdsense::linalg::numerical_rank;
use bdsense::tensor::{
    fold, khatri_rao, kron, n_mode_product, parafac_reconstruct, rearrange, unfold, unrearrange,
    unvec, vec_mat,
};
use bdsense::{c64, CMat, Mode, ParafacFactors3, Tensor3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

fn rand_c(rng: &mut ChaCha8Rng) -> c64 {
    c64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
    CMat::from_fn(r, c, |_, _| rand_c(rng))
}

fn rand_tensor(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Tensor3 {
    Tensor3::from_fn(dims, |_, _, _| rand_c(rng))
}

fn max_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut m: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

fn tensor_diff(a: &Tensor3, b: &Tensor3) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

fn diag(v: &[c64]) -> CMat {
    CMat::from_fn(v.len(), v.len(), |i, j| {
        if i == j {
            v[i]
        } else {
            c64::new(0.0, 0.0)
        }
    })
}

fn col(v: &[c64]) -> CMat {
    CMat::from_fn(v.len(), 1, |i, _| v[i])
}

fn dim() -> impl Strategy<Value = usize> {
    1usize..=6
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_inverts_unfold(i in dim(), j in dim(), r in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rand_tensor(&mut rng, [i, j, r]);
        for mode in Mode::ALL {
            let back = fold(unfold(&t, mode).as_ref(), mode, t.dims()).unwrap();
            prop_assert_eq!(back.data(), t.data());
        }
    }

    #[test]
    fn unfoldings_follow_index_layout(i in dim(), j in dim(), r in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rand_tensor(&mut rng, [i, j, r]);
        let (u1, u2, u3) = (unfold(&t, Mode::One), unfold(&t, Mode::Two), unfold(&t, Mode::Three));
        for a in 0..i {
            for b in 0..j {
                for c in 0..r {
                    let x = t.get(a, b, c);
                    prop_assert_eq!(u1[(a, b + j * c)], x);
                    prop_assert_eq!(u2[(b, a + i * c)], x);
                    prop_assert_eq!(u3[(c, a + i * b)], x);
                }
            }
        }
    }

    #[test]
    fn n_mode_product_matches_contraction(
        i in dim(), j in dim(), r in dim(), p in dim(), seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rand_tensor(&mut rng, [i, j, r]);
        let dims = [i, j, r];
        for mode in Mode::ALL {
            let n = mode.index();
            let a = rand_mat(&mut rng, p, dims[n]);
            let out = n_mode_product(&t, a.as_ref(), mode).unwrap();
            let mut od = dims;
            od[n] = p;
            prop_assert_eq!(out.dims(), od);
            for x in 0..od[0] {
                for y in 0..od[1] {
                    for z in 0..od[2] {
                        let mut s = c64::new(0.0, 0.0);
                        for q in 0..dims[n] {
                            let v = match mode {
                                Mode::One => a[(x, q)] * t.get(q, y, z),
                                Mode::Two => a[(y, q)] * t.get(x, q, z),
                                Mode::Three => a[(z, q)] * t.get(x, y, q),
                            };
                            s += v;
                        }
                        prop_assert!((out.get(x, y, z) - s).norm() < TOL);
                    }
                }
            }
        }
    }

    #[test]
    fn n_mode_products_commute_and_compose(
        i in dim(), j in dim(), r in dim(), p in dim(), q in dim(), seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rand_tensor(&mut rng, [i, j, r]);
        let a = rand_mat(&mut rng, p, i);
        let b = rand_mat(&mut rng, q, j);
        let ab = n_mode_product(&n_mode_product(&t, a.as_ref(), Mode::One).unwrap(), b.as_ref(), Mode::Two).unwrap();
        let ba = n_mode_product(&n_mode_product(&t, b.as_ref(), Mode::Two).unwrap(), a.as_ref(), Mode::One).unwrap();
        prop_assert!(tensor_diff(&ab, &ba) < TOL);

        let c = rand_mat(&mut rng, q, p);
        let twice = n_mode_product(&n_mode_product(&t, a.as_ref(), Mode::One).unwrap(), c.as_ref(), Mode::One).unwrap();
        let once = n_mode_product(&t, (&c * &a).as_ref(), Mode::One).unwrap();
        prop_assert!(tensor_diff(&twice, &once) < TOL);
    }

    #[test]
    fn kron_entries(m in dim(), n in dim(), p in dim(), q in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_mat(&mut rng, m, n);
        let b = rand_mat(&mut rng, p, q);
        let k = kron(a.as_ref(), b.as_ref());
        prop_assert_eq!((k.nrows(), k.ncols()), (m * p, n * q));
        for i1 in 0..m {
            for j1 in 0..n {
                for i2 in 0..p {
                    for j2 in 0..q {
                        prop_assert_eq!(k[(i1 * p + i2, j1 * q + j2)], a[(i1, j1)] * b[(i2, j2)]);
                    }
                }
            }
        }
    }

    #[test]
    fn khatri_rao_is_columnwise_kron(m in dim(), p in dim(), n in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_mat(&mut rng, m, n);
        let b = rand_mat(&mut rng, p, n);
        let kr = khatri_rao(a.as_ref(), b.as_ref()).unwrap();
        for c in 0..n {
            let kc = kron(a.col(c).as_mat(), b.col(c).as_mat());
            for row in 0..m * p {
                prop_assert_eq!(kr[(row, c)], kc[(row, 0)]);
            }
        }
    }

    #[test]
    fn vec_of_outer_product(m in dim(), n in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_mat(&mut rng, m, 1);
        let b = rand_mat(&mut rng, n, 1);
        let lhs = vec_mat((&a * b.transpose()).as_ref());
        let rhs = kron(b.as_ref(), a.as_ref());
        prop_assert!(max_diff(&lhs, &rhs) < TOL);
    }

    #[test]
    fn vec_of_triple_product(
        m in dim(), n in dim(), p in dim(), q in dim(), seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_mat(&mut rng, m, n);
        let b = rand_mat(&mut rng, n, p);
        let c = rand_mat(&mut rng, p, q);
        let lhs = vec_mat((&a * &b * &c).as_ref());
        let rhs = kron(c.transpose(), a.as_ref()) * vec_mat(b.as_ref());
        prop_assert!(max_diff(&lhs, &rhs) < TOL);
    }

    #[test]
    fn vec_of_diagonal_sandwich(m in dim(), n in dim(), q in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_mat(&mut rng, m, n);
        let c = rand_mat(&mut rng, n, q);
        let b: Vec<c64> = (0..n).map(|_| rand_c(&mut rng)).collect();
        let lhs = vec_mat((&a * diag(&b) * &c).as_ref());
        let rhs = khatri_rao(c.transpose(), a.as_ref()).unwrap() * col(&b);
        prop_assert!(max_diff(&lhs, &rhs) < TOL);
    }

    #[test]
    fn kron_mixed_product(
        m in dim(), n in dim(), p in dim(), q in dim(), r in dim(), s in dim(), seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_mat(&mut rng, m, n);
        let b = rand_mat(&mut rng, p, q);
        let c = rand_mat(&mut rng, n, r);
        let d = rand_mat(&mut rng, q, s);
        let lhs = kron(a.as_ref(), b.as_ref()) * kron(c.as_ref(), d.as_ref());
        let rhs = kron((&a * &c).as_ref(), (&b * &d).as_ref());
        prop_assert!(max_diff(&lhs, &rhs) < TOL);
    }

    #[test]
    fn kron_times_khatri_rao(
        m in dim(), n in dim(), p in dim(), q in dim(), r in dim(), seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_mat(&mut rng, m, n);
        let b = rand_mat(&mut rng, p, q);
        let c = rand_mat(&mut rng, n, r);
        let d = rand_mat(&mut rng, q, r);
        let lhs = kron(a.as_ref(), b.as_ref()) * khatri_rao(c.as_ref(), d.as_ref()).unwrap();
        let rhs = khatri_rao((&a * &c).as_ref(), (&b * &d).as_ref()).unwrap();
        prop_assert!(max_diff(&lhs, &rhs) < TOL);
    }

    #[test]
    fn unvec_inverts_vec(m in dim(), n in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_mat(&mut rng, m, n);
        let v = vec_mat(a.as_ref());
        let flat: Vec<c64> = (0..m * n).map(|i| v[(i, 0)]).collect();
        prop_assert_eq!(unvec(&flat, m, n).unwrap(), a);
    }

    #[test]
    fn rearranged_kron_is_rank_one(
        i1 in dim(), j1 in dim(), i2 in dim(), j2 in dim(), seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_mat(&mut rng, i1, j1);
        let b = rand_mat(&mut rng, i2, j2);
        let c = kron(a.as_ref(), b.as_ref());
        let r = rearrange(c.as_ref(), i1, j1, i2, j2).unwrap();
        let outer = vec_mat(b.as_ref()) * vec_mat(a.as_ref()).transpose();
        prop_assert!(max_diff(&r, &outer) < TOL);
        let back = unrearrange(r.as_ref(), i1, j1, i2, j2).unwrap();
        prop_assert!(max_diff(&back, &c) < TOL);
    }

    #[test]
    fn rearranged_sum_has_rank_k(k in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i1, j1, i2, j2) = (3, 2, 3, 2);
        let mut c = CMat::zeros(i1 * i2, j1 * j2);
        for _ in 0..k {
            let a = rand_mat(&mut rng, i1, j1);
            let b = rand_mat(&mut rng, i2, j2);
            c += kron(a.as_ref(), b.as_ref());
        }
        let r = rearrange(c.as_ref(), i1, j1, i2, j2).unwrap();
        prop_assert_eq!(numerical_rank(r.as_ref(), 1e-9).unwrap(), k);
    }

    #[test]
    fn parafac_unfoldings(i in dim(), j in dim(), r in dim(), k in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_mat(&mut rng, i, k);
        let b = rand_mat(&mut rng, j, k);
        let c = rand_mat(&mut rng, r, k);
        let t = parafac_reconstruct(&ParafacFactors3::new(a.clone(), b.clone(), c.clone()).unwrap()).unwrap();
        for x in 0..i {
            for y in 0..j {
                for z in 0..r {
                    let s: c64 = (0..k).map(|q| a[(x, q)] * b[(y, q)] * c[(z, q)]).sum();
                    prop_assert!((t.get(x, y, z) - s).norm() < TOL);
                }
            }
        }
        let kr = |p: &CMat, q: &CMat| khatri_rao(p.as_ref(), q.as_ref()).unwrap();
        prop_assert!(max_diff(&unfold(&t, Mode::One), &(&a * kr(&c, &b).transpose())) < TOL);
        prop_assert!(max_diff(&unfold(&t, Mode::Two), &(&b * kr(&c, &a).transpose())) < TOL);
        prop_assert!(max_diff(&unfold(&t, Mode::Three), &(&c * kr(&b, &a).transpose())) < TOL);
    }

    #[test]
    fn parafac_scaling_ambiguity(i in dim(), j in dim(), r in dim(), k in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_mat(&mut rng, i, k);
        let b = rand_mat(&mut rng, j, k);
        let c = rand_mat(&mut rng, r, k);
        let d1: Vec<c64> = (0..k).map(|_| rand_c(&mut rng) + c64::new(2.0, 0.0)).collect();
        let d2: Vec<c64> = (0..k).map(|_| rand_c(&mut rng) + c64::new(0.0, 2.0)).collect();
        let d3: Vec<c64> = d1.iter().zip(&d2).map(|(x, y)| (x * y).inv()).collect();
        let t = parafac_reconstruct(&ParafacFactors3::new(a.clone(), b.clone(), c.clone()).unwrap()).unwrap();
        let s = parafac_reconstruct(
            &ParafacFactors3::new(&a * diag(&d1), &b * diag(&d2), &c * diag(&d3)).unwrap(),
        )
        .unwrap();
        prop_assert!(tensor_diff(&t, &s) < 1e-11);
    }
}

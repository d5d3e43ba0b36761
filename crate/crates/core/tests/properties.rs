use mpfide::corpus;
use mpfide::degsolve::{assemble_param_system, build_tables, solve_degenerate, SolveOptions};
use mpfide::densela::{Matrix, Vector};
use mpfide::model::{DegenerateKernel, Kernel, MatrixFn, MeshPolicy, MultipointCondition, Partition, Problem};
use mpfide::refcheck::{fundamental_tables, residual};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Params {
    a: [f64; 4],
    kernel: [f64; 4],
    f: [f64; 4],
    b_left: [f64; 4],
    b_mid: [f64; 4],
    d: [f64; 2],
    mid: f64,
}

fn params() -> impl Strategy<Value = Params> {
    (
        proptest::array::uniform4(-1.0f64..1.0),
        proptest::array::uniform4(-0.5f64..0.5),
        proptest::array::uniform4(-2.0f64..2.0),
        proptest::array::uniform4(-1.0f64..1.0),
        proptest::array::uniform4(-0.5f64..0.5),
        proptest::array::uniform2(-2.0f64..2.0),
        0.2f64..0.8,
    )
        .prop_map(|(a, kernel, f, b_left, b_mid, d, mid)| Params {
            a,
            kernel,
            f,
            b_left,
            b_mid,
            d,
            mid,
        })
}

fn m2(v: [f64; 4]) -> Matrix {
    Matrix::new(2, 2, v.to_vec()).unwrap()
}

/// Two-dimensional problem on [0, 1] with a rank-two kernel and a
/// three-point condition whose last matrix is the identity.
fn problem(p: &Params) -> Problem {
    let a = m2(p.a);
    let k = p.kernel;
    let dk = DegenerateKernel::new(
        vec![
            MatrixFn::new(2, 2, move |t| Matrix::identity(2).scale(k[0] + k[1] * t)),
            MatrixFn::new(2, 2, move |t| Matrix::diag(&[k[2] * t.cos(), k[3]])),
        ],
        vec![
            MatrixFn::new(2, 2, |tau| Matrix::diag(&[1.0, tau])),
            MatrixFn::new(2, 2, |tau| Matrix::from_rows(&[&[tau, 1.0], &[0.0, 1.0]]).unwrap()),
        ],
    )
    .unwrap();
    let f = p.f;
    Problem::new(
        MatrixFn::constant(a),
        Kernel::Degenerate(dk),
        MatrixFn::column(2, move |t| vec![f[0] + f[1] * t, f[2] * (f[3] * t).sin()]),
        MultipointCondition::new(
            vec![0.0, p.mid, 1.0],
            vec![m2(p.b_left), m2(p.b_mid), Matrix::identity(2)],
            Vector::new(p.d.to_vec()).unwrap(),
        ),
    )
}

fn opts() -> SolveOptions {
    SolveOptions {
        mesh: Some(MeshPolicy::Steps(16)),
        max_refinements: 2,
        certify: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solution_is_linear_in_data(p in params(), alpha in -2.0f64..2.0, q in params()) {
        let base = problem(&p);
        let other = problem(&Params { a: p.a, kernel: p.kernel, b_left: p.b_left, b_mid: p.b_mid, mid: p.mid, ..q.clone() });
        let (Ok(x1), Ok(x2)) = (solve_degenerate(&base, &opts()), solve_degenerate(&other, &opts())) else {
            return Err(TestCaseError::reject("not well-posed"));
        };
        let (f1, f2) = (base.f.clone(), other.f.clone());
        let mut combined = base.with_forcing(MatrixFn::try_new(2, 1, move |t| {
            let mut v = f1.eval(t)?.scale(alpha);
            v += &f2.eval(t)?;
            Ok(v)
        }));
        let mut d = other.condition.d.clone();
        d.axpy(alpha, &base.condition.d);
        combined.condition.d = d;
        let x = solve_degenerate(&combined, &opts()).unwrap();
        let scale = 1.0 + x1.sup_norm() + x2.sup_norm();
        for ((g, g1), g2) in x.grid.iter().zip(&x1.grid).zip(&x2.grid) {
            for ((v, v1), v2) in g.values.iter().zip(&g1.values).zip(&g2.values) {
                let expect = &v1.scale(alpha) + v2;
                prop_assert!(v.max_abs_diff(&expect) <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn residuals_are_small(p in params()) {
        let prob = problem(&p);
        let Ok(sol) = solve_degenerate(&prob, &opts()) else {
            return Err(TestCaseError::reject("not well-posed"));
        };
        let scale = 1.0 + sol.sup_norm();
        prop_assert!(sol.diagnostics.continuity_residual <= 1e-10 * scale);
        prop_assert!(sol.diagnostics.boundary_residual <= 1e-10 * scale);
        let r = residual(&prob, &sol).unwrap();
        prop_assert!(r.boundary_residual <= 1e-10 * scale);
    }

    #[test]
    fn solution_respects_wellposedness_bound(p in params()) {
        let prob = problem(&p);
        let Ok(sol) = solve_degenerate(&prob, &opts()) else {
            return Err(TestCaseError::reject("not well-posed"));
        };
        let n = sol.diagnostics.wellposedness_constant().unwrap();
        let data = mpfide::itersolve::data_norm(&prob, &sol).unwrap();
        prop_assert!(sol.sup_norm() <= n * data, "{} > {} * {}", sol.sup_norm(), n, data);
    }

    #[test]
    fn tables_do_not_depend_on_fundamental_matrix(p in params(), seeds in proptest::array::uniform4(0.5f64..2.0)) {
        let prob = problem(&p);
        let part = Partition::from_condition(&prob.condition, MeshPolicy::Steps(16)).unwrap();
        let tables = build_tables(&prob, &part).unwrap();
        let normalized = fundamental_tables(&prob, &part, &[Matrix::identity(2), Matrix::identity(2)]).unwrap();
        let seeded = fundamental_tables(
            &prob,
            &part,
            &[m2([seeds[0], 0.3, -0.2, seeds[1]]), m2([seeds[2], -0.4, 0.1, seeds[3]])],
        )
        .unwrap();
        prop_assert!(normalized.g.max_abs_diff(&seeded.g) <= 1e-10);
        prop_assert!(normalized.g.max_abs_diff(&tables.g) <= 1e-6);
        for pi in 0..2 {
            for r in 0..2 {
                prop_assert!(normalized.v[pi][r].max_abs_diff(&tables.v[pi][r]) <= 1e-6);
            }
        }
    }
}

#[test]
fn true_parameters_satisfy_the_system() {
    let case = corpus::rotation_system();
    let exact = case.exact.unwrap();
    let mut previous: Option<f64> = None;
    for steps in [8, 16, 32] {
        let part = Partition::from_condition(&case.problem.condition, MeshPolicy::Steps(steps)).unwrap();
        let tables = build_tables(&case.problem, &part).unwrap();
        let sys = assemble_param_system(&case.problem, &part, &tables).unwrap();
        let lambda: Vec<Vector> = part.points[..part.len()]
            .iter()
            .map(|&t| exact.eval(t).unwrap().to_vector())
            .collect();
        let defect = (&sys.q.mul_vec(&Vector::stack(&lambda)) - &sys.rhs).max_norm();
        if let Some(prev) = previous {
            assert!(prev / defect > 12.0, "{prev} -> {defect}");
        }
        previous = Some(defect);
    }
}

#[test]
fn runs_are_bit_identical() {
    for case in corpus::degenerate_cases() {
        let a = solve_degenerate(&case.problem, &SolveOptions::default()).unwrap();
        let b = solve_degenerate(&case.problem, &SolveOptions::default()).unwrap();
        assert_eq!(a.sup_distance(&b), 0.0, "{}", case.name);
        assert_eq!(a.diagnostics, b.diagnostics, "{}", case.name);
    }
}

#[test]
fn corpus_solutions_are_accurate() {
    for case in corpus::degenerate_cases() {
        let sol = solve_degenerate(&case.problem, &SolveOptions::default()).unwrap();
        let err = sol.max_error(case.exact.as_ref().unwrap()).unwrap();
        assert!(err <= 1e-7, "{}: {err}", case.name);
        let r = residual(&case.problem, &sol).unwrap();
        assert!(r.ode_residual <= 1e-5, "{}: {r:?}", case.name);
    }
}

//! Central finite-difference checking of analytic gradients.

use super::{Bindings, Graph, Result, Tensor, TensorError};

/// Relative errors are replaced by absolute errors when both the analytic
/// and numeric magnitudes fall below this value.
pub const ABS_FALLBACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FdMismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub passed: bool,
    pub max_error: f64,
    /// Flat index of the largest error among checked components.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Components whose probe straddled a nondifferentiable point.
    pub skipped: Vec<usize>,
    /// Components whose error exceeds the tolerance.
    pub mismatches: Vec<FdMismatch>,
}

/// Ulps of the function value assumed lost when it is evaluated.
pub const ROUNDOFF_ULPS: f64 = 8.0;

/// Size of the rounding error in a central difference of a function
/// whose value is about `value`.
pub fn roundoff_floor(value: f64, step: f64) -> f64 {
    ROUNDOFF_ULPS * f64::EPSILON * value.abs() / step
}

/// `floor` is an absolute difference always accepted; the result stays
/// at most `tol` whenever the difference is within it.
fn component_error(analytic: f64, numeric: f64, tol: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    let floor_scale = floor / tol;
    if scale < ABS_FALLBACK && floor_scale < ABS_FALLBACK {
        diff
    } else {
        diff / scale.max(floor_scale)
    }
}

/// Componentwise comparison. Skipped components are ignored.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64], skipped: &[usize], tol: f64) -> FdReport {
    compare_gradients_with_floor(analytic, numeric, skipped, tol, 0.0)
}

/// Like [`compare_gradients`], also accepting any component whose
/// difference is at most `floor` (see [`roundoff_floor`]).
pub fn compare_gradients_with_floor(
    analytic: &[f64],
    numeric: &[f64],
    skipped: &[usize],
    tol: f64,
    floor: f64,
) -> FdReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut report = FdReport {
        passed: true,
        max_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: skipped.to_vec(),
        mismatches: Vec::new(),
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        if skipped.contains(&i) {
            continue;
        }
        report.checked += 1;
        let e = component_error(a, n, tol, floor);
        if report.worst_index.is_none() || e > report.max_error {
            report.max_error = e;
            report.worst_index = Some(i);
        }
        if !(e <= tol) {
            report.passed = false;
            report.mismatches.push(FdMismatch {
                index: i,
                analytic: a,
                numeric: n,
                error: e,
            });
        }
    }
    report
}

/// Central differences of a scalar function. The closure returns the value
/// together with a signature of its piecewise branch (for example ReLU
/// activation signs); a component whose `+step` and `−step` probes land on
/// different branches is reported as skipped.
pub fn central_differences<F>(mut f: F, x: &[f64], step: f64) -> (Vec<f64>, Vec<usize>)
where
    F: FnMut(&[f64]) -> (f64, Vec<i8>),
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    let mut skipped = Vec::new();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let (fp, sp) = f(&probe);
        probe[i] = x[i] - step;
        let (fm, sm) = f(&probe);
        probe[i] = x[i];
        if sp != sm {
            skipped.push(i);
        }
        grad[i] = (fp - fm) / (2.0 * step);
    }
    (grad, skipped)
}

fn numeric_for_leaf(
    graph: &Graph,
    bindings: &Bindings<'_>,
    output: &str,
    leaf: &str,
    step: f64,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let base = bindings
        .get(leaf)
        .ok_or_else(|| TensorError::Unbound(leaf.to_string()))?
        .clone();
    let mut failure = None;
    let (numeric, skipped) = central_differences(
        |x| {
            let mut b = bindings.clone();
            let t = Tensor {
                shape: base.shape.clone(),
                data: x.to_vec(),
            };
            b.bind_owned(leaf, t);
            match graph.evaluate(&b) {
                Ok(ev) => match ev.output(output) {
                    Ok(o) => (o.data[0], ev.relu_pattern()),
                    Err(e) => {
                        failure.get_or_insert(e);
                        (0.0, Vec::new())
                    }
                },
                Err(e) => {
                    failure.get_or_insert(e);
                    (0.0, Vec::new())
                }
            }
        },
        &base.data,
        step,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok((numeric, skipped)),
    }
}

/// Compares the reverse-mode gradient of scalar `output` wrt `leaf` against
/// central differences.
pub fn finite_diff_check(
    graph: &Graph,
    bindings: &Bindings<'_>,
    output: &str,
    leaf: &str,
    step: f64,
    tol: f64,
) -> Result<FdReport> {
    let ev = graph.evaluate(bindings)?;
    let grads = ev.backward(output)?;
    let analytic = grads
        .get(leaf)
        .ok_or_else(|| TensorError::UnknownName(leaf.to_string()))?
        .clone();
    finite_diff_check_against(graph, bindings, output, leaf, &analytic, step, tol)
}

/// Like [`finite_diff_check`] but compares against a caller-supplied
/// analytic gradient.
pub fn finite_diff_check_against(
    graph: &Graph,
    bindings: &Bindings<'_>,
    output: &str,
    leaf: &str,
    analytic: &Tensor,
    step: f64,
    tol: f64,
) -> Result<FdReport> {
    let out = graph.evaluate(bindings)?.output(output)?.clone();
    if !out.is_scalar() {
        return Err(TensorError::NonScalarSeed {
            name: output.to_string(),
            shape: out.shape.clone(),
        });
    }
    let (numeric, skipped) = numeric_for_leaf(graph, bindings, output, leaf, step)?;
    Ok(compare_gradients(&analytic.data, &numeric, &skipped, tol))
}

#[cfg(test)]
mod tests {
    use super::super::GraphBuilder;
    use super::*;

    fn quadratic() -> Graph {
        // sum((W·x − y)²)
        let mut b = GraphBuilder::new();
        let w = b.input("w");
        let x = b.input("x");
        let y = b.input("y");
        let p = b.matmul(w, x);
        let e = b.squared_error(p, y);
        let s = b.reduce_sum(e);
        b.name(s, "loss");
        b.build()
    }

    #[test]
    fn quadratic_graph_passes() {
        let g = quadratic();
        let w = Tensor::matrix(2, 2, vec![0.5, -1.0, 1.5, 0.25]).unwrap();
        let x = Tensor::column(vec![0.3, -0.7]).unwrap();
        let y = Tensor::column(vec![1.0, 2.0]).unwrap();
        let mut bind = Bindings::new();
        bind.bind("w", &w).bind("x", &x).bind("y", &y);
        for leaf in ["w", "x", "y"] {
            let r = finite_diff_check(&g, &bind, "loss", leaf, 1e-4, 1e-4).unwrap();
            assert!(r.passed, "{r:?}");
            assert!(r.skipped.is_empty());
        }
        // brute-force oracle for dL/dx: 2 Wᵀ(Wx − y)
        let r0 = 0.5 * 0.3 - 0.7 * -1.0 - 1.0;
        let r1 = 1.5 * 0.3 + 0.25 * -0.7 - 2.0;
        let want = [2.0 * (0.5 * r0 + 1.5 * r1), 2.0 * (-1.0 * r0 + 0.25 * r1)];
        let ev = g.evaluate(&bind).unwrap();
        let got = ev.backward("loss").unwrap();
        for (a, b) in got.get("x").unwrap().data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_at_zero_is_skipped() {
        let mut b = GraphBuilder::new();
        let x = b.input("x");
        let r = b.relu(x);
        let s = b.reduce_sum(r);
        b.name(s, "s");
        let g = b.build();
        let x0 = Tensor::matrix(1, 3, vec![0.0, 1.0, -1.0]).unwrap();
        let mut bind = Bindings::new();
        bind.bind("x", &x0);
        let r = finite_diff_check(&g, &bind, "s", "x", 1e-4, 1e-4).unwrap();
        assert!(r.passed);
        assert_eq!(r.skipped, vec![0]);
        assert_eq!(r.checked, 2);
    }

    #[test]
    fn corrupted_gradient_fails_at_offending_index() {
        let g = quadratic();
        let w = Tensor::matrix(2, 2, vec![0.5, -1.0, 1.5, 0.25]).unwrap();
        let x = Tensor::column(vec![0.3, -0.7]).unwrap();
        let y = Tensor::column(vec![1.0, 2.0]).unwrap();
        let mut bind = Bindings::new();
        bind.bind("w", &w).bind("x", &x).bind("y", &y);
        let mut grad = g
            .evaluate(&bind)
            .unwrap()
            .backward("loss")
            .unwrap()
            .take("w")
            .unwrap();
        grad.data_mut()[2] *= 1.01;
        let r = finite_diff_check_against(&g, &bind, "loss", "w", &grad, 1e-4, 1e-4).unwrap();
        assert!(!r.passed);
        assert_eq!(r.mismatches.len(), 1);
        assert_eq!(r.mismatches[0].index, 2);
        assert_eq!(r.worst_index, Some(2));
    }

    #[test]
    fn tiny_gradients_use_absolute_error() {
        assert!((component_error(1e-12, 3e-12, 1e-3, 0.0) - 2e-12).abs() < 1e-20);
        assert!((component_error(1.0, 1.0001, 1e-3, 0.0) - 1e-4 / 1.0001).abs() < 1e-15);
        let r = compare_gradients(&[0.0, 1e-10], &[1e-11, 0.0], &[], 1e-4);
        assert!(r.passed);
    }

    #[test]
    fn roundoff_floor_only_forgives_small_differences() {
        let floor = roundoff_floor(10.0, 1e-5);
        assert!((floor - 8.0 * f64::EPSILON * 1e6).abs() < 1e-24);
        // relative error 1e-2 but within the floor
        assert!(compare_gradients_with_floor(&[1e-7], &[1.01e-7], &[], 1e-3, floor).passed);
        assert!(!compare_gradients(&[1e-7], &[1.01e-7], &[], 1e-3).passed);
        // same relative error on a large component still fails
        assert!(!compare_gradients_with_floor(&[1.0], &[1.01], &[], 1e-3, floor).passed);
        let r = compare_gradients_with_floor(&[1e-7], &[1.0e-7 + floor], &[], 1e-3, floor);
        assert!(r.passed && (r.max_error - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn generic_differences_report_kinks() {
        let f = |x: &[f64]| (x[0].abs() + x[1] * x[1], vec![x[0].signum() as i8]);
        let (g, skipped) = central_differences(f, &[0.0, 2.0], 1e-5);
        assert_eq!(skipped, vec![0]);
        assert!((g[1] - 4.0).abs() < 1e-8);
    }
}
